"""Per-tick raster frames of a logged episode.

Frames are written as binary PPM (no dependencies) or, when Pillow is
installed, PNG. Pixels depend only on the log, the recording and the grid.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .dataset import GridSpec, TrajectoryStore
from .simulator import NO_EVENT, read_event_log

CELL_PX = 10
BACKGROUND = (255, 255, 255)
GRID_LINE = (220, 220, 220)
PEDESTRIAN = (40, 90, 220)
ROBOT = (220, 40, 40)
GOAL = (40, 170, 70)
COLLISION = (255, 190, 0)


def _fill(img: np.ndarray, cell, color, inset: int = 1) -> None:
    c, r = cell
    y0, x0 = r * CELL_PX, c * CELL_PX
    img[y0 + inset : y0 + CELL_PX - inset + 1, x0 + inset : x0 + CELL_PX - inset + 1] = color


def _outline(img: np.ndarray, cell, color, width: int = 2) -> None:
    c, r = cell
    y0, x0 = r * CELL_PX, c * CELL_PX
    y1, x1 = y0 + CELL_PX, x0 + CELL_PX
    img[y0 : y0 + width, x0 : x1 + 1] = color
    img[y1 - width + 1 : y1 + 1, x0 : x1 + 1] = color
    img[y0 : y1 + 1, x0 : x0 + width] = color
    img[y0 : y1 + 1, x1 - width + 1 : x1 + 1] = color


def blank_frame(grid: GridSpec) -> np.ndarray:
    h, w = grid.rows * CELL_PX + 1, grid.cols * CELL_PX + 1
    img = np.empty((h, w, 3), dtype=np.uint8)
    img[:] = BACKGROUND
    img[::CELL_PX, :] = GRID_LINE
    img[:, ::CELL_PX] = GRID_LINE
    return img


def draw_frame(grid: GridSpec, pedestrians, robot, goal, collisions=()) -> np.ndarray:
    img = blank_frame(grid)
    _fill(img, goal, GOAL)
    for cell in sorted(set(pedestrians)):
        _fill(img, cell, PEDESTRIAN, inset=2)
    _fill(img, robot, ROBOT, inset=2)
    for cell in sorted(set(collisions)):
        _outline(img, cell, COLLISION)
    return img


def write_ppm(img: np.ndarray, path: Path) -> None:
    h, w, _ = img.shape
    path.write_bytes(b"P6\n%d %d\n255\n" % (w, h) + img.tobytes())


def write_png(img: np.ndarray, path: Path) -> None:
    try:
        from PIL import Image
    except ImportError:
        raise RuntimeError("PNG output needs Pillow: pip install 'artifact[png]'") from None
    Image.fromarray(img, "RGB").save(path, format="PNG")


def render_frames(log_path: str | Path, store: TrajectoryStore, out_dir: str | Path,
                  grid: GridSpec | None = None, fmt: str = "ppm") -> list[Path]:
    """One image per logged tick, named ``tick_00001.ppm`` and so on."""
    if fmt not in ("ppm", "png"):
        raise ValueError(f"unknown image format {fmt!r}")
    log_path = Path(log_path)
    grid = grid or GridSpec(store.scene)
    meta = json.loads(log_path.with_suffix(".json").read_text(encoding="utf-8"))
    goal = tuple(meta["episode"]["goal"])
    by_tick: dict[int, dict] = {}
    for row in read_event_log(log_path):
        tick = by_tick.setdefault(row["tick"], {"frame": row["frame"], "robot": (row["robot_col"], row["robot_row"]),
                                                "collisions": []})
        if row["event_type"] != NO_EVENT:
            tick["collisions"].append(tick["robot"])
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    writer = write_ppm if fmt == "ppm" else write_png
    paths = []
    for tick in sorted(by_tick):
        rec = by_tick[tick]
        peds = [grid.cell_of(*t.position_at(rec["frame"])) for t in store.active_at(rec["frame"])]
        img = draw_frame(grid, peds, rec["robot"], goal, rec["collisions"])
        path = out_dir / f"tick_{tick:05d}.{fmt}"
        writer(img, path)
        paths.append(path)
    return paths
