"""Pedestrian trajectory ingestion, filtering, discretization and synthetic crowds.

Trajectory files are plain text, one record per line::

    # comment
    <pedestrian_id> <frame> <x> <y>

Coordinates are image pixels with y growing downward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

Cell = tuple[int, int]  # (col, row)


class DataError(ValueError):
    """Base class for malformed or invalid input data."""


class TrajectoryParseError(DataError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class TrajectoryValidationError(DataError):
    """Raised when records fall outside the scene; ``records`` lists every offender."""

    def __init__(self, records: list[tuple[int, int, int]], scene: "SceneSpec"):
        self.records = records
        shown = ", ".join(
            f"pedestrian {pid} frame {frame} (line {line})" for pid, frame, line in records[:5]
        )
        more = f" and {len(records) - 5} more" if len(records) > 5 else ""
        super().__init__(
            f"{len(records)} point(s) outside {scene.width:g}x{scene.height:g} scene: {shown}{more}"
        )


@dataclass(frozen=True)
class SceneSpec:
    width: float = 1920.0
    height: float = 1080.0
    fps: float = 1.5

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0 and self.fps > 0):
            raise ValueError(f"scene dimensions and fps must be positive: {self}")

    def contains(self, x: float, y: float) -> bool:
        # the right/bottom edge is accepted and clamped into the last cell
        return 0.0 <= x <= self.width and 0.0 <= y <= self.height


@dataclass(frozen=True)
class GridSpec:
    scene: SceneSpec = field(default_factory=SceneSpec)
    cols: int = 64
    rows: int = 36

    def __post_init__(self):
        if self.cols < 1 or self.rows < 1:
            raise ValueError("grid needs at least one row and one column")

    @property
    def cell_w(self) -> float:
        return self.scene.width / self.cols

    @property
    def cell_h(self) -> float:
        return self.scene.height / self.rows

    @property
    def n_cells(self) -> int:
        return self.cols * self.rows

    def cell_of(self, x: float, y: float) -> Cell:
        col = min(max(int(math.floor(x / self.cell_w)), 0), self.cols - 1)
        row = min(max(int(math.floor(y / self.cell_h)), 0), self.rows - 1)
        return col, row

    def center(self, cell: Cell) -> tuple[float, float]:
        return (cell[0] + 0.5) * self.cell_w, (cell[1] + 0.5) * self.cell_h

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.cols and 0 <= cell[1] < self.rows

    def clamp(self, cell: Cell) -> Cell:
        return min(max(cell[0], 0), self.cols - 1), min(max(cell[1], 0), self.rows - 1)

    def cells(self) -> Iterator[Cell]:
        for row in range(self.rows):
            for col in range(self.cols):
                yield col, row


@dataclass(frozen=True, eq=False)
class RawTrajectory:
    """Gap-free pixel path of one pedestrian; ``frames`` step by exactly one."""

    pedestrian_id: int
    frames: np.ndarray
    xy: np.ndarray
    source_id: int | None = None

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.int64)
        xy = np.asarray(self.xy, dtype=np.float64).reshape(-1, 2)
        if len(frames) != len(xy):
            raise ValueError("frames and xy lengths differ")
        if len(frames) > 1 and not np.all(np.diff(frames) == 1):
            raise ValueError(f"trajectory {self.pedestrian_id} has non-consecutive frames")
        frames.flags.writeable = False
        xy.flags.writeable = False
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "xy", xy)
        if self.source_id is None:
            object.__setattr__(self, "source_id", self.pedestrian_id)

    def __len__(self) -> int:
        return len(self.frames)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RawTrajectory):
            return NotImplemented
        return (
            self.pedestrian_id == other.pedestrian_id
            and self.source_id == other.source_id
            and np.array_equal(self.frames, other.frames)
            and np.array_equal(self.xy, other.xy)
        )

    @property
    def first_frame(self) -> int:
        return int(self.frames[0])

    @property
    def last_frame(self) -> int:
        return int(self.frames[-1])

    def covers(self, frame: int) -> bool:
        return len(self) > 0 and self.first_frame <= frame <= self.last_frame

    def position_at(self, frame: int) -> tuple[float, float]:
        i = frame - self.first_frame
        return float(self.xy[i, 0]), float(self.xy[i, 1])


@dataclass(frozen=True)
class GridTrajectory:
    pedestrian_id: int
    frames: tuple[int, ...]
    cells: tuple[Cell, ...]

    def __len__(self) -> int:
        return len(self.cells)


def to_grid(traj: RawTrajectory, grid: GridSpec) -> GridTrajectory:
    cells = tuple(grid.cell_of(x, y) for x, y in traj.xy.tolist())
    return GridTrajectory(traj.pedestrian_id, tuple(traj.frames.tolist()), cells)


@dataclass(frozen=True, eq=False)
class TrajectoryStore:
    trajectories: Mapping[int, RawTrajectory]
    scene: SceneSpec = field(default_factory=SceneSpec)
    # number of distinct pedestrian ids in the source before splitting/filtering
    source_count: int | None = None
    rejected: tuple[tuple[int, int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "trajectories", MappingProxyType(dict(self.trajectories)))
        if self.source_count is None:
            object.__setattr__(self, "source_count", len(self.trajectories))

    @classmethod
    def from_trajectories(cls, trajs: Iterable[RawTrajectory], scene: SceneSpec | None = None):
        table: dict[int, RawTrajectory] = {}
        for t in trajs:
            if t.pedestrian_id in table:
                raise ValueError(f"duplicate pedestrian id {t.pedestrian_id}")
            table[t.pedestrian_id] = t
        return cls(table, scene or SceneSpec())

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self) -> Iterator[RawTrajectory]:
        return iter(self.trajectories.values())

    def __getitem__(self, pedestrian_id: int) -> RawTrajectory:
        return self.trajectories[pedestrian_id]

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrajectoryStore):
            return NotImplemented
        return self.scene == other.scene and dict(self.trajectories) == dict(other.trajectories)

    @cached_property
    def frame_range(self) -> tuple[int, int] | None:
        if not self.trajectories:
            return None
        return (
            min(t.first_frame for t in self),
            max(t.last_frame for t in self),
        )

    @property
    def total_points(self) -> int:
        return sum(len(t) for t in self)

    @property
    def mean_length(self) -> float:
        return self.total_points / len(self) if len(self) else 0.0

    @cached_property
    def _frame_index(self) -> dict[int, list[RawTrajectory]]:
        index: dict[int, list[RawTrajectory]] = {}
        for t in self:
            for f in range(t.first_frame, t.last_frame + 1):
                index.setdefault(f, []).append(t)
        return index

    def active_at(self, frame: int) -> list[RawTrajectory]:
        return self._frame_index.get(frame, [])

    def occupancy_at(self, frame: int, grid: GridSpec) -> set[Cell]:
        return occupancy_at(self, frame, grid)

    def with_trajectories(self, trajs: Iterable[RawTrajectory]) -> "TrajectoryStore":
        return TrajectoryStore(
            {t.pedestrian_id: t for t in trajs}, self.scene, self.source_count, self.rejected
        )

    def export(self, path: str | Path) -> None:
        export_trajectories(self, path)


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

def _parse_line(line: str, line_no: int) -> tuple[int, int, float, float]:
    fields = line.split(" ")
    if len(fields) != 4:
        raise TrajectoryParseError(line_no, f"expected 4 space-separated fields, got {len(fields)}")
    try:
        pid, frame = int(fields[0]), int(fields[1])
        x, y = float(fields[2]), float(fields[3])
    except ValueError as exc:
        raise TrajectoryParseError(line_no, str(exc)) from None
    if not (math.isfinite(x) and math.isfinite(y)):
        raise TrajectoryParseError(line_no, "non-finite coordinate")
    return pid, frame, x, y


def _split_segments(
    pid: int, records: list[tuple[int, float, float]]
) -> list[tuple[np.ndarray, np.ndarray]]:
    records.sort(key=lambda r: r[0])
    frames = np.array([r[0] for r in records], dtype=np.int64)
    xy = np.array([(r[1], r[2]) for r in records], dtype=np.float64).reshape(-1, 2)
    breaks = np.flatnonzero(np.diff(frames) != 1) + 1
    return [
        (f, p)
        for f, p in zip(np.split(frames, breaks), np.split(xy, breaks))
        if len(f) >= 2
    ]


def load_trajectories(
    path: str | Path,
    scene: SceneSpec | None = None,
    on_invalid: str = "raise",
) -> TrajectoryStore:
    """Read a trajectory file into a store.

    Records are grouped per pedestrian and sorted by frame. A pedestrian whose
    frames have gaps is split into gap-free segments; the first segment keeps
    the original id and later ones get fresh ids above the largest id in the
    file (``source_id`` points back). Single-point fragments are dropped.

    ``on_invalid`` is ``"raise"`` (default) or ``"drop"``; in drop mode the
    out-of-bounds records are skipped and listed in ``store.rejected``.
    """
    if on_invalid not in ("raise", "drop"):
        raise ValueError("on_invalid must be 'raise' or 'drop'")
    scene = scene or SceneSpec()
    per_ped: dict[int, list[tuple[int, float, float]]] = {}
    seen: dict[tuple[int, int], int] = {}
    bad: list[tuple[int, int, int]] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line or line.startswith("#"):
                continue
            pid, frame, x, y = _parse_line(line, line_no)
            if (pid, frame) in seen:
                raise TrajectoryParseError(
                    line_no,
                    f"duplicate record for pedestrian {pid} frame {frame} "
                    f"(first on line {seen[pid, frame]})",
                )
            seen[pid, frame] = line_no
            if not scene.contains(x, y):
                bad.append((pid, frame, line_no))
                continue
            per_ped.setdefault(pid, []).append((frame, x, y))
    if bad and on_invalid == "raise":
        raise TrajectoryValidationError(bad, scene)

    source_ids = {pid for pid, _ in seen}
    next_id = max(source_ids) + 1 if source_ids else 0
    trajs: dict[int, RawTrajectory] = {}
    for pid in sorted(per_ped):
        for k, (frames, xy) in enumerate(_split_segments(pid, per_ped[pid])):
            if k == 0:
                new_id = pid
            else:
                new_id = next_id
                next_id += 1
            trajs[new_id] = RawTrajectory(new_id, frames, xy, source_id=pid)
    return TrajectoryStore(trajs, scene, source_count=len(source_ids), rejected=tuple(bad))


def export_trajectories(store: TrajectoryStore, path: str | Path) -> None:
    """Write ``store`` in the trajectory file format; floats use shortest round-trip repr."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# pedestrian_id frame x y\n")
        for pid in sorted(store.trajectories):
            t = store[pid]
            for frame, (x, y) in zip(t.frames.tolist(), t.xy.tolist()):
                fh.write(f"{pid} {frame} {x!r} {y!r}\n")


def convert_table(
    src: str | Path,
    dst: str | Path,
    columns: Sequence[str] = ("id", "frame", "x", "y"),
    delimiter: str | None = None,
    scale: float = 1.0,
    frame_step: int = 1,
) -> int:
    """Convert a delimited annotation table into the trajectory file format.

    ``columns`` names the meaning of each input column; unknown names are
    ignored. ``frame_step`` divides raw frame numbers (for annotations that
    count video frames rather than sampled frames). Returns the record count.
    """
    wanted = {"id", "frame", "x", "y"}
    if not wanted <= set(columns):
        raise ValueError(f"columns must name {sorted(wanted)}")
    pos = {name: columns.index(name) for name in wanted}
    n = 0
    with open(src, encoding="utf-8") as fin, open(dst, "w", encoding="utf-8", newline="\n") as fout:
        for line_no, raw in enumerate(fin, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(delimiter)
            try:
                pid = int(float(parts[pos["id"]]))
                frame = int(float(parts[pos["frame"]])) // frame_step
                x = float(parts[pos["x"]]) * scale
                y = float(parts[pos["y"]]) * scale
            except (IndexError, ValueError) as exc:
                raise TrajectoryParseError(line_no, str(exc)) from None
            fout.write(f"{pid} {frame} {x!r} {y!r}\n")
            n += 1
    return n


# ---------------------------------------------------------------------------
# store operations
# ---------------------------------------------------------------------------

def filter_min_length(store: TrajectoryStore, min_length: int = 10) -> TrajectoryStore:
    if min_length < 1:
        raise ValueError("min_length must be >= 1")
    return store.with_trajectories(t for t in store if len(t) >= min_length)


def occupancy_at(store: TrajectoryStore, frame: int, grid: GridSpec) -> set[Cell]:
    fr = store.frame_range
    if fr is None or not fr[0] <= frame <= fr[1]:
        raise ValueError(f"frame {frame} outside recording range {fr}")
    return {grid.cell_of(*t.position_at(frame)) for t in store.active_at(frame)}


# ---------------------------------------------------------------------------
# synthetic crowds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CrowdConfig:
    pedestrians: int = 200
    frames: int = 600
    seed: int = 0
    straight_fraction: float = 0.6
    loiter_fraction: float = 0.1
    # per-axis mean steps of about 35 px and 30 px give a total of ~46 px
    speed_px_mean: float = 46.0
    speed_px_std: float = 10.0

    def __post_init__(self):
        if self.pedestrians < 0:
            raise ValueError("pedestrians must be >= 0")
        if self.frames < 2:
            raise ValueError("frames must be >= 2 to host any trajectory")
        if not (0 <= self.straight_fraction and 0 <= self.loiter_fraction
                and self.straight_fraction + self.loiter_fraction <= 1):
            raise ValueError("motion fractions must be non-negative and sum to <= 1")
        if self.speed_px_mean <= 0 or self.speed_px_std < 0:
            raise ValueError("speed mean must be positive and std non-negative")

    @classmethod
    def from_file(cls, path: str | Path) -> "CrowdConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def from_text(cls, text: str) -> "CrowdConfig":
        types = {"pedestrians": int, "frames": int, "seed": int, "straight_fraction": float,
                 "loiter_fraction": float, "speed_px_mean": float, "speed_px_std": float}
        values = {}
        for line_no, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or key not in types:
                raise DataError(f"line {line_no}: expected one of {sorted(types)} as key=value")
            try:
                values[key] = types[key](value.strip())
            except ValueError:
                raise DataError(f"line {line_no}: bad value for {key!r}") from None
        return cls(**values)

    def to_text(self) -> str:
        return "".join(f"{k}={v!r}\n" for k, v in self.__dict__.items())


def straight_walker(
    pedestrian_id: int,
    start: tuple[float, float],
    velocity: tuple[float, float],
    first_frame: int,
    n_frames: int,
    scene: SceneSpec | None = None,
) -> RawTrajectory:
    """Constant-velocity walker, truncated where it would leave the scene."""
    scene = scene or SceneSpec()
    xy = []
    x, y = start
    for _ in range(n_frames):
        if not (0 <= x < scene.width and 0 <= y < scene.height):
            break
        xy.append((x, y))
        x += velocity[0]
        y += velocity[1]
    frames = np.arange(first_frame, first_frame + len(xy))
    return RawTrajectory(pedestrian_id, frames, np.array(xy).reshape(-1, 2))


def _speed(rng: np.random.Generator, cfg: CrowdConfig) -> float:
    return float(max(rng.normal(cfg.speed_px_mean, cfg.speed_px_std), 0.25 * cfg.speed_px_mean))


def _border_point(rng: np.random.Generator, scene: SceneSpec) -> tuple[float, float, int]:
    side = int(rng.integers(4))
    if side == 0:
        return 0.0, float(rng.uniform(0, scene.height)), side
    if side == 1:
        return float(np.nextafter(scene.width, 0)), float(rng.uniform(0, scene.height)), side
    if side == 2:
        return float(rng.uniform(0, scene.width)), 0.0, side
    return float(rng.uniform(0, scene.width)), float(np.nextafter(scene.height, 0)), side


def _straight(rng, cfg, scene, pid, first, remaining):
    x0, y0, side = _border_point(rng, scene)
    # aim at a point in the half of the scene opposite the entry side
    if side == 0:
        tx, ty = rng.uniform(scene.width / 2, scene.width), rng.uniform(0, scene.height)
    elif side == 1:
        tx, ty = rng.uniform(0, scene.width / 2), rng.uniform(0, scene.height)
    elif side == 2:
        tx, ty = rng.uniform(0, scene.width), rng.uniform(scene.height / 2, scene.height)
    else:
        tx, ty = rng.uniform(0, scene.width), rng.uniform(0, scene.height / 2)
    d = math.hypot(tx - x0, ty - y0)
    v = _speed(rng, cfg)
    return straight_walker(pid, (x0, y0), ((tx - x0) / d * v, (ty - y0) / d * v),
                           first, remaining, scene)


def _wanderer(rng, cfg, scene, pid, first, remaining):
    life = min(int(rng.integers(10, 61)), remaining)
    v = _speed(rng, cfg)
    pos = np.array([rng.uniform(0, scene.width), rng.uniform(0, scene.height)])
    target = np.array([rng.uniform(0, scene.width), rng.uniform(0, scene.height)])
    xy = [pos.copy()]
    for _ in range(life - 1):
        delta = target - pos
        dist = float(np.hypot(*delta))
        if dist <= v:
            pos = target
            target = np.array([rng.uniform(0, scene.width), rng.uniform(0, scene.height)])
        else:
            pos = pos + delta / dist * v
        xy.append(pos.copy())
    return RawTrajectory(pid, np.arange(first, first + len(xy)), np.array(xy))


def _loiterer(rng, cfg, scene, pid, first, remaining):
    life = min(int(rng.integers(10, 61)), remaining)
    p = (rng.uniform(0, scene.width), rng.uniform(0, scene.height))
    return RawTrajectory(pid, np.arange(first, first + life), np.tile(p, (life, 1)))


def synth_crowd(
    config: CrowdConfig, seed: int | None = None, scene: SceneSpec | None = None
) -> TrajectoryStore:
    """Generate a deterministic crowd of straight walkers, wanderers and loiterers.

    Straight walkers enter from a random border point and cross the scene at
    constant speed until they leave it. Wanderers walk between random
    waypoints for 10-60 frames; loiterers stand still for 10-60 frames.
    ``seed`` overrides ``config.seed``.
    """
    scene = scene or SceneSpec()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    n = config.pedestrians
    n_straight = round(config.straight_fraction * n)
    n_loiter = min(round(config.loiter_fraction * n), n - n_straight)
    kinds = np.array([0] * n_straight + [1] * n_loiter + [2] * (n - n_straight - n_loiter))
    rng.shuffle(kinds)
    makers = (_straight, _loiterer, _wanderer)
    trajs = []
    for pid, kind in enumerate(kinds.tolist()):
        first = int(rng.integers(0, config.frames - 1))
        t = makers[kind](rng, config, scene, pid, first, config.frames - first)
        if len(t) >= 2:
            trajs.append(t)
    return TrajectoryStore.from_trajectories(trajs, scene)
