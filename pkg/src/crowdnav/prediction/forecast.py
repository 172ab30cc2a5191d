"""Occupancy forecasts over the next five frames and the predictors that make them."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from ..dataset import Cell, DataError, GridSpec, TrajectoryStore
from .features import HORIZON, N_TARGETS, WINDOW, extract_features_batch
from .forest import RegressionForest


@dataclass(frozen=True)
class OccupancyForecast:
    """``steps[k]`` holds the cells predicted occupied ``k + 1`` frames ahead."""

    steps: tuple[frozenset[Cell], ...]

    def __post_init__(self):
        steps = tuple(frozenset(s) for s in self.steps)
        if len(steps) != HORIZON:
            raise ValueError(f"forecast needs exactly {HORIZON} horizon steps, got {len(steps)}")
        object.__setattr__(self, "steps", steps)

    @classmethod
    def empty(cls) -> "OccupancyForecast":
        return cls((frozenset(),) * HORIZON)

    def union(self) -> frozenset[Cell]:
        return frozenset().union(*self.steps)

    def merge(self, other: "OccupancyForecast") -> "OccupancyForecast":
        return OccupancyForecast(tuple(a | b for a, b in zip(self.steps, other.steps)))

    def in_bounds(self, grid: GridSpec) -> bool:
        return all(grid.in_bounds(c) for s in self.steps for c in s)


def merge_forecasts(forecasts: Iterable[OccupancyForecast]) -> OccupancyForecast:
    steps = [set() for _ in range(HORIZON)]
    for fc in forecasts:
        for acc, s in zip(steps, fc.steps):
            acc |= s
    return OccupancyForecast(tuple(steps))


def neighborhood(cell: Cell, radius: int, grid: GridSpec) -> set[Cell]:
    c0, r0 = cell
    return {
        (c, r)
        for c in range(max(c0 - radius, 0), min(c0 + radius, grid.cols - 1) + 1)
        for r in range(max(r0 - radius, 0), min(r0 + radius, grid.rows - 1) + 1)
    }


def baseline_forecast(current_cells: Iterable[Cell], grid: GridSpec, radius: int = 1) -> OccupancyForecast:
    """Every cell within Chebyshev ``radius`` of a pedestrian, at every horizon step."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    cells: set[Cell] = set()
    for cell in current_cells:
        cells |= neighborhood(cell, radius, grid)
    frozen = frozenset(cells)
    return OccupancyForecast((frozen,) * HORIZON)


def targets_to_forecast(targets, origin: tuple[float, float], grid: GridSpec) -> OccupancyForecast:
    """One cell per horizon step: the cell of ``origin + (dx_k, dy_k)``, clamped to the grid."""
    t = np.asarray(targets, dtype=np.float64).reshape(HORIZON, 2)
    ox, oy = origin
    return OccupancyForecast(
        tuple(frozenset({grid.cell_of(ox + dx, oy + dy)}) for dx, dy in t.tolist())
    )


# ---------------------------------------------------------------------------
# external forecast files
# ---------------------------------------------------------------------------

def load_external_forecast(path: str | Path) -> dict[tuple[int, int], np.ndarray]:
    """Parse ``pedestrian_id frame dx1 dy1 ... dx5 dy5`` records keyed by ``(id, frame)``."""
    out: dict[tuple[int, int], np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2 + N_TARGETS:
                raise DataError(f"line {line_no}: expected {2 + N_TARGETS} fields, got {len(parts)}")
            try:
                key = (int(parts[0]), int(parts[1]))
                values = np.array([float(v) for v in parts[2:]])
            except ValueError as exc:
                raise DataError(f"line {line_no}: {exc}") from None
            if not np.all(np.isfinite(values)):
                raise DataError(f"line {line_no}: non-finite displacement")
            if key in out:
                raise DataError(f"line {line_no}: duplicate forecast for pedestrian {key[0]} frame {key[1]}")
            out[key] = values
    return out


def save_external_forecast(forecasts: Mapping[tuple[int, int], np.ndarray], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# pedestrian_id frame dx1 dy1 dx2 dy2 dx3 dy3 dx4 dy4 dx5 dy5\n")
        for (pid, frame) in sorted(forecasts):
            vals = " ".join(repr(float(v)) for v in forecasts[pid, frame])
            fh.write(f"{pid} {frame} {vals}\n")


# ---------------------------------------------------------------------------
# predictors
# ---------------------------------------------------------------------------

class Predictor:
    """Produces the crowd's :class:`OccupancyForecast` for a frame of a replayed store.

    Forecasts depend only on the recording, so they are cached per frame and
    shared by every episode that visits the frame.
    """

    name = "predictor"

    def __init__(self, store: TrajectoryStore, grid: GridSpec):
        self.store = store
        self.grid = grid
        self._cache: dict[int, OccupancyForecast] = {}

    def forecast(self, frame: int) -> OccupancyForecast:
        fc = self._cache.get(frame)
        if fc is None:
            fc = self._cache[frame] = self._forecast(frame)
        return fc

    def _forecast(self, frame: int) -> OccupancyForecast:
        raise NotImplementedError

    def current_cells(self, frame: int) -> set[Cell]:
        return {self.grid.cell_of(*t.position_at(frame)) for t in self.store.active_at(frame)}


class BaselinePredictor(Predictor):
    def __init__(self, store, grid, radius: int = 1):
        super().__init__(store, grid)
        self.radius = radius
        self.name = f"baseline:{radius}"

    def _forecast(self, frame):
        return baseline_forecast(self.current_cells(frame), self.grid, self.radius)


class PerfectPredictor(Predictor):
    """Ground truth: the recorded cells at frames ``frame + 1 .. frame + 5``."""

    name = "perfect"

    def _forecast(self, frame):
        return OccupancyForecast(
            tuple(frozenset(self.current_cells(frame + k)) for k in range(1, HORIZON + 1))
        )


class _PointPredictor(Predictor):
    """Per-pedestrian displacement forecasts; short histories fall back to the baseline."""

    fallback_radius = 1

    def _targets(self, frame: int, pids: list[int], windows: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _forecast(self, frame):
        cold: list[Cell] = []
        pids, windows, origins = [], [], []
        for t in self.store.active_at(frame):
            i = frame - t.first_frame
            if i >= WINDOW - 1:
                pids.append(t.pedestrian_id)
                windows.append(t.xy[i - WINDOW + 1 : i + 1])
                origins.append(t.xy[i])
            else:
                cold.append(self.grid.cell_of(*t.xy[i]))
        steps = [set() for _ in range(HORIZON)]
        if pids:
            targets = self._targets(frame, pids, np.asarray(windows))
            for target, (ox, oy) in zip(targets.reshape(-1, HORIZON, 2).tolist(), origins):
                for k, (dx, dy) in enumerate(target):
                    steps[k].add(self.grid.cell_of(ox + dx, oy + dy))
        fc = OccupancyForecast(tuple(steps))
        if cold:
            fc = fc.merge(baseline_forecast(cold, self.grid, self.fallback_radius))
        return fc


class ForestPredictor(_PointPredictor):
    name = "forest"

    def __init__(self, store, grid, forest: RegressionForest):
        super().__init__(store, grid)
        self.forest = forest

    def _targets(self, frame, pids, windows):
        return self.forest.predict(extract_features_batch(windows))


class ExternalPredictor(_PointPredictor):
    """Replays forecasts loaded from a file; pedestrians without a record use the baseline."""

    name = "external"

    def __init__(self, store, grid, forecasts: Mapping[tuple[int, int], np.ndarray]):
        super().__init__(store, grid)
        self.forecasts = forecasts

    def _forecast(self, frame):
        cold: list[Cell] = []
        steps = [set() for _ in range(HORIZON)]
        for t in self.store.active_at(frame):
            origin = t.position_at(frame)
            target = self.forecasts.get((t.pedestrian_id, frame))
            if target is None:
                cold.append(self.grid.cell_of(*origin))
                continue
            for k, (dx, dy) in enumerate(np.asarray(target).reshape(HORIZON, 2).tolist()):
                steps[k].add(self.grid.cell_of(origin[0] + dx, origin[1] + dy))
        fc = OccupancyForecast(tuple(steps))
        if cold:
            fc = fc.merge(baseline_forecast(cold, self.grid, self.fallback_radius))
        return fc


class PersistencePredictor(_PointPredictor):
    """Predicts no motion at all."""

    name = "persistence"

    def _targets(self, frame, pids, windows):
        return np.zeros((len(pids), N_TARGETS))
