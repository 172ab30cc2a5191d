"""Trajectory-replay simulation of a grid robot among recorded pedestrians.

One tick: the controller observes frame ``f`` (robot cell, pedestrian cells
and pixel tracks up to ``f``) and picks a target cell; then the pedestrians
advance to their recorded frame ``f + 1`` while the robot moves, and every
pedestrian ending the tick in the robot's cell is a collision candidate.
Pedestrians never react to the robot.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .dataset import Cell, GridSpec, TrajectoryStore
from .planner import DIRECTIONS, DStarLite, NoPathError, chebyshev
from .prediction.forecast import Predictor

log = logging.getLogger(__name__)

SR, SP, MRP = "SR", "SP", "MRP"


def classify_collision(robot_moved: bool, ped_moved: bool) -> str | None:
    """Collision class for a new co-occupancy, or None when neither party moved."""
    if robot_moved and ped_moved:
        return MRP
    if robot_moved:
        return SP
    if ped_moved:
        return SR
    return None


def optimal_steps(start: Cell, goal: Cell, grid: GridSpec | None = None) -> int:
    if grid is not None and not (grid.in_bounds(start) and grid.in_bounds(goal)):
        raise ValueError("cells must be inside the grid")
    return chebyshev(start, goal)


def delay(t: int, t_hat: int) -> float:
    """Relative delay in percent of the actual step count over the optimum."""
    if t < 1:
        raise ValueError("optimal step count must be >= 1")
    if t_hat < t:
        raise ValueError(f"{t_hat} steps cannot beat the optimum of {t}")
    return (t_hat / t - 1.0) * 100.0


def default_step_cap(optimal: int) -> int:
    return 4 * optimal + 20


@dataclass(frozen=True)
class Episode:
    start: Cell
    goal: Cell
    start_frame: int
    seed: int = 0

    def __post_init__(self):
        if self.start == self.goal:
            raise ValueError("episode start and goal must differ")


@dataclass(frozen=True)
class CollisionEvent:
    tick: int
    frame: int
    cell: Cell
    type: str
    pedestrian_id: int
    robot_moved: bool
    ped_moved: bool


@dataclass(frozen=True)
class TickRecord:
    tick: int
    frame: int
    robot: Cell
    moved: bool
    stalled: bool


@dataclass
class EpisodeResult:
    episode: Episode
    reached_goal: bool
    steps_taken: int
    optimal_steps: int
    outcome: str  # goal | cap | recording_end | error
    events: list[CollisionEvent] = field(default_factory=list)
    trace: list[TickRecord] = field(default_factory=list)
    stall_ticks: int = 0
    error: str | None = None
    # (tick, path cost, queue size, cumulative expansions) for planner-backed controllers
    planner_trace: list[tuple[int, float, int, int]] = field(default_factory=list)

    @property
    def delay(self) -> float | None:
        return delay(self.optimal_steps, self.steps_taken) if self.reached_goal else None

    def count(self, kind: str) -> int:
        return sum(1 for e in self.events if e.type == kind)

    @property
    def sr(self) -> int:
        return self.count(SR)

    @property
    def sp(self) -> int:
        return self.count(SP)

    @property
    def mrp(self) -> int:
        return self.count(MRP)

    @property
    def failed(self) -> bool:
        return self.outcome == "error"


@dataclass
class Observation:
    tick: int
    frame: int
    robot: Cell
    previous: Cell
    goal: Cell
    pedestrians: dict[int, Cell]
    sim: "CrowdSimulator"


class Controller:
    """Chooses the robot's next cell (itself or one of its 8 neighbours)."""

    name = "controller"

    def reset(self, sim: "CrowdSimulator", episode: Episode) -> None:
        self.stall_ticks = 0
        self.stalled = False

    def act(self, obs: Observation) -> Cell:
        raise NotImplementedError


class StayController(Controller):
    name = "stay"

    def act(self, obs):
        return obs.robot


class GreedyController(Controller):
    """Walks the straight-line optimal route and ignores pedestrians."""

    name = "greedy"

    def act(self, obs):
        (c, r), (gc, gr) = obs.robot, obs.goal
        return c + (gc > c) - (gc < c), r + (gr > r) - (gr < r)


class ScriptedController(Controller):
    """Replays a fixed list of target cells, then stays."""

    name = "scripted"

    def __init__(self, moves: list[Cell]):
        self.moves = list(moves)

    def act(self, obs):
        return self.moves[obs.tick] if obs.tick < len(self.moves) else obs.robot


class DStarController(Controller):
    """D* Lite replanning each tick against a predictor's occupancy forecast.

    With no path the robot holds position, unless its own cell is forecast
    occupied on the next frame; then it sidesteps to the free neighbour
    closest to the goal. Either way the tick is counted as a stall.
    """

    def __init__(self, predictor: Predictor):
        self.predictor = predictor
        self.name = f"dstar+{predictor.name}"
        self.planner: DStarLite | None = None
        self.trace: list[tuple[int, float, int, int]] = []

    def reset(self, sim, episode):
        super().reset(sim, episode)
        self.planner = DStarLite(sim.grid, episode.start, episode.goal)
        self.trace = []

    def act(self, obs):
        planner = self.planner
        forecast = self.predictor.forecast(obs.frame)
        planner.move_to(obs.robot)
        planner.update_obstacles(forecast, obs.pedestrians.values())
        self.stalled = False
        found = planner.compute_shortest_path()
        self.trace.append((obs.tick + 1, planner.path_cost(), planner.queue_size, planner.expansions))
        if found:
            return planner.next_move()
        self.stalled = True
        self.stall_ticks += 1
        danger = forecast.steps[0]
        if obs.robot not in danger:
            return obs.robot
        grid = obs.sim.grid
        options = []
        for k, (dc, dr) in enumerate(DIRECTIONS):
            cell = (obs.robot[0] + dc, obs.robot[1] + dr)
            if grid.in_bounds(cell) and cell not in danger:
                options.append((chebyshev(cell, obs.goal), k, cell))
        return min(options)[2] if options else obs.robot


class CrowdSimulator:
    """Replays a :class:`TrajectoryStore` on a grid and runs controllers through episodes."""

    def __init__(
        self,
        store: TrajectoryStore,
        grid: GridSpec | None = None,
        step_cap: Callable[[int], int] = default_step_cap,
        frame_range: tuple[int, int] | None = None,
    ):
        self.store = store
        self.grid = grid or GridSpec(store.scene)
        self.step_cap = step_cap
        # an empty recording needs an explicit frame range to host episodes
        self._frame_range = frame_range
        self._cells: dict[int, dict[int, Cell]] = {}

    @property
    def frame_range(self) -> tuple[int, int]:
        fr = self._frame_range or self.store.frame_range
        if fr is None:
            raise ValueError("empty recording")
        return fr

    def cells_at(self, frame: int) -> dict[int, Cell]:
        cells = self._cells.get(frame)
        if cells is None:
            cell_of = self.grid.cell_of
            cells = {
                t.pedestrian_id: cell_of(*t.position_at(frame)) for t in self.store.active_at(frame)
            }
            self._cells[frame] = cells
        return cells

    def positions_at(self, frame: int) -> dict[int, tuple[float, float]]:
        return {t.pedestrian_id: t.position_at(frame) for t in self.store.active_at(frame)}

    def velocity(self, pedestrian_id: int, frame: int) -> tuple[float, float]:
        t = self.store[pedestrian_id]
        if frame - 1 < t.first_frame:
            return 0.0, 0.0
        (x0, y0), (x1, y1) = t.position_at(frame - 1), t.position_at(frame)
        return x1 - x0, y1 - y0

    # -- episode generation ---------------------------------------------------

    def feasible_episode_count(self) -> int:
        """Number of distinct (start, goal, start_frame) triples satisfying the episode rules."""
        f0, f1 = self.frame_range
        cols, rows = self.grid.cols, self.grid.rows
        c = np.tile(np.arange(cols), rows)
        r = np.repeat(np.arange(rows), cols)
        total = 0
        for frame in range(f0, f1):
            d = self._max_distance(f1 - frame)
            if d < 1:
                continue
            span_c = np.minimum(c + d, cols - 1) - np.maximum(c - d, 0) + 1
            span_r = np.minimum(r + d, rows - 1) - np.maximum(r - d, 0) + 1
            counts = span_c * span_r - 1
            occupied = [cc + rr * cols for cc, rr in set(self.cells_at(frame).values())]
            counts[occupied] = 0
            total += int(counts.sum())
        return total

    def _max_distance(self, remaining: int) -> int:
        # largest optimum whose step cap still fits in the remaining recording
        d = 0
        while self.step_cap(d + 1) <= remaining and d < max(self.grid.cols, self.grid.rows):
            d += 1
        return d

    def make_episodes(self, n: int, seed: int) -> list[Episode]:
        """Sample ``n`` distinct episodes with uniform starts, goals and start frames.

        Starts are unoccupied at the start frame and the recording has at
        least the episode's step cap left after it, so no episode can run
        out of recording.
        """
        if n < 0:
            raise ValueError("n must be >= 0")
        if n == 0:
            return []
        feasible = self.feasible_episode_count()
        if feasible == 0:
            raise ValueError("recording too short to host any episode")
        if n > feasible:
            raise ValueError(f"requested {n} episodes but only {feasible} distinct ones exist")
        rng = np.random.default_rng(seed)
        f0, f1 = self.frame_range
        cols, rows = self.grid.cols, self.grid.rows
        seen: set[tuple[Cell, Cell, int]] = set()
        episodes: list[Episode] = []
        attempts = 0
        while len(episodes) < n:
            attempts += 1
            if attempts > 10_000 * n + 100_000:
                raise RuntimeError("episode rejection sampling did not converge")
            frame = int(rng.integers(f0, f1 + 1))
            start = (int(rng.integers(cols)), int(rng.integers(rows)))
            goal = (int(rng.integers(cols)), int(rng.integers(rows)))
            ep_seed = int(rng.integers(2**63 - 1))
            if start == goal or (start, goal, frame) in seen:
                continue
            if self.step_cap(chebyshev(start, goal)) > f1 - frame:
                continue
            if start in set(self.cells_at(frame).values()):
                continue
            seen.add((start, goal, frame))
            episodes.append(Episode(start, goal, frame, ep_seed))
        return episodes

    # -- running ----------------------------------------------------------------

    def run_episode(self, controller: Controller, episode: Episode) -> EpisodeResult:
        grid = self.grid
        opt = optimal_steps(episode.start, episode.goal, grid)
        cap = self.step_cap(opt)
        last_frame = self.frame_range[1]
        robot = prev = episode.start
        frame = episode.start_frame
        result = EpisodeResult(episode, False, 0, opt, "cap")
        tick = 0
        try:
            controller.reset(self, episode)
            while tick < cap:
                if frame >= last_frame:
                    result.outcome = "recording_end"
                    break
                peds_now = self.cells_at(frame)
                obs = Observation(tick, frame, robot, prev, episode.goal, peds_now, self)
                target = tuple(controller.act(obs))
                if not grid.in_bounds(target) or chebyshev(target, robot) > 1:
                    raise ValueError(f"illegal move {robot} -> {target}")
                moved = target != robot
                frame += 1
                tick += 1
                prev, robot = robot, target
                peds_next = self.cells_at(frame)
                for pid, cell in peds_next.items():
                    if cell != robot:
                        continue
                    # a pedestrian entering the scene counts as moving
                    ped_moved = peds_now.get(pid) != cell
                    kind = classify_collision(moved, ped_moved)
                    if kind is not None:
                        result.events.append(
                            CollisionEvent(tick, frame, robot, kind, pid, moved, ped_moved)
                        )
                result.trace.append(
                    TickRecord(tick, frame, robot, moved, bool(getattr(controller, "stalled", False)))
                )
                if robot == episode.goal:
                    result.reached_goal = True
                    result.outcome = "goal"
                    break
        except Exception as exc:  # reported, never dropped
            log.warning("episode %s aborted: %s", episode, exc)
            result.outcome = "error"
            result.error = f"{type(exc).__name__}: {exc}"
        result.steps_taken = tick
        result.stall_ticks = getattr(controller, "stall_ticks", 0)
        result.planner_trace = list(getattr(controller, "trace", ()))
        return result

    def run(self, controller: Controller, episodes: list[Episode]) -> list[EpisodeResult]:
        return [self.run_episode(controller, ep) for ep in episodes]


# ---------------------------------------------------------------------------
# per-episode logs
# ---------------------------------------------------------------------------

LOG_COLUMNS = ("tick", "frame", "robot_col", "robot_row", "event_type", "pedestrian_id")
PLANNER_COLUMNS = ("tick", "path_cost", "queue_size", "expansions")
NO_EVENT = "NONE"


def write_event_log(result: EpisodeResult, path: str | Path, controller: str = "") -> None:
    """One row per collision event, and one ``NONE`` row for ticks without events.

    A sibling ``.json`` file records the episode and its summary so tables
    can be recomputed from the logs alone.
    """
    path = Path(path)
    by_tick: dict[int, list[CollisionEvent]] = {}
    for e in result.events:
        by_tick.setdefault(e.tick, []).append(e)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for rec in result.trace:
            events = by_tick.get(rec.tick)
            if not events:
                w.writerow((rec.tick, rec.frame, rec.robot[0], rec.robot[1], NO_EVENT, ""))
            for e in events or ():
                w.writerow((rec.tick, rec.frame, rec.robot[0], rec.robot[1], e.type, e.pedestrian_id))
    meta = {
        "controller": controller,
        "episode": asdict(result.episode),
        "reached_goal": result.reached_goal,
        "steps_taken": result.steps_taken,
        "optimal_steps": result.optimal_steps,
        "outcome": result.outcome,
        "stall_ticks": result.stall_ticks,
        "error": result.error,
        "moved": [rec.moved for rec in result.trace],
        "events": [
            {"tick": e.tick, "type": e.type, "pedestrian_id": e.pedestrian_id,
             "robot_moved": e.robot_moved, "ped_moved": e.ped_moved}
            for e in result.events
        ],
    }
    path.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")
    if result.planner_trace:
        with open(path.with_suffix(".planner.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PLANNER_COLUMNS)
            for tick, cost, queue, expansions in result.planner_trace:
                w.writerow((tick, "inf" if math.isinf(cost) else int(cost), queue, expansions))


def read_event_log(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for k in ("tick", "frame", "robot_col", "robot_row"):
            row[k] = int(row[k])
        row["pedestrian_id"] = int(row["pedestrian_id"]) if row["pedestrian_id"] else None
    return rows
