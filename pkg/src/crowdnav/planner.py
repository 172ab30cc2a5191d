"""D* Lite on an 8-connected grid with unit move cost.

The search runs backwards from the goal, so the robot can move and the
obstacle set can change between calls to :meth:`DStarLite.compute_shortest_path`
without replanning from scratch. A blocked cell makes every edge *into* it
infinitely expensive; edges out of it are unaffected, so freeing a cell is
the exact inverse of blocking it.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable

from .dataset import Cell, GridSpec
from .prediction.forecast import OccupancyForecast

INF = math.inf

# enumeration order doubles as the tie-break for next_move; rows grow southward
DIRECTIONS: tuple[tuple[int, int], ...] = (
    (0, -1),   # N
    (1, -1),   # NE
    (1, 0),    # E
    (1, 1),    # SE
    (0, 1),    # S
    (-1, 1),   # SW
    (-1, 0),   # W
    (-1, -1),  # NW
)


class NoPathError(RuntimeError):
    pass


@dataclass(frozen=True)
class ObstacleDelta:
    newly_blocked: frozenset[Cell]
    newly_freed: frozenset[Cell]

    def __bool__(self) -> bool:
        return bool(self.newly_blocked or self.newly_freed)


@lru_cache(maxsize=8)
def _neighbor_table(cols: int, rows: int) -> tuple[tuple[int, ...], ...]:
    table = []
    for v in range(cols * rows):
        c, r = v % cols, v // cols
        table.append(tuple(
            (r + dr) * cols + (c + dc)
            for dc, dr in DIRECTIONS
            if 0 <= c + dc < cols and 0 <= r + dr < rows
        ))
    return tuple(table)


def chebyshev(a: Cell, b: Cell) -> int:
    return max(abs(a[0] - b[0]), abs(a[1] - b[1]))


class DStarLite:
    def __init__(self, grid: GridSpec, start: Cell, goal: Cell, blocked: Iterable[Cell] = ()):
        for name, cell in (("start", start), ("goal", goal)):
            if not grid.in_bounds(cell):
                raise ValueError(f"{name} {cell} outside {grid.cols}x{grid.rows} grid")
        self.grid = grid
        self.cols = grid.cols
        n = grid.n_cells
        self._nbrs = _neighbor_table(grid.cols, grid.rows)
        self._col = [v % self.cols for v in range(n)]
        self._row = [v // self.cols for v in range(n)]
        self.g = [INF] * n
        self.rhs = [INF] * n
        self.blocked = bytearray(n)
        self.start = self._id(start)
        self.goal = self._id(goal)
        self.last = self.start
        self.km = 0
        self._heap: list[tuple[float, float, int]] = []
        self._queued: dict[int, tuple[float, float]] = {}
        self.expansions = 0

        self.rhs[self.goal] = 0
        self._push(self.goal, (self._h(self.start, self.goal), 0))
        blocked = set(blocked)
        if start in blocked:
            raise ValueError(f"start {start} is blocked")
        for cell in blocked:
            self.blocked[self._id(cell)] = 1

    # -- helpers ----------------------------------------------------------

    def _id(self, cell: Cell) -> int:
        return cell[1] * self.cols + cell[0]

    def cell(self, v: int) -> Cell:
        return self._col[v], self._row[v]

    def _h(self, a: int, b: int) -> int:
        return max(abs(self._col[a] - self._col[b]), abs(self._row[a] - self._row[b]))

    def _key(self, v: int) -> tuple[float, float]:
        m = min(self.g[v], self.rhs[v])
        return m + self._h(self.start, v) + self.km, m

    def _push(self, v: int, key: tuple[float, float]) -> None:
        self._queued[v] = key
        heapq.heappush(self._heap, (key[0], key[1], v))

    def _top(self) -> tuple[float, float, int] | None:
        heap, queued = self._heap, self._queued
        while heap:
            k1, k2, v = heap[0]
            if queued.get(v) == (k1, k2):
                return heap[0]
            heapq.heappop(heap)
        return None

    def _best_rhs(self, u: int) -> float:
        g, blocked = self.g, self.blocked
        best = INF
        for s in self._nbrs[u]:
            if not blocked[s]:
                c = 1 + g[s]
                if c < best:
                    best = c
        return best

    def _update_vertex(self, u: int) -> None:
        if self.g[u] != self.rhs[u]:
            self._push(u, self._key(u))
        else:
            self._queued.pop(u, None)

    def _sync_start(self) -> None:
        if self.start != self.last:
            self.km += self._h(self.last, self.start)
            self.last = self.start

    # -- public interface -------------------------------------------------

    @property
    def robot(self) -> Cell:
        return self.cell(self.start)

    @property
    def goal_cell(self) -> Cell:
        return self.cell(self.goal)

    @property
    def queue_size(self) -> int:
        return len(self._queued)

    def is_blocked(self, cell: Cell) -> bool:
        return bool(self.blocked[self._id(cell)])

    def blocked_cells(self) -> set[Cell]:
        return {self.cell(v) for v, b in enumerate(self.blocked) if b}

    def move_to(self, cell: Cell) -> None:
        """Record that the robot now stands on ``cell``."""
        if not self.grid.in_bounds(cell):
            raise ValueError(f"{cell} outside grid")
        self.start = self._id(cell)

    def set_blocked(self, cells: Iterable[Cell]) -> ObstacleDelta:
        """Replace the blocked set and repair the affected rhs values."""
        self._sync_start()
        new = bytearray(len(self.blocked))
        for c in cells:
            new[self._id(c)] = 1
        changed = [v for v in range(len(new)) if new[v] != self.blocked[v]]
        if not changed:
            return ObstacleDelta(frozenset(), frozenset())
        g, rhs, goal = self.g, self.rhs, self.goal
        blocked_now, freed_now = [], []
        for v in changed:
            self.blocked[v] = new[v]
            (blocked_now if new[v] else freed_now).append(self.cell(v))
            gv = g[v]
            for u in self._nbrs[v]:
                if u == goal:
                    continue
                if new[v]:
                    # edge u->v went from 1 to inf
                    if rhs[u] == 1 + gv:
                        rhs[u] = self._best_rhs(u)
                elif 1 + gv < rhs[u]:
                    rhs[u] = 1 + gv
                self._update_vertex(u)
        return ObstacleDelta(frozenset(blocked_now), frozenset(freed_now))

    def update_obstacles(self, forecast: OccupancyForecast, true_current: Iterable[Cell]) -> ObstacleDelta:
        """Block the pedestrians' current cells and every forecast horizon.

        The robot's own cell is never blocked. The goal is blocked only when
        it is predicted occupied one step ahead, so the robot cannot step
        onto a goal a pedestrian is about to enter but is never locked out
        of it by longer-range predictions.
        """
        cells = set(true_current) | forecast.union()
        cells.discard(self.robot)
        goal = self.goal_cell
        if goal in cells and goal not in forecast.steps[0]:
            cells.discard(goal)
        return self.set_blocked(cells)

    def compute_shortest_path(self) -> bool:
        """Repair g-values until the start is consistent; True if a path exists."""
        self._sync_start()
        g, rhs, blocked, nbrs = self.g, self.rhs, self.blocked, self._nbrs
        start, goal = self.start, self.goal
        queued = self._queued
        while True:
            top = self._top()
            if top is None:
                break
            k_start = self._key(start)
            if not ((top[0], top[1]) < k_start or rhs[start] > g[start]):
                break
            k1, k2, u = heapq.heappop(self._heap)
            k_new = self._key(u)
            self.expansions += 1
            if (k1, k2) < k_new:
                self._push(u, k_new)
            elif g[u] > rhs[u]:
                g[u] = rhs[u]
                del queued[u]
                cost = INF if blocked[u] else 1 + g[u]
                for s in nbrs[u]:
                    if s != goal and cost < rhs[s]:
                        rhs[s] = cost
                    self._update_vertex(s)
            else:
                g_old = g[u]
                g[u] = INF
                via = INF if blocked[u] else 1 + g_old
                for s in nbrs[u]:
                    if s != goal and rhs[s] == via:
                        rhs[s] = self._best_rhs(s)
                    self._update_vertex(s)
                if u != goal:
                    rhs[u] = self._best_rhs(u)
                self._update_vertex(u)
        return rhs[start] < INF

    def path_cost(self) -> float:
        return self.rhs[self.start]

    def next_move(self) -> Cell:
        """Neighbor minimising 1 + g; ties resolved in N, NE, E, ... NW order."""
        if self.start == self.goal:
            raise NoPathError("robot is already at the goal")
        g, blocked = self.g, self.blocked
        best, best_v = INF, -1
        for s in self._nbrs[self.start]:
            if blocked[s]:
                continue
            c = 1 + g[s]
            if c < best:
                best, best_v = c, s
        if best_v < 0 or best == INF:
            raise NoPathError(f"no path from {self.robot} to {self.goal_cell}")
        return self.cell(best_v)

    def path(self) -> list[Cell]:
        """Greedy descent from the robot to the goal along the current g-values."""
        cells = [self.robot]
        v = self.start
        for _ in range(len(self.g)):
            if v == self.goal:
                return cells
            best, best_v = INF, -1
            for s in self._nbrs[v]:
                if not self.blocked[s] and 1 + self.g[s] < best:
                    best, best_v = 1 + self.g[s], s
            if best_v < 0 or best == INF:
                raise NoPathError("no path")
            v = best_v
            cells.append(self.cell(v))
        raise NoPathError("path extraction did not terminate")

    def inconsistent_vertices(self) -> list[Cell]:
        return [self.cell(v) for v in range(len(self.g)) if self.g[v] != self.rhs[v]]

    def queued_vertices(self) -> set[Cell]:
        return {self.cell(v) for v in self._queued}

    def key_of(self, cell: Cell) -> tuple[float, float]:
        return self._key(self._id(cell))

    def recomputed_rhs(self, cell: Cell) -> float:
        v = self._id(cell)
        return 0 if v == self.goal else self._best_rhs(v)
