from __future__ import annotations

from typing import Iterable

from ..dataset import Cell, GridSpec


def rasterize_continuous_path(
    positions: Iterable[tuple[float, float]], grid: GridSpec
) -> list[tuple[Cell, bool]]:
    """Map continuous positions to grid cells.

    The moved flag is False whenever a step does not leave the previous
    cell, so sub-cell motion counts as standing still on the grid. The first
    position has no predecessor and is flagged False.
    """
    out: list[tuple[Cell, bool]] = []
    prev = None
    for x, y in positions:
        cell = grid.cell_of(x, y)
        out.append((cell, prev is not None and cell != prev))
        prev = cell
    return out
