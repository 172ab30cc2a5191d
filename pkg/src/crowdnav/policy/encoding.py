"""Joint robot/pedestrian state vector and the discrete action set."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..dataset import Cell, GridSpec, SceneSpec

# index order is the greedy tie-break order; rows grow southward
ACTIONS: tuple[tuple[int, int], ...] = (
    (0, 0),    # stay
    (0, -1),   # N
    (1, -1),   # NE
    (1, 0),    # E
    (1, 1),    # SE
    (0, 1),    # S
    (-1, 1),   # SW
    (-1, 0),   # W
    (-1, -1),  # NW
)
ACTION_NAMES = ("stay", "N", "NE", "E", "SE", "S", "SW", "W", "NW")
N_ACTIONS = len(ACTIONS)

N_NEIGHBORS = 3
ROBOT_BLOCK = 6  # goal dx, goal dy, vx, vy, radius, distance to goal
PED_BLOCK = 7  # rel x, rel y, vx, vy, radius, distance, presence
STATE_SIZE = ROBOT_BLOCK + N_NEIGHBORS * PED_BLOCK


@dataclass(frozen=True)
class AgentObservation:
    position: tuple[float, float]
    velocity: tuple[float, float] = (0.0, 0.0)
    radius: float = 15.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")


def encode_joint_state(
    robot: AgentObservation,
    goal: tuple[float, float],
    peds: Sequence[AgentObservation],
    scene: SceneSpec,
) -> np.ndarray:
    """Robot block followed by the three nearest pedestrians, nearest first.

    x quantities are divided by the scene width, y quantities by its height,
    and radii and Euclidean distances by the scene diagonal. Missing
    pedestrians are zero blocks with presence 0.
    """
    X, Y = scene.width, scene.height
    diag = math.hypot(X, Y)
    px, py = robot.position
    gx, gy = goal
    out = np.zeros(STATE_SIZE)
    out[:ROBOT_BLOCK] = (
        (gx - px) / X,
        (gy - py) / Y,
        robot.velocity[0] / X,
        robot.velocity[1] / Y,
        robot.radius / diag,
        math.hypot(gx - px, gy - py) / diag,
    )
    ranked = sorted(
        ((math.hypot(p.position[0] - px, p.position[1] - py), k) for k, p in enumerate(peds))
    )[:N_NEIGHBORS]
    for slot, (dist, k) in enumerate(ranked):
        p = peds[k]
        base = ROBOT_BLOCK + slot * PED_BLOCK
        out[base : base + PED_BLOCK] = (
            (p.position[0] - px) / X,
            (p.position[1] - py) / Y,
            p.velocity[0] / X,
            p.velocity[1] / Y,
            p.radius / diag,
            dist / diag,
            1.0,
        )
    return out


def action_mask(cell: Cell, grid: GridSpec) -> np.ndarray:
    """True for every action that keeps the robot on the grid."""
    c, r = cell
    return np.array(
        [0 <= c + dc < grid.cols and 0 <= r + dr < grid.rows for dc, dr in ACTIONS]
    )


def apply_action(cell: Cell, action: int) -> Cell:
    dc, dr = ACTIONS[action]
    return cell[0] + dc, cell[1] + dr
