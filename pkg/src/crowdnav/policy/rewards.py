from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RewardSpec:
    goal: float = 1.0
    step: float = -0.01
    collision: float = -0.25
    gamma: float = 0.99

    def __post_init__(self):
        if not self.goal > 0:
            raise ValueError("goal reward must be positive")
        if self.step > 0 or self.collision > 0:
            raise ValueError("step and collision penalties must be <= 0")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")


def reward(reached_goal: bool, collided: bool, spec: RewardSpec = RewardSpec()) -> float:
    """Goal reward on arrival, otherwise the step penalty; a collision adds its penalty."""
    r = spec.goal if reached_goal else spec.step
    if collided:
        r += spec.collision
    return r


def discounted_returns(rewards, gamma: float) -> np.ndarray:
    out = np.zeros(len(rewards))
    acc = 0.0
    for t in reversed(range(len(rewards))):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out
