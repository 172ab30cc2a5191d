"""Hand-crafted motion features over a pedestrian's last five positions."""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from ..dataset import RawTrajectory

N_FEATURES = 31
N_TARGETS = 10
WINDOW = 5
HORIZON = 5

FEATURE_NAMES = (
    [f"{c}{i}" for i in range(1, 6) for c in ("x", "y")]
    + [f"d{c}{i}" for i in range(1, 5) for c in ("x", "y")]
    + [f"speed{i}" for i in range(1, 5)]
    + ["speed_mean"]
    + [f"accel{i}" for i in range(1, 4)]
    + ["accel_mean"]
    + [f"angle{i}" for i in range(1, 5)]
)


def extract_features_batch(windows: np.ndarray) -> np.ndarray:
    """Features for a batch of windows shaped ``(n, 5, 2)``; returns ``(n, 31)``."""
    w = np.asarray(windows, dtype=np.float64)
    if w.ndim != 3 or w.shape[1:] != (WINDOW, 2):
        raise ValueError(f"expected windows of shape (n, 5, 2), got {w.shape}")
    n = len(w)
    steps = np.diff(w, axis=1)  # (n, 4, 2)
    speeds = np.hypot(steps[..., 0], steps[..., 1])
    accels = np.diff(speeds, axis=1)
    angles = np.arctan2(steps[..., 1], steps[..., 0])
    # atan2 yields -pi for (-0.0, negative x); keep the range half-open at -pi
    angles[angles <= -math.pi] = math.pi
    angles[(steps[..., 0] == 0) & (steps[..., 1] == 0)] = 0.0
    return np.concatenate(
        [
            w.reshape(n, 10),
            steps.reshape(n, 8),
            speeds,
            speeds.mean(axis=1, keepdims=True),
            accels,
            accels.mean(axis=1, keepdims=True),
            angles,
        ],
        axis=1,
    )


def extract_features(last5: Sequence[Sequence[float]]) -> np.ndarray:
    pts = np.asarray(last5, dtype=np.float64)
    if pts.shape != (WINDOW, 2):
        raise ValueError(f"need exactly 5 (x, y) points, got shape {pts.shape}")
    return extract_features_batch(pts[None])[0]


def trajectory_windows(traj: RawTrajectory) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sliding 5-in/5-out windows over one trajectory.

    Returns ``(inputs, targets, frames)`` where inputs are ``(n, 5, 2)``
    pixel positions, targets ``(n, 10)`` displacements of the next five
    points relative to the window's last point, and frames the frame of that
    last point. Trajectories shorter than 10 points give empty arrays.
    """
    xy = traj.xy
    n = len(xy) - WINDOW - HORIZON + 1
    if n <= 0:
        return np.empty((0, WINDOW, 2)), np.empty((0, N_TARGETS)), np.empty(0, dtype=np.int64)
    idx = np.arange(n)[:, None]
    inputs = xy[idx + np.arange(WINDOW)]
    future = xy[idx + WINDOW + np.arange(HORIZON)]
    targets = (future - inputs[:, -1:, :]).reshape(n, N_TARGETS)
    frames = traj.frames[WINDOW - 1 : WINDOW - 1 + n]
    return inputs, targets, np.asarray(frames)


def build_samples(trajs: Iterable[RawTrajectory]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack windows of many trajectories; returns ``(inputs, features, targets)``."""
    ins, tgs = [], []
    for t in trajs:
        i, g, _ = trajectory_windows(t)
        ins.append(i)
        tgs.append(g)
    if not ins:
        return np.empty((0, WINDOW, 2)), np.empty((0, N_FEATURES)), np.empty((0, N_TARGETS))
    inputs = np.concatenate(ins)
    targets = np.concatenate(tgs)
    return inputs, extract_features_batch(inputs), targets


def split_by_trajectory(
    ids: Iterable[int], seed: int, fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
) -> tuple[list[int], list[int], list[int]]:
    """Seeded train/validation/test split of trajectory ids."""
    ids = sorted(ids)
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n_train = round(fractions[0] * len(ids))
    n_val = round(fractions[1] * len(ids))
    return (
        sorted(shuffled[:n_train]),
        sorted(shuffled[n_train : n_train + n_val]),
        sorted(shuffled[n_train + n_val :]),
    )
