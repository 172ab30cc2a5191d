"""Small hand-built recordings for controller sanity runs."""

from __future__ import annotations

import numpy as np

from .dataset import GridSpec, RawTrajectory, SceneSpec, TrajectoryStore

CORRIDOR_SCENE = SceneSpec(width=480.0, height=150.0)
CORRIDOR_GRID = GridSpec(CORRIDOR_SCENE, cols=16, rows=5)


def corridor_crossings(
    frames: int = 2000,
    seed: int = 0,
    crossers: int = 2,
    speed_px: float = 30.0,
    speed_jitter: float = 5.0,
    max_pause: int = 6,
) -> TrajectoryStore:
    """A 16x5-cell corridor that ``crossers`` pedestrians keep crossing.

    Each crosser is present for the whole recording. It walks across the
    corridor's short side with a random sideways drift, may pause for up to
    ``max_pause`` frames at the wall, then turns back with a fresh speed and
    drift. Nobody enters or leaves, so every pedestrian is observable before
    it can reach the robot.
    """
    scene = CORRIDOR_SCENE
    rng = np.random.default_rng(seed)
    top = float(np.nextafter(scene.height, 0))
    right = float(np.nextafter(scene.width, 0))
    trajs = []
    for pid in range(crossers):
        x = float(rng.uniform(0, scene.width))
        y = float(rng.uniform(0, scene.height))
        down = bool(rng.integers(2))
        xy = []
        while len(xy) < frames:
            v = float(max(rng.normal(speed_px, speed_jitter), 0.4 * speed_px))
            drift = float(rng.uniform(-0.5, 0.5)) * v
            while len(xy) < frames:
                xy.append((x, y))
                y += v if down else -v
                x = min(max(x + drift, 0.0), right)
                if not 0.0 <= y < scene.height:
                    y = min(max(y, 0.0), top)
                    break
            for _ in range(int(rng.integers(0, max_pause + 1))):
                if len(xy) < frames:
                    xy.append((x, y))
            down = not down
        trajs.append(RawTrajectory(pid, np.arange(frames), np.array(xy)))
    return TrajectoryStore.from_trajectories(trajs, scene)
