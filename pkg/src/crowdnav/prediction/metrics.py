from __future__ import annotations

import numpy as np

from ..dataset import SceneSpec


def nmse(predictions, truths, scene: SceneSpec) -> float:
    """Mean over points of the Euclidean error in scene-normalised coordinates.

    All horizon steps of all evaluated windows are pooled into one mean.
    """
    p = np.asarray(predictions, dtype=np.float64).reshape(-1, 2)
    t = np.asarray(truths, dtype=np.float64).reshape(-1, 2)
    if len(p) != len(t):
        raise ValueError(f"length mismatch: {len(p)} predictions vs {len(t)} truths")
    if len(p) == 0:
        raise ValueError("nmse of zero points is undefined")
    err = (t - p) / (scene.width, scene.height)
    return float(np.mean(np.hypot(err[:, 0], err[:, 1])))
