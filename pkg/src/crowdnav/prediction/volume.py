"""Sparse displacement-volume input encoding for grid-based CNN predictors.

The dense volume is ``X x Y x 10`` and zero everywhere except at each
pedestrian's current pixel, which holds ``1 + (x5 - xt) / X`` and
``1 + (y5 - yt) / Y`` for t = 1..5 (oldest first).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..dataset import SceneSpec

DEPTH = 10


def displacement_vector(last5: Sequence[Sequence[float]], scene: SceneSpec) -> np.ndarray:
    pts = np.asarray(last5, dtype=np.float64)
    if pts.shape != (5, 2):
        raise ValueError(f"need exactly 5 (x, y) points, got shape {pts.shape}")
    rel = pts[-1] - pts  # (x5 - xt, y5 - yt)
    rel /= (scene.width, scene.height)
    return (1.0 + rel).reshape(DEPTH)


def decode_displacements(vector, scene: SceneSpec) -> np.ndarray:
    """Inverse of :func:`displacement_vector`: rows are ``(x5 - xt, y5 - yt)``."""
    v = np.asarray(vector, dtype=np.float64).reshape(5, 2)
    return (v - 1.0) * (scene.width, scene.height)


def pixel_key(x: float, y: float, scene: SceneSpec) -> tuple[int, int]:
    px = min(max(int(math.floor(x)), 0), int(math.ceil(scene.width)) - 1)
    py = min(max(int(math.floor(y)), 0), int(math.ceil(scene.height)) - 1)
    return px, py


@dataclass
class DisplacementVolume:
    scene: SceneSpec
    entries: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int, int]:
        return int(math.ceil(self.scene.width)), int(math.ceil(self.scene.height)), DEPTH

    def add(self, last5) -> tuple[int, int]:
        key = pixel_key(*last5[-1], self.scene)
        self.entries[key] = displacement_vector(last5, self.scene)
        return key

    def to_dense(self, dtype=np.float32) -> np.ndarray:
        out = np.zeros(self.shape, dtype=dtype)
        for (x, y), vec in self.entries.items():
            out[x, y] = vec
        return out


def encode_displacement_volume(last5, scene: SceneSpec) -> DisplacementVolume:
    vol = DisplacementVolume(scene)
    vol.add(last5)
    return vol


def encode_scene(windows: Iterable, scene: SceneSpec) -> DisplacementVolume:
    """One entry per pedestrian window; a later window at the same pixel replaces an earlier one."""
    vol = DisplacementVolume(scene)
    for w in windows:
        vol.add(np.asarray(w, dtype=np.float64))
    return vol
