"""Multi-output CART regression trees and a bagged random forest.

Splits minimise the summed squared error over all outputs, i.e. the sum of
per-output variances weighted by node size.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

MAGIC = b"CROWDNAV-FOREST\n"
FORMAT_VERSION = 1
LEAF = -1


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 5
    min_samples_split: int = 2
    max_features: int | None = 11  # ceil(31 / 3); None means all features
    bootstrap: bool = True

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0 or None")
        if self.min_samples_leaf < 1 or self.min_samples_split < 2:
            raise ValueError("min_samples_leaf >= 1 and min_samples_split >= 2 required")
        if self.max_features is not None and self.max_features < 1:
            raise ValueError("max_features must be >= 1 or None")


class RegressionTree:
    """Array-backed binary tree.

    Node ``i`` is a leaf when ``feature[i] == -1``; otherwise samples with
    ``x[feature[i]] <= threshold[i]`` go to ``left[i]``. ``value[i]`` is the
    mean target of the training samples that reached the node and
    ``n_samples[i]`` their count.
    """

    def __init__(self, feature, threshold, left, right, value, n_samples):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=np.float64)
        self.n_samples = np.asarray(n_samples, dtype=np.int64)

    @property
    def node_count(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        depth = np.zeros(self.node_count, dtype=np.int64)
        for i in range(self.node_count):
            if self.feature[i] != LEAF:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row of ``X``."""
        X = np.atleast_2d(X)
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self.feature[node] != LEAF
        while active.any():
            r = rows[active]
            nd = node[r]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active[r] = self.feature[node[r]] != LEAF
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def arrays(self):
        return (self.feature, self.threshold, self.left, self.right, self.value, self.n_samples)


def _best_split(Xn, yn, features, min_leaf):
    """Best (feature, threshold, left_mask) over ``features`` or None."""
    n = len(yn)
    best_score = -math.inf
    best = None
    counts_l = np.arange(1, n, dtype=np.float64)
    counts_r = n - counts_l
    lo, hi = min_leaf - 1, n - min_leaf  # valid split positions i in [lo, hi)
    if lo >= hi:
        return None
    total = yn.sum(axis=0)
    for f in features:
        xs = Xn[:, f]
        order = np.argsort(xs, kind="stable")
        xs_sorted = xs[order]
        if xs_sorted[0] == xs_sorted[-1]:
            continue
        csum = np.cumsum(yn[order], axis=0)[:-1]
        # maximising sum_l^2/n_l + sum_r^2/n_r minimises the children's SSE
        score = (csum * csum).sum(axis=1) / counts_l
        rest = total - csum
        score += (rest * rest).sum(axis=1) / counts_r
        distinct = xs_sorted[1:] > xs_sorted[:-1]
        distinct[:lo] = False
        distinct[hi:] = False
        if not distinct.any():
            continue
        score = np.where(distinct, score, -np.inf)
        i = int(np.argmax(score))
        if score[i] > best_score:
            best_score = score[i]
            a, b = xs_sorted[i], xs_sorted[i + 1]
            thr = a + (b - a) / 2.0
            if not a <= thr < b:
                thr = a
            best = (f, thr)
    if best is None:
        return None
    f, thr = best
    return f, thr, Xn[:, f] <= thr


def fit_tree(
    X: np.ndarray,
    y: np.ndarray,
    params: ForestParams,
    rng: np.random.Generator,
    sample_index: np.ndarray | None = None,
) -> RegressionTree:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n_features = X.shape[1]
    k = n_features if params.max_features is None else min(params.max_features, n_features)
    max_depth = math.inf if params.max_depth is None else params.max_depth
    idx0 = np.arange(len(X)) if sample_index is None else sample_index

    feature, threshold, left, right, value, count = [], [], [], [], [], []

    def new_node(idx):
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(y[idx].mean(axis=0))
        count.append(len(idx))
        return len(feature) - 1

    stack = [(new_node(idx0), idx0, 0)]
    while stack:
        node, idx, depth = stack.pop()
        n = len(idx)
        if depth >= max_depth or n < params.min_samples_split or n < 2 * params.min_samples_leaf:
            continue
        yn = y[idx]
        if np.all(yn == yn[0]):
            continue
        Xn = X[idx]
        order = rng.permutation(n_features)
        split = _best_split(Xn, yn, order[:k], params.min_samples_leaf)
        if split is None and k < n_features:
            # no usable split among the drawn features: keep drawing
            split = _best_split(Xn, yn, order[k:], params.min_samples_leaf)
        if split is None:
            continue
        f, thr, mask = split
        feature[node] = int(f)
        threshold[node] = float(thr)
        li, ri = idx[mask], idx[~mask]
        left[node] = new_node(li)
        right[node] = new_node(ri)
        # right pushed first so the left subtree is numbered first
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))

    return RegressionTree(feature, threshold, left, right, np.array(value), count)


class RegressionForest:
    def __init__(self, trees: list[RegressionTree], params: ForestParams, seed: int):
        if not trees:
            raise ValueError("a forest needs at least one tree")
        self.trees = list(trees)
        self.params = params
        self.seed = seed

    @property
    def n_outputs(self) -> int:
        return self.trees[0].value.shape[1]

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.zeros((len(X), self.n_outputs))
        for tree in self.trees:
            out += tree.predict(X)
        return out / len(self.trees)

    # serialization -------------------------------------------------------

    def to_bytes(self) -> bytes:
        header = {
            "version": FORMAT_VERSION,
            "params": asdict(self.params),
            "seed": self.seed,
            "n_outputs": self.n_outputs,
            "node_counts": [t.node_count for t in self.trees],
        }
        parts = [MAGIC, json.dumps(header, sort_keys=True).encode() + b"\n"]
        for t in self.trees:
            f, thr, l, r, v, c = t.arrays()
            for arr, dt in ((f, "<i8"), (thr, "<f8"), (l, "<i8"), (r, "<i8"), (v, "<f8"), (c, "<i8")):
                parts.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "RegressionForest":
        if not data.startswith(MAGIC):
            raise ValueError("not a forest model file")
        end = data.index(b"\n", len(MAGIC))
        header = json.loads(data[len(MAGIC) : end])
        if header.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported forest format version {header.get('version')}")
        k = header["n_outputs"]
        pos = end + 1
        trees = []

        def take(n, dt):
            nonlocal pos
            arr = np.frombuffer(data, dtype=dt, count=n, offset=pos).copy()
            pos += n * 8
            return arr

        for m in header["node_counts"]:
            f, thr, l, r = take(m, "<i8"), take(m, "<f8"), take(m, "<i8"), take(m, "<i8")
            v = take(m * k, "<f8").reshape(m, k)
            c = take(m, "<i8")
            trees.append(RegressionTree(f, thr, l, r, v, c))
        if pos != len(data):
            raise ValueError("trailing bytes in forest model file")
        return cls(trees, ForestParams(**header["params"]), header["seed"])

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "RegressionForest":
        return cls.from_bytes(Path(path).read_bytes())


def fit_forest(X, y, params: ForestParams | None = None, seed: int = 0) -> RegressionForest:
    """Fit a bagged forest; each tree draws from its own child of ``seed``."""
    params = params or ForestParams()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(X) == 0:
        raise ValueError("cannot fit a forest on an empty training set")
    if y.ndim == 1:
        y = y[:, None]
    if len(X) != len(y):
        raise ValueError("X and y have different sample counts")
    trees = []
    for child in np.random.SeedSequence(seed).spawn(params.n_trees):
        rng = np.random.default_rng(child)
        sample = rng.integers(0, len(X), len(X)) if params.bootstrap else None
        trees.append(fit_tree(X, y, params, rng, sample))
    return RegressionForest(trees, params, seed)


def forest_predict(forest: RegressionForest, features) -> np.ndarray:
    return forest.predict(np.asarray(features, dtype=np.float64)[None])[0]
