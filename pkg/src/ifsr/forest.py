"""Random forest of Gini decision trees with hard voting, stored as flat arrays."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyTrainingSet

LEAF = -1


@dataclass
class Tree:
    feature: np.ndarray  # (nodes,) split feature, LEAF for leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    label: np.ndarray  # leaf label (majority class at the node)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Leaf label for every row of ``x``."""
        node = np.zeros(len(x), dtype=np.int64)
        active = self.feature[node] != LEAF
        while active.any():
            rows = np.flatnonzero(active)
            nd = node[rows]
            go_left = x[rows, self.feature[nd]] <= self.threshold[nd]
            node[rows] = np.where(go_left, self.left[nd], self.right[nd])
            active[rows] = self.feature[node[rows]] != LEAF
        return self.label[node]


@dataclass
class RandomForest:
    trees: list[Tree]
    n_classes: int
    feature_dim: int
    seed: int

    @property
    def T(self) -> int:
        return len(self.trees)

    def votes(self, x: np.ndarray) -> np.ndarray:
        """(n, n_classes) integer vote counts."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        v = np.zeros((len(x), self.n_classes), dtype=np.int64)
        rows = np.arange(len(x))
        for t in self.trees:
            np.add.at(v, (rows, t.apply(x)), 1)
        return v

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        """Vote fractions v_k / sum_j v_j per row."""
        v = self.votes(x)
        return v / v.sum(axis=1, keepdims=True)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.votes(x).argmax(axis=1)

    def to_arrays(self) -> dict[str, np.ndarray]:
        sizes = np.array([len(t.feature) for t in self.trees], dtype=np.int64)
        cat = lambda name, dt: np.concatenate([getattr(t, name) for t in self.trees]).astype(dt)  # noqa: E731
        return {
            "sizes": sizes,
            "feature": cat("feature", np.int64),
            "threshold": cat("threshold", np.float64),
            "left": cat("left", np.int64),
            "right": cat("right", np.int64),
            "label": cat("label", np.int64),
        }

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], n_classes: int, feature_dim: int, seed: int) -> "RandomForest":
        bounds = np.concatenate([[0], np.cumsum(arrays["sizes"])])
        trees = [
            Tree(*(np.asarray(arrays[k][a:b]) for k in ("feature", "threshold", "left", "right", "label")))
            for a, b in zip(bounds[:-1], bounds[1:])
        ]
        return cls(trees, n_classes, feature_dim, seed)


def _gini_best_split(xf: np.ndarray, y: np.ndarray, n_classes: int) -> tuple[float, float] | None:
    """Best (weighted child impurity, threshold) for one feature, or None if constant."""
    order = np.argsort(xf, kind="stable")
    xs = xf[order]
    valid = np.flatnonzero(xs[1:] > xs[:-1])  # split after position i
    if len(valid) == 0:
        return None
    n = len(y)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y[order]] = 1.0
    left = np.cumsum(onehot, axis=0)[valid]
    right = onehot.sum(axis=0) - left
    nl = (valid + 1).astype(np.float64)
    nr = n - nl
    gl = 1.0 - ((left / nl[:, None]) ** 2).sum(axis=1)
    gr = 1.0 - ((right / nr[:, None]) ** 2).sum(axis=1)
    score = (nl * gl + nr * gr) / n
    j = int(np.argmin(score))
    i = valid[j]
    thr = 0.5 * (xs[i] + xs[i + 1])
    if not thr < xs[i + 1]:  # midpoint rounded up onto the right value
        thr = xs[i]
    return float(score[j]), float(thr)


def build_tree(x: np.ndarray, y: np.ndarray, n_classes: int, max_features: int, rng: np.random.Generator) -> Tree:
    feature, threshold, left, right, label = [], [], [], [], []

    def new_node(lab: int) -> int:
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        label.append(lab)
        return len(feature) - 1

    d = x.shape[1]
    stack = [(np.arange(len(y)), new_node(-1))]
    while stack:
        idx, node = stack.pop()
        ys = y[idx]
        counts = np.bincount(ys, minlength=n_classes)
        label[node] = int(counts.argmax())
        if counts.max() == len(idx):
            continue
        best = None
        visited = 0
        for f in rng.permutation(d):
            res = _gini_best_split(x[idx, f], ys, n_classes)
            if res is None:
                continue  # constant features do not count toward max_features
            visited += 1
            if best is None or res[0] < best[0]:
                best = (res[0], res[1], int(f))
            if visited == max_features:
                break
        if best is None:
            continue
        _, thr, f = best
        mask = x[idx, f] <= thr
        feature[node] = f
        threshold[node] = thr
        li, ri = new_node(-1), new_node(-1)
        left[node], right[node] = li, ri
        stack.append((idx[~mask], ri))
        stack.append((idx[mask], li))
    return Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(label, dtype=np.int64),
    )


def train_forest(
    x: np.ndarray,
    y: np.ndarray,
    n_classes: int | None = None,
    n_trees: int = 500,
    max_features: int | None = None,
    seed: int = 0,
) -> RandomForest:
    """Bootstrap-aggregated Gini trees; ``max_features`` defaults to ceil(sqrt(d)).

    Each tree draws its bootstrap and split candidates from its own child
    of ``SeedSequence(seed)``, so the result does not depend on how trees
    are scheduled.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise EmptyTrainingSet("no core samples to train on")
    if x.ndim != 2 or len(x) != len(y):
        raise ValueError("x must be (n, d) with one label per row")
    k = int(n_classes if n_classes is not None else y.max() + 1)
    mf = max_features or math.ceil(math.sqrt(x.shape[1]))
    trees = []
    for child in np.random.SeedSequence(seed).spawn(n_trees):
        rng = np.random.default_rng(child)
        boot = rng.integers(0, len(y), len(y))
        trees.append(build_tree(x[boot], y[boot], k, mf, rng))
    return RandomForest(trees, k, x.shape[1], seed)
