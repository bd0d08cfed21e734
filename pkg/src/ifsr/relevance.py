"""Per-query cluster relevance: direct and indirect assignment, joint cost, threshold."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .forest import RandomForest

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-6


@dataclass
class RelevanceResult:
    costs: np.ndarray
    relevant: np.ndarray  # sorted cluster indices
    epsilon: float
    forced: bool = False
    p_rf: np.ndarray | None = field(default=None, repr=False)
    p_knn: np.ndarray | None = field(default=None, repr=False)

    def is_relevant(self, k: int) -> bool:
        return bool(np.isin(k, self.relevant))


def predict_proba(forest: RandomForest, x: np.ndarray) -> np.ndarray:
    """Direct assignment: fraction of trees voting each cluster (one row per input)."""
    x = np.asarray(x, dtype=np.float64)
    p = forest.predict_proba(x)
    return p[0] if x.ndim == 1 else p


def default_k(n: int, M: int) -> int:
    """1.5 times the average cluster size, rounded half up, at least 1."""
    return max(1, int(math.floor(1.5 * n / M + 0.5)))


def nearest_neighbors(dist_row: np.ndarray, K: int, exclude: int | None = None) -> np.ndarray:
    """Indices of the K smallest distances (ties by index), optionally skipping one."""
    d = np.asarray(dist_row, dtype=np.float64)
    idx = np.arange(len(d))
    if exclude is not None:
        idx = idx[idx != exclude]
    avail = len(idx)
    if K > avail:
        log.warning("K=%d exceeds the %d available neighbours; using all", K, avail)
        K = avail
    order = np.lexsort((idx, d[idx]))
    return idx[order[:K]]


def indirect_assignment(
    dist_row: np.ndarray, gallery_p_rf: np.ndarray, K: int, exclude: int | None = None
) -> np.ndarray:
    """Summed forest distributions of the K local-feature neighbours, renormalized."""
    nbrs = nearest_neighbors(dist_row, K, exclude)
    s = np.asarray(gallery_p_rf, dtype=np.float64)[nbrs].sum(axis=0)
    return s / s.sum()


def joint_cost(p_knn: np.ndarray, p_rf: np.ndarray) -> np.ndarray:
    """-(ln p_knn + ln p_rf) with both probabilities floored at 1e-6."""
    a = np.asarray(p_knn, dtype=np.float64)
    b = np.asarray(p_rf, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"distribution shapes differ: {a.shape} vs {b.shape}")
    return -(np.log(np.maximum(a, PROB_FLOOR)) + np.log(np.maximum(b, PROB_FLOOR)))


def relevant_clusters(costs: np.ndarray, epsilon: float) -> RelevanceResult:
    """Clusters with cost strictly below epsilon; the argmin is forced in if none are."""
    c = np.asarray(costs, dtype=np.float64)
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    rel = np.flatnonzero(c < epsilon)
    forced = len(rel) == 0
    if forced:
        rel = np.array([int(np.argmin(c))])
    return RelevanceResult(c, rel, float(epsilon), forced)


def calibrate_epsilon(cost_matrix: np.ndarray, keep: int) -> float:
    """Threshold at which the median query keeps ``keep`` clusters.

    For each query the cut is placed midway between its keep-th and
    (keep+1)-th smallest cost; epsilon is the median of those cuts.
    """
    c = np.sort(np.asarray(cost_matrix, dtype=np.float64), axis=1)
    M = c.shape[1]
    if keep < 1:
        raise ValueError("keep must be at least 1")
    if keep >= M:
        return math.inf
    cuts = 0.5 * (c[:, keep - 1] + c[:, keep])
    eps = float(np.median(cuts))
    return eps if eps > 0 else math.nextafter(0.0, 1.0)


def default_keep(M: int) -> int:
    """One eighth of the clusters, rounded half up, at least one."""
    return max(1, int(math.floor(M / 8 + 0.5)))


@dataclass
class RelevanceModel:
    forest: RandomForest
    gallery_p_rf: np.ndarray  # (n, M)
    K: int
    epsilon: float

    @property
    def M(self) -> int:
        return self.gallery_p_rf.shape[1]

    def evaluate(
        self, global_vec: np.ndarray, dist_row: np.ndarray, exclude: int | None = None,
        epsilon: float | None = None,
    ) -> RelevanceResult:
        p_rf = predict_proba(self.forest, global_vec)
        p_knn = indirect_assignment(dist_row, self.gallery_p_rf, self.K, exclude)
        res = relevant_clusters(joint_cost(p_knn, p_rf), self.epsilon if epsilon is None else epsilon)
        res.p_rf, res.p_knn = p_rf, p_knn
        return res
