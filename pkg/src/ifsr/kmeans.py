"""Seeded Lloyd k-means with k-means++ initialization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_CHUNK = 8192


@dataclass
class KMeansResult:
    centers: np.ndarray
    labels: np.ndarray
    inertia: float
    n_iter: int


def sq_distances(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = (x * x).sum(axis=1)[:, None] - 2.0 * x @ centers.T + (centers * centers).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def assign(x: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest center index and squared distance, computed in row chunks."""
    labels = np.empty(len(x), dtype=np.int64)
    dist = np.empty(len(x))
    for s in range(0, len(x), _CHUNK):
        d = sq_distances(x[s : s + _CHUNK], centers)
        labels[s : s + _CHUNK] = d.argmin(axis=1)
        dist[s : s + _CHUNK] = d[np.arange(len(d)), labels[s : s + _CHUNK]]
    return labels, dist


def kmeans_plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    chosen = [int(rng.integers(n))]
    closest = sq_distances(x, x[chosen[0]][None]).ravel()
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            # every point coincides with a center already; pick an unused index
            free = np.setdiff1d(np.arange(n), chosen)
            idx = int(free[rng.integers(len(free))])
        chosen.append(idx)
        closest = np.minimum(closest, sq_distances(x, x[idx][None]).ravel())
    return x[chosen].copy()


def kmeans(
    x: np.ndarray, k: int, seed: int, max_iter: int = 50, tol: float = 1e-4
) -> KMeansResult:
    """Lloyd iterations until ``max_iter`` or relative inertia change below ``tol``."""
    x = np.asarray(x, dtype=np.float64)
    if not 1 <= k <= len(x):
        raise ValueError(f"k={k} outside [1, {len(x)}]")
    rng = np.random.default_rng(seed)
    centers = kmeans_plusplus(x, k, rng)
    labels, dist = assign(x, centers)
    inertia = float(dist.sum())
    it = 0
    for it in range(1, max_iter + 1):
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, x)
        empty = counts == 0
        centers = np.where(empty[:, None], centers, sums / np.maximum(counts, 1)[:, None])
        if empty.any():
            # reseed empty clusters at the currently worst-served points
            far = np.argsort(-dist, kind="stable")[: int(empty.sum())]
            centers[empty] = x[far]
        labels, dist = assign(x, centers)
        new_inertia = float(dist.sum())
        change = abs(inertia - new_inertia) / max(inertia, 1e-300)
        inertia = new_inertia
        if change < tol:
            break
    return KMeansResult(centers, labels, inertia, it)
