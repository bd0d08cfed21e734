"""Spectral clustering of the gallery in local feature space and core-sample selection."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidClusterCount
from .kmeans import kmeans
from .local_features import pairwise_local_distances

log = logging.getLogger(__name__)

SIGMA_FALLBACK = 1e-6


@dataclass
class AffinityMatrix:
    entries: np.ndarray
    sigma: float

    @property
    def n(self) -> int:
        return len(self.entries)


@dataclass
class ClusterModel:
    M: int
    shape_ids: list[str]
    labels: np.ndarray  # (n,) cluster index per shape, in shape_ids order
    centroids: np.ndarray  # (M, V) mean local histograms
    core_samples: list[list[str]]

    @property
    def assignment(self) -> dict[str, int]:
        return {s: int(k) for s, k in zip(self.shape_ids, self.labels)}

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.M)

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.labels == k)


def affinity_from_distances(d: np.ndarray) -> AffinityMatrix:
    """Gaussian kernel with the median off-diagonal distance as bandwidth."""
    d = np.asarray(d, dtype=np.float64)
    n = len(d)
    if n < 2:
        raise ValueError("affinity needs at least two shapes")
    off = d[np.triu_indices(n, 1)]
    sigma = float(np.median(off))
    if not sigma > 0:
        log.warning("all pairwise distances are zero; using sigma=%g", SIGMA_FALLBACK)
        sigma = SIGMA_FALLBACK
    a = np.exp(-((d / sigma) ** 2))
    a = 0.5 * (a + a.T)
    np.fill_diagonal(a, 1.0)
    return AffinityMatrix(a, sigma)


def build_affinity(features: np.ndarray) -> AffinityMatrix:
    """Affinity over local histograms (rows of ``features``) via chi-square distance."""
    return affinity_from_distances(pairwise_local_distances(features))


def spectral_embedding(a: np.ndarray, M: int) -> np.ndarray:
    """Rows of the top-M eigenvectors of D^-1/2 A D^-1/2, each scaled to unit length."""
    a = np.array(a, dtype=np.float64)
    deg = a.sum(axis=1)
    isolated = deg <= 0
    if isolated.any():
        log.warning("%d zero-degree nodes; adding self-loops", int(isolated.sum()))
        a[isolated, isolated] = 1.0
        deg = a.sum(axis=1)
    inv = 1.0 / np.sqrt(deg)
    lap = inv[:, None] * a * inv[None, :]
    lap = 0.5 * (lap + lap.T)
    _, vecs = np.linalg.eigh(lap)
    u = vecs[:, ::-1][:, :M]
    norms = np.linalg.norm(u, axis=1, keepdims=True)
    return u / np.where(norms > 0, norms, 1.0)


def spectral_cluster(
    affinity: AffinityMatrix | np.ndarray,
    M: int,
    seed: int,
    features: np.ndarray | None = None,
    shape_ids: list[str] | None = None,
) -> ClusterModel:
    """Normalized spectral clustering followed by seeded k-means on the embedding.

    Centroids are mean rows of ``features`` per cluster (zeros if no features
    are given). Core samples are filled in by :func:`select_core_samples`.
    """
    a = affinity.entries if isinstance(affinity, AffinityMatrix) else np.asarray(affinity, dtype=np.float64)
    n = len(a)
    if not 1 <= M <= n:
        raise InvalidClusterCount(f"M={M} outside [1, {n}]")
    ids = list(shape_ids) if shape_ids is not None else [f"{i:06d}" for i in range(n)]
    if M == 1:
        labels = np.zeros(n, dtype=np.int64)
    elif M == n:
        labels = np.arange(n, dtype=np.int64)
    else:
        labels = kmeans(spectral_embedding(a, M), M, seed=seed).labels
        labels = _canonical_labels(labels, M)
    feats = np.zeros((n, 0)) if features is None else np.asarray(features, dtype=np.float64)
    centroids = np.zeros((M, feats.shape[1]))
    np.add.at(centroids, labels, feats)
    centroids /= np.maximum(np.bincount(labels, minlength=M), 1)[:, None]
    model = ClusterModel(M, ids, labels, centroids, [[] for _ in range(M)])
    if features is not None:
        model.core_samples = select_core_samples(model, feats)
    return model


def _canonical_labels(labels: np.ndarray, M: int) -> np.ndarray:
    """Renumber clusters by first appearance so equal partitions get equal labels."""
    order = []
    for k in labels:
        if k not in order:
            order.append(int(k))
    order += [k for k in range(M) if k not in order]
    remap = np.empty(M, dtype=np.int64)
    remap[order] = np.arange(M)
    return remap[labels]


def select_core_samples(model: ClusterModel, features: np.ndarray) -> list[list[str]]:
    """Per cluster, the ceil(size/2) members nearest the centroid (ties by shape-id)."""
    feats = np.asarray(features, dtype=np.float64)
    out = []
    for k in range(model.M):
        idx = model.members(k)
        if len(idx) == 0:
            out.append([])
            continue
        d = pairwise_local_distances(feats[idx], model.centroids[k][None])[:, 0]
        ids = [model.shape_ids[i] for i in idx]
        order = sorted(range(len(idx)), key=lambda j: (d[j], ids[j]))
        out.append([ids[j] for j in order[: math.ceil(len(idx) / 2)]])
    return out


def core_training_set(model: ClusterModel) -> tuple[np.ndarray, np.ndarray]:
    """Gallery indices and cluster labels of all core samples."""
    pos = {s: i for i, s in enumerate(model.shape_ids)}
    idx, lab = [], []
    for k, members in enumerate(model.core_samples):
        for s in members:
            idx.append(pos[s])
            lab.append(k)
    return np.array(idx, dtype=np.int64), np.array(lab, dtype=np.int64)
