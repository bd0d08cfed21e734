"""Similarity ranking over relevant clusters, with optional diffusion re-ranking."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class RankedList:
    query_id: str
    shape_ids: list[str]  # gallery order of the retrieved shapes
    scores: np.ndarray  # ascending dissimilarity within each partition
    partition_index: int

    def __len__(self) -> int:
        return len(self.shape_ids)

    def relevant_flags(self) -> np.ndarray:
        return np.arange(len(self.shape_ids)) < self.partition_index

    def to_csv(self) -> str:
        lines = ["rank,shape_id,score,relevant"]
        flags = self.relevant_flags()
        for i, (s, sc, f) in enumerate(zip(self.shape_ids, self.scores, flags)):
            lines.append(f"{i + 1},{s},{float(sc)!r},{int(f)}")
        return "\n".join(lines) + "\n"


@dataclass
class DiffusionState:
    W: np.ndarray
    P: np.ndarray
    k_local: int
    iterations: int


def _sort_indices(idx: np.ndarray, scores: np.ndarray, ids: list[str]) -> np.ndarray:
    """Order ``idx`` by (score, shape-id)."""
    return np.array(sorted(idx.tolist(), key=lambda i: (scores[i], ids[i])), dtype=np.int64)


def rank(
    query_id: str,
    dist_row: np.ndarray,
    cluster_labels: np.ndarray,
    relevant: np.ndarray,
    shape_ids: list[str],
    exclude: int | None = None,
) -> RankedList:
    """Relevant-cluster shapes by local distance, then the remaining shapes likewise."""
    d = np.asarray(dist_row, dtype=np.float64)
    idx = np.arange(len(d))
    if exclude is not None:
        idx = idx[idx != exclude]
    rel_mask = np.isin(np.asarray(cluster_labels)[idx], relevant)
    first = _sort_indices(idx[rel_mask], d, shape_ids)
    rest = _sort_indices(idx[~rel_mask], d, shape_ids)
    order = np.concatenate([first, rest]).astype(np.int64)
    return RankedList(query_id, [shape_ids[i] for i in order], d[order], len(first))


def default_k_local(n: int, M: int) -> int:
    """Half the average cluster size, rounded half up, at least 2."""
    return max(2, int(np.floor(0.5 * n / M + 0.5)))


def transition_matrix(W: np.ndarray, dist: np.ndarray, k_local: int) -> np.ndarray:
    """Row-normalized W restricted to each row's k_local nearest points (itself included)."""
    m = len(W)
    k = min(k_local, m)
    P = np.zeros_like(W)
    for i in range(m):
        nb = np.lexsort((np.arange(m), dist[i]))[:k]
        P[i, nb] = W[i, nb]
    return P / P.sum(axis=1, keepdims=True)


def diffusion_step(W: np.ndarray, P: np.ndarray) -> np.ndarray:
    return P @ W @ P.T


def lcdp_diffuse(
    dist: np.ndarray, k_local: int = 10, iterations: int = 20, tol: float = 1e-6
) -> DiffusionState:
    """Locally constrained diffusion over a pairwise distance matrix."""
    d = np.asarray(dist, dtype=np.float64)
    m = len(d)
    off = d[np.triu_indices(m, 1)]
    sigma = float(np.median(off)) if len(off) else 0.0
    if not sigma > 0:
        sigma = 1e-6
    W = np.exp(-((d / sigma) ** 2))
    W = 0.5 * (W + W.T)
    P = transition_matrix(W, d, k_local)
    done = 0
    for done in range(1, iterations + 1):
        W_next = diffusion_step(W, P)
        change = np.linalg.norm(W_next - W) / max(np.linalg.norm(W), 1e-300)
        W = W_next
        if change < tol:
            break
    return DiffusionState(W, P, k_local, done)


def rank_diffused(
    query_id: str,
    dist_row: np.ndarray,
    cluster_labels: np.ndarray,
    relevant: np.ndarray,
    shape_ids: list[str],
    pairwise: np.ndarray,
    exclude: int | None = None,
    k_local: int = 10,
    iterations: int = 20,
    tol: float = 1e-6,
) -> RankedList:
    """Rank relevant shapes by diffused similarity to the query.

    The diffusion set is the query plus every relevant-cluster shape;
    ``pairwise`` holds gallery-to-gallery local distances. Scores of the
    relevant partition are negated similarities; the remaining shapes keep
    their local distances as in :func:`rank`.
    """
    base = rank(query_id, dist_row, cluster_labels, relevant, shape_ids, exclude)
    m = base.partition_index + 1
    if iterations == 0:
        return base
    if m < 3:
        log.warning("diffusion set has %d elements; keeping the plain ranking", m)
        return base
    pos = {s: i for i, s in enumerate(shape_ids)}
    members = np.array([pos[s] for s in base.shape_ids[: base.partition_index]], dtype=np.int64)
    q = np.asarray(dist_row, dtype=np.float64)
    d = np.empty((m, m))
    d[0, 0] = 0.0
    d[0, 1:] = d[1:, 0] = q[members]
    d[1:, 1:] = np.asarray(pairwise)[np.ix_(members, members)]
    sim = lcdp_diffuse(d, k_local, iterations, tol).W[0, 1:]
    score = -sim
    order = _sort_indices(np.arange(len(members)), score, [shape_ids[i] for i in members])
    ids = [shape_ids[members[i]] for i in order] + base.shape_ids[base.partition_index :]
    scores = np.concatenate([score[order], base.scores[base.partition_index :]])
    return RankedList(query_id, ids, scores, base.partition_index)
