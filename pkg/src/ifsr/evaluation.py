"""Retrieval metrics under benchmark conventions: NN, FT, ST, E, DCG, top-N, PR curves."""

from __future__ import annotations

import csv
import functools
import io
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset_io import ClassLabels
from .errors import IncompleteRanking, UnlabeledShape
from .ranking import RankedList

E_CUTOFF = 32
TOP_N = (20, 25, 30, 35, 40)
RECALL_LEVELS = np.round(np.arange(1, 21) * 0.05, 10)
METRICS = ("nn", "ft", "st", "e", "dcg")


@dataclass
class MetricsReport:
    nn: float
    ft: float
    st: float
    e: float
    dcg: float
    per_query: dict[str, dict[str, float]] = field(repr=False)
    top_n: dict[int, float]
    map: float = 0.0

    def summary(self) -> dict:
        out = {m: getattr(self, m) for m in METRICS}
        out["map"] = self.map
        out["top_n"] = {str(k): v for k, v in sorted(self.top_n.items())}
        return out

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True, indent=2) + "\n"

    def per_query_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["query_id", *METRICS])
        for q in sorted(self.per_query):
            w.writerow([q, *(repr(self.per_query[q][m]) for m in METRICS)])
        return buf.getvalue()


@dataclass
class PRCurve:
    recall: np.ndarray
    precision: np.ndarray

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.recall.tolist(), self.precision.tolist()))

    def to_csv(self) -> str:
        return "recall,precision\n" + "".join(f"{r!r},{p!r}\n" for r, p in self.points)


def relevance_vector(ranking: RankedList, labels: ClassLabels, all_ids: Sequence[str] | None = None) -> tuple[np.ndarray, int]:
    """Binary relevance along the list and the number of relevant items R."""
    assign = labels.assignment
    q = ranking.query_id
    if q not in assign:
        raise UnlabeledShape(f"query {q} has no class label")
    if all_ids is not None:
        expected = set(all_ids) - {q}
        if len(ranking.shape_ids) != len(expected) or set(ranking.shape_ids) != expected:
            raise IncompleteRanking(f"ranking for {q} is not a permutation of the gallery minus the query")
    elif len(set(ranking.shape_ids)) != len(ranking.shape_ids) or q in ranking.shape_ids:
        raise IncompleteRanking(f"ranking for {q} repeats a shape or contains the query")
    missing = [s for s in ranking.shape_ids if s not in assign]
    if missing:
        raise UnlabeledShape(f"unlabeled shapes in ranking: {missing[:5]}")
    c = assign[q]
    rel = np.array([assign[s] == c for s in ranking.shape_ids], dtype=np.float64)
    R = sum(1 for s, k in assign.items() if k == c and s != q)
    return rel, R


@functools.lru_cache(maxsize=8)
def _discounts(n: int) -> np.ndarray:
    return np.array([1.0] + [math.log2(i) for i in range(2, n + 1)])


def _dcg(rel: np.ndarray) -> float:
    """DCG_1 = G_1, DCG_i = DCG_{i-1} + G_i / log2(i), accumulated in list order."""
    if len(rel) == 0:
        return 0.0
    return float(np.cumsum(rel / _discounts(len(rel)))[-1])


def _mean(values) -> float:
    """Sequential left-to-right average, so results do not depend on summation blocking."""
    values = list(values)
    return sum(values) / len(values)


def query_metrics(rel: np.ndarray, R: int, e_cutoff: int = E_CUTOFF) -> dict[str, float]:
    if R == 0:
        return {m: 0.0 for m in METRICS}
    csum = np.cumsum(rel)
    at = lambda k: float(csum[min(k, len(rel)) - 1]) if k > 0 and len(rel) else 0.0  # noqa: E731
    nn = float(rel[0]) if len(rel) else 0.0
    ft = at(R) / R
    st = at(2 * R) / R
    hits = at(e_cutoff)
    p = hits / e_cutoff
    r = hits / R
    e = 2.0 / (1.0 / p + 1.0 / r) if p > 0 and r > 0 else 0.0
    ideal = np.zeros(len(rel))
    ideal[:R] = 1.0
    dcg = _dcg(rel) / _dcg(ideal)
    return {"nn": nn, "ft": ft, "st": st, "e": e, "dcg": dcg}


def top_n_accuracy(rel: np.ndarray, R: int, n: int) -> float:
    if R == 0:
        return 0.0
    return float(rel[:n].sum()) / min(R, n)


def average_precision(rel: np.ndarray, R: int) -> float:
    if R == 0:
        return 0.0
    hits = np.flatnonzero(rel)
    return float(((np.arange(len(hits)) + 1) / (hits + 1)).sum() / R)


def evaluate(
    rankings: Sequence[RankedList],
    labels: ClassLabels,
    all_ids: Sequence[str] | None = None,
    e_cutoff: int = E_CUTOFF,
) -> MetricsReport:
    """Average the per-query metrics over all rankings."""
    per_query = {}
    tops = {n: [] for n in TOP_N}
    aps = []
    for rk in rankings:
        rel, R = relevance_vector(rk, labels, all_ids)
        per_query[rk.query_id] = query_metrics(rel, R, e_cutoff)
        for n in TOP_N:
            tops[n].append(top_n_accuracy(rel, R, n))
        aps.append(average_precision(rel, R))
    if not per_query:
        raise IncompleteRanking("no rankings to evaluate")
    mean = {m: _mean(v[m] for v in per_query.values()) for m in METRICS}
    return MetricsReport(
        **mean,
        per_query=per_query,
        top_n={n: _mean(v) for n, v in tops.items()},
        map=_mean(aps),
    )


def interpolated_precision(rel: np.ndarray, R: int, levels: np.ndarray = RECALL_LEVELS) -> np.ndarray:
    """Max precision at any depth whose recall reaches each level."""
    if R == 0:
        return np.zeros(len(levels))
    csum = np.cumsum(rel)
    depth = np.arange(1, len(rel) + 1)
    prec = csum / depth
    rec = csum / R
    out = np.zeros(len(levels))
    for i, lv in enumerate(levels):
        ok = rec >= lv - 1e-12
        out[i] = prec[ok].max() if ok.any() else 0.0
    return out


def precision_recall(
    rankings: Sequence[RankedList], labels: ClassLabels, all_ids: Sequence[str] | None = None
) -> PRCurve:
    curves = []
    for rk in rankings:
        rel, R = relevance_vector(rk, labels, all_ids)
        curves.append(interpolated_precision(rel, R))
    if not curves:
        raise IncompleteRanking("no rankings to evaluate")
    return PRCurve(RECALL_LEVELS.copy(), np.mean(curves, axis=0))


def sweep_clusters(config, M_values, variant: str = "ifsr") -> dict[int, float]:
    """First-tier score per cluster count, using the features cached for ``config``."""
    from . import pipeline

    cache = pipeline.resolve_cache_dir(config)
    gallery = pipeline.load_gallery(cache)
    labels = pipeline.load_labels(cache, gallery.shape_ids, config.labels)
    return pipeline.sweep(gallery, labels, config, M_values, variant)
