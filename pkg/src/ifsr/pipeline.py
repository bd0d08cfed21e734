"""Offline model building, online queries and leave-one-out evaluation.

Cache directory layout::

    config.json                  effective configuration
    manifest.json                gallery manifest
    labels.cla                   ground truth (evaluation only, optional)
    features.manifest.json       per-shape f_s, f_w, f_g, local
    features.f32
    models/<name>.json           model metadata
    models/<name>.<array>.npy    model arrays

Every stage seed is derived from the master seed with :func:`stage_seed`.
"""

from __future__ import annotations

import contextlib
import io
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .clustering import ClusterModel, affinity_from_distances, core_training_set, spectral_cluster
from .config import CACHE_ENV, PipelineConfig, stage_seed
from .dataset_io import (
    ClassLabels,
    FeatureRecord,
    GalleryManifest,
    align_labels,
    atomic_write_bytes,
    atomic_write_text,
    load_features,
    read_cla,
    read_off,
    save_features,
)
from .errors import IFSRError, MissingFeatures, ModelMissing
from .evaluation import MetricsReport, PRCurve, evaluate, precision_recall
from .forest import RandomForest, train_forest
from .geometry import normalize, voxelize_parity
from .global_features import GalleryStats, global_features
from .local_features import Codebook, DepthBoWProvider, pairwise_local_distances
from .mesh import TriangleMesh
from .ranking import RankedList, default_k_local, rank, rank_diffused
from .relevance import (
    RelevanceModel,
    RelevanceResult,
    calibrate_epsilon,
    default_k,
    default_keep,
    indirect_assignment,
    joint_cost,
    relevant_clusters,
)

log = logging.getLogger(__name__)

VARIANTS = ("baseline", "ifsr", "ifsr+lcdp")


@contextlib.contextmanager
def stage(name: str) -> Iterator[None]:
    """Tag any failure inside the block with the stage name."""
    try:
        yield
    except IFSRError as exc:
        if exc.stage is None:
            exc.stage = name
        raise
    except (OSError, ValueError, KeyError) as exc:
        raise IFSRError(f"{type(exc).__name__}: {exc}", stage=name) from exc


def resolve_cache_dir(config: PipelineConfig) -> Path:
    return Path(os.environ.get(CACHE_ENV) or config.cache_dir)


# ------------------------------------------------------------------ extraction


@dataclass
class ShapeFeatures:
    f_s: np.ndarray
    f_w: np.ndarray
    f_g: np.ndarray
    normalized: TriangleMesh


def shape_global_features(mesh: TriangleMesh, config: PipelineConfig) -> ShapeFeatures:
    nm, _ = normalize(mesh, config.symmetry_directions)
    grid = voxelize_parity(nm, config.voxel_resolution)
    f_s, f_w, f_g = global_features(nm, grid)
    return ShapeFeatures(f_s, f_w, f_g, nm)


def make_provider(config: PipelineConfig) -> DepthBoWProvider:
    lp = config.local
    return DepthBoWProvider(
        n_views=lp.n_views,
        res=lp.resolution,
        stride=lp.stride,
        vocabulary=lp.vocabulary,
        seed=stage_seed(config.seed, "codebook"),
        max_train_per_shape=lp.max_train_per_shape,
    )


def extract_gallery(
    manifest: GalleryManifest, config: PipelineConfig, progress: Callable[[str], None] | None = None
) -> tuple[list[FeatureRecord], Codebook]:
    """Global features for every shape, then a codebook and local histograms."""
    shapes = []
    for i, e in enumerate(manifest.entries):
        if e.missing:
            raise IFSRError(f"mesh for {e.shape_id} not found at {e.mesh_path}", stage="extract")
        mesh = read_off(e.mesh_path)
        shapes.append(shape_global_features(TriangleMesh(mesh.vertices, mesh.faces, e.shape_id), config))
        if progress:
            progress(f"global {i + 1}/{len(manifest)} {e.shape_id}")
    provider = make_provider(config)
    provider.fit(s.normalized for s in shapes)
    records = []
    for e, s in zip(manifest.entries, shapes):
        local = provider.encode(s.normalized)
        records.append(FeatureRecord(e.shape_id, s.f_s, s.f_w, s.f_g, local))
    if progress:
        progress(f"local features for {len(records)} shapes")
    return records, provider.codebook


# ------------------------------------------------------------- persistence


def _save_model(cache: Path, name: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    models = cache / "models"
    models.mkdir(parents=True, exist_ok=True)
    for key, arr in sorted(arrays.items()):
        buf = io.BytesIO()
        np.save(buf, np.ascontiguousarray(arr), allow_pickle=False)
        atomic_write_bytes(models / f"{name}.{key}.npy", buf.getvalue())
    meta = dict(meta, arrays=sorted(arrays))
    atomic_write_text(models / f"{name}.json", json.dumps(meta, sort_keys=True, indent=1) + "\n")


def _load_model(cache: Path, name: str) -> tuple[dict, dict[str, np.ndarray]]:
    path = cache / "models" / f"{name}.json"
    if not path.exists():
        raise ModelMissing(f"{name} model not found in {cache}; run the offline stages first")
    meta = json.loads(path.read_text())
    arrays = {k: np.load(cache / "models" / f"{name}.{k}.npy", allow_pickle=False) for k in meta["arrays"]}
    return meta, arrays


def save_codebook(cache: Path, cb: Codebook) -> None:
    _save_model(cache, "codebook", {"train_seed": cb.train_seed, "V": cb.V}, {"centers": cb.centers})


def load_codebook(cache: Path) -> Codebook:
    meta, arr = _load_model(cache, "codebook")
    return Codebook(arr["centers"], meta["train_seed"])


def save_cluster_model(cache: Path, cm: ClusterModel) -> None:
    meta = {"M": cm.M, "shape_ids": cm.shape_ids, "core_samples": cm.core_samples}
    _save_model(cache, "cluster", meta, {"labels": cm.labels, "centroids": cm.centroids})


def load_cluster_model(cache: Path) -> ClusterModel:
    meta, arr = _load_model(cache, "cluster")
    return ClusterModel(meta["M"], meta["shape_ids"], arr["labels"], arr["centroids"], meta["core_samples"])


def save_relevance_model(cache: Path, rm: RelevanceModel, keep: int | None, stats: GalleryStats) -> None:
    f = rm.forest
    _save_model(
        cache,
        "forest",
        {"n_classes": f.n_classes, "feature_dim": f.feature_dim, "seed": f.seed, "T": f.T},
        f.to_arrays(),
    )
    eps = rm.epsilon if np.isfinite(rm.epsilon) else "inf"
    _save_model(
        cache,
        "relevance",
        {"K": rm.K, "epsilon": eps, "keep_median": keep},
        {"gallery_p_rf": rm.gallery_p_rf, "stats_mean": stats.mean, "stats_std": stats.std},
    )


def load_relevance_model(cache: Path) -> tuple[RelevanceModel, GalleryStats]:
    fmeta, farr = _load_model(cache, "forest")
    forest = RandomForest.from_arrays(farr, fmeta["n_classes"], fmeta["feature_dim"], fmeta["seed"])
    meta, arr = _load_model(cache, "relevance")
    eps = float("inf") if meta["epsilon"] == "inf" else float(meta["epsilon"])
    rm = RelevanceModel(forest, arr["gallery_p_rf"], int(meta["K"]), eps)
    return rm, GalleryStats(arr["stats_mean"], arr["stats_std"])


# ----------------------------------------------------------------- gallery


@dataclass
class Gallery:
    shape_ids: list[str]
    local: np.ndarray  # (n, V) histograms
    global_raw: np.ndarray  # (n, 89)
    stats: GalleryStats
    distances: np.ndarray  # (n, n) chi-square distances

    @property
    def n(self) -> int:
        return len(self.shape_ids)

    @property
    def global_std(self) -> np.ndarray:
        return self.stats.standardize(self.global_raw)

    @classmethod
    def from_records(cls, records: list[FeatureRecord]) -> "Gallery":
        if not records:
            raise MissingFeatures("feature cache is empty")
        missing = [r.shape_id for r in records if r.local is None]
        if missing:
            raise MissingFeatures(f"local features missing for {len(missing)} shapes")
        if any(r.f_s is None or r.f_w is None or r.f_g is None for r in records):
            raise MissingFeatures("global features missing")
        records = sorted(records, key=lambda r: r.shape_id)
        local = np.stack([np.asarray(r.local, dtype=np.float64) for r in records])
        glob = np.stack([r.global_vector() for r in records])
        return cls(
            [r.shape_id for r in records],
            local,
            glob,
            GalleryStats.fit(glob),
            pairwise_local_distances(local),
        )


def load_gallery(cache: Path) -> Gallery:
    path = cache / "features"
    if not (cache / "features.manifest.json").exists():
        raise MissingFeatures(f"no feature cache in {cache}; run extract first")
    return Gallery.from_records(load_features(path))


# ------------------------------------------------------------ offline model


@dataclass
class OfflineModel:
    cluster: ClusterModel
    relevance: RelevanceModel
    keep: int | None
    loo_costs: np.ndarray  # (n, M) leave-one-out joint costs of gallery shapes


def cluster_gallery(gallery: Gallery, config: PipelineConfig) -> ClusterModel:
    with stage("cluster"):
        A = affinity_from_distances(gallery.distances)
        return spectral_cluster(
            A, config.M, stage_seed(config.seed, "cluster"), features=gallery.local, shape_ids=gallery.shape_ids
        )


def train_relevance(gallery: Gallery, cm: ClusterModel, config: PipelineConfig) -> OfflineModel:
    with stage("train"):
        G = gallery.global_std
        idx, lab = core_training_set(cm)
        forest = train_forest(
            G[idx], lab, cm.M, config.forest.n_trees, config.forest.max_features, stage_seed(config.seed, "forest")
        )
        p_rf = forest.predict_proba(G)
        K = config.K or default_k(gallery.n, cm.M)
        costs = np.stack(
            [
                joint_cost(indirect_assignment(gallery.distances[i], p_rf, K, exclude=i), p_rf[i])
                for i in range(gallery.n)
            ]
        )
        keep = None
        if config.epsilon is not None:
            eps = float(config.epsilon)
        else:
            keep = config.keep_median or default_keep(cm.M)
            eps = calibrate_epsilon(costs, keep)
        return OfflineModel(cm, RelevanceModel(forest, p_rf, K, eps), keep, costs)


def fit_offline(gallery: Gallery, config: PipelineConfig) -> OfflineModel:
    return train_relevance(gallery, cluster_gallery(gallery, config), config)


def run_extract(config: PipelineConfig, progress: Callable[[str], None] | None = None) -> Path:
    cache = resolve_cache_dir(config)
    with stage("extract"):
        mpath = cache / "manifest.json"
        if not mpath.exists():
            raise IFSRError(f"no gallery manifest in {cache}; run ingest first")
        manifest = GalleryManifest.from_json(mpath.read_text())
        records, codebook = extract_gallery(manifest, config, progress)
        save_features(records, cache / "features")
        save_codebook(cache, codebook)
    return cache


def run_cluster(config: PipelineConfig) -> ClusterModel:
    cache = resolve_cache_dir(config)
    with stage("cluster"):
        cm = cluster_gallery(load_gallery(cache), config)
        save_cluster_model(cache, cm)
    return cm


def run_train(config: PipelineConfig) -> OfflineModel:
    cache = resolve_cache_dir(config)
    with stage("train"):
        gallery = load_gallery(cache)
        cm = load_cluster_model(cache)
        if cm.shape_ids != gallery.shape_ids:
            raise ModelMissing("cluster model does not match the feature cache; re-run cluster")
        model = train_relevance(gallery, cm, config)
        save_relevance_model(cache, model.relevance, model.keep, gallery.stats)
    return model


def run_offline(config: PipelineConfig, progress: Callable[[str], None] | None = None) -> OfflineModel:
    """extract -> cluster -> core samples -> forest, all persisted to the cache."""
    run_extract(config, progress)
    run_cluster(config)
    return run_train(config)


def ingest(config: PipelineConfig, gallery_dir: str | Path, labels: str | Path | None = None) -> GalleryManifest:
    cache = resolve_cache_dir(config)
    with stage("ingest"):
        manifest = GalleryManifest.from_directory(gallery_dir)
        if len(manifest) == 0:
            raise IFSRError(f"no .off meshes under {gallery_dir}")
        cache.mkdir(parents=True, exist_ok=True)
        atomic_write_text(cache / "manifest.json", manifest.to_json() + "\n")
        if labels is not None:
            atomic_write_text(cache / "labels.cla", Path(labels).read_text())
    return manifest


# ------------------------------------------------------------------- queries


def rank_query(
    query_id: str,
    dist_row: np.ndarray,
    relevance: RelevanceResult | None,
    gallery: Gallery,
    cm: ClusterModel,
    config: PipelineConfig,
    exclude: int | None = None,
    diffuse: bool | None = None,
) -> RankedList:
    """Rank the gallery for one query; ``relevance=None`` gives the local-only baseline."""
    rel = np.arange(cm.M) if relevance is None else relevance.relevant
    dp = config.diffusion
    if diffuse if diffuse is not None else dp.enabled:
        return rank_diffused(
            query_id, dist_row, cm.labels, rel, gallery.shape_ids, gallery.distances, exclude,
            dp.k_local or default_k_local(gallery.n, cm.M), dp.iterations, dp.tol,
        )
    return rank(query_id, dist_row, cm.labels, rel, gallery.shape_ids, exclude)


@dataclass
class QueryResult:
    ranking: RankedList
    relevance: RelevanceResult

    def explain_csv(self) -> str:
        r = self.relevance
        rel = set(r.relevant.tolist())
        lines = ["cluster,neg_ln_p_rf,neg_ln_p_knn,cost,relevant"]
        for k in range(len(r.costs)):
            a = -np.log(max(float(r.p_rf[k]), 1e-6))
            b = -np.log(max(float(r.p_knn[k]), 1e-6))
            lines.append(f"{k},{a!r},{b!r},{float(r.costs[k])!r},{int(k in rel)}")
        return "\n".join(lines) + "\n"


def _load_online(cache: Path) -> tuple[Gallery, ClusterModel, RelevanceModel, Codebook]:
    gallery = load_gallery(cache)
    cm = load_cluster_model(cache)
    rm, stats = load_relevance_model(cache)
    gallery.stats = stats
    return gallery, cm, rm, load_codebook(cache)


def run_query(
    config: PipelineConfig, mesh: TriangleMesh | None = None, shape_id: str | None = None,
    epsilon: float | None = None,
) -> QueryResult:
    """Rank the gallery for a new mesh, or for a gallery shape in leave-one-out mode."""
    cache = resolve_cache_dir(config)
    with stage("query"):
        gallery, cm, rm, codebook = _load_online(cache)
        if shape_id is not None:
            if shape_id not in gallery.shape_ids:
                raise IFSRError(f"unknown gallery shape {shape_id!r}")
            i = gallery.shape_ids.index(shape_id)
            dist_row, gvec, exclude, qid = gallery.distances[i], gallery.global_std[i], i, shape_id
        elif mesh is not None:
            feats = shape_global_features(mesh, config)
            provider = make_provider(config)
            provider.codebook = codebook
            hist = provider.encode(feats.normalized).astype(np.float32).astype(np.float64)
            raw = np.concatenate([feats.f_s, feats.f_w, feats.f_g]).astype(np.float32).astype(np.float64)
            gvec = gallery.stats.standardize(raw)
            dist_row = pairwise_local_distances(hist[None], gallery.local)[0]
            exclude, qid = None, mesh.source_id or "query"
        else:
            raise IFSRError("either a mesh or a gallery shape id is required")
        res = rm.evaluate(gvec, dist_row, exclude, epsilon)
        ranking = rank_query(qid, dist_row, res, gallery, cm, config, exclude)
    return QueryResult(ranking, res)


# ----------------------------------------------------------------- evaluation


def leave_one_out(
    gallery: Gallery, model: OfflineModel, config: PipelineConfig, variant: str = "ifsr",
    epsilon: float | None = None,
) -> list[RankedList]:
    """Every gallery shape queries the rest."""
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    eps = model.relevance.epsilon if epsilon is None else epsilon
    out = []
    for i, sid in enumerate(gallery.shape_ids):
        res = None if variant == "baseline" else relevant_clusters(model.loo_costs[i], eps)
        out.append(
            rank_query(sid, gallery.distances[i], res, gallery, model.cluster, config, exclude=i,
                       diffuse=variant == "ifsr+lcdp")
        )
    return out


def load_labels(cache: Path, shape_ids: list[str], labels_path: str | Path | None = None) -> ClassLabels:
    path = Path(labels_path) if labels_path else cache / "labels.cla"
    if not path.exists():
        raise IFSRError(f"labels file {path} not found", stage="evaluate")
    return align_labels(read_cla(path), shape_ids)


@dataclass
class EvaluationResult:
    metrics: MetricsReport
    pr: PRCurve
    rankings: list[RankedList]


def evaluate_variant(
    gallery: Gallery, model: OfflineModel, labels: ClassLabels, config: PipelineConfig, variant: str
) -> EvaluationResult:
    rankings = leave_one_out(gallery, model, config, variant)
    return EvaluationResult(
        evaluate(rankings, labels, gallery.shape_ids, config.e_cutoff),
        precision_recall(rankings, labels, gallery.shape_ids),
        rankings,
    )


def offline_from_cache(cache: Path, gallery: Gallery) -> OfflineModel:
    cm = load_cluster_model(cache)
    rm, stats = load_relevance_model(cache)
    gallery.stats = stats
    meta, _ = _load_model(cache, "relevance")
    costs = np.stack(
        [
            joint_cost(indirect_assignment(gallery.distances[i], rm.gallery_p_rf, rm.K, exclude=i), rm.gallery_p_rf[i])
            for i in range(gallery.n)
        ]
    )
    return OfflineModel(cm, rm, meta.get("keep_median"), costs)


def run_evaluate(config: PipelineConfig, out_dir: str | Path | None = None, variant: str | None = None) -> EvaluationResult:
    cache = resolve_cache_dir(config)
    with stage("evaluate"):
        gallery = load_gallery(cache)
        model = offline_from_cache(cache, gallery)
        labels = load_labels(cache, gallery.shape_ids, config.labels)
        variant = variant or ("ifsr+lcdp" if config.diffusion.enabled else "ifsr")
        result = evaluate_variant(gallery, model, labels, config, variant)
        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            atomic_write_text(out / "metrics.json", result.metrics.to_json())
            atomic_write_text(out / "per_query.csv", result.metrics.per_query_csv())
            atomic_write_text(out / "pr_curve.csv", result.pr.to_csv())
    return result


def sweep(
    gallery: Gallery, labels: ClassLabels, config: PipelineConfig, M_values, variant: str = "ifsr"
) -> dict[int, float]:
    """First-tier score of the full pipeline for each cluster count."""
    out = {}
    for M in M_values:
        model = fit_offline(gallery, config.replace(M=int(M)))
        out[int(M)] = evaluate_variant(gallery, model, labels, config.replace(M=int(M)), variant).metrics.ft
    return out


def sweep_csv(table: dict[int, float]) -> str:
    return "M,ft\n" + "".join(f"{m},{ft!r}\n" for m, ft in sorted(table.items()))
