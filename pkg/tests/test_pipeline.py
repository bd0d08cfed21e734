from __future__ import annotations

import math

import numpy as np
import pytest

from ifsr import pipeline
from ifsr.config import ForestParams, LocalParams, PipelineConfig
from ifsr.errors import MissingFeatures, ModelMissing
from ifsr.ranking import rank
from ifsr.synthetic import SyntheticSpec, generate_synthetic, write_synthetic


def small_config(cache) -> PipelineConfig:
    return PipelineConfig(
        cache_dir=str(cache), M=8, voxel_resolution=32, symmetry_directions=42,
        forest=ForestParams(n_trees=50),
        local=LocalParams(n_views=12, resolution=64, vocabulary=32, max_train_per_shape=100),
    )


def build_small(root, seed=0):
    mesh_dir, cla = write_synthetic(root / "data", SyntheticSpec(per_class=4), seed)
    cfg = small_config(root / "cache")
    pipeline.ingest(cfg, mesh_dir, cla)
    pipeline.run_offline(cfg)
    return cfg


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    return build_small(tmp_path_factory.mktemp("small"))


def _artifact_bytes(cache):
    files = sorted(p for p in cache.rglob("*") if p.is_file() and p.name != "manifest.json")
    return {str(p.relative_to(cache)): p.read_bytes() for p in files}


def test_offline_rerun_is_byte_identical(small, tmp_path):
    other = build_small(tmp_path)
    a = _artifact_bytes(pipeline.resolve_cache_dir(small))
    b = _artifact_bytes(pipeline.resolve_cache_dir(other))
    assert set(a) == set(b) and any(k.startswith("models") for k in a)
    assert a == b


def test_missing_features_abort_clustering(tmp_path):
    mesh_dir, _ = write_synthetic(tmp_path / "data", SyntheticSpec(per_class=4), 0)
    cfg = small_config(tmp_path / "cache")
    pipeline.ingest(cfg, mesh_dir)
    with pytest.raises(MissingFeatures) as exc:
        pipeline.run_cluster(cfg)
    assert exc.value.stage == "cluster"


def test_query_without_models(small, tmp_path):
    cache = tmp_path / "cache"
    src = pipeline.resolve_cache_dir(small)
    cache.mkdir()
    for name in ("features.manifest.json", "features.f32"):
        (cache / name).write_bytes((src / name).read_bytes())
    with pytest.raises(ModelMissing):
        pipeline.run_query(small.replace(cache_dir=str(cache)), shape_id="S00000")


def test_leave_one_out_query_excludes_itself(small):
    res = pipeline.run_query(small, shape_id="S00005")
    assert "S00005" not in res.ranking.shape_ids
    assert len(res.ranking) == 31


def test_infinite_epsilon_matches_baseline_ranking(small):
    meshes, _ = generate_synthetic(SyntheticSpec(per_class=4), seed=9)
    query = meshes["S00013"]
    res = pipeline.run_query(small, mesh=query, epsilon=math.inf)
    gallery = pipeline.load_gallery(pipeline.resolve_cache_dir(small))
    assert res.ranking.partition_index == gallery.n
    # baseline: plain local-distance order over the whole gallery, no clusters involved
    dist_row = _distance_row(small, pipeline.shape_global_features(query, small))
    base = rank(query.source_id, dist_row, np.zeros(gallery.n, int), np.array([0]), gallery.shape_ids)
    assert res.ranking.shape_ids == base.shape_ids
    assert np.array_equal(res.ranking.scores, np.sort(dist_row))


def _distance_row(cfg, feats):
    cache = pipeline.resolve_cache_dir(cfg)
    provider = pipeline.make_provider(cfg)
    provider.codebook = pipeline.load_codebook(cache)
    hist = provider.encode(feats.normalized).astype(np.float32).astype(np.float64)
    gallery = pipeline.load_gallery(cache)
    return pipeline.pairwise_local_distances(hist[None], gallery.local)[0]


def test_leave_one_out_evaluation_variants(small):
    for v in pipeline.VARIANTS:
        res = pipeline.run_evaluate(small, variant=v)
        assert len(res.rankings) == 32
        assert 0 <= res.metrics.ft <= res.metrics.st <= 1


def test_lamp_query_filters_boxes(synthetic_run):
    s = synthetic_run
    names = s.labels.class_names
    box = names.index("box")
    is_box = np.array([s.labels.assignment[i] == box for i in s.gallery.shape_ids])
    box_clusters = [k for k in range(s.model.cluster.M) if is_box[s.model.cluster.labels == k].mean() > 0.5]
    assert box_clusters
    meshes, qlabels = generate_synthetic(SyntheticSpec(), seed=1)
    for sid in [i for i, k in qlabels.assignment.items() if names[k] == "lamp"][:3]:
        res = pipeline.run_query(s.cfg, mesh=meshes[sid])
        r = res.relevance
        assert all(r.costs[k] > r.epsilon for k in box_clusters)
        top = res.ranking.shape_ids[:5]
        assert not any(s.labels.assignment[i] == box for i in top)
