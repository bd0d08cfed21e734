"""Acceptance criteria 1-7; each test records one PASS/FAIL line in the terminal summary."""

from __future__ import annotations

import math
import os
import subprocess
import sys
import time

import numpy as np
from scipy.spatial.transform import Rotation

from ifsr import pipeline
from ifsr.clustering import spectral_cluster
from ifsr.evaluation import evaluate
from ifsr.forest import LEAF, RandomForest, Tree
from ifsr.geometry import align_rotation, normalize, normalize_translation_scale, symmetry_function, voxelize_parity
from ifsr.global_features import aspect_ratio
from ifsr.mesh import TriangleMesh, box_mesh, icosphere
from ifsr.ranking import rank
from ifsr.relevance import indirect_assignment, joint_cost, predict_proba, relevant_clusters
from ifsr.synthetic import base_shape

from conftest import SYNTH_M, SYNTH_SEED
from test_clustering import _block_affinity, _same_partition, _union_find_components
from test_evaluation import _labels, _ranking, _reference
from test_geometry import _centers, _near_surface, _proper_signed_permutations


# ------------------------------------------------------------------ criterion 1


def _leaf_forest(labels, n_classes):
    z = np.array([LEAF])
    return RandomForest([Tree(z, np.zeros(1), z, z, np.array([k])) for k in labels], n_classes, 3, 0)


def test_criterion_1_equation_suite(record_criterion):
    t0 = time.perf_counter()
    checks = {}
    checks["cube aspect ratio"] = np.allclose(aspect_ratio(box_mesh((2, 2, 2))), [1 / 3] * 3, atol=1e-15)
    p = predict_proba(_leaf_forest([0] * 8 + [1] * 2, 3), np.zeros(3))
    checks["vote fractions"] = np.array_equal(p, [0.8, 0.2, 0.0])
    p = indirect_assignment(np.array([0.1, 0.2, 0.9]), np.eye(4)[[1, 2, 3]], K=2)
    checks["two-neighbour average"] = np.array_equal(p, [0.0, 0.5, 0.5, 0.0])
    c = joint_cost(np.array([0.5]), np.array([0.5]))[0]
    checks["joint cost"] = abs(c - (-math.log(0.25))) <= 1e-9 and abs(c - 1.386294) <= 1e-6
    rng = np.random.default_rng(1)
    mono = True
    for _ in range(200):
        costs = rng.exponential(3.0, 12)
        lo, hi = np.sort(rng.uniform(0, 10, 2))
        mono &= set(relevant_clusters(costs, lo).relevant) <= set(relevant_clusters(costs, hi).relevant)
    checks["monotone in epsilon"] = bool(mono)
    d = rng.random(30)
    labels = rng.integers(0, 5, 30)
    ids = [f"S{i:02d}" for i in range(30)]
    everything = relevant_clusters(rng.exponential(3.0, 5), math.inf).relevant
    a = rank("q", d, labels, everything, ids)
    b = rank("q", d, labels, np.arange(5), ids)
    checks["infinite epsilon transparency"] = a.shape_ids == b.shape_ids == [ids[i] for i in np.argsort(d)]
    elapsed = time.perf_counter() - t0
    failed = [k for k, ok in checks.items() if not ok]
    ok = not failed and elapsed < 1.0
    record_criterion(1, ok, f"{len(checks) - len(failed)}/{len(checks)} equation checks, {elapsed:.3f} s (< 1 s)"
                     + (f"; failed: {failed}" if failed else ""))


# ------------------------------------------------------------------ criterion 2


def test_criterion_2_geometry_oracles(record_criterion):
    t0 = time.perf_counter()
    R = 64
    X, Y, Z = _centers(R)
    box = box_mesh((1.0, 1.0, 1.0))
    s = icosphere(3)
    sphere = TriangleMesh(s.vertices * 0.8, s.faces)
    agreement = {}
    for name, mesh, oracle in (
        ("box", box, (np.abs(X) < 0.5) & (np.abs(Y) < 0.5) & (np.abs(Z) < 0.5)),
        ("sphere", sphere, X**2 + Y**2 + Z**2 < 0.64),
    ):
        away = ~_near_surface(mesh, R)
        agreement[name] = float((voxelize_parity(mesh, R).occupancy[away] == oracle[away]).mean())

    rots = _proper_signed_permutations()
    enum_ok = 0
    for pre in range(6):
        mesh, _ = normalize_translation_scale(box_mesh((3.0, 2.0, 1.0)).transformed(rotation=rots[pre * 4 + 1]))
        ext_in = np.ptp(mesh.vertices, axis=0)
        admissible = []
        for r in rots:
            ex, ey, ez = np.abs(r) @ ext_in
            if ex * ey >= ez * ex >= ey * ez:
                admissible.append(np.abs(r))
        _, rep = align_rotation(mesh, symmetry_function(mesh))
        enum_ok += any(np.allclose(np.abs(rep.rotation), a, atol=1e-9) for a in admissible)

    drift = 0.0
    for name in ("box", "l_solid", "table", "cross"):
        once, _ = normalize(base_shape(name).transformed(rotation=Rotation.random(random_state=7).as_matrix()))
        _, rep = align_rotation(once, symmetry_function(once))
        drift = max(drift, float(np.abs(rep.rotation - np.eye(3)).max()))
    elapsed = time.perf_counter() - t0
    ok = min(agreement.values()) >= 0.97 and enum_ok == 6 and drift < 1e-6 and elapsed < 30
    record_criterion(
        2, ok,
        f"voxel agreement box {agreement['box']:.4f} sphere {agreement['sphere']:.4f} (>= 0.97); "
        f"rotation enumeration {enum_ok}/6; idempotence drift {drift:.1e} (< 1e-6); {elapsed:.1f} s (< 30 s)",
    )


# ------------------------------------------------------------------ criterion 3


def test_criterion_3_clustering_oracle(record_criterion):
    t0 = time.perf_counter()
    agree = 0
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        n_blocks = int(rng.integers(2, 6))
        sizes = [int(x) for x in rng.integers(2, 60 // n_blocks + 1, n_blocks)]
        a = _block_affinity(rng, sizes)
        assert a.shape[0] <= 60
        labels = spectral_cluster(a, n_blocks, seed=seed).labels
        agree += _same_partition(labels, _union_find_components(a))
    elapsed = time.perf_counter() - t0
    record_criterion(3, agree == 50 and elapsed < 10, f"{agree}/50 partitions equal the components, {elapsed:.2f} s (< 10 s)")


# ------------------------------------------------------------------ criterion 4


def test_criterion_4_metric_oracle(record_criterion):
    t0 = time.perf_counter()
    exact = 0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(6, 90))
        classes = rng.integers(0, int(rng.integers(2, 7)), n)
        classes[:2] = classes[0]  # every instance has at least one query with a relevant item
        ids, labels = _labels(classes)
        rankings = []
        for q in [0, *rng.choice(np.arange(1, n), size=3, replace=False)]:
            rest = [s for i, s in enumerate(ids) if i != q]
            if any(labels.assignment[s] == classes[q] for s in rest):
                rankings.append(_ranking(ids[q], [rest[i] for i in rng.permutation(len(rest))]))
        rep = evaluate(rankings, labels, all_ids=ids)
        mean, per, top = _reference(rankings, labels)
        exact += {m: getattr(rep, m) for m in mean} == mean and rep.per_query == per and rep.top_n == top

    ids, labels = _labels(np.repeat(np.arange(60), 20))
    rest = ids[1:]
    rng = np.random.default_rng(7)
    fts = [
        evaluate([_ranking(ids[0], [rest[i] for i in rng.permutation(len(rest))])], labels).ft
        for _ in range(100)
    ]
    chance = 19 / 1199
    gap = abs(float(np.mean(fts)) - chance)
    elapsed = time.perf_counter() - t0
    ok = exact == 200 and gap <= 0.01 and elapsed < 10
    record_criterion(4, ok, f"{exact}/200 exact matches; random FT off chance by {gap:.4f} (<= 0.01); {elapsed:.2f} s (< 10 s)")


# ------------------------------------------------------------------ criterion 5


def test_criterion_5_filtering_benefit(synthetic_run, record_criterion):
    s = synthetic_run
    t0 = time.perf_counter()
    ft = {v: pipeline.evaluate_variant(s.gallery, s.model, s.labels, s.cfg, v).metrics.ft for v in pipeline.VARIANTS}
    elapsed = s.offline_seconds + time.perf_counter() - t0
    gain = ft["ifsr"] - ft["baseline"]
    diff = ft["ifsr+lcdp"] - ft["ifsr"]
    ok = gain >= 0.03 and diff >= -0.005 and elapsed < 300
    record_criterion(
        5, ok,
        f"FT baseline {ft['baseline']:.4f}, IF/SR {ft['ifsr']:.4f} (+{gain:.4f}, need +0.03), "
        f"IF/SR+LCDP {ft['ifsr+lcdp']:.4f} ({diff:+.4f}, need >= -0.005); {elapsed:.0f} s (< 300 s)",
    )


# ------------------------------------------------------------------ criterion 6


def test_criterion_6_cluster_count_trend(synthetic_run, record_criterion):
    s = synthetic_run
    Ms = [4, 8, 12, 16, 24]
    t0 = time.perf_counter()
    table = pipeline.sweep(s.gallery, s.labels, s.cfg, Ms)
    elapsed = time.perf_counter() - t0
    best = max(Ms[1:-1], key=lambda m: (table[m], -m))  # best interior value
    rise = table[best] - table[Ms[0]]
    beyond = [table[m] - table[best] for m in Ms if m > best]
    worst = max(beyond, key=abs)
    ok = rise >= 0.02 and abs(worst) <= 0.03 and elapsed < 1200
    row = ", ".join(f"M={m}: {table[m]:.4f}" for m in Ms)
    record_criterion(
        6, ok,
        f"{row}; best mid-range M={best} rises {rise:+.4f} over M={Ms[0]} (need +0.02), "
        f"largest change beyond it {worst:+.4f} (need |.| <= 0.03); {elapsed:.0f} s (< 1200 s)",
    )


# ------------------------------------------------------------------ criterion 7


def test_criterion_7_determinism(synthetic_run, tmp_path, record_criterion):
    s = synthetic_run
    first = pipeline.run_evaluate(s.cfg, tmp_path / "first").metrics.to_json().encode()
    assert (tmp_path / "first" / "metrics.json").read_bytes() == first

    # second run: every stage through the command line, in a fresh process with a different thread count
    env = dict(os.environ, OMP_NUM_THREADS="4", OPENBLAS_NUM_THREADS="4", MKL_NUM_THREADS="4")
    env.pop("IFSR_CACHE_DIR", None)
    data, cache, out = tmp_path / "data", tmp_path / "cache", tmp_path / "second"

    def cli(*args):
        proc = subprocess.run([sys.executable, "-m", "ifsr.cli", *args], env=env, capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        return proc

    cli("synth", "--out", str(data), "--seed", str(SYNTH_SEED))
    cli("ingest", "--cache", str(cache), "--gallery", str(data / "meshes"), "--labels", str(data / "labels.cla"),
        "--seed", str(SYNTH_SEED))
    cli("extract", "--cache", str(cache))
    cli("cluster", "--cache", str(cache), "--M", str(SYNTH_M))
    cli("train", "--cache", str(cache))
    cli("evaluate", "--cache", str(cache), "--out", str(out))
    second = (out / "metrics.json").read_bytes()
    same_meshes = all(
        (s.mesh_dir / p.name).read_bytes() == p.read_bytes() for p in sorted((data / "meshes").iterdir())
    )
    record_criterion(
        7, first == second and same_meshes,
        f"metrics JSON {'byte-identical' if first == second else 'differs'} across an in-process run "
        f"and a 4-thread command-line run ({len(first)} bytes)",
    )
