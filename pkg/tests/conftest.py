from __future__ import annotations

import os
import time
from types import SimpleNamespace

import pytest

from ifsr import pipeline
from ifsr.config import CACHE_ENV, PipelineConfig
from ifsr.synthetic import SyntheticSpec, write_synthetic

os.environ.pop(CACHE_ENV, None)

ACCEPTANCE_LINES: dict[int, str] = {}

SYNTH_SEED = 0
SYNTH_M = 12


@pytest.fixture(scope="session")
def synthetic_run(tmp_path_factory):
    """The default 8 x 10 synthetic gallery taken through every offline stage once."""
    root = tmp_path_factory.mktemp("synthetic")
    t0 = time.perf_counter()
    mesh_dir, cla = write_synthetic(root / "data", SyntheticSpec(), seed=SYNTH_SEED)
    cfg = PipelineConfig(cache_dir=str(root / "cache"), M=SYNTH_M, seed=SYNTH_SEED)
    pipeline.ingest(cfg, mesh_dir, cla)
    model = pipeline.run_offline(cfg)
    offline_seconds = time.perf_counter() - t0
    cache = pipeline.resolve_cache_dir(cfg)
    gallery = pipeline.load_gallery(cache)
    labels = pipeline.load_labels(cache, gallery.shape_ids)
    return SimpleNamespace(
        root=root, mesh_dir=mesh_dir, cla=cla, cfg=cfg, cache=cache, gallery=gallery,
        labels=labels, model=model, offline_seconds=offline_seconds,
    )


@pytest.fixture
def record_criterion():
    def record(n: int, ok: bool, detail: str) -> None:
        ACCEPTANCE_LINES[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(ACCEPTANCE_LINES[n])
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
