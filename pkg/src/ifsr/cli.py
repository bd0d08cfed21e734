"""Command-line entry point: ``ifsr <subcommand> [options]``."""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from . import pipeline
from .config import CACHE_ENV, PipelineConfig
from .dataset_io import atomic_write_text, read_off
from .errors import IFSRError
from .evaluation import sweep_clusters
from .synthetic import SyntheticSpec, write_synthetic


def _parse_eps(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("epsilon must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ifsr", description="Irrelevance filtering and similarity ranking for 3D shapes.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--config", help="JSON config file (default: <cache>/config.json if present)")
        sp.add_argument("--cache", help=f"cache directory (overrides ${CACHE_ENV} and the config)")
        sp.add_argument("--seed", type=int)

    sp = sub.add_parser("ingest", help="index a gallery directory of OFF meshes")
    common(sp)
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--gallery", help="directory of .off meshes")
    src.add_argument("--shrec12", help="SHREC12 directory (meshes plus a .cla file)")
    sp.add_argument("--labels", help="PSB .cla classification file")

    sp = sub.add_parser("synth", help="write the procedural synthetic gallery")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--per-class", type=int, default=10)
    sp.add_argument("--scale-jitter", type=float, default=SyntheticSpec.scale_jitter)
    sp.add_argument("--vertex-jitter", type=float, default=SyntheticSpec.vertex_jitter)
    sp.add_argument("--no-rotate", action="store_true")

    sp = sub.add_parser("extract", help="compute global and local features")
    common(sp)

    sp = sub.add_parser("cluster", help="spectral clustering of the gallery")
    common(sp)
    sp.add_argument("--M", type=int)

    sp = sub.add_parser("train", help="train the relevance forest and calibrate epsilon")
    common(sp)
    sp.add_argument("--epsilon", type=_parse_eps)
    sp.add_argument("--keep-median", type=int)
    sp.add_argument("--K", type=int)

    sp = sub.add_parser("query", help="rank the gallery for one query")
    common(sp)
    q = sp.add_mutually_exclusive_group(required=True)
    q.add_argument("--mesh", help="query OFF file")
    q.add_argument("--shape-id", help="gallery shape (leave-one-out)")
    sp.add_argument("--epsilon", type=_parse_eps)
    sp.add_argument("--diffuse", choices=("on", "off"))
    sp.add_argument("--iters", type=int)
    sp.add_argument("--k-local", type=int)
    sp.add_argument("--explain", action="store_true", help="print per-cluster cost terms instead of the ranking")
    sp.add_argument("--out", help="write CSV here instead of stdout")

    sp = sub.add_parser("evaluate", help="leave-one-out metrics over the gallery")
    common(sp)
    sp.add_argument("--labels")
    sp.add_argument("--variant", choices=pipeline.VARIANTS)
    sp.add_argument("--out", default=None, help="directory for metrics.json, per_query.csv, pr_curve.csv")

    sp = sub.add_parser("sweep", help="first-tier score for several cluster counts")
    common(sp)
    sp.add_argument("--M", required=True, help="comma-separated cluster counts")
    sp.add_argument("--variant", choices=pipeline.VARIANTS, default="ifsr")
    sp.add_argument("--out")
    return p


def load_config(args) -> PipelineConfig:
    if getattr(args, "config", None):
        cfg = PipelineConfig.load(args.config)
    else:
        cache = Path(getattr(args, "cache", None) or pipeline.os.environ.get(CACHE_ENV) or PipelineConfig.cache_dir)
        stored = cache / "config.json"
        cfg = PipelineConfig.load(stored) if stored.exists() else PipelineConfig(cache_dir=str(cache))
    changes = {}
    if getattr(args, "cache", None):
        changes["cache_dir"] = args.cache
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    return cfg.replace(**changes) if changes else cfg


def _cache_for(cfg: PipelineConfig, args) -> PipelineConfig:
    # an explicit --cache flag beats the environment variable
    if getattr(args, "cache", None):
        pipeline.os.environ.pop(CACHE_ENV, None)
    return cfg


def _store_config(cfg: PipelineConfig) -> None:
    cache = pipeline.resolve_cache_dir(cfg)
    cache.mkdir(parents=True, exist_ok=True)
    atomic_write_text(cache / "config.json", cfg.to_json())


def _emit(text: str, out: str | None) -> None:
    if out:
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def run(args) -> int:
    cmd = args.command
    if cmd == "synth":
        spec = SyntheticSpec(
            per_class=args.per_class,
            scale_jitter=args.scale_jitter,
            vertex_jitter=args.vertex_jitter,
            rotate=not args.no_rotate,
        )
        with pipeline.stage("synth"):
            mesh_dir, cla = write_synthetic(args.out, spec, args.seed)
        print(f"wrote {spec.per_class * len(spec.classes)} meshes to {mesh_dir} and labels to {cla}")
        return 0

    cfg = _cache_for(load_config(args), args)
    if cmd == "ingest":
        gallery = args.gallery or args.shrec12
        labels = args.labels
        if args.shrec12 and labels is None:
            found = sorted(Path(args.shrec12).rglob("*.cla"))
            labels = str(found[0]) if found else None
        cfg = cfg.replace(gallery_dir=str(gallery), labels=None)
        manifest = pipeline.ingest(cfg, gallery, labels)
        _store_config(cfg)
        print(f"ingested {len(manifest)} shapes into {pipeline.resolve_cache_dir(cfg)}")
    elif cmd == "extract":
        pipeline.run_extract(cfg, progress=logging.getLogger("ifsr").info)
        _store_config(cfg)
        print(f"features written to {pipeline.resolve_cache_dir(cfg)}")
    elif cmd == "cluster":
        if args.M is not None:
            cfg = cfg.replace(M=args.M)
        cm = pipeline.run_cluster(cfg)
        _store_config(cfg)
        print(f"clustered {len(cm.shape_ids)} shapes into M={cm.M}; sizes {cm.cluster_sizes().tolist()}")
    elif cmd == "train":
        changes = {}
        if args.epsilon is not None:
            changes["epsilon"] = args.epsilon
        if args.keep_median is not None:
            changes.update(keep_median=args.keep_median, epsilon=None)
        if args.K is not None:
            changes["K"] = args.K
        cfg = cfg.replace(**changes)
        model = pipeline.run_train(cfg)
        _store_config(cfg)
        print(f"trained {model.relevance.forest.T} trees; K={model.relevance.K} epsilon={model.relevance.epsilon!r}")
    elif cmd == "query":
        dp = cfg.diffusion
        if args.diffuse is not None:
            dp.enabled = args.diffuse == "on"
        if args.iters is not None:
            dp.iterations = args.iters
        if args.k_local is not None:
            dp.k_local = args.k_local
        cfg.validate()
        mesh = None
        if args.mesh:
            with pipeline.stage("query"):
                mesh = read_off(args.mesh)
                mesh = type(mesh)(mesh.vertices, mesh.faces, Path(args.mesh).stem)
        res = pipeline.run_query(cfg, mesh=mesh, shape_id=args.shape_id, epsilon=args.epsilon)
        _emit(res.explain_csv() if args.explain else res.ranking.to_csv(), args.out)
    elif cmd == "evaluate":
        if args.labels:
            cfg = cfg.replace(labels=args.labels)
        result = pipeline.run_evaluate(cfg, args.out, args.variant)
        sys.stdout.write(result.metrics.to_json())
    elif cmd == "sweep":
        with pipeline.stage("sweep"):
            Ms = [int(x) for x in args.M.split(",") if x.strip()]
        table = sweep_clusters(cfg, Ms, args.variant)
        _emit(pipeline.sweep_csv(table), args.out)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return run(args)
    except IFSRError as exc:
        tag = exc.stage or args.command
        print(f"ifsr: [{tag}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"ifsr: [{args.command}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
