"""Pipeline configuration: strict JSON schema, validation and canonical form."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError

CACHE_ENV = "IFSR_CACHE_DIR"


@dataclass
class ForestParams:
    n_trees: int = 500
    max_features: int | None = None  # None: ceil(sqrt(d))


@dataclass
class LocalParams:
    n_views: int = 42
    resolution: int = 128
    stride: int = 8
    vocabulary: int = 256
    max_train_per_shape: int = 400


@dataclass
class DiffusionParams:
    enabled: bool = False
    k_local: int | None = None  # None: half the average cluster size, at least 2
    iterations: int = 20
    tol: float = 1e-6


@dataclass
class PipelineConfig:
    cache_dir: str = "ifsr-cache"
    gallery_dir: str | None = None
    labels: str | None = None
    M: int = 64
    epsilon: float | None = None
    keep_median: int | None = None  # None: M / 8, at least 1
    K: int | None = None  # None: round(1.5 n / M)
    seed: int = 0
    voxel_resolution: int = 64
    symmetry_directions: int = 162
    e_cutoff: int = 32
    forest: ForestParams = field(default_factory=ForestParams)
    local: LocalParams = field(default_factory=LocalParams)
    diffusion: DiffusionParams = field(default_factory=DiffusionParams)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(ok: bool, msg: str) -> None:
            if not ok:
                raise ConfigError(msg, stage="config")

        need(isinstance(self.M, int) and self.M >= 1, "M must be a positive integer")
        need(self.epsilon is None or (isinstance(self.epsilon, (int, float)) and self.epsilon > 0),
             "epsilon must be positive")
        need(self.keep_median is None or (isinstance(self.keep_median, int) and self.keep_median >= 1),
             "keep_median must be a positive integer")
        need(self.K is None or (isinstance(self.K, int) and self.K >= 1), "K must be a positive integer")
        need(isinstance(self.seed, int) and self.seed >= 0, "seed must be a non-negative integer")
        need(isinstance(self.voxel_resolution, int) and self.voxel_resolution >= 8
             and self.voxel_resolution % 2 == 0, "voxel_resolution must be an even integer >= 8")
        need(self.symmetry_directions in (42, 162, 642, 2562), "symmetry_directions must be an icosphere count")
        need(isinstance(self.e_cutoff, int) and self.e_cutoff >= 1, "e_cutoff must be a positive integer")
        f = self.forest
        need(isinstance(f.n_trees, int) and f.n_trees >= 1, "forest.n_trees must be >= 1")
        need(f.max_features is None or (isinstance(f.max_features, int) and f.max_features >= 1),
             "forest.max_features must be >= 1")
        lp = self.local
        need(lp.n_views in (12, 42, 162), "local.n_views must be 12, 42 or 162")
        need(isinstance(lp.resolution, int) and lp.resolution >= 16 and lp.resolution % 4 == 0,
             "local.resolution must be a multiple of 4 and >= 16")
        need(isinstance(lp.stride, int) and lp.stride >= 4 and lp.stride % 4 == 0,
             "local.stride must be a positive multiple of 4")
        need(isinstance(lp.vocabulary, int) and lp.vocabulary >= 2, "local.vocabulary must be >= 2")
        need(isinstance(lp.max_train_per_shape, int) and lp.max_train_per_shape >= 1,
             "local.max_train_per_shape must be >= 1")
        d = self.diffusion
        need(isinstance(d.enabled, bool), "diffusion.enabled must be a boolean")
        need(d.k_local is None or (isinstance(d.k_local, int) and d.k_local >= 1), "diffusion.k_local must be >= 1")
        need(isinstance(d.iterations, int) and d.iterations >= 0, "diffusion.iterations must be >= 0")
        need(isinstance(d.tol, (int, float)) and d.tol > 0, "diffusion.tol must be positive")

    # ---------------------------------------------------------- (de)serialization

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        if out["epsilon"] is not None and math.isinf(out["epsilon"]):
            out["epsilon"] = "inf"
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "PipelineConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object", stage="config")
        data = dict(data)
        nested = {"forest": ForestParams, "local": LocalParams, "diffusion": DiffusionParams}
        _reject_unknown(data, cls, "")
        for key, sub in nested.items():
            if key in data:
                if not isinstance(data[key], dict):
                    raise ConfigError(f"{key} must be an object", stage="config")
                _reject_unknown(data[key], sub, key + ".")
                data[key] = sub(**data[key])
        if data.get("epsilon") == "inf":
            data["epsilon"] = math.inf
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}", stage="config") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        return cls.from_json(Path(path).read_text())

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def _reject_unknown(data: dict, cls, prefix: str) -> None:
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(prefix + k for k in unknown)}", stage="config")


def canonicalize(text: str) -> str:
    """Canonical JSON form of a config document (defaults filled in)."""
    return PipelineConfig.from_json(text).to_json()


def stage_seed(master: int, stage: str) -> int:
    """Per-stage seed: first 8 bytes of sha256("<master>:<stage>"), big-endian, as a 63-bit int."""
    digest = hashlib.sha256(f"{master}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1
