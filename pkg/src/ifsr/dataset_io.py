"""Mesh and label parsing, gallery manifests, and the feature cache format.

Cache layout (all little-endian)::

    <name>.manifest.json   {"format": "ifsr-features", "version": 1,
                            "blob": "<name>.f32", "fields": {"f_s": 72, ...},
                            "records": [{"shape_id": ..., "vectors": {"f_s": 0, ...}}]}
    <name>.f32             b"IFSRF32\\0" | u32 version | u32 n_vectors
                           then per vector: u32 dim | dim * float32
"""

from __future__ import annotations

import io
import json
import logging
import os
import re
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from .errors import (
    BadHeader,
    CountMismatch,
    DeclaredCountMismatch,
    DimensionHeaderMismatch,
    IncompleteRecord,
    IndexOutOfRange,
    MissingHeader,
    VersionMismatch,
)
from .mesh import TriangleMesh

log = logging.getLogger(__name__)

CACHE_MAGIC = b"IFSRF32\x00"
CACHE_VERSION = 1
FEATURE_FIELDS = ("f_s", "f_w", "f_g", "local")
FIXED_DIMS = {"f_s": 72, "f_w": 7, "f_g": 10}


# --------------------------------------------------------------------- OFF


def _content_lines(text: str | TextIO) -> Iterable[str]:
    stream = io.StringIO(text) if isinstance(text, str) else text
    for raw in stream:
        line = raw.split("#", 1)[0].strip()
        if line:
            yield line


def parse_off(text: str | TextIO, source_id: str = "") -> TriangleMesh:
    """Parse an OFF document; polygons are fan-triangulated from their first vertex.

    Triangles that repeat a vertex (after triangulation) are dropped.
    """
    lines = iter(_content_lines(text))
    first = next(lines, None)
    if first is None:
        raise MissingHeader(f"{source_id}: empty document")
    tokens = first.split()
    head = tokens[0]
    if head == "OFF":
        rest = tokens[1:]
    elif re.fullmatch(r"OFF\d+", head):
        # some PSB-era files glue the vertex count onto the keyword
        rest = [head[3:]] + tokens[1:]
    else:
        raise MissingHeader(f"{source_id}: first token is {head!r}, expected 'OFF'")
    if not rest:
        rest = next(lines, "").split()
    try:
        n_vert, n_face = int(rest[0]), int(rest[1])
    except (IndexError, ValueError):
        raise CountMismatch(f"{source_id}: missing vertex/face counts") from None

    verts = np.empty((n_vert, 3), dtype=np.float64)
    for i in range(n_vert):
        line = next(lines, None)
        if line is None:
            raise CountMismatch(f"{source_id}: declared {n_vert} vertices, found {i}")
        parts = line.split()
        if len(parts) < 3:
            raise CountMismatch(f"{source_id}: vertex line {i} has {len(parts)} values")
        verts[i] = [float(p) for p in parts[:3]]

    tris: list[tuple[int, int, int]] = []
    dropped = 0
    for i in range(n_face):
        line = next(lines, None)
        if line is None:
            raise CountMismatch(f"{source_id}: declared {n_face} faces, found {i}")
        parts = line.split()
        k = int(parts[0])
        if len(parts) < k + 1:
            raise CountMismatch(f"{source_id}: face {i} lists fewer than {k} indices")
        idx = [int(p) for p in parts[1 : k + 1]]
        for j in idx:
            if j < 0 or j >= n_vert:
                raise IndexOutOfRange(f"{source_id}: face {i} references vertex {j}")
        for j in range(1, k - 1):
            tri = (idx[0], idx[j], idx[j + 1])
            if len(set(tri)) < 3:
                dropped += 1
                continue
            tris.append(tri)
    if dropped:
        log.warning("%s: dropped %d degenerate triangles", source_id, dropped)
    faces = np.array(tris, dtype=np.int64).reshape(-1, 3)
    return TriangleMesh(verts, faces, source_id)


def serialize_off(mesh: TriangleMesh) -> str:
    out = ["OFF", f"{mesh.n_vertices} {mesh.n_faces} 0"]
    out += [" ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    out += [f"3 {a} {b} {c}" for a, b, c in mesh.faces]
    return "\n".join(out) + "\n"


def read_off(path: str | Path) -> TriangleMesh:
    path = Path(path)
    with open(path, encoding="utf-8", errors="replace") as fh:
        return parse_off(fh, source_id=path.stem)


def write_off(mesh: TriangleMesh, path: str | Path) -> None:
    atomic_write_text(path, serialize_off(mesh))


# --------------------------------------------------------------------- CLA


@dataclass
class ClassLabels:
    class_names: list[str]
    assignment: dict[str, int]

    def class_of(self, shape_id: str) -> int:
        return self.assignment[shape_id]

    def class_sizes(self) -> np.ndarray:
        return np.bincount(
            np.fromiter(self.assignment.values(), dtype=np.int64),
            minlength=len(self.class_names),
        )


def parse_cla(text: str | TextIO) -> ClassLabels:
    """Parse a PSB classification file; nested classes collapse to leaves."""
    lines = iter(_content_lines(text))
    header = next(lines, "").split()
    if len(header) < 2 or header[0] != "PSB":
        raise BadHeader(f"expected 'PSB <version>', got {' '.join(header)!r}")
    counts = next(lines, "").split()
    try:
        n_classes, n_models = int(counts[0]), int(counts[1])
    except (IndexError, ValueError):
        raise BadHeader("missing '<numClasses> <numModels>' line") from None

    blocks: list[tuple[str, str, list[str]]] = []
    for _ in range(n_classes):
        line = next(lines, None)
        if line is None:
            raise DeclaredCountMismatch(f"declared {n_classes} classes, found {len(blocks)}")
        parts = line.split()
        if len(parts) != 3:
            raise BadHeader(f"bad class line {line!r}")
        name, parent, count = parts[0], parts[1], int(parts[2])
        ids: list[str] = []
        while len(ids) < count:
            nxt = next(lines, None)
            if nxt is None:
                break
            ids.extend(nxt.split())
        if len(ids) != count:
            raise DeclaredCountMismatch(f"class {name!r} declares {count} ids, found {len(ids)}")
        blocks.append((name, parent, ids))
    leftover = next(lines, None)
    if leftover is not None:
        raise DeclaredCountMismatch(f"unexpected content after last class: {leftover!r}")

    parents = {p for _, p, _ in blocks}
    names: list[str] = []
    assignment: dict[str, int] = {}
    for name, _, ids in blocks:
        if name in parents and not ids:
            continue  # interior node of the hierarchy
        names.append(name)
        for sid in ids:
            if sid in assignment:
                raise DeclaredCountMismatch(f"shape {sid!r} listed twice")
            assignment[sid] = len(names) - 1
    if len(assignment) != n_models:
        raise DeclaredCountMismatch(f"declared {n_models} models, parsed {len(assignment)}")
    return ClassLabels(names, assignment)


def serialize_cla(labels: ClassLabels) -> str:
    members: list[list[str]] = [[] for _ in labels.class_names]
    for sid, k in sorted(labels.assignment.items()):
        members[k].append(sid)
    out = ["PSB 1", f"{len(labels.class_names)} {len(labels.assignment)}", ""]
    for name, ids in zip(labels.class_names, members):
        out.append(f"{name} 0 {len(ids)}")
        out += ids
        out.append("")
    return "\n".join(out)


def read_cla(path: str | Path) -> ClassLabels:
    with open(path, encoding="utf-8") as fh:
        return parse_cla(fh)


def align_labels(labels: ClassLabels, shape_ids: Iterable[str]) -> ClassLabels:
    """Re-key ``labels`` onto gallery ids, matching numerically when needed.

    PSB files list bare model numbers while SHREC12 files are named like
    ``D00042``; both refer to model 42.
    """
    numeric = {}
    for sid, k in labels.assignment.items():
        digits = re.sub(r"\D", "", sid)
        if digits:
            numeric[int(digits)] = k
    out: dict[str, int] = {}
    for sid in shape_ids:
        if sid in labels.assignment:
            out[sid] = labels.assignment[sid]
            continue
        digits = re.sub(r"\D", "", sid)
        if digits and int(digits) in numeric:
            out[sid] = numeric[int(digits)]
    return ClassLabels(list(labels.class_names), out)


# ---------------------------------------------------------------- manifest


@dataclass(frozen=True)
class ManifestEntry:
    shape_id: str
    mesh_path: str
    feature_path: str | None = None
    missing: bool = False


@dataclass(frozen=True)
class GalleryManifest:
    dataset_name: str
    entries: tuple[ManifestEntry, ...] = field(default_factory=tuple)

    @property
    def shape_ids(self) -> list[str]:
        return [e.shape_id for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def from_directory(cls, directory: str | Path, dataset_name: str | None = None) -> "GalleryManifest":
        directory = Path(directory)
        paths = sorted(directory.rglob("*.off"), key=lambda p: (p.stem, str(p)))
        seen: set[str] = set()
        entries = []
        for p in paths:
            if p.stem in seen:
                raise ValueError(f"duplicate shape id {p.stem!r} under {directory}")
            seen.add(p.stem)
            entries.append(ManifestEntry(p.stem, str(p)))
        return cls(dataset_name or directory.name, tuple(entries))

    def to_json(self) -> str:
        payload = {
            "dataset_name": self.dataset_name,
            "entries": [
                {"shape_id": e.shape_id, "mesh_path": e.mesh_path, "feature_path": e.feature_path}
                for e in self.entries
            ],
        }
        return json.dumps(payload, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GalleryManifest":
        payload = json.loads(text)
        raw = sorted(payload["entries"], key=lambda e: e["shape_id"])
        ids = [e["shape_id"] for e in raw]
        if len(set(ids)) != len(ids):
            raise ValueError("manifest has duplicate shape ids")
        entries = tuple(
            ManifestEntry(
                e["shape_id"],
                e["mesh_path"],
                e.get("feature_path"),
                missing=not Path(e["mesh_path"]).exists(),
            )
            for e in raw
        )
        return cls(payload["dataset_name"], entries)


# ---------------------------------------------------------- feature cache


@dataclass
class FeatureRecord:
    shape_id: str
    f_s: np.ndarray | None = None
    f_w: np.ndarray | None = None
    f_g: np.ndarray | None = None
    local: np.ndarray | None = None

    def present(self) -> tuple[str, ...]:
        return tuple(k for k in FEATURE_FIELDS if getattr(self, k) is not None)

    def global_vector(self) -> np.ndarray:
        return np.concatenate([self.f_s, self.f_w, self.f_g]).astype(np.float64)


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _manifest_path(path: Path) -> Path:
    return path.with_name(path.name + ".manifest.json")


def _blob_path(path: Path) -> Path:
    return path.with_name(path.name + ".f32")


def save_features(records: list[FeatureRecord], path: str | Path) -> None:
    """Write ``<path>.manifest.json`` and ``<path>.f32``.

    Values are stored as float32; records whose vectors are already float32
    round-trip bit-exactly.
    """
    path = Path(path)
    if not records:
        fields: tuple[str, ...] = ()
    else:
        fields = records[0].present()
        if not fields:
            raise IncompleteRecord("records carry no vectors")
    dims: dict[str, int] = {}
    chunks = [b""]
    n_vec = 0
    entries = []
    for rec in records:
        if rec.present() != fields:
            raise IncompleteRecord(f"{rec.shape_id}: fields {rec.present()} != {fields}")
        slots = {}
        for name in fields:
            vec = np.asarray(getattr(rec, name), dtype="<f4").ravel()
            want = FIXED_DIMS.get(name, dims.get(name, vec.size))
            if vec.size != want:
                raise DimensionHeaderMismatch(f"{rec.shape_id}.{name}: dim {vec.size} != {want}")
            dims[name] = want
            chunks.append(struct.pack("<I", vec.size) + vec.tobytes())
            slots[name] = n_vec
            n_vec += 1
        entries.append({"shape_id": rec.shape_id, "vectors": slots})
    chunks[0] = CACHE_MAGIC + struct.pack("<II", CACHE_VERSION, n_vec)
    manifest = {
        "format": "ifsr-features",
        "version": CACHE_VERSION,
        "blob": _blob_path(path).name,
        "fields": {k: dims.get(k, FIXED_DIMS.get(k, 0)) for k in fields},
        "records": entries,
    }
    atomic_write_bytes(_blob_path(path), b"".join(chunks))
    atomic_write_text(_manifest_path(path), json.dumps(manifest, indent=1, sort_keys=True))


def load_features(path: str | Path) -> list[FeatureRecord]:
    path = Path(path)
    manifest = json.loads(_manifest_path(path).read_text(encoding="utf-8"))
    if manifest.get("version") != CACHE_VERSION:
        raise VersionMismatch(f"manifest version {manifest.get('version')} != {CACHE_VERSION}")
    data = (path.parent / manifest["blob"]).read_bytes()
    if data[:8] != CACHE_MAGIC:
        raise VersionMismatch(f"{manifest['blob']}: bad magic")
    version, n_vec = struct.unpack_from("<II", data, 8)
    if version != CACHE_VERSION:
        raise VersionMismatch(f"blob version {version} != {CACHE_VERSION}")
    vectors = []
    off = 16
    for _ in range(n_vec):
        (dim,) = struct.unpack_from("<I", data, off)
        off += 4
        vectors.append(np.frombuffer(data, dtype="<f4", count=dim, offset=off).astype(np.float32))
        off += 4 * dim
    if off != len(data):
        raise DimensionHeaderMismatch(f"{manifest['blob']}: {len(data) - off} trailing bytes")
    fields = manifest["fields"]
    records = []
    for entry in manifest["records"]:
        rec = FeatureRecord(entry["shape_id"])
        for name, slot in entry["vectors"].items():
            vec = vectors[slot]
            if vec.size != fields[name]:
                raise DimensionHeaderMismatch(
                    f"{entry['shape_id']}.{name}: blob dim {vec.size} != declared {fields[name]}"
                )
            setattr(rec, name, vec)
        records.append(rec)
    return records
