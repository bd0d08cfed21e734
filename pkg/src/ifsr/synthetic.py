"""Procedural desk-scale gallery of closed meshes in eight shape classes."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .dataset_io import ClassLabels, atomic_write_text, serialize_cla, serialize_off
from .mesh import TriangleMesh, box_mesh, icosphere, merge_meshes

CLASSES = ("box", "ellipsoid", "cylinder", "torus", "l_solid", "table", "lamp", "cross")


@dataclass(frozen=True)
class SyntheticSpec:
    classes: tuple[str, ...] = CLASSES
    per_class: int = 10
    scale_jitter: float = 0.4  # per-axis scale drawn from [1 - s, 1 + s]
    vertex_jitter: float = 0.004  # Gaussian vertex noise, in units of the bounding-box diagonal
    rotate: bool = True

    def __post_init__(self):
        unknown = set(self.classes) - set(CLASSES)
        if unknown:
            raise ValueError(f"unknown synthetic classes: {sorted(unknown)}")
        if self.per_class < 4:
            raise ValueError("per_class must be at least 4")
        if not (0 <= self.scale_jitter < 1 and self.vertex_jitter >= 0):
            raise ValueError("perturbation magnitudes out of range")


def frustum(r0: float, r1: float, z0: float, z1: float, n: int = 24) -> TriangleMesh:
    """Closed truncated cone (cylinder when r0 == r1) around +Z with capped ends."""
    t = 2 * np.pi * np.arange(n) / n
    ring = np.stack([np.cos(t), np.sin(t)], axis=1)
    bottom = np.column_stack([r0 * ring, np.full(n, z0)])
    top = np.column_stack([r1 * ring, np.full(n, z1)])
    verts = np.vstack([bottom, top, [[0, 0, z0], [0, 0, z1]]])
    cb, ct = 2 * n, 2 * n + 1
    faces = []
    for i in range(n):
        j = (i + 1) % n
        faces += [(i, j, n + j), (i, n + j, n + i), (cb, j, i), (ct, n + i, n + j)]
    return TriangleMesh(verts, np.array(faces))


def torus(R: float = 0.7, r: float = 0.25, nu: int = 32, nv: int = 16) -> TriangleMesh:
    u = 2 * np.pi * np.arange(nu) / nu
    v = 2 * np.pi * np.arange(nv) / nv
    uu, vv = np.meshgrid(u, v, indexing="ij")
    verts = np.stack(
        [(R + r * np.cos(vv)) * np.cos(uu), (R + r * np.cos(vv)) * np.sin(uu), r * np.sin(vv)], axis=-1
    ).reshape(-1, 3)
    faces = []
    for i in range(nu):
        for j in range(nv):
            a = i * nv + j
            b = ((i + 1) % nu) * nv + j
            c = ((i + 1) % nu) * nv + (j + 1) % nv
            d = i * nv + (j + 1) % nv
            faces += [(a, b, c), (a, c, d)]
    return TriangleMesh(verts, np.array(faces))


def extrude(polygon: np.ndarray, center, height: float) -> TriangleMesh:
    """Prism over a polygon that is star-shaped about ``center`` (CCW order)."""
    p = np.asarray(polygon, dtype=np.float64)
    n = len(p)
    ring = np.vstack([p, [center]])
    verts = np.vstack(
        [np.column_stack([ring, np.full(n + 1, -height / 2)]), np.column_stack([ring, np.full(n + 1, height / 2)])]
    )
    cb, ct = n, 2 * n + 1
    faces = []
    for i in range(n):
        j = (i + 1) % n
        faces += [(cb, j, i), (ct, n + 1 + i, n + 1 + j), (i, j, n + 1 + j), (i, n + 1 + j, n + 1 + i)]
    return TriangleMesh(verts, np.array(faces))


def base_shape(name: str) -> TriangleMesh:
    """Undeformed class prototype."""
    if name == "box":
        return box_mesh((1.6, 1.0, 0.6))
    if name == "ellipsoid":
        s = icosphere(3)
        return TriangleMesh(s.vertices * np.array([1.0, 0.6, 0.45]), s.faces)
    if name == "cylinder":
        return frustum(0.4, 0.4, -0.9, 0.9, n=32)
    if name == "torus":
        return torus()
    if name == "l_solid":
        poly = [(0, 0), (2, 0), (2, 0.6), (0.6, 0.6), (0.6, 2), (0, 2)]
        return extrude(poly, (0.3, 0.3), 0.6)
    if name == "cross":
        a, b = 0.3, 1.0
        poly = [(b, -a), (b, a), (a, a), (a, b), (-a, b), (-a, a), (-b, a), (-b, -a), (-a, -a), (-a, -b), (a, -b), (a, -a)]
        return extrude(poly, (0.0, 0.0), 0.5)
    if name == "table":
        top = box_mesh((1.6, 1.0, 0.1), (0, 0, 0.45))
        legs = [box_mesh((0.1, 0.1, 0.8), (sx * 0.7, sy * 0.4, -0.02)) for sx in (-1, 1) for sy in (-1, 1)]
        return merge_meshes([top, *legs])
    if name == "lamp":
        base = frustum(0.45, 0.45, -0.9, -0.8)
        pole = frustum(0.04, 0.04, -0.78, 0.3, n=12)
        shade = frustum(0.5, 0.2, 0.32, 0.8)
        return merge_meshes([base, pole, shade])
    raise ValueError(f"unknown class {name!r}")


def perturb(mesh: TriangleMesh, spec: SyntheticSpec, rng: np.random.Generator) -> TriangleMesh:
    v = mesh.vertices.copy()
    scale = rng.uniform(1 - spec.scale_jitter, 1 + spec.scale_jitter, 3)
    v = v * scale
    if spec.vertex_jitter > 0:
        diag = np.linalg.norm(np.ptp(v, axis=0))
        v = v + rng.normal(0.0, spec.vertex_jitter * diag, v.shape)
    if spec.rotate:
        rot = Rotation.random(random_state=rng).as_matrix()
        v = v @ rot.T
    return TriangleMesh(v, mesh.faces.copy(), mesh.source_id)


def generate_synthetic(spec: SyntheticSpec | None = None, seed: int = 0) -> tuple[dict[str, TriangleMesh], ClassLabels]:
    """Meshes keyed by shape-id and their class labels, deterministic in ``seed``."""
    spec = spec or SyntheticSpec()
    rng = np.random.default_rng(seed)
    meshes: dict[str, TriangleMesh] = {}
    assignment: dict[str, int] = {}
    idx = 0
    for k, name in enumerate(spec.classes):
        base = base_shape(name)
        for _ in range(spec.per_class):
            sid = f"S{idx:05d}"
            m = perturb(base, spec, rng)
            meshes[sid] = TriangleMesh(m.vertices, m.faces, sid)
            assignment[sid] = k
            idx += 1
    return meshes, ClassLabels(list(spec.classes), assignment)


def write_synthetic(out_dir: str | Path, spec: SyntheticSpec | None = None, seed: int = 0) -> tuple[Path, Path]:
    """Write OFF meshes and a ``labels.cla`` file; returns (mesh dir, label path)."""
    out = Path(out_dir)
    mesh_dir = out / "meshes"
    mesh_dir.mkdir(parents=True, exist_ok=True)
    meshes, labels = generate_synthetic(spec, seed)
    for sid, m in meshes.items():
        atomic_write_text(mesh_dir / f"{sid}.off", serialize_off(m))
    cla = out / "labels.cla"
    atomic_write_text(cla, serialize_cla(labels))
    return mesh_dir, cla
