"""View-based local feature: depth renders, dense gradient descriptors, bag of words.

This is a self-contained stand-in for a SIFT-style view feature. Any object
with ``fit(meshes)`` and ``encode(mesh)`` can replace :class:`DepthBoWProvider`
in the pipeline.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Protocol

import numpy as np

from .errors import DegenerateMesh, DimensionMismatch, InsufficientDescriptors
from .kmeans import assign, kmeans
from .mesh import TriangleMesh, icosphere
from .raster import project_mesh

log = logging.getLogger(__name__)

IMAGE_UP = (1.0, 1.0, 1.0)
N_BINS = 8
CELL = 4
CELLS = 4
PATCH = CELL * CELLS
DESCRIPTOR_DIM = CELLS * CELLS * N_BINS
CHI2_DELTA = 1e-10
_VIEW_LEVELS = {12: 0, 42: 1, 162: 2}


@dataclass
class DepthImage:
    depth: np.ndarray  # (res, res) in [0, 1], 0 = background
    view_dir: np.ndarray

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]


@dataclass
class Codebook:
    centers: np.ndarray
    train_seed: int

    @property
    def V(self) -> int:
        return len(self.centers)


@dataclass
class LocalFeature:
    hist: np.ndarray
    empty: bool = False


def view_directions(n_views: int = 42) -> np.ndarray:
    """Icosphere vertices (12, 42 or 162 views)."""
    if n_views not in _VIEW_LEVELS:
        raise ValueError(f"n_views must be one of {sorted(_VIEW_LEVELS)}")
    return icosphere(_VIEW_LEVELS[n_views]).vertices


def render_depth_views(mesh: TriangleMesh, n_views: int = 42, res: int = 128) -> list[DepthImage]:
    """Orthographic depth renders over [-1, 1]^2 from icosphere view directions.

    Each camera sits on the unit sphere at ``view_dir`` looking at the
    origin. A covered pixel stores ``1 - 0.45 * dist`` where ``dist`` in
    [0, 2] is the distance from the camera plane to the nearest surface, so
    surfaces land in [0.1, 1] and 0 is reserved for background. The image
    up vector is fixed to (1, 1, 1), which no view direction is parallel to.
    """
    if mesh.n_faces == 0 or not mesh.total_area() > 0:
        raise DegenerateMesh(f"{mesh.source_id or 'mesh'}: zero surface area")
    tris = mesh.triangles()
    out = []
    for d in view_directions(n_views):
        zbuf = project_mesh(tris, d, res, up=IMAGE_UP)
        covered = np.isfinite(zbuf)
        dist = 1.0 - np.where(covered, zbuf, 0.0)
        depth = np.where(covered, np.clip(1.0 - 0.45 * dist, 0.0, 1.0), 0.0)
        out.append(DepthImage(depth, d.copy()))
    return out


def _cell_histograms(depth: np.ndarray) -> np.ndarray:
    """(H/4, W/4, 8) magnitude-weighted orientation histograms per 4x4 cell."""
    gy, gx = np.gradient(depth)
    mag = np.hypot(gx, gy)
    ang = np.arctan2(gy, gx)
    b = np.floor((ang + np.pi) / (2 * np.pi / N_BINS)).astype(np.int64) % N_BINS
    h, w = depth.shape
    onehot = np.zeros((h, w, N_BINS))
    np.put_along_axis(onehot, b[..., None], mag[..., None], axis=2)
    return onehot.reshape(h // CELL, CELL, w // CELL, CELL, N_BINS).sum(axis=(1, 3))


def extract_descriptors(img: DepthImage | np.ndarray, stride: int = 8) -> np.ndarray:
    """Dense 128-D gradient-orientation descriptors on a regular grid.

    Patches are 16x16 pixels (4x4 cells of 4x4 pixels, 8 orientation bins)
    with top-left corners every ``stride`` pixels. Patches with no gradient
    are skipped. Each descriptor is L2-normalized, clamped at 0.2 and
    renormalized. Returns (n, 128), possibly empty.
    """
    depth = img.depth if isinstance(img, DepthImage) else np.asarray(img, dtype=np.float64)
    h, w = depth.shape
    if h % CELL or w % CELL or stride % CELL:
        raise ValueError("image size and stride must be multiples of the 4-pixel cell")
    cells = _cell_histograms(depth)
    step = stride // CELL
    rows = range(0, h // CELL - CELLS + 1, step)
    cols = range(0, w // CELL - CELLS + 1, step)
    desc = np.stack(
        [cells[r : r + CELLS, c : c + CELLS].ravel() for r in rows for c in cols]
    ) if len(rows) and len(cols) else np.zeros((0, DESCRIPTOR_DIM))
    norm = np.linalg.norm(desc, axis=1)
    desc = desc[norm > 0] / norm[norm > 0, None]
    desc = np.minimum(desc, 0.2)
    n2 = np.linalg.norm(desc, axis=1, keepdims=True)
    return desc / n2


def mesh_descriptors(mesh: TriangleMesh, n_views: int = 42, res: int = 128, stride: int = 8) -> np.ndarray:
    views = render_depth_views(mesh, n_views, res)
    parts = [extract_descriptors(v, stride) for v in views]
    return np.concatenate(parts) if parts else np.zeros((0, DESCRIPTOR_DIM))


def build_codebook(all_descriptors: np.ndarray, V: int, seed: int) -> Codebook:
    x = np.asarray(all_descriptors, dtype=np.float64)
    if len(x) < V:
        raise InsufficientDescriptors(f"{len(x)} descriptors for a vocabulary of {V}")
    return Codebook(kmeans(x, V, seed=seed, max_iter=50, tol=1e-4).centers, seed)


def bow_encode(descriptors: np.ndarray, codebook: Codebook) -> LocalFeature:
    """Hard-assignment histogram, L1-normalized; uniform (flagged) when empty."""
    V = codebook.V
    if len(descriptors) == 0:
        log.warning("no descriptors to encode; using a uniform histogram")
        return LocalFeature(np.full(V, 1.0 / V), empty=True)
    labels, _ = assign(np.asarray(descriptors, dtype=np.float64), codebook.centers)
    counts = np.bincount(labels, minlength=V).astype(np.float64)
    return LocalFeature(counts / counts.sum())


def local_distance(a, b) -> float:
    """Chi-square distance 0.5 * sum (a - b)^2 / (a + b + 1e-10)."""
    a = a.hist if isinstance(a, LocalFeature) else np.asarray(a, dtype=np.float64)
    b = b.hist if isinstance(b, LocalFeature) else np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"histogram sizes {a.shape} != {b.shape}")
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    return float(0.5 * np.sum((a - b) ** 2 / (a + b + CHI2_DELTA)))


def pairwise_local_distances(h: np.ndarray, other: np.ndarray | None = None) -> np.ndarray:
    """Chi-square distance matrix between histogram rows."""
    a = np.asarray(h, dtype=np.float64)
    b = a if other is None else np.asarray(other, dtype=np.float64)
    out = np.empty((len(a), len(b)))
    for i in range(len(a)):
        out[i] = 0.5 * np.sum((a[i] - b) ** 2 / (a[i] + b + CHI2_DELTA), axis=1)
    if other is None:
        out = 0.5 * (out + out.T)  # exact symmetry despite summation order
        np.fill_diagonal(out, 0.0)
    return out


class LocalFeatureProvider(Protocol):
    def fit(self, meshes: Iterable[TriangleMesh]) -> None: ...

    def encode(self, mesh: TriangleMesh) -> np.ndarray: ...


@dataclass
class DepthBoWProvider:
    """Depth-view dense-gradient bag of words."""

    n_views: int = 42
    res: int = 128
    stride: int = 8
    vocabulary: int = 256
    seed: int = 0
    max_train_per_shape: int = 400
    codebook: Codebook | None = field(default=None, repr=False)

    def descriptors(self, mesh: TriangleMesh) -> np.ndarray:
        return mesh_descriptors(mesh, self.n_views, self.res, self.stride)

    def fit(self, meshes: Iterable[TriangleMesh]) -> None:
        """Train the codebook on a seeded per-shape subsample of descriptors."""
        rng = np.random.default_rng(self.seed)
        pool = []
        for m in meshes:
            d = self.descriptors(m)
            if len(d) > self.max_train_per_shape:
                d = d[np.sort(rng.choice(len(d), self.max_train_per_shape, replace=False))]
            pool.append(d)
        self.codebook = build_codebook(np.concatenate(pool), self.vocabulary, self.seed)

    def encode(self, mesh: TriangleMesh) -> np.ndarray:
        if self.codebook is None:
            raise RuntimeError("codebook not trained")
        return bow_encode(self.descriptors(mesh), self.codebook).hist
