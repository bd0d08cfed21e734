"""Global shape descriptors: surface Fourier, 3D Haar and geometric features.

Vector layout of the 89-D global feature::

    [0:72]   surface Fourier magnitudes, row-major over (theta, phi) frequencies
    [72:79]  Haar responses in the order HAAR_PATTERNS
    [79:82]  aspect ratio (x, y, z)
    [82:85]  xyz-variance (slices normal to X, Y, Z)
    [85:88]  alpha/beta/gamma-variance (planes rotating about X, Y, Z)
    [88]     rectilinearity
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DimensionMismatch, OddResolution
from .geometry import VoxelGrid
from .mesh import TriangleMesh

N_THETA, N_PHI = 6, 12
ANGLE_STEP = np.pi / 6
HAAR_PATTERNS = ("x", "y", "z", "xyz", "yz", "xz", "xy")
N_CUT_PLANES = 12
GLOBAL_DIM = 89


class EmptyGridWarning(UserWarning):
    pass


@dataclass
class DistanceField2D:
    samples: np.ndarray  # (6, 12), rows theta, columns phi
    theta_step: float = ANGLE_STEP
    phi_step: float = ANGLE_STEP


def ray_directions() -> np.ndarray:
    """(6, 12, 3) unit rays (cos phi cos theta, cos phi sin theta, sin phi)."""
    theta = np.arange(N_THETA) * ANGLE_STEP
    phi = np.arange(N_PHI) * ANGLE_STEP
    th, ph = np.meshgrid(theta, phi, indexing="ij")
    return np.stack([np.cos(ph) * np.cos(th), np.cos(ph) * np.sin(th), np.sin(ph)], axis=-1)


def ray_distance_function(mesh: TriangleMesh) -> DistanceField2D:
    """Distance from the origin to the farthest ray/surface intersection; 0 on a miss."""
    dirs = ray_directions().reshape(-1, 3)
    tris = mesh.triangles()
    v0 = tris[:, 0]
    e1 = tris[:, 1] - v0
    e2 = tris[:, 2] - v0
    out = np.zeros(len(dirs))
    eps = 1e-12
    for i, d in enumerate(dirs):
        p = np.cross(d, e2)
        det = np.einsum("fi,fi->f", e1, p)
        ok = np.abs(det) > eps
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        s = -v0  # ray origin is the origin
        u = np.einsum("fi,fi->f", s, p) * inv
        q = np.cross(s, e1)
        v = (q @ d) * inv
        t = np.einsum("fi,fi->f", e2, q) * inv
        hit = ok & (u >= -1e-9) & (v >= -1e-9) & (u + v <= 1 + 1e-9) & (t > 1e-12)
        if hit.any():
            out[i] = t[hit].max()
    return DistanceField2D(out.reshape(N_THETA, N_PHI))


def surface_fourier(field: DistanceField2D | np.ndarray) -> np.ndarray:
    """72 unnormalized 2-D DFT magnitudes, DC first, theta-frequency major."""
    g = field.samples if isinstance(field, DistanceField2D) else np.asarray(field, dtype=np.float64)
    if g.shape != (N_THETA, N_PHI):
        raise DimensionMismatch(f"distance field shape {g.shape} != {(N_THETA, N_PHI)}")
    return np.abs(np.fft.fft2(g)).ravel()


def _octant_signs(R: int) -> dict[str, np.ndarray]:
    s = np.where(np.arange(R) >= R // 2, 1.0, -1.0)
    sx, sy, sz = s[:, None, None], s[None, :, None], s[None, None, :]
    return {"x": sx, "y": sy, "z": sz}


def haar_features(grid: VoxelGrid) -> np.ndarray:
    """Seven 2x2x2 Haar responses over the octants of the grid.

    Order: X, Y and Z half-space splits (+1 on the high side), the
    three-axis octant parity, then the parity with the X, Y and Z factor
    dropped in turn. Each response is signed occupied volume / R^3.
    """
    R = grid.resolution
    if R % 2:
        raise OddResolution(f"Haar filters need an even resolution, got {R}")
    occ = grid.occupancy.astype(np.float64)
    s = _octant_signs(R)
    cube = float(R) ** 3
    out = []
    for name in HAAR_PATTERNS:
        pattern = np.ones((1, 1, 1))
        for axis in name:
            pattern = pattern * s[axis]
        out.append(float((occ * pattern).sum() / cube))
    return np.array(out)


def aspect_ratio(mesh: TriangleMesh) -> np.ndarray:
    lengths = np.ptp(mesh.vertices, axis=0)
    return lengths / lengths.sum()


def _cv2(counts: np.ndarray) -> float:
    """Squared coefficient of variation of slice counts over the occupied extent."""
    nz = np.flatnonzero(counts)
    if len(nz) == 0:
        return 0.0
    c = counts[nz[0] : nz[-1] + 1].astype(np.float64)
    m = c.mean()
    return float(c.var() / (m * m))


def xyz_variance(grid: VoxelGrid) -> np.ndarray:
    occ = grid.occupancy
    return np.array(
        [
            _cv2(occ.sum(axis=(1, 2))),
            _cv2(occ.sum(axis=(0, 2))),
            _cv2(occ.sum(axis=(0, 1))),
        ]
    )


def rotated_plane_counts(grid: VoxelGrid, axis: int, n_planes: int = N_CUT_PLANES) -> np.ndarray:
    """Occupied samples on ``n_planes`` half-turn-spaced planes containing ``axis``.

    Each plane is sampled on an R x R grid of voxel-center spacing and read
    by nearest voxel.
    """
    R = grid.resolution
    c = grid.centers()
    s, t = np.meshgrid(c, c, indexing="ij")
    others = [a for a in range(3) if a != axis]
    counts = np.empty(n_planes)
    for k in range(n_planes):
        ang = k * np.pi / n_planes
        pts = np.empty((R, R, 3))
        pts[..., axis] = s
        pts[..., others[0]] = t * np.cos(ang)
        pts[..., others[1]] = t * np.sin(ang)
        idx = np.clip(np.floor((pts + 1.0) / grid.pitch).astype(np.int64), 0, R - 1)
        counts[k] = grid.occupancy[idx[..., 0], idx[..., 1], idx[..., 2]].sum()
    return counts


def abg_variance(grid: VoxelGrid) -> np.ndarray:
    out = []
    for axis in range(3):
        counts = rotated_plane_counts(grid, axis)
        m = counts.mean()
        out.append(float(counts.var() / (m * m)) if m > 0 else 0.0)
    return np.array(out)


_RECT_CANDIDATES = (
    np.eye(3),
    Rotation.from_euler("x", np.pi / 4).as_matrix(),
    Rotation.from_euler("y", np.pi / 4).as_matrix(),
    Rotation.from_euler("z", np.pi / 4).as_matrix(),
)


def rectilinearity(mesh: TriangleMesh) -> float:
    """Surface area over summed XOY/ZOX/YOZ projected areas, best of four poses.

    Lies in [1/sqrt(3), 1]; axis-aligned boxes give exactly 1.
    """
    cross = mesh.face_cross()  # |cross| = 2 * area
    total = np.linalg.norm(cross, axis=1).sum()
    best = 0.0
    for rot in _RECT_CANDIDATES:
        projected = np.abs(cross @ rot.T).sum()
        if projected > 0:
            best = max(best, total / projected)
    return float(best)


def geometric_features(mesh: TriangleMesh, grid: VoxelGrid) -> np.ndarray:
    """AR (3) + xyz-variance (3) + abg-variance (3) + rectilinearity (1)."""
    if grid.count() == 0:
        warnings.warn(f"{mesh.source_id or 'mesh'}: empty voxel grid", EmptyGridWarning, stacklevel=2)
        var = np.zeros(6)
    else:
        var = np.concatenate([xyz_variance(grid), abg_variance(grid)])
    return np.concatenate([aspect_ratio(mesh), var, [rectilinearity(mesh)]])


def global_features(mesh: TriangleMesh, grid: VoxelGrid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(f_s, f_w, f_g) for a normalized mesh and its voxel grid."""
    return (
        surface_fourier(ray_distance_function(mesh)),
        haar_features(grid),
        geometric_features(mesh, grid),
    )


@dataclass
class GalleryStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, vectors: np.ndarray) -> "GalleryStats":
        x = np.asarray(vectors, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != GLOBAL_DIM:
            raise DimensionMismatch(f"gallery matrix shape {x.shape}, expected (n, {GLOBAL_DIM})")
        return cls(x.mean(axis=0), x.std(axis=0))

    def _active(self) -> np.ndarray:
        return self.std > 1e-12 * np.maximum(1.0, np.abs(self.mean))

    def standardize(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != len(self.mean):
            raise DimensionMismatch(f"vector dim {x.shape[-1]} != {len(self.mean)}")
        act = self._active()
        safe = np.where(act, self.std, 1.0)
        return np.where(act, (x - self.mean) / safe, 0.0)

    def unstandardize(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        return np.where(self._active(), z * self.std + self.mean, self.mean)


def assemble_global(f_s, f_w, f_g, gallery_stats: GalleryStats) -> np.ndarray:
    """Concatenate the three families and z-score them with gallery statistics."""
    parts = [np.asarray(f_s, float).ravel(), np.asarray(f_w, float).ravel(), np.asarray(f_g, float).ravel()]
    dims = tuple(len(p) for p in parts)
    if dims != (72, 7, 10):
        raise DimensionMismatch(f"global feature dims {dims} != (72, 7, 10)")
    return gallery_stats.standardize(np.concatenate(parts))
