"""Triangle mesh container and small surface utilities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateMesh, IndexOutOfRange


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Indexed triangle soup.

    vertices: (n, 3) float64, faces: (m, 3) int64 with 0-based indices.
    """

    vertices: np.ndarray
    faces: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if f.size:
            if f.min() < 0 or f.max() >= len(v):
                raise IndexOutOfRange(
                    f"{self.source_id or 'mesh'}: face index outside [0, {len(v)})"
                )
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
                raise IndexOutOfRange(f"{self.source_id or 'mesh'}: face repeats a vertex")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def triangles(self) -> np.ndarray:
        """(m, 3, 3) corner coordinates."""
        return self.vertices[self.faces]

    def face_cross(self) -> np.ndarray:
        t = self.triangles()
        return np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_cross(), axis=1)

    def face_normals(self) -> np.ndarray:
        c = self.face_cross()
        n = np.linalg.norm(c, axis=1, keepdims=True)
        return np.divide(c, n, out=np.zeros_like(c), where=n > 0)

    def total_area(self) -> float:
        return float(self.face_areas().sum())

    def surface_centroid(self) -> np.ndarray:
        """Area-weighted centroid of the surface."""
        areas = self.face_areas()
        total = areas.sum()
        if not total > 0:
            raise DegenerateMesh(f"{self.source_id or 'mesh'}: zero surface area")
        centers = self.triangles().mean(axis=1)
        return (areas[:, None] * centers).sum(axis=0) / total

    def transformed(self, rotation=None, translation=None, scale: float = 1.0) -> "TriangleMesh":
        """Return ``scale * (R @ v) + translation`` applied to every vertex."""
        v = self.vertices
        if rotation is not None:
            v = v @ np.asarray(rotation, dtype=np.float64).T
        v = v * scale
        if translation is not None:
            v = v + np.asarray(translation, dtype=np.float64)
        return TriangleMesh(v, self.faces.copy(), self.source_id)

    def edges_closed(self) -> bool:
        """True when every undirected edge is shared by an even number of faces."""
        f = self.faces
        e = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return bool(np.all(counts % 2 == 0))

    def sample_surface(self, n: int, seed: int = 0) -> np.ndarray:
        """Area-weighted random surface points, reproducible for a fixed seed.

        Sampling is done in barycentric coordinates, so rigidly moving the
        mesh moves the sample with it.
        """
        areas = self.face_areas()
        total = areas.sum()
        if not total > 0:
            raise DegenerateMesh(f"{self.source_id or 'mesh'}: zero surface area")
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(areas), size=n, p=areas / total)
        r1 = np.sqrt(rng.random(n))
        r2 = rng.random(n)
        t = self.triangles()[idx]
        return (
            (1 - r1)[:, None] * t[:, 0]
            + (r1 * (1 - r2))[:, None] * t[:, 1]
            + (r1 * r2)[:, None] * t[:, 2]
        )

    def stratified_samples(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """About ``n`` area-weighted quadrature points: sub-triangle centroids.

        Every face is cut into ``k*k`` congruent sub-triangles with ``k``
        set by its longest edge, so the point set depends only on the face
        geometry (it moves rigidly with the mesh). Returns (points, weights)
        with weights summing to the total area.
        """
        t = self.triangles()
        areas = self.face_areas()
        if not areas.sum() > 0:
            raise DegenerateMesh(f"{self.source_id or 'mesh'}: zero surface area")
        longest = np.linalg.norm(t - np.roll(t, 1, axis=1), axis=2).max(axis=1)
        spacing = np.sqrt(2.0 * areas.sum() / n)
        for _ in range(3):
            divs = np.clip(np.ceil(longest / spacing).astype(np.int64), 1, 256)
            spacing *= np.sqrt((divs**2).sum() / n)
        divs = np.clip(np.ceil(longest / spacing).astype(np.int64), 1, 256)
        pts, wts = [], []
        for k in np.unique(divs):
            sel = np.flatnonzero(divs == k)
            bary = []
            for i in range(k):
                for j in range(k - i):
                    bary.append(((i + 1 / 3) / k, (j + 1 / 3) / k))
                    if i + j < k - 1:
                        bary.append(((i + 2 / 3) / k, (j + 2 / 3) / k))
            b = np.array(bary)
            w = np.concatenate([1 - b.sum(axis=1, keepdims=True), b], axis=1)
            pts.append(np.einsum("pc,fcd->fpd", w, t[sel]).reshape(-1, 3))
            wts.append(np.repeat(areas[sel] / k**2, len(b)))
        return np.concatenate(pts), np.concatenate(wts)

    def lattice_points(self, spacing: float, max_div: int = 256) -> np.ndarray:
        """Deterministic barycentric lattice on every face.

        Each face is split into ``k`` steps along its edges with
        ``k = ceil(longest_edge / spacing)``, so every surface point lies
        within ``spacing`` of a returned point.
        """
        t = self.triangles()
        edges = np.stack(
            [
                np.linalg.norm(t[:, 1] - t[:, 0], axis=1),
                np.linalg.norm(t[:, 2] - t[:, 1], axis=1),
                np.linalg.norm(t[:, 0] - t[:, 2], axis=1),
            ],
            axis=1,
        ).max(axis=1)
        divs = np.clip(np.ceil(edges / spacing).astype(np.int64), 1, max_div)
        out = []
        for k in np.unique(divs):
            sel = t[divs == k]
            i, j = np.meshgrid(np.arange(k + 1), np.arange(k + 1), indexing="ij")
            keep = i + j <= k
            a = (i[keep] / k)[:, None]
            b = (j[keep] / k)[:, None]
            w = np.concatenate([1 - a - b, a, b], axis=1)  # (p, 3)
            out.append(np.einsum("pc,fcd->fpd", w, sel).reshape(-1, 3))
        return np.concatenate(out) if out else np.zeros((0, 3))


_ICO_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def icosphere(subdivisions: int = 2) -> TriangleMesh:
    """Unit icosphere; 12, 42, 162, 642 ... vertices for 0, 1, 2, 3 ... levels.

    The base icosahedron uses the (0, ±1, ±phi) orientation, so the vertex
    set is invariant under coordinate sign flips and cyclic axis permutations.
    """
    if subdivisions in _ICO_CACHE:
        v, f = _ICO_CACHE[subdivisions]
        return TriangleMesh(v.copy(), f.copy(), f"icosphere{subdivisions}")
    phi = (1 + 5 ** 0.5) / 2
    verts = [
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    v = [np.array(p, dtype=np.float64) / np.linalg.norm(p) for p in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def mid(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = v[a] + v[b]
                v.append(m / np.linalg.norm(m))
                cache[key] = len(v) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    varr = np.array(v)
    farr = np.array(faces, dtype=np.int64)
    _ICO_CACHE[subdivisions] = (varr, farr)
    return TriangleMesh(varr.copy(), farr.copy(), f"icosphere{subdivisions}")


def box_mesh(extents, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Closed, outward-oriented axis-aligned box with 12 triangles."""
    ex = np.asarray(extents, dtype=np.float64) / 2
    c = np.asarray(center, dtype=np.float64)
    corners = np.array(
        [[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=np.float64
    )
    v = corners * ex + c
    # corner index = 4*(x>0) + 2*(y>0) + (z>0)
    faces = [
        (0, 1, 3), (0, 3, 2),  # -x
        (4, 6, 7), (4, 7, 5),  # +x
        (0, 4, 5), (0, 5, 1),  # -y
        (2, 3, 7), (2, 7, 6),  # +y
        (0, 2, 6), (0, 6, 4),  # -z
        (1, 5, 7), (1, 7, 3),  # +z
    ]
    return TriangleMesh(v, np.array(faces), "box")


def merge_meshes(parts, source_id: str = "") -> TriangleMesh:
    verts, faces, off = [], [], 0
    for p in parts:
        verts.append(p.vertices)
        faces.append(p.faces + off)
        off += p.n_vertices
    return TriangleMesh(np.concatenate(verts), np.concatenate(faces), source_id)
