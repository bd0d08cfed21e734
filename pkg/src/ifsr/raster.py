"""Vectorized orthographic triangle rasterization on a square pixel grid.

The grid covers [-1, 1]^2 with pixel centers at ``-1 + (i + 0.5) * 2 / res``.
Row index follows the second image coordinate, column the first.
"""

from __future__ import annotations

import numpy as np

_CHUNK = 4_000_000


def view_basis(view_dir, up=(1.0, 1.0, 1.0)):
    """Right-handed image basis (u, v) for a camera looking along ``-view_dir``."""
    d = np.asarray(view_dir, dtype=np.float64)
    d = d / np.linalg.norm(d)
    up = np.asarray(up, dtype=np.float64)
    up = up / np.linalg.norm(up)
    u = np.cross(up, d)
    nu = np.linalg.norm(u)
    if nu < 1e-9:
        u = np.cross((1.0, 0.0, 0.0) if abs(d[0]) < 0.9 else (0.0, 1.0, 0.0), d)
        nu = np.linalg.norm(u)
    u = u / nu
    v = np.cross(d, u)
    return u, v


def rasterize(uv: np.ndarray, depth: np.ndarray, res: int) -> np.ndarray:
    """Max-depth buffer of projected triangles.

    uv: (m, 3, 2) corner image coordinates; depth: (m, 3) per-corner depth.
    Returns (res, res) float array, ``-inf`` where nothing projects.
    """
    zbuf = np.full(res * res, -np.inf)
    if len(uv) == 0:
        return zbuf.reshape(res, res)
    p = (uv + 1.0) * (res / 2.0) - 0.5  # continuous pixel-center coordinates
    a, b, c = p[:, 0], p[:, 1], p[:, 2]
    area = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    ok = np.abs(area) > 1e-14
    lo = np.clip(np.ceil(p.min(axis=1) - 1e-9), 0, res - 1).astype(np.int64)
    hi = np.clip(np.floor(p.max(axis=1) + 1e-9), 0, res - 1).astype(np.int64)
    inside_grid = (p.max(axis=1) >= -1e-9).all(axis=1) & (p.min(axis=1) <= res - 1 + 1e-9).all(axis=1)
    w = np.where(ok & inside_grid, hi[:, 0] - lo[:, 0] + 1, 0).clip(min=0)
    h = np.where(ok & inside_grid, hi[:, 1] - lo[:, 1] + 1, 0).clip(min=0)
    counts = w * h
    tri_ids = np.nonzero(counts)[0]
    if len(tri_ids) == 0:
        return zbuf.reshape(res, res)
    csum = np.cumsum(counts[tri_ids])
    start = 0
    while start < len(tri_ids):
        base = csum[start - 1] if start else 0
        stop = int(np.searchsorted(csum, base + _CHUNK, side="right"))
        stop = max(stop, start + 1)
        sel = tri_ids[start:stop]
        cnt = counts[sel]
        t = np.repeat(sel, cnt)
        offs = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        px = lo[t, 0] + offs % w[t]
        py = lo[t, 1] + offs // w[t]
        ax, ay = a[t, 0], a[t, 1]
        bx, by = b[t, 0], b[t, 1]
        cx, cy = c[t, 0], c[t, 1]
        ar = area[t]
        l1 = ((px - ax) * (cy - ay) - (py - ay) * (cx - ax)) / ar
        l2 = ((bx - ax) * (py - ay) - (by - ay) * (px - ax)) / ar
        l0 = 1.0 - l1 - l2
        eps = -1e-12
        hit = (l0 >= eps) & (l1 >= eps) & (l2 >= eps)
        z = l0 * depth[t, 0] + l1 * depth[t, 1] + l2 * depth[t, 2]
        pix = py[hit] * res + px[hit]
        np.maximum.at(zbuf, pix, z[hit])
        start = stop
    return zbuf.reshape(res, res)


def project_mesh(triangles: np.ndarray, view_dir, res: int, up=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Depth buffer of ``triangles`` seen along ``-view_dir``; depth = position along view_dir."""
    d = np.asarray(view_dir, dtype=np.float64)
    d = d / np.linalg.norm(d)
    u, v = view_basis(d, up)
    uv = np.stack([triangles @ u, triangles @ v], axis=-1)
    return rasterize(uv, triangles @ d, res)


def silhouette_area(triangles: np.ndarray, normal, res: int = 256) -> float:
    """Area of the orthographic silhouette on the plane with the given normal."""
    zbuf = project_mesh(triangles, normal, res)
    pixel = (2.0 / res) ** 2
    return float(np.isfinite(zbuf).sum() * pixel)
