from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.spatial.transform import Rotation

from ifsr.errors import DimensionMismatch, OddResolution
from ifsr.geometry import VoxelGrid, normalize, voxelize_parity
from ifsr.global_features import (
    EmptyGridWarning,
    GalleryStats,
    aspect_ratio,
    assemble_global,
    geometric_features,
    global_features,
    haar_features,
    ray_directions,
    ray_distance_function,
    rectilinearity,
    surface_fourier,
    xyz_variance,
)
from ifsr.mesh import TriangleMesh, box_mesh, icosphere, merge_meshes
from ifsr.synthetic import CLASSES, base_shape


def _dft_oracle(g):
    """Direct double sum, no FFT."""
    T, P = g.shape
    out = np.empty((T, P))
    t = np.arange(T)[:, None]
    p = np.arange(P)[None, :]
    for u in range(T):
        for v in range(P):
            out[u, v] = abs(np.sum(g * np.exp(-2j * np.pi * (u * t / T + v * p / P))))
    return out.ravel()


# -------------------------------------------------------------- surface Fourier


def test_ray_grid_layout():
    d = ray_directions()
    assert d.shape == (6, 12, 3)
    assert np.allclose(np.linalg.norm(d, axis=-1), 1)
    # theta = pi/6, phi = pi/3
    assert np.allclose(d[1, 2], [np.cos(np.pi / 3) * np.cos(np.pi / 6), np.cos(np.pi / 3) * np.sin(np.pi / 6),
                                 np.sin(np.pi / 3)])


def test_icosphere_distances_are_one():
    field = ray_distance_function(icosphere(3))
    assert field.samples.shape == (6, 12)
    assert np.all(np.abs(field.samples - 1.0) <= 0.02)


def test_rays_missing_the_shape_give_zero():
    box = box_mesh((0.99, 1.0, 1.0), center=(0.505, 0.0, 0.0))  # x in [0.01, 1]
    g = ray_distance_function(box).samples
    x = ray_directions()[..., 0]
    assert np.all(g[x < -1e-9] == 0)
    assert np.all(g[x > 0.2] > 0)


def test_double_sphere_keeps_farthest_hit():
    s = icosphere(3)
    both = merge_meshes([TriangleMesh(s.vertices * 0.5, s.faces), s])
    assert np.all(np.abs(ray_distance_function(both).samples - 1.0) <= 0.02)


def test_constant_field_dc_only():
    out = surface_fourier(np.full((6, 12), 0.7))
    assert out.shape == (72,)
    assert out[0] == pytest.approx(72 * 0.7, abs=1e-12)
    assert np.all(np.abs(out[1:]) < 1e-12)


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (6, 12), elements=st.floats(0, 2)), st.integers(1, 11))
def test_phi_shift_keeps_magnitudes(g, k):
    assert np.allclose(surface_fourier(g), surface_fourier(np.roll(g, k, axis=1)), atol=1e-9)


def test_cos_phi_field_has_two_components():
    phi = np.arange(12) * np.pi / 6
    g = np.tile(np.cos(phi), (6, 1))
    out = surface_fourier(g)
    assert np.allclose(out, _dft_oracle(g), atol=1e-9)
    nonzero = np.flatnonzero(out > 1e-9)
    assert list(nonzero) == [1, 11]
    assert out[1] == pytest.approx(36.0)


def test_half_turn_about_z_keeps_surface_feature():
    mesh, _ = normalize(base_shape("lamp").transformed(rotation=Rotation.random(random_state=4).as_matrix()))
    turned = mesh.transformed(rotation=Rotation.from_euler("z", np.pi).as_matrix())
    a = surface_fourier(ray_distance_function(mesh))
    b = surface_fourier(ray_distance_function(turned))
    assert np.allclose(a, b, atol=1e-6)


def test_surface_fourier_rejects_wrong_shape():
    with pytest.raises(DimensionMismatch):
        surface_fourier(np.zeros((6, 11)))


# ------------------------------------------------------------------------ Haar


def test_haar_empty_grid():
    assert np.all(haar_features(VoxelGrid(8, np.zeros((8, 8, 8), bool))) == 0)


def test_haar_low_x_half():
    occ = np.zeros((8, 8, 8), bool)
    occ[:4] = True
    h = haar_features(VoxelGrid(8, occ))
    assert h[0] == pytest.approx(-0.5)
    assert h[1] == 0 and h[2] == 0


def test_haar_centered_cube_first_three_vanish():
    grid = voxelize_parity(box_mesh((1, 1, 1)), 32)
    assert np.allclose(haar_features(grid)[:3], 0, atol=1e-12)


def test_haar_odd_resolution():
    with pytest.raises(OddResolution):
        haar_features(VoxelGrid(9, np.zeros((9, 9, 9), bool)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0, 1, 2]))
def test_haar_bounds_and_mirror_symmetry(seed, axis):
    occ = np.random.default_rng(seed).random((8, 8, 8)) < 0.4
    h = haar_features(VoxelGrid(8, occ))
    assert np.all(np.abs(h) <= 1)
    sym = occ | np.flip(occ, axis=axis)
    assert haar_features(VoxelGrid(8, sym))[axis] == 0


# ------------------------------------------------------------------- geometric


def test_cube_aspect_ratio():
    assert np.allclose(aspect_ratio(box_mesh((2, 2, 2))), [1 / 3, 1 / 3, 1 / 3], atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, 3, elements=st.floats(0.05, 5)), st.permutations([0, 1, 2]))
def test_aspect_ratio_sums_to_one_and_permutes(ext, perm):
    ar = aspect_ratio(box_mesh(ext))
    assert ar.sum() == pytest.approx(1.0, abs=1e-9) and np.all(ar >= 0)
    perm = list(perm)
    assert np.allclose(aspect_ratio(box_mesh(ext[perm])), ar[perm], atol=1e-12)


def test_full_grid_has_zero_slice_variance():
    assert np.all(xyz_variance(VoxelGrid(16, np.ones((16, 16, 16), bool))) == 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0, 1, 2]))
def test_xyz_variance_reversal_invariant(seed, axis):
    occ = np.random.default_rng(seed).random((10, 10, 10)) < 0.3
    a = xyz_variance(VoxelGrid(10, occ))
    b = xyz_variance(VoxelGrid(10, np.flip(occ, axis=axis)))
    assert np.allclose(a, b, atol=1e-12)


def test_box_rectilinearity_is_one():
    box = box_mesh((1.3, 0.7, 0.4))
    # direct summation oracle: each face projects onto exactly one axis plane
    cross = box.face_cross()
    assert np.abs(cross).sum() == pytest.approx(np.linalg.norm(cross, axis=1).sum())
    assert rectilinearity(box) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("name", CLASSES)
def test_rectilinearity_range(name):
    m = base_shape(name).transformed(rotation=Rotation.random(random_state=1).as_matrix())
    assert 0 < rectilinearity(m) <= 1 + 1e-12


def test_empty_grid_warns_and_zeros_variances():
    with pytest.warns(EmptyGridWarning):
        f_g = geometric_features(box_mesh((1, 1, 1)), VoxelGrid(8, np.zeros((8, 8, 8), bool)))
    assert np.all(f_g[3:9] == 0)


def test_global_feature_dimensions():
    mesh, _ = normalize(base_shape("table"))
    f_s, f_w, f_g = global_features(mesh, voxelize_parity(mesh, 32))
    assert (len(f_s), len(f_w), len(f_g)) == (72, 7, 10)
    assert np.all(f_s >= 0)
    assert f_g[:3].sum() == pytest.approx(1.0, abs=1e-9)


# -------------------------------------------------------------------- assembly


def test_identical_gallery_standardizes_to_zero():
    v = np.arange(89.0)
    stats = GalleryStats.fit(np.tile(v, (5, 1)))
    assert np.all(assemble_global(v[:72], v[72:79], v[79:], stats) == 0)


def test_zscore_arithmetic():
    mean, std = np.zeros(89), np.ones(89)
    mean[3], std[3] = 5.0, 2.0
    stats = GalleryStats(mean, std)
    x = np.zeros(89)
    x[3] = 9.0
    assert stats.standardize(x)[3] == 2.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_standardize_round_trip(seed):
    x = np.random.default_rng(seed).normal(3, 4, (12, 89))
    stats = GalleryStats.fit(x)
    assert np.allclose(stats.unstandardize(stats.standardize(x)), x, atol=1e-9)


def test_assemble_dimension_mismatch():
    stats = GalleryStats(np.zeros(89), np.ones(89))
    with pytest.raises(DimensionMismatch):
        assemble_global(np.zeros(71), np.zeros(7), np.zeros(10), stats)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert assemble_global(np.zeros(72), np.zeros(7), np.zeros(10), stats).shape == (89,)
