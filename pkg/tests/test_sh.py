"""Spherical harmonic basis, projection, and clamped-cosine tests.

The zonal and orthonormality checks use Gauss-Legendre quadrature built
from numpy.polynomial directly, so they do not share any code with the
closed forms under test.
"""

import math

import numpy as np
import pytest

from splatlight import sh
from splatlight.sampling import SampleSet, sample_sphere


def zonal_oracle(l_max: int) -> np.ndarray:
    """h_l = 2 pi * integral_0^1 t sqrt((2l+1)/4pi) P_l(t) dt by quadrature."""
    nodes, weights = np.polynomial.legendre.leggauss(64)
    t = 0.5 * (nodes + 1.0)
    w = 0.5 * weights
    out = np.zeros(l_max + 1)
    for l in range(l_max + 1):
        p_l = np.polynomial.legendre.Legendre.basis(l)(t)
        y_l0 = math.sqrt((2 * l + 1) / (4.0 * math.pi)) * p_l
        out[l] = 2.0 * math.pi * np.sum(w * t * y_l0)
    return out


def sphere_quadrature_grid(n_theta: int = 16, n_phi: int = 33):
    """Product rule exact for all degree <= 4 basis products."""
    nodes, gl_w = np.polynomial.legendre.leggauss(n_theta)
    phi = 2.0 * math.pi * np.arange(n_phi) / n_phi
    ct, ph = np.meshgrid(nodes, phi, indexing="ij")
    st = np.sqrt(1.0 - ct ** 2)
    dirs = np.stack([st * np.cos(ph), st * np.sin(ph), ct], axis=-1)
    w = np.broadcast_to(gl_w[:, None] * (2.0 * math.pi / n_phi), ct.shape)
    return dirs.reshape(-1, 3), w.ravel()


def test_frozen_constants():
    """Pin the normalization constants so silent edits cannot drift them."""
    assert sh.C0 == 0.28209479177387814
    assert sh.MAX_DEGREE == 4
    basis = sh.eval_basis(1, np.array([[0.0, 0.0, 1.0]]))
    assert abs(basis[0, 0] - 0.28209479177387814) < 1e-15
    # band 1 at +z: only the m=0 slot fires, value sqrt(3/4pi)
    assert abs(basis[0, 2] - 0.4886025119029199) < 1e-15
    assert abs(basis[0, 1]) < 1e-15 and abs(basis[0, 3]) < 1e-15


def test_index_helpers():
    """sh_index is l^2 + l + m and degree_of_index inverts it."""
    assert sh.num_coeffs(3) == 16
    assert sh.sh_index(0, 0) == 0
    assert sh.sh_index(1, -1) == 1
    assert sh.sh_index(2, 2) == 8
    for k in range(25):
        l = sh.degree_of_index(k)
        assert l * l <= k < (l + 1) * (l + 1)


def test_basis_orthonormality():
    """int Y_i Y_j dOmega = delta_ij, by exact product quadrature."""
    dirs, w = sphere_quadrature_grid()
    basis = sh.eval_basis(4, dirs)
    gram = basis.T @ (w[:, None] * basis)
    err = np.abs(gram - np.eye(25)).max()
    assert err < 1e-12, f"Gram matrix deviates from identity by {err:.2e}"


def test_band1_transforms_as_vector():
    """Band-1 basis values permute as (y, z, x) under any rotation."""
    rng = np.random.default_rng(3)
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    rot = q * np.sign(np.diag(r))
    if np.linalg.det(rot) < 0:
        rot[:, 0] = -rot[:, 0]
    dirs = rng.normal(size=(50, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    band = sh.eval_basis(1, dirs)[:, 1:4]
    band_rot = sh.eval_basis(1, dirs @ rot.T)[:, 1:4]
    perm = band[:, [2, 0, 1]] @ rot.T  # (x,y,z) order, rotate, back to (y,z,x)
    assert np.allclose(band_rot, perm[:, [1, 2, 0]], atol=1e-12)


def test_eval_basis_rejects_bad_dirs():
    with pytest.raises(ValueError):
        sh.eval_basis(2, np.array([[1.0, 1.0, 0.0]]))
    with pytest.raises(ValueError):
        sh.eval_basis(5, np.array([[0.0, 0.0, 1.0]]))


def test_shcoeffs_shape_and_band():
    with pytest.raises(ValueError):
        sh.ShCoeffs(2, np.zeros((4, 3)))
    c = sh.ShCoeffs(2, np.arange(27).reshape(9, 3).astype(float))
    assert np.array_equal(c.band(1), c.data[1:4])
    assert np.array_equal(c.band(2), c.data[4:9])


def test_projection_round_trip():
    """Band-limited input survives project(reconstruct(.)) exactly."""
    rng = np.random.default_rng(11)
    data = rng.normal(size=(16, 3))
    coeffs = sh.ShCoeffs(3, data)
    samples = sample_sphere(600, "equal_area", l_max=3)
    values = sh.reconstruct(coeffs, samples.dirs)
    back = sh.project(samples, values)
    err = np.abs(back.data - data).max()
    assert err < 1e-9, f"round-trip error {err:.2e}"


def test_projection_methods_agree():
    """Quadrature path approximates the WLS fit on a smooth function."""
    samples = sample_sphere(20000, "equal_area", l_max=2)
    values = 1.0 + 0.3 * samples.dirs[:, 2:3] + 0.1 * samples.dirs[:, 0:1]
    values = np.repeat(values, 3, axis=1)
    wls = sh.project(samples, values, method="wls")
    quad = sh.project(samples, values, method="quadrature")
    assert np.abs(wls.data - quad.data).max() < 0.01


def test_projection_rank_deficiency():
    """An equatorial ring cannot resolve z-dependent coefficients."""
    phi = np.linspace(0.0, 2.0 * math.pi, 64, endpoint=False)
    dirs = np.stack([np.cos(phi), np.sin(phi), np.zeros_like(phi)], axis=-1)
    ring = SampleSet(dirs, np.full(64, 4.0 * math.pi / 64), l_max=2)
    with pytest.raises(sh.ProjectionError):
        sh.project(ring, np.ones((64, 3)))
    few = sample_sphere(8, "equal_area", l_max=3)
    with pytest.raises(sh.ProjectionError):
        sh.project(few, np.ones((8, 3)))


def test_clamped_cosine_zonal_against_quadrature():
    """Closed-form h_l match 64-point Gauss-Legendre to 1e-12."""
    got = sh.clamped_cosine_zonal(6)
    want = zonal_oracle(6)
    assert np.abs(got - want).max() < 1e-12, f"{got} vs {want}"
    # frozen values: sqrt(pi)/2, sqrt(pi/3), sqrt(5pi)/8, 0
    assert abs(got[0] - 0.8862269254527579) < 1e-15
    assert abs(got[1] - 1.0233267079464885) < 1e-15
    assert abs(got[2] - 0.4954159122007514) < 1e-15
    assert got[3] == 0.0 and got[5] == 0.0


def test_lambert_band_gains_frozen():
    """A_l = sqrt(4pi/(2l+1)) h_l gives pi, 2pi/3, pi/4, 0."""
    gains = sh.lambert_band_gains(3)
    want = [math.pi, 2.0 * math.pi / 3.0, math.pi / 4.0, 0.0]
    assert np.allclose(gains, want, atol=1e-12)
    expanded = sh.expand_band_gains(gains)
    assert expanded.shape == (16,)
    assert np.allclose(expanded[4:9], math.pi / 4.0)


def test_rotation_refit_matrix():
    """Refit matrix reproduces f(R^T dir) for band-limited f."""
    rng = np.random.default_rng(5)
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    rot = q * np.sign(np.diag(r))
    if np.linalg.det(rot) < 0:
        rot[:, 0] = -rot[:, 0]
    data = rng.normal(size=(16, 3))
    m = sh.rotation_refit_matrix(rot, 3)
    dirs = rng.normal(size=(40, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    rotated = sh.reconstruct(sh.ShCoeffs(3, m @ data), dirs)
    direct = sh.reconstruct(sh.ShCoeffs(3, data), dirs @ rot)
    assert np.abs(rotated - direct).max() < 1e-9
    # orthogonality within each band: the refit is a pure rotation of SH space
    block = m[1:4, 1:4]
    assert np.allclose(block @ block.T, np.eye(3), atol=1e-9)
