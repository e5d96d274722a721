"""Equirect and cubemap geometry, resampling, and SH fitting tests."""

import math

import numpy as np
import pytest

from splatlight import sh
from splatlight.envmap import (CubeMap, EquirectMap, cubemap_to_equirect,
                               dir_to_uv, envmap_to_sh, face_dirs,
                               fill_missing, ldr_to_hdr, rotate_equirect,
                               sh_to_envmap, texel_dirs, uv_to_dir,
                               FACE_AXES, FACE_RIGHT, FACE_DOWN)
from conftest import band_limited_env


def test_equirect_layout_conventions():
    """theta from +z down rows, phi from +x toward +y across columns."""
    h, w = 8, 16
    dirs = texel_dirs(h, w)
    assert dirs.shape == (h, w, 3)
    # first row looks nearly at +z, last nearly at -z
    assert dirs[0, :, 2].min() > 0.97
    assert dirs[-1, :, 2].max() < -0.97
    # column at u=-0.5 would be phi=0 (+x); texel 0 sits half a texel in
    want_phi = 2.0 * math.pi * 0.5 / w
    mid = dirs[h // 2, 0]
    assert abs(math.atan2(mid[1], mid[0]) - want_phi) < 1e-12


def test_uv_dir_inverse():
    rng = np.random.default_rng(7)
    u = rng.uniform(0.0, 31.0, 200)
    v = rng.uniform(0.0, 15.0, 200)
    d = uv_to_dir(u, v, 16, 32)
    u2, v2 = dir_to_uv(d, 16, 32)
    assert np.abs(u2 - u).max() < 1e-9
    assert np.abs(v2 - v).max() < 1e-9


def test_equirect_validation():
    with pytest.raises(ValueError):
        EquirectMap(np.zeros((8, 8, 3)))  # width must be 2 * height
    with pytest.raises(ValueError):
        EquirectMap(np.full((4, 8, 3), -1.0))
    with pytest.raises(ValueError):
        EquirectMap(np.full((4, 8, 3), np.nan))
    EquirectMap(np.full((4, 8, 3), -1.0), allow_negative=True)


def test_solid_angles_sum():
    """Midpoint rule in theta: total converges to 4pi as O(h^-2)."""
    err_32 = abs(EquirectMap(np.ones((32, 64, 3))).solid_angles().sum()
                 - 4.0 * math.pi)
    err_128 = abs(EquirectMap(np.ones((128, 256, 3))).solid_angles().sum()
                  - 4.0 * math.pi)
    assert err_32 < 0.01
    assert err_128 < err_32 / 10.0


def test_sample_wraps_azimuth():
    """Bilinear lookup crosses the u seam without a discontinuity."""
    h, w = 16, 32
    pixels = np.zeros((h, w, 3))
    pixels[:, 0] = 1.0
    pixels[:, w - 1] = 3.0
    m = EquirectMap(pixels)
    d = uv_to_dir(np.array([w - 0.5]), np.array([h / 2.0]), h, w)
    v = m.sample(d)
    assert np.allclose(v, 2.0, atol=1e-9), f"seam sample {v}"


def test_face_dirs_axes():
    """Center texel of each face looks along the face axis."""
    res = 64
    for f in range(6):
        d = face_dirs(f, res)
        center = d[res // 2 - 1:res // 2 + 1, res // 2 - 1:res // 2 + 1].mean((0, 1))
        center /= np.linalg.norm(center)
        assert center @ FACE_AXES[f] > 0.999, f"face {f}"
    # frame handedness: right x down = axis... up to sign per the layout
    for f in range(6):
        cross = np.cross(FACE_RIGHT[f], FACE_DOWN[f])
        assert abs(abs(cross @ FACE_AXES[f]) - 1.0) < 1e-12


def test_cubemap_sampling_picks_correct_face():
    faces = np.zeros((6, 8, 8, 3))
    for f in range(6):
        faces[f] = f + 1.0
    cube = CubeMap(faces)
    axes = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0],
                     [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=float)
    vals = cube.sample(axes)
    assert np.allclose(vals[:, 0], np.arange(1, 7))


def test_cubemap_to_equirect_round_trip():
    """Band-limited radiance survives equirect -> cube -> equirect."""
    env = band_limited_env(21, [1.5, 1.2, 0.9], l_max=2, height=64)
    faces = np.stack([env.sample(face_dirs(f, 128)) for f in range(6)])
    back = cubemap_to_equirect(CubeMap(faces), 64)
    err = np.abs(back.pixels - env.pixels)
    rel = err.max() / env.pixels.max()
    assert rel < 0.02, f"round-trip relative error {rel:.4f}"


def test_ldr_to_hdr_curve():
    """Pure gamma below the knee, smooth boost to 4x at white."""
    h = 4
    grid = np.linspace(0.0, 1.0, 2 * h * h * 3).reshape(h, 2 * h, 3)
    out = ldr_to_hdr(EquirectMap(grid), gamma=2.2, boost=4.0, knee=0.9).pixels
    below = grid <= 0.9
    assert np.allclose(out[below], grid[below] ** 2.2)
    assert abs(out.max() - 4.0) < 1e-12  # v=1 maps to boost * 1**gamma
    # monotone along the ramp
    flat_in, flat_out = grid.ravel(), out.ravel()
    assert np.all(np.diff(flat_out[np.argsort(flat_in)]) >= 0)


def test_ldr_to_hdr_validation():
    m = EquirectMap(np.full((4, 8, 3), 0.5))
    with pytest.raises(ValueError):
        ldr_to_hdr(m, gamma=0.0)
    with pytest.raises(ValueError):
        ldr_to_hdr(m, boost=0.5)
    with pytest.raises(ValueError):
        ldr_to_hdr(m, knee=1.0)
    with pytest.raises(ValueError):
        ldr_to_hdr(EquirectMap(np.full((4, 8, 3), 1.5)))


def test_rotate_equirect_matches_refit():
    """Map rotation and SH-coefficient rotation commute with projection."""
    env = band_limited_env(33, [1.8, 1.4, 1.0], l_max=2, height=128)
    rot = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    rotated = rotate_equirect(env, rot)
    c_rot = envmap_to_sh(rotated, l_max=2)
    m = sh.rotation_refit_matrix(rot, 2)
    c_ref = m @ envmap_to_sh(env, l_max=2).data
    assert np.abs(c_rot.data - c_ref).max() < 5e-3


def test_rotate_equirect_rejects_non_rotation():
    env = EquirectMap(np.ones((8, 16, 3)))
    with pytest.raises(ValueError):
        rotate_equirect(env, 2.0 * np.eye(3))


def test_fill_missing():
    pixels = np.ones((8, 16, 3))
    pixels[0, 0] = 9.0
    alpha = np.ones((8, 16))
    alpha[0, 0] = 0.1
    filled = fill_missing(EquirectMap(pixels, alpha))
    assert np.allclose(filled.pixels[0, 0], 1.0)  # mean of valid texels
    filled2 = fill_missing(EquirectMap(pixels, alpha), color=(0.0, 0.5, 1.0))
    assert np.allclose(filled2.pixels[0, 0], [0.0, 0.5, 1.0])
    # no alpha: unchanged object passes through
    plain = EquirectMap(pixels)
    assert fill_missing(plain) is plain
    with pytest.raises(ValueError):
        fill_missing(EquirectMap(pixels, np.zeros((8, 16))))


def test_envmap_sh_round_trip():
    """Band-limited map -> SH -> map reproduces the pixels.

    The fit samples the bilinearly interpolated texel grid, so the floor
    is the interpolation error of the grid, not machine epsilon.
    """
    env = band_limited_env(5, [1.0, 1.0, 1.0], l_max=3, height=64)
    coeffs = envmap_to_sh(env, l_max=3)
    back = sh_to_envmap(coeffs, 64)
    assert np.abs(back.pixels - env.pixels).max() < 1e-3
