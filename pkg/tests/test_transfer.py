"""Radiance-transfer ratio and relighting tests.

The per-Gaussian fused path is checked against a direct per-Gaussian
projection oracle that uses sh.project one normal at a time.
"""

import numpy as np
import pytest

from splatlight import sh
from splatlight.sampling import sample_sphere
from splatlight.transfer import (TransferParams, modulated_env_sh, relight,
                                 shading_weights, transfer_ratio)
from conftest import band_limited_env, quats_from_z, surfel_sphere
from splatlight.splats import GaussianModel


def test_params_validation():
    with pytest.raises(ValueError):
        TransferParams(epsilon=0.0)
    with pytest.raises(ValueError):
        TransferParams(tau_min=2.0, tau_max=1.0)
    with pytest.raises(ValueError):
        TransferParams(l_max=3, n_samples=10)
    p = TransferParams()
    assert p.epsilon == 1e-4 and p.tau_max == 10.0 and p.l_max == 3


def test_shading_weights_clamp():
    samples = sample_sphere(1000, "equal_area", l_max=1)
    w = shading_weights(np.array([0.0, 0.0, 1.0]), samples)
    assert np.all(w >= 0.0)
    assert np.allclose(w, np.maximum(samples.dirs[:, 2], 0.0))
    with pytest.raises(ValueError):
        shading_weights(np.array([0.0, 0.0, 2.0]), samples)


def test_modulated_env_matches_clamped_cosine():
    """Uniform env times shading projects to the clamped-cosine zonals."""
    samples = sample_sphere(8000, "equal_area", l_max=3)
    env = np.ones((len(samples), 3))
    shading = shading_weights(np.array([0.0, 0.0, 1.0]), samples)
    coeffs = modulated_env_sh(env, shading, samples, l_max=3)
    h = sh.clamped_cosine_zonal(3)
    want = np.zeros((16, 3))
    for l in range(4):
        want[sh.sh_index(l, 0)] = h[l]
    assert np.abs(coeffs.data - want).max() < 5e-3


def test_transfer_ratio_clamps_and_signs():
    params = TransferParams(epsilon=1e-4, tau_min=0.0, tau_max=10.0, l_max=1)
    l_s = sh.ShCoeffs(1, np.tile([1.0, -0.1, 1e-6], (4, 1)))
    l_t = sh.ShCoeffs(1, np.full((4, 3), 0.5))
    tau = transfer_ratio(l_t, l_s, params)
    assert tau.shape == (4, 3)
    # positive denominator gains epsilon away from zero
    assert abs(tau[0, 0] - 0.5 / 1.0001) < 1e-12
    # negative source coefficient keeps its sign; the ratio clamps to 0
    assert tau[0, 1] == 0.0
    # near-zero source saturates at tau_max
    assert tau[0, 2] == 10.0
    with pytest.raises(ValueError):
        transfer_ratio(sh.ShCoeffs.zeros(2), l_s, params)


def test_identity_relight_is_neutral():
    """Same environment twice: tau = x/(x+eps), so appearance is preserved."""
    env = band_limited_env(41, [1.5, 1.2, 1.0], l_max=2)
    obj = surfel_sphere(400, 1.0, np.full((400, 3), 0.6))
    relit, stats = relight(obj, env, env, TransferParams(l_max=2, n_samples=3000))
    rel = np.abs(relit.sh[:, 0, :] - obj.sh[:, 0, :]) / np.abs(obj.sh[:, 0, :])
    assert rel.max() < 1e-3, f"identity drift {rel.max():.2e}"
    assert stats["gaussians"] == 400
    assert stats["low_confidence_normals"] == 0
    assert 0.0 <= stats["tau_min_observed"] <= stats["tau_max_observed"] <= 10.0


def test_relight_scales_with_brightness():
    """Doubling the environment doubles the DC appearance."""
    env = band_limited_env(42, [1.0, 1.0, 1.0], l_max=2)
    bright = type(env)(2.0 * env.pixels)
    obj = surfel_sphere(300, 1.0, np.full((300, 3), 0.5))
    relit, _ = relight(obj, env, bright, TransferParams(l_max=2, n_samples=3000))
    ratio = relit.sh[:, 0, :] / obj.sh[:, 0, :]
    assert np.abs(ratio - 2.0).max() < 1e-2


def test_per_gaussian_path_matches_direct_projection():
    """Fused float32 reduction agrees with per-normal sh.project calls."""
    l_s = band_limited_env(43, [1.4, 1.1, 0.9], l_max=2)
    l_t = band_limited_env(44, [0.8, 1.3, 1.6], l_max=2)
    params = TransferParams(l_max=2, n_samples=4000)
    obj = surfel_sphere(32, 1.0, np.full((32, 3), 0.7))
    relit, _ = relight(obj, l_s, l_t, params, seed=5)

    samples = sample_sphere(params.n_samples, "equal_area", 5, params.l_max)
    es, et = l_s.sample(samples.dirs), l_t.sample(samples.dirs)
    normals = obj.positions / np.linalg.norm(obj.positions, axis=1,
                                             keepdims=True)
    for j in (0, 7, 19, 31):
        shading = np.maximum(samples.dirs @ normals[j], 0.0)
        cs = sh.project(samples, es * shading[:, None])
        ct = sh.project(samples, et * shading[:, None])
        tau = transfer_ratio(ct, cs, params)
        want = obj.sh[j] * tau[: obj.sh.shape[1]]
        err = np.abs(relit.sh[j] - want).max()
        assert err < 1e-4, f"gaussian {j}: fused path off by {err:.2e}"


def test_low_confidence_normals_fall_back():
    """Isotropic Gaussians take the global ratio and trigger a warning."""
    rng = np.random.default_rng(3)
    n = 16
    pos = rng.normal(size=(n, 3))
    quats = quats_from_z(pos / np.linalg.norm(pos, axis=1, keepdims=True))
    iso = GaussianModel(pos, quats, np.full((n, 3), 0.1), np.full(n, 0.9),
                        np.ones((n, 4, 3)))
    l_s = band_limited_env(45, [1.0, 1.0, 1.0], l_max=1)
    l_t = band_limited_env(46, [2.0, 2.0, 2.0], l_max=1)
    with pytest.warns(UserWarning, match="confident normal"):
        relit, stats = relight(iso, l_s, l_t,
                               TransferParams(l_max=1, n_samples=2000))
    assert stats["low_confidence_normals"] == n
    # identical fallback ratio row for every Gaussian
    ratio = relit.sh / iso.sh
    assert np.abs(ratio - ratio[0]).max() < 1e-12


def test_shading_free_mode_is_global():
    env_s = band_limited_env(47, [1.0, 1.0, 1.0], l_max=1)
    env_t = band_limited_env(48, [1.5, 0.7, 1.1], l_max=1)
    obj = surfel_sphere(64, 1.0, np.full((64, 3), 0.4))
    relit, stats = relight(obj, env_s, env_t,
                           TransferParams(l_max=1, n_samples=2000,
                                          per_gaussian_shading=False))
    assert stats["per_gaussian_shading"] is False
    ratio = relit.sh[:, 0, :] / obj.sh[:, 0, :]
    assert np.abs(ratio - ratio[0]).max() < 1e-12


def test_higher_degree_passthrough():
    """Object SH bands above params.l_max are left untouched."""
    obj = surfel_sphere(50, 1.0, np.full((50, 3), 0.5))
    padded = np.zeros((50, 16, 3))
    padded[:, :1] = obj.sh
    padded[:, 9:] = 0.123
    obj3 = GaussianModel(obj.positions, obj.rotations, obj.scales,
                         obj.opacities, padded, kind="surfel")
    env = band_limited_env(49, [1.0, 1.0, 1.0], l_max=1)
    relit, _ = relight(obj3, env, env, TransferParams(l_max=1, n_samples=1500))
    assert np.array_equal(relit.sh[:, 9:], obj3.sh[:, 9:])


def test_relight_deterministic_for_seed():
    env_s = band_limited_env(50, [1.0, 1.0, 1.0], l_max=1)
    env_t = band_limited_env(51, [1.3, 1.0, 0.8], l_max=1)
    obj = surfel_sphere(40, 1.0, np.full((40, 3), 0.5))
    a, _ = relight(obj, env_s, env_t, TransferParams(l_max=1, n_samples=1500),
                   seed=9)
    b, _ = relight(obj, env_s, env_t, TransferParams(l_max=1, n_samples=1500),
                   seed=9)
    assert np.array_equal(a.sh, b.sh)


def test_zero_channel_environment_stays_finite():
    """A channel that is identically zero must produce bounded, finite tau."""
    env_s = band_limited_env(52, [1.0, 1.0, 1.0], l_max=1)
    dark = env_s.pixels.copy()
    dark[:, :, 1] = 0.0
    env_t = type(env_s)(dark)
    obj = surfel_sphere(60, 1.0, np.full((60, 3), 0.5))
    relit, stats = relight(obj, type(env_s)(dark), env_s,
                           TransferParams(l_max=1, n_samples=2000))
    assert np.all(np.isfinite(relit.sh))
    assert 0.0 <= stats["tau_min_observed"]
    assert stats["tau_max_observed"] <= 10.0
