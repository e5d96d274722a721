"""Slow, independent ground-truth paths for validating the fast pipeline.

Everything here goes through brute-force quadrature against the raw
environment texels, not through the fitted coefficients, so agreement with
the SH pipeline is evidence rather than tautology. Default sample counts
are roughly 10x the production defaults and the default seed is distinct.
"""

import math

import numpy as np

from . import sh
from .envmap import EquirectMap, envmap_to_sh
from .sampling import sample_sphere
from .splats import GaussianModel

# keep the oracle's quadrature decorrelated from production seeds
_ORACLE_SEED = 7919


class DiffuseSurfacePoint:
    __slots__ = ("normal", "albedo")

    def __init__(self, normal, albedo):
        normal = np.asarray(normal, dtype=np.float64)
        if abs(np.linalg.norm(normal) - 1.0) > 1e-6:
            raise ValueError("normal must be unit length")
        self.normal = normal
        albedo = np.broadcast_to(np.asarray(albedo, dtype=np.float64), (3,)).copy()
        if albedo.min() < 0 or albedo.max() > 1:
            raise ValueError("albedo must lie in [0, 1]")
        self.albedo = albedo


def integrate_radiance(point: DiffuseSurfacePoint, env: EquirectMap,
                       n_quad: int = 20000, seed: int = None) -> np.ndarray:
    """Outgoing Lambertian radiance by direct quadrature of the texels."""
    out = integrate_radiance_many(point.normal[None, :], point.albedo, env,
                                  n_quad=n_quad, seed=seed)
    return out[0]

def integrate_radiance_many(normals: np.ndarray, albedo, env: EquirectMap,
                            n_quad: int = 20000, seed: int = None) -> np.ndarray:
    """(albedo/pi) * sum_i w_i L(d_i) max(n.d_i, 0) for a batch of normals.

    Equal-area quadrature over the full sphere; deterministic for a given
    seed (default: the oracle's own fixed seed, independent of production).
    """
    if n_quad < 1000:
        raise ValueError("n_quad must be at least 1000")
    normals = np.asarray(normals, dtype=np.float64)
    albedo = np.broadcast_to(np.asarray(albedo, dtype=np.float64), (3,))
    samples = sample_sphere(n_quad, strategy="equal_area",
                            seed=_ORACLE_SEED if seed is None else seed,
                            l_max=0)
    radiance = env.sample(samples.dirs) * samples.weights[:, None]
    out = np.empty((len(normals), 3))
    for lo in range(0, len(normals), 4096):
        hi = min(lo + 4096, len(normals))
        shading = normals[lo:hi] @ samples.dirs.T
        np.maximum(shading, 0.0, out=shading)
        out[lo:hi] = shading @ radiance
    return out * (albedo / math.pi)


def _quat_from_z_to(normals: np.ndarray) -> np.ndarray:
    """Unit wxyz quaternions rotating +z onto each normal (shortest arc)."""
    z = np.array([0.0, 0.0, 1.0])
    w = 1.0 + normals @ z
    xyz = np.cross(np.broadcast_to(z, normals.shape), normals)
    quats = np.concatenate([w[:, None], xyz], axis=1)
    flipped = w < 1e-8  # antiparallel: rotate pi about x
    quats[flipped] = [0.0, 1.0, 0.0, 0.0]
    return quats / np.linalg.norm(quats, axis=1, keepdims=True)


def make_lambertian_sphere(center, radius: float, albedo, env: EquirectMap,
                           n_gaussians: int = 2000, n_quad: int = 20000,
                           seed: int = None) -> GaussianModel:
    """Surfel sphere whose DC-only appearance equals the quadrature answer.

    Surfels sit on a Fibonacci lattice with outward normals; each one's SH
    holds only a DC term chosen so reconstruct() returns exactly the
    integrate_radiance value at its normal.
    """
    if n_gaussians < 100:
        raise ValueError("n_gaussians must be at least 100")
    if radius <= 0:
        raise ValueError("radius must be positive")
    center = np.asarray(center, dtype=np.float64)
    normals = sample_sphere(n_gaussians, strategy="equal_area",
                            l_max=0).dirs
    positions = center + radius * normals
    rotations = _quat_from_z_to(normals)
    tangent = 1.5 * radius / math.sqrt(n_gaussians)
    scales = np.tile([tangent, tangent, 0.01 * tangent], (n_gaussians, 1))
    opacities = np.full(n_gaussians, 0.99)
    colors = integrate_radiance_many(normals, albedo, env,
                                     n_quad=n_quad, seed=seed)
    coeffs = np.zeros((n_gaussians, 1, 3))
    coeffs[:, 0, :] = colors / sh.C0
    return GaussianModel(positions, rotations, scales, opacities, coeffs,
                         kind="surfel")


def verify_product_formula(env: EquirectMap, l_max: int = 3,
                           n_dirs: int = 64, n_quad: int = 20000,
                           seed: int = 1234) -> float:
    """Worst-case relative error of the band-gain shortcut vs quadrature.

    The shortcut predicts Lambertian radiance as (1/pi) * A_l * L_lm
    reconstructed at the normal; the reference integrates the raw texels.
    Returns max over n_dirs random normals and channels.
    """
    coeffs = envmap_to_sh(env, l_max)
    gains = sh.expand_band_gains(sh.lambert_band_gains(l_max))
    radiance_coeffs = sh.ShCoeffs(l_max, coeffs.data * gains[:, None] / math.pi)

    rng = np.random.default_rng(seed)
    normals = rng.normal(size=(n_dirs, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)

    predicted = sh.reconstruct(radiance_coeffs, normals)
    reference = integrate_radiance_many(normals, 1.0, env, n_quad=n_quad)
    denom = np.maximum(np.abs(reference), 1e-9)
    return float(np.max(np.abs(predicted - reference) / denom))
