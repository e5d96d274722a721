"""Spherical quadrature sample sets.

Three strategies:
  equal_area           spherical Fibonacci lattice, uniform weights 4pi/n;
                       a seed applies a random global rotation.
  equirect_sin_weighted texel-grid directions of an equirect layout with
                       weights proportional to sin(theta); a seed applies
                       sub-texel jitter. n is rounded up to a full grid.
  uniform_uv           uniform random (u, v) texel coordinates with naive
                       uniform weights. Deliberately biased toward the
                       poles; kept as the baseline the weighted strategies
                       are measured against.

Passing seed=None yields the canonical deterministic set for each strategy.
"""

import math

import numpy as np

from . import sh


class SampleSet:
    """Directions, quadrature weights, and precomputed SH basis values."""

    __slots__ = ("dirs", "weights", "basis", "l_max")

    def __init__(self, dirs: np.ndarray, weights: np.ndarray, l_max: int = 3):
        dirs = np.asarray(dirs, dtype=np.float64)
        weights = np.asarray(weights, dtype=np.float64)
        if dirs.ndim != 2 or dirs.shape[1] != 3:
            raise ValueError(f"dirs must be (N, 3), got {dirs.shape}")
        if weights.shape != (dirs.shape[0],):
            raise ValueError("weights must match dirs")
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
        # store exactly unit-norm dirs; callers rely on 1e-9 norms
        dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        self.dirs = dirs
        self.weights = weights
        self.l_max = int(l_max)
        self.basis = sh.eval_basis(l_max, dirs, validate=False)

    def __len__(self) -> int:
        return self.dirs.shape[0]

    def with_l_max(self, l_max: int) -> "SampleSet":
        if l_max == self.l_max:
            return self
        return SampleSet(self.dirs, self.weights, l_max)


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    a = rng.normal(size=(3, 3))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def fibonacci_sphere(n: int) -> np.ndarray:
    """n spherical Fibonacci lattice directions (equal-area in z)."""
    k = np.arange(n)
    z = 1.0 - (2.0 * k + 1.0) / n
    phi = k * (math.pi * (3.0 - math.sqrt(5.0)))
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def _grid_angles(n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    h = max(1, int(round(math.sqrt(n / 2.0))))
    w = int(math.ceil(n / h))
    jj, ii = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dv = rng.uniform(size=jj.shape) if rng is not None else 0.5
    du = rng.uniform(size=ii.shape) if rng is not None else 0.5
    theta = math.pi * (jj + dv) / h
    phi = 2.0 * math.pi * (ii + du) / w
    return theta.ravel(), phi.ravel()


def _angles_to_dirs(theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def sample_sphere(n: int, strategy: str = "equal_area", seed=None,
                  l_max: int = 3) -> SampleSet:
    """Build a full-sphere SampleSet; weights always sum to 4pi."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if strategy == "equal_area":
        dirs = fibonacci_sphere(n)
        if seed is not None:
            dirs = dirs @ _random_rotation(np.random.default_rng(seed)).T
        weights = np.full(n, 4.0 * math.pi / n)
    elif strategy == "equirect_sin_weighted":
        rng = np.random.default_rng(seed) if seed is not None else None
        theta, phi = _grid_angles(n, rng)
        dirs = _angles_to_dirs(theta, phi)
        weights = np.sin(theta)
        weights *= 4.0 * math.pi / weights.sum()
    elif strategy == "uniform_uv":
        rng = np.random.default_rng(0 if seed is None else seed)
        theta = math.pi * rng.uniform(size=n)
        phi = 2.0 * math.pi * rng.uniform(size=n)
        dirs = _angles_to_dirs(theta, phi)
        weights = np.full(n, 4.0 * math.pi / n)
    else:
        raise ValueError(f"unknown sampling strategy {strategy!r}")
    return SampleSet(dirs, weights, l_max)
