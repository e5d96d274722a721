"""Real spherical harmonics: basis evaluation, projection, reconstruction.

The basis is the orthonormal real SH family in the graphics convention
(all-positive constants, no Condon-Shortley phase), indexed flat by
l*l + l + m. Under that convention the band-1 basis is proportional to
(y, z, x), so band-1 coefficient vectors rotate exactly like ordinary
vectors; several callers rely on that.
"""

import math

import numpy as np
import scipy.linalg


MAX_DEGREE = 4

# Orthonormal real SH constants, degree 0..4. Polynomial forms assume a
# unit-length direction (x*x + y*y + z*z == 1).
C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (1.0925484305920792, 1.0925484305920792, 0.31539156525252005,
      1.0925484305920792, 0.5462742152960396)
C3 = (0.5900435899266435, 2.890611442640554, 0.4570457994644658,
      0.3731763325901154, 0.4570457994644658, 1.445305721320277,
      0.5900435899266435)
C4 = (2.5033429417967046, 1.7701307697799304, 0.9461746957575601,
      0.6690465435572892, 0.10578554691520431, 0.6690465435572892,
      0.47308734787878004, 1.7701307697799304, 0.6258357354491761)


class ProjectionError(RuntimeError):
    """Raised when a sample set cannot support a least-squares SH fit."""


def num_coeffs(l_max: int) -> int:
    return (l_max + 1) ** 2


def sh_index(l: int, m: int) -> int:
    """Flat index of the (l, m) basis function: l^2 + l + m."""
    if l < 0 or abs(m) > l:
        raise ValueError(f"invalid SH (l, m) = ({l}, {m})")
    return l * l + l + m


def degree_of_index(k: int) -> int:
    return int(math.isqrt(k))


def _check_dirs(dirs: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    dirs = np.asarray(dirs, dtype=np.float64)
    if dirs.shape[-1] != 3:
        raise ValueError(f"directions must have a trailing axis of 3, got {dirs.shape}")
    norms = np.linalg.norm(dirs, axis=-1)
    err = float(np.max(np.abs(norms - 1.0))) if norms.size else 0.0
    if err > tol:
        raise ValueError(f"directions must be unit length (max norm error {err:.3e})")
    return dirs


def eval_basis(l_max: int, dirs: np.ndarray, validate: bool = True) -> np.ndarray:
    """Evaluate Y_lm for all l <= l_max at one or many unit directions.

    Args:
        l_max: maximum degree, 0..4.
        dirs: (..., 3) unit vectors.
        validate: check unit norms (1e-6 tolerance).

    Returns:
        (..., (l_max+1)^2) array in sh_index order.
    """
    if not 0 <= l_max <= MAX_DEGREE:
        raise ValueError(f"l_max must be in [0, {MAX_DEGREE}], got {l_max}")
    dirs = _check_dirs(dirs) if validate else np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    out = np.empty(dirs.shape[:-1] + (num_coeffs(l_max),), dtype=np.float64)
    out[..., 0] = C0
    if l_max >= 1:
        out[..., 1] = C1 * y
        out[..., 2] = C1 * z
        out[..., 3] = C1 * x
    if l_max >= 2:
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        out[..., 4] = C2[0] * xy
        out[..., 5] = C2[1] * yz
        out[..., 6] = C2[2] * (2.0 * zz - xx - yy)
        out[..., 7] = C2[3] * xz
        out[..., 8] = C2[4] * (xx - yy)
    if l_max >= 3:
        out[..., 9] = C3[0] * y * (3.0 * xx - yy)
        out[..., 10] = C3[1] * xy * z
        out[..., 11] = C3[2] * y * (4.0 * zz - xx - yy)
        out[..., 12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        out[..., 13] = C3[4] * x * (4.0 * zz - xx - yy)
        out[..., 14] = C3[5] * z * (xx - yy)
        out[..., 15] = C3[6] * x * (xx - 3.0 * yy)
    if l_max >= 4:
        out[..., 16] = C4[0] * xy * (xx - yy)
        out[..., 17] = C4[1] * yz * (3.0 * xx - yy)
        out[..., 18] = C4[2] * xy * (7.0 * zz - 1.0)
        out[..., 19] = C4[3] * yz * (7.0 * zz - 3.0)
        out[..., 20] = C4[4] * (zz * (35.0 * zz - 30.0) + 3.0)
        out[..., 21] = C4[5] * xz * (7.0 * zz - 3.0)
        out[..., 22] = C4[6] * (xx - yy) * (7.0 * zz - 1.0)
        out[..., 23] = C4[7] * xz * (xx - 3.0 * yy)
        out[..., 24] = C4[8] * (xx * (xx - 3.0 * yy) - yy * (3.0 * xx - yy))
    return out


class ShCoeffs:
    """RGB spherical-harmonic coefficients up to degree l_max.

    data has shape ((l_max+1)^2, 3): one row per (l, m) in sh_index order,
    columns are the R, G, B channels.
    """

    __slots__ = ("l_max", "data")

    def __init__(self, l_max: int, data: np.ndarray):
        data = np.asarray(data, dtype=np.float64)
        if data.shape != (num_coeffs(l_max), 3):
            raise ValueError(
                f"coefficient array must be ({num_coeffs(l_max)}, 3) for l_max={l_max}, "
                f"got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("coefficients must be finite")
        self.l_max = int(l_max)
        self.data = data

    @classmethod
    def zeros(cls, l_max: int) -> "ShCoeffs":
        return cls(l_max, np.zeros((num_coeffs(l_max), 3)))

    def copy(self) -> "ShCoeffs":
        return ShCoeffs(self.l_max, self.data.copy())

    def band(self, l: int) -> np.ndarray:
        """Rows of one degree: shape (2l+1, 3)."""
        return self.data[l * l:(l + 1) * (l + 1)]

    def __repr__(self) -> str:
        return f"ShCoeffs(l_max={self.l_max}, dc={self.data[0]})"


def reconstruct(coeffs: ShCoeffs, dirs: np.ndarray) -> np.ndarray:
    """Evaluate the SH expansion at unit directions: (..., 3) radiance."""
    basis = eval_basis(coeffs.l_max, dirs)
    return basis @ coeffs.data


def project(samples, values: np.ndarray, method: str = "wls") -> ShCoeffs:
    """Fit SH coefficients to radiance values at a SampleSet's directions.

    method "wls" solves the weighted normal equations (exact for
    band-limited input on a well-conditioned set); "quadrature" forms the
    plain weighted dot products sum_i w_i v_i Y_k(dir_i), kept as a
    cross-check path.
    """
    values = np.asarray(values, dtype=np.float64)
    basis = samples.basis
    n, k = basis.shape
    if values.shape != (n, 3):
        raise ValueError(f"values must be ({n}, 3), got {values.shape}")
    if method == "quadrature":
        coeffs = basis.T @ (samples.weights[:, None] * values)
        return ShCoeffs(samples.l_max, coeffs)
    if method != "wls":
        raise ValueError(f"unknown projection method {method!r}")
    if n < k:
        raise ProjectionError(f"{n} samples cannot determine {k} coefficients")
    sw = np.sqrt(samples.weights)
    bw = basis * sw[:, None]
    sv, svals, _ = np.linalg.svd(bw, full_matrices=False)
    cond = svals[0] / svals[-1] if svals[-1] > 0.0 else np.inf
    if not np.isfinite(cond) or cond >= 1e6:
        _, _, vt = np.linalg.svd(bw, full_matrices=True)
        weak = int(np.argmax(np.abs(vt[-1])))
        raise ProjectionError(
            f"sample set is rank-deficient for degree {degree_of_index(weak)} "
            f"(condition number {cond:.3e} >= 1e6)")
    a = bw.T @ bw
    b = bw.T @ (sw[:, None] * values)
    coeffs = scipy.linalg.solve(a, b, assume_a="pos")
    return ShCoeffs(samples.l_max, coeffs)


def clamped_cosine_zonal(l_max: int) -> np.ndarray:
    """Zonal coefficients h_l of max(cos theta, 0).

    h_l = integral of max(cos theta, 0) * Y_l0 over the sphere. Closed form:
    h_0 = sqrt(pi)/2, h_1 = sqrt(pi/3), odd l >= 3 vanish, and even l use
    integral_0^1 t P_l(t) dt = (-1)^(l/2+1) l! / (2^l (l-1)(l+2) ((l/2)!)^2).
    """
    if l_max < 0:
        raise ValueError("l_max must be >= 0")
    h = np.zeros(l_max + 1)
    h[0] = math.sqrt(math.pi) / 2.0
    if l_max >= 1:
        h[1] = math.sqrt(math.pi / 3.0)
    for l in range(2, l_max + 1):
        if l % 2:
            continue
        half = l // 2
        moment = ((-1) ** (half + 1) * math.factorial(l)
                  / (2 ** l * (l - 1) * (l + 2) * math.factorial(half) ** 2))
        h[l] = math.sqrt((2 * l + 1) * math.pi) * moment
    return h


def lambert_band_gains(l_max: int) -> np.ndarray:
    """Per-band convolution gains A_l = sqrt(4pi/(2l+1)) * h_l.

    Multiplying L_lm by A_l gives the irradiance coefficients E_lm; the
    Lambertian radiance product formula is B_lm = (albedo/pi) * A_l * L_lm.
    """
    h = clamped_cosine_zonal(l_max)
    l = np.arange(l_max + 1)
    return np.sqrt(4.0 * math.pi / (2 * l + 1)) * h


def expand_band_gains(gains: np.ndarray) -> np.ndarray:
    """Repeat per-band values across each band's 2l+1 coefficients."""
    return np.repeat(gains, 2 * np.arange(len(gains)) + 1)


_REFIT_DIRS = 32


def _fibonacci_dirs(n: int) -> np.ndarray:
    k = np.arange(n)
    z = 1.0 - (2.0 * k + 1.0) / n
    phi = k * (math.pi * (3.0 - math.sqrt(5.0)))
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def rotation_refit_matrix(r: np.ndarray, l_max: int) -> np.ndarray:
    """K x K matrix taking coefficients of f to coefficients of f(R^T dir).

    Resample-and-refit: evaluate the old expansion on a fixed direction set,
    fit the rotated expansion on the rotated set. Exact for band-limited
    input because the fit interpolates degree <= l_max functions.
    """
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3):
        raise ValueError("rotation must be a 3x3 matrix")
    n = max(_REFIT_DIRS, 2 * num_coeffs(l_max))
    dirs = _fibonacci_dirs(n)
    b_old = eval_basis(l_max, dirs, validate=False)
    b_new = eval_basis(l_max, dirs @ r.T, validate=False)
    m, *_ = np.linalg.lstsq(b_new, b_old, rcond=None)
    return m
