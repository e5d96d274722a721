"""Shared builders for the test suite.

Everything here is deliberately independent of the package's own writers
where a test needs an oracle: the reference PLY writer below is plain
numpy structured arrays, not splatlight.splats.save_ply.
"""

import math

import numpy as np

from splatlight import sh
from splatlight.envmap import EquirectMap, sh_to_envmap
from splatlight.sampling import sample_sphere
from splatlight.splats import GaussianModel


def band_limited_env(seed: int, dc, l_max: int = 2, height: int = 128,
                     band_scale: float = 0.25) -> EquirectMap:
    """Random positive band-limited environment; shrinks bands until > 0."""
    rng = np.random.default_rng(seed)
    data = rng.normal(size=((l_max + 1) ** 2, 3)) * band_scale
    data[0] = dc
    for _ in range(10):
        m = sh_to_envmap(sh.ShCoeffs(l_max, data), height)
        if m.pixels.min() > 0.05:
            return m
        data[1:] *= 0.6
    raise RuntimeError("could not build a positive environment")


def quats_from_z(normals: np.ndarray) -> np.ndarray:
    """Unit wxyz quaternions taking +z to each normal."""
    z = np.array([0.0, 0.0, 1.0])
    w = 1.0 + normals @ z
    xyz = np.cross(np.broadcast_to(z, normals.shape), normals)
    q = np.concatenate([w[:, None], xyz], axis=1)
    q[w < 1e-8] = [0.0, 1.0, 0.0, 0.0]
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def surfel_sphere(n: int, radius: float, colors: np.ndarray,
                  center=(0.0, 0.0, 0.0), overlap: float = 1.5,
                  opacity: float = 0.99) -> GaussianModel:
    """Outward-facing surfel shell; colors is (n, 3) linear RGB (DC only)."""
    dirs = sample_sphere(n, l_max=0).dirs
    quats = quats_from_z(dirs)
    tangent = overlap * radius / math.sqrt(n)
    scales = np.tile([tangent, tangent, 0.01 * tangent], (n, 1))
    coeffs = np.zeros((n, 1, 3))
    coeffs[:, 0, :] = np.asarray(colors) / sh.C0
    return GaussianModel(np.asarray(center) + radius * dirs, quats, scales,
                         np.full(n, opacity), coeffs, kind="surfel")


def enclosure_scene(n: int = 4000, radius: float = 10.0):
    """Emissive sphere around the origin with a known angular radiance.

    Returns (model, radiance_fn) where radiance_fn maps unit directions to
    the RGB a perfect capture at the center would record.
    """
    def radiance(d):
        d = np.asarray(d, dtype=np.float64)
        base = 0.5 + 0.25 * d[..., 2:3] + 0.15 * d[..., 0:1]
        return base + np.array([0.05, 0.0, -0.05])

    dirs = sample_sphere(n, l_max=0).dirs
    model = surfel_sphere(n, radius, radiance(dirs), overlap=2.5)
    return model, radiance


def random_model(seed: int, n: int, l_max: int = 3, kind: str = "ellipsoid",
                 flat: bool = False) -> GaussianModel:
    """Generic random Gaussian model for codec and transform tests."""
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    scales = np.exp(rng.uniform(-3.0, -1.0, size=(n, 3)))
    if flat:
        scales[:, 2] *= 0.01
    coeffs = rng.normal(size=(n, (l_max + 1) ** 2, 3)) * 0.3
    coeffs[:, 0, :] += 1.0
    return GaussianModel(rng.normal(size=(n, 3)), q, scales,
                         rng.uniform(0.05, 0.99, n), coeffs, kind=kind)


# 3DGS property order the rest of the ecosystem writes; the reference
# writer follows it so byte-identity tests mean interchange, not self-match
def reference_ply_bytes(positions, normals, f_dc, f_rest, opacity_logits,
                        log_scales, quats, extra=()) -> bytes:
    """Build a conforming binary_little_endian 3DGS PLY independently."""
    n = len(positions)
    per_channel = f_rest.shape[1] // 3 if f_rest.size else 0
    names = (["x", "y", "z", "nx", "ny", "nz"]
             + [f"f_dc_{i}" for i in range(3)]
             + [f"f_rest_{i}" for i in range(3 * per_channel)]
             + ["opacity"]
             + [f"scale_{i}" for i in range(3)]
             + [f"rot_{i}" for i in range(4)]
             + [name for name, _ in extra])
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {n}"]
    header += [f"property float {name}" for name in names]
    header.append("end_header")
    table = np.zeros((n, len(names)), dtype="<f4")
    table[:, 0:3] = positions
    table[:, 3:6] = normals
    table[:, 6:9] = f_dc
    col = 9
    if per_channel:
        table[:, col:col + 3 * per_channel] = f_rest
        col += 3 * per_channel
    table[:, col] = opacity_logits
    table[:, col + 1:col + 4] = log_scales
    table[:, col + 4:col + 8] = quats
    col += 8
    for _, values in extra:
        table[:, col] = values
        col += 1
    return ("\n".join(header) + "\n").encode("ascii") + table.tobytes()
