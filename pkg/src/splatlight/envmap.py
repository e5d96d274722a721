"""Environment maps: equirectangular and cubemap containers plus conversions.

Equirect convention (fixed for all file I/O): width = 2 * height; row v maps
to polar angle theta = pi*(v+0.5)/H measured from +z (up); column u maps to
azimuth phi = 2*pi*(u+0.5)/W from +x toward +y. Directions are
(sin t cos p, sin t sin p, cos t).

Cubemap faces are ordered +x, -x, +y, -y, +z, -z, each a square 90-degree
frustum from the capture center; per-face right/down vectors come from the
_FACES table below, shared with the renderer's capture rig.
"""

import math

import numpy as np

from . import image_io, sh
from .sampling import SampleSet, sample_sphere


class EquirectMap:
    """Equirectangular radiance map, pixels (H, 2H, 3), optional alpha."""

    __slots__ = ("pixels", "alpha")

    def __init__(self, pixels: np.ndarray, alpha: np.ndarray = None,
                 allow_negative: bool = False):
        pixels = np.asarray(pixels, dtype=np.float64)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise ValueError(f"pixels must be (H, W, 3), got {pixels.shape}")
        h, w = pixels.shape[:2]
        if w != 2 * h:
            raise ValueError(f"equirect width must be 2*height, got {w}x{h}")
        if not np.all(np.isfinite(pixels)):
            raise ValueError("radiance must be finite")
        if not allow_negative and np.any(pixels < 0):
            raise ValueError("radiance must be nonnegative")
        if alpha is not None:
            alpha = np.asarray(alpha, dtype=np.float64)
            if alpha.shape != (h, w):
                raise ValueError("alpha must be (H, W)")
        self.pixels = pixels
        self.alpha = alpha

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def sample(self, dirs: np.ndarray) -> np.ndarray:
        """Bilinear lookup at unit directions; wraps in azimuth, clamps at poles."""
        u, v = dir_to_uv(dirs, self.height, self.width)
        return _bilinear_wrap(self.pixels, u, v)

    def texel_dirs(self) -> np.ndarray:
        return texel_dirs(self.height, self.width)

    def solid_angles(self) -> np.ndarray:
        """Per-texel solid angle, (H, W); sums to 4pi up to quadrature error."""
        h, w = self.height, self.width
        theta = math.pi * (np.arange(h) + 0.5) / h
        return np.broadcast_to(
            (np.sin(theta) * (math.pi / h) * (2.0 * math.pi / w))[:, None], (h, w))

    def copy(self) -> "EquirectMap":
        return EquirectMap(self.pixels.copy(),
                           None if self.alpha is None else self.alpha.copy(),
                           allow_negative=True)

    @classmethod
    def load_hdr(cls, path) -> "EquirectMap":
        return cls(image_io.read_hdr(path))

    def save_hdr(self, path) -> None:
        image_io.write_hdr(path, np.maximum(self.pixels, 0.0))

    @classmethod
    def load_png(cls, path) -> "EquirectMap":
        return cls(image_io.read_png(path))

    def save_png(self, path) -> None:
        image_io.write_png(path, np.clip(self.pixels, 0.0, 1.0))


def texel_dirs(h: int, w: int) -> np.ndarray:
    theta = math.pi * (np.arange(h) + 0.5) / h
    phi = 2.0 * math.pi * (np.arange(w) + 0.5) / w
    st, ct = np.sin(theta)[:, None], np.cos(theta)[:, None]
    return np.stack([st * np.cos(phi)[None, :],
                     st * np.sin(phi)[None, :],
                     np.broadcast_to(ct, (h, w))], axis=-1)


def uv_to_dir(u: np.ndarray, v: np.ndarray, h: int, w: int) -> np.ndarray:
    """Continuous pixel coordinates to directions (texel center at integer u, v)."""
    theta = math.pi * (np.asarray(v) + 0.5) / h
    phi = 2.0 * math.pi * (np.asarray(u) + 0.5) / w
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def dir_to_uv(dirs: np.ndarray, h: int, w: int):
    """Directions to continuous pixel coordinates; inverse of uv_to_dir."""
    dirs = np.asarray(dirs, dtype=np.float64)
    theta = np.arccos(np.clip(dirs[..., 2], -1.0, 1.0))
    phi = np.mod(np.arctan2(dirs[..., 1], dirs[..., 0]), 2.0 * math.pi)
    u = phi * w / (2.0 * math.pi) - 0.5
    v = theta * h / math.pi - 0.5
    return u, v


def _bilinear_wrap(pixels: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear sample with azimuthal wrap in u and clamped v."""
    h, w = pixels.shape[:2]
    u0 = np.floor(u).astype(np.int64)
    v0 = np.floor(v).astype(np.int64)
    fu = u - u0
    fv = v - v0
    u1 = (u0 + 1) % w
    u0 = u0 % w
    v1 = np.clip(v0 + 1, 0, h - 1)
    v0 = np.clip(v0, 0, h - 1)
    fu = fu[..., None]
    fv = fv[..., None]
    top = pixels[v0, u0] * (1.0 - fu) + pixels[v0, u1] * fu
    bot = pixels[v1, u0] * (1.0 - fu) + pixels[v1, u1] * fu
    return top * (1.0 - fv) + bot * fv


# face axis, right, down for each cube face in order +x, -x, +y, -y, +z, -z
_FACES = (
    ((1.0, 0.0, 0.0), (0.0, -1.0, 0.0), (0.0, 0.0, -1.0)),
    ((-1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, -1.0)),
    ((0.0, 1.0, 0.0), (1.0, 0.0, 0.0), (0.0, 0.0, -1.0)),
    ((0.0, -1.0, 0.0), (-1.0, 0.0, 0.0), (0.0, 0.0, -1.0)),
    ((0.0, 0.0, 1.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0)),
    ((0.0, 0.0, -1.0), (1.0, 0.0, 0.0), (0.0, -1.0, 0.0)),
)

FACE_AXES = np.array([f[0] for f in _FACES])
FACE_RIGHT = np.array([f[1] for f in _FACES])
FACE_DOWN = np.array([f[2] for f in _FACES])


class CubeMap:
    """Six square radiance faces (+x, -x, +y, -y, +z, -z), optional alpha."""

    __slots__ = ("faces", "alpha")

    def __init__(self, faces: np.ndarray, alpha: np.ndarray = None):
        faces = np.asarray(faces, dtype=np.float64)
        if faces.ndim != 4 or faces.shape[0] != 6 or faces.shape[3] != 3 \
                or faces.shape[1] != faces.shape[2]:
            raise ValueError(f"faces must be (6, res, res, 3), got {faces.shape}")
        if not np.all(np.isfinite(faces)) or np.any(faces < 0):
            raise ValueError("face radiance must be finite and nonnegative")
        if alpha is not None:
            alpha = np.asarray(alpha, dtype=np.float64)
            if alpha.shape != faces.shape[:3]:
                raise ValueError("alpha must be (6, res, res)")
        self.faces = faces
        self.alpha = alpha

    @property
    def face_res(self) -> int:
        return self.faces.shape[1]

    def sample(self, dirs: np.ndarray) -> np.ndarray:
        vals, _ = _sample_cube(self.faces, self.alpha, dirs)
        return vals

    def sample_with_alpha(self, dirs: np.ndarray):
        return _sample_cube(self.faces, self.alpha, dirs)


def face_dirs(face: int, res: int) -> np.ndarray:
    """(res, res, 3) unit directions through face texel centers."""
    sc = 2.0 * (np.arange(res) + 0.5) / res - 1.0
    s, t = np.meshgrid(sc, sc, indexing="xy")
    d = (FACE_AXES[face][None, None, :]
         + s[..., None] * FACE_RIGHT[face][None, None, :]
         + t[..., None] * FACE_DOWN[face][None, None, :])
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def _sample_cube(faces: np.ndarray, alpha, dirs: np.ndarray):
    dirs = np.asarray(dirs, dtype=np.float64)
    flat = dirs.reshape(-1, 3)
    res = faces.shape[1]
    axis = np.argmax(np.abs(flat), axis=1)
    sign_neg = np.take_along_axis(flat, axis[:, None], axis=1)[:, 0] < 0
    face = axis * 2 + sign_neg
    fwd = np.einsum("nk,nk->n", flat, FACE_AXES[face])
    s = np.einsum("nk,nk->n", flat, FACE_RIGHT[face]) / fwd
    t = np.einsum("nk,nk->n", flat, FACE_DOWN[face]) / fwd
    # continuous pixel coords; clamp keeps bilinear taps inside the face
    x = np.clip((s + 1.0) * 0.5 * res - 0.5, 0.0, res - 1.0)
    y = np.clip((t + 1.0) * 0.5 * res - 0.5, 0.0, res - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, res - 1)
    y1 = np.minimum(y0 + 1, res - 1)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    vals = ((faces[face, y0, x0] * (1 - fx) + faces[face, y0, x1] * fx) * (1 - fy)
            + (faces[face, y1, x0] * (1 - fx) + faces[face, y1, x1] * fx) * fy)
    avals = None
    if alpha is not None:
        fx1, fy1 = fx[:, 0], fy[:, 0]
        avals = ((alpha[face, y0, x0] * (1 - fx1) + alpha[face, y0, x1] * fx1) * (1 - fy1)
                 + (alpha[face, y1, x0] * (1 - fx1) + alpha[face, y1, x1] * fx1) * fy1)
        avals = avals.reshape(dirs.shape[:-1])
    return vals.reshape(dirs.shape[:-1] + (3,)), avals


def cubemap_to_equirect(cube: CubeMap, out_height: int) -> EquirectMap:
    """Resample a cubemap onto the equirect grid (bilinear within faces)."""
    dirs = texel_dirs(out_height, 2 * out_height)
    vals, avals = cube.sample_with_alpha(dirs)
    return EquirectMap(np.maximum(vals, 0.0), avals)


def ldr_to_hdr(map_: EquirectMap, gamma: float = 2.2, boost: float = 4.0,
               knee: float = 0.9) -> EquirectMap:
    """Analytic inverse-tone expansion of an LDR map in [0, 1].

    v <= knee follows v**gamma; above the knee a smoothstep blends in a
    highlight gain reaching boost at v = 1. Monotone for boost >= 1.
    """
    if gamma <= 0:
        raise ValueError("gamma must be > 0")
    if boost < 1:
        raise ValueError("boost must be >= 1")
    if not 0 < knee < 1:
        raise ValueError("knee must be in (0, 1)")
    v = map_.pixels
    if v.min() < 0 or v.max() > 1 + 1e-6:
        raise ValueError("LDR input must lie in [0, 1]")
    v = np.clip(v, 0.0, 1.0)
    out = np.power(v, gamma)
    s = np.clip((v - knee) / (1.0 - knee), 0.0, 1.0)
    out = out * (1.0 + (boost - 1.0) * s * s * (3.0 - 2.0 * s))
    return EquirectMap(out, map_.alpha)


def rotate_equirect(map_: EquirectMap, r: np.ndarray) -> EquirectMap:
    """Rotate the radiance field: output(dir) = input(R^T dir)."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3) or np.abs(r @ r.T - np.eye(3)).max() > 1e-6 \
            or abs(np.linalg.det(r) - 1.0) > 1e-6:
        raise ValueError("R must be a proper rotation matrix")
    dirs = map_.texel_dirs()
    return EquirectMap(np.maximum(map_.sample(dirs @ r), 0.0))


def fill_missing(map_: EquirectMap, threshold: float = 0.5,
                 color=None) -> EquirectMap:
    """Replace texels whose capture alpha fell below threshold.

    color defaults to the mean of the valid texels; a map without alpha is
    returned unchanged.
    """
    if map_.alpha is None:
        return map_
    invalid = map_.alpha < threshold
    pixels = map_.pixels.copy()
    if invalid.any():
        if color is None:
            if invalid.all():
                raise ValueError("no valid texels to infer a fill color from")
            color = pixels[~invalid].mean(axis=0)
        pixels[invalid] = np.asarray(color, dtype=np.float64)
    return EquirectMap(pixels)


def envmap_to_sh(map_: EquirectMap, l_max: int = 3,
                 samples: SampleSet = None) -> sh.ShCoeffs:
    """Weighted least-squares SH fit of the map's radiance field."""
    if samples is None:
        samples = sample_sphere(5000, "equal_area", seed=None, l_max=l_max)
    samples = samples.with_l_max(l_max)
    return sh.project(samples, map_.sample(samples.dirs))


def sh_to_envmap(coeffs: sh.ShCoeffs, out_height: int) -> EquirectMap:
    """Reconstruct the expansion on an equirect grid; may carry ringing < 0."""
    dirs = texel_dirs(out_height, 2 * out_height)
    return EquirectMap(sh.reconstruct(coeffs, dirs), allow_negative=True)
