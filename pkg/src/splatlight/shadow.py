"""Lobe-based soft shadows for inserted objects.

The target environment is smoothed to a low SH degree; its brightest
directions become light lobes. Object Gaussians are orthographically
projected along each lobe onto a user-given receiver plane as soft 2D
occluders whose per-texel transmittance multiplies together. Baking scales
the SH appearance of scene Gaussians near the plane by the composited,
strength-weighted attenuation. Receivers only darken; geometry never moves.
"""

import math

import numpy as np
from PIL import Image

from . import envmap as envmap_mod
from . import sh
from .sampling import fibonacci_sphere
from .splats import GaussianModel, quat_to_rotmat

_LUMA = np.array([0.2126, 0.7152, 0.0722])


class LightLobe:
    __slots__ = ("direction", "intensity", "weight")

    def __init__(self, direction, intensity: float, weight: float):
        direction = np.asarray(direction, dtype=np.float64)
        self.direction = direction / np.linalg.norm(direction)
        if intensity < 0 or weight < 0:
            raise ValueError("lobe intensity and weight must be nonnegative")
        self.intensity = float(intensity)
        self.weight = float(weight)


class ShadowMap:
    """Square transmittance map on a receiver plane.

    plane_point is the map center (on the plane); e1/e2 span the map with
    extent world units across; transmittance[row, col] sits at
    plane_point + ((col+0.5)/res - 0.5)*extent*e1 + ((row+0.5)/res - 0.5)*extent*e2.
    """

    __slots__ = ("plane_point", "plane_normal", "e1", "e2", "res", "extent",
                 "transmittance")

    def __init__(self, plane_point, plane_normal, e1, e2, res, extent,
                 transmittance):
        self.plane_point = np.asarray(plane_point, dtype=np.float64)
        self.plane_normal = np.asarray(plane_normal, dtype=np.float64)
        self.e1 = np.asarray(e1, dtype=np.float64)
        self.e2 = np.asarray(e2, dtype=np.float64)
        frame = np.stack([self.e1, self.e2, self.plane_normal])
        if np.abs(frame @ frame.T - np.eye(3)).max() > 1e-6:
            raise ValueError("plane frame must be orthonormal")
        self.res = int(res)
        self.extent = float(extent)
        self.transmittance = np.asarray(transmittance, dtype=np.float64)
        if self.transmittance.shape != (self.res, self.res):
            raise ValueError("transmittance must be res x res")
        if self.transmittance.min() < 0 or self.transmittance.max() > 1:
            raise ValueError("transmittance must lie in [0, 1]")

    def lookup(self, positions: np.ndarray) -> np.ndarray:
        """Bilinear transmittance at world positions; 1 outside the extent."""
        rel = np.asarray(positions, dtype=np.float64) - self.plane_point
        x = (rel @ self.e1 / self.extent + 0.5) * self.res - 0.5
        y = (rel @ self.e2 / self.extent + 0.5) * self.res - 0.5
        out = np.ones(len(rel))
        inside = (x > -0.5) & (x < self.res - 0.5) & (y > -0.5) & (y < self.res - 0.5)
        if inside.any():
            xi = np.clip(x[inside], 0.0, self.res - 1.0)
            yi = np.clip(y[inside], 0.0, self.res - 1.0)
            x0 = np.floor(xi).astype(np.int64)
            y0 = np.floor(yi).astype(np.int64)
            x1 = np.minimum(x0 + 1, self.res - 1)
            y1 = np.minimum(y0 + 1, self.res - 1)
            fx, fy = xi - x0, yi - y0
            t = self.transmittance
            out[inside] = ((t[y0, x0] * (1 - fx) + t[y0, x1] * fx) * (1 - fy)
                           + (t[y1, x0] * (1 - fx) + t[y1, x1] * fx) * fy)
        return out

    def save_png(self, path) -> None:
        """8-bit grayscale dump (linear transmittance) for inspection."""
        Image.fromarray(np.round(self.transmittance * 255.0).astype(np.uint8),
                        mode="L").save(path)


def dominant_lobes(l_t: envmap_mod.EquirectMap, k: int = 1,
                   smooth_degree: int = 2, nms_radius_deg: float = 30.0):
    """Brightest directions of the SH-smoothed luminance of L_T.

    Returns up to k lobes (greedy maxima with angular non-max suppression);
    an effectively constant map (under 1% luminance contrast) returns [].
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    coeffs = envmap_mod.envmap_to_sh(l_t, smooth_degree)
    dirs = fibonacci_sphere(8192)
    lum = sh.reconstruct(coeffs, dirs) @ _LUMA
    peak, trough = float(lum.max()), float(lum.min())
    if peak - trough <= 0.01 * max(abs(peak), 1e-12):
        return []
    available = np.ones(len(dirs), dtype=bool)
    cos_rad = math.cos(math.radians(nms_radius_deg))
    lobes = []
    for _ in range(k):
        if not available.any():
            break
        masked = np.where(available, lum, -np.inf)
        best = int(np.argmax(masked))
        lobes.append((dirs[best], max(lum[best], 0.0)))
        available &= dirs @ dirs[best] < cos_rad
    total = sum(intensity for _, intensity in lobes)
    return [LightLobe(d, i, i / total if total > 0 else 1.0 / len(lobes))
            for d, i in lobes]


def _plane_frame(normal: np.ndarray):
    normal = normal / np.linalg.norm(normal)
    helper = np.array([1.0, 0.0, 0.0])
    if abs(normal[0]) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    e1 = helper - (helper @ normal) * normal
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(normal, e1)
    return e1, e2, normal


def project_shadow(obj: GaussianModel, lobe: LightLobe, plane, res: int = 256,
                   extent: float = None, center=None) -> ShadowMap:
    """Splat the object along -lobe.direction onto the receiver plane.

    plane is (point, normal). The map is centered where the object centroid
    lands on the plane along the lobe (overridable); extent defaults to
    twice the object's bounding-sphere diameter. Gaussians on the far side
    of the plane (relative to light travel) cast nothing.
    """
    p0 = np.asarray(plane[0], dtype=np.float64)
    e1, e2, n = _plane_frame(np.asarray(plane[1], dtype=np.float64))
    travel = -lobe.direction
    cosine = float(travel @ n)
    if abs(cosine) < math.sin(math.radians(5.0)):
        raise ValueError(
            "lobe grazes the receiver plane (under 5 degrees); pick a different "
            "plane or lobe")
    centroid = obj.centroid() if len(obj) else p0
    if center is None:
        center = centroid + ((p0 - centroid) @ n / cosine) * travel
    else:
        center = np.asarray(center, dtype=np.float64)
    if extent is None:
        radius = float(np.linalg.norm(obj.positions - centroid, axis=1).max()) \
            if len(obj) else 1.0
        extent = max(4.0 * radius, 1e-6)

    transmittance = np.ones((res, res))
    if len(obj):
        t_hit = ((p0 - obj.positions) @ n) / cosine
        proj = obj.positions + t_hit[:, None] * travel
        rel = proj - center
        px = (rel @ e1 / extent + 0.5) * res - 0.5
        py = (rel @ e2 / extent + 0.5) * res - 0.5

        # oblique projector along the light direction, then into plane axes
        p_mat = np.eye(3) - np.outer(travel, n) / cosine
        frame = np.stack([e1, e2]) @ p_mat
        rot = quat_to_rotmat(obj.rotations)
        cov3 = np.einsum("nij,nj,nkj->nik", rot, obj.scales ** 2, rot)
        cov2 = np.einsum("ij,njk,lk->nil", frame, cov3, frame)
        texel = extent / res
        floor = (0.5 * texel) ** 2
        a = cov2[:, 0, 0] + floor
        b = cov2[:, 0, 1]
        c = cov2[:, 1, 1] + floor
        scale_px = res / extent
        for j in range(len(obj)):
            if t_hit[j] < 0:
                continue
            det = a[j] * c[j] - b[j] * b[j]
            if det <= 0:
                continue
            lam = 0.5 * (a[j] + c[j]) + math.sqrt(
                max(0.0, (0.5 * (a[j] - c[j])) ** 2 + b[j] * b[j]))
            radius_px = 3.0 * math.sqrt(lam) * scale_px
            x0 = max(0, int(px[j] - radius_px))
            x1 = min(res, int(px[j] + radius_px) + 2)
            y0 = max(0, int(py[j] - radius_px))
            y1 = min(res, int(py[j] + radius_px) + 2)
            if x0 >= x1 or y0 >= y1:
                continue
            dx = (np.arange(x0, x1) - px[j]) * texel
            dy = (np.arange(y0, y1) - py[j]) * texel
            q = ((c[j] * dx * dx)[None, :] + (a[j] * dy * dy)[:, None]
                 - (2.0 * b[j]) * np.outer(dy, dx)) / det
            alpha = np.minimum(obj.opacities[j] * np.exp(-0.5 * q), 0.99)
            transmittance[y0:y1, x0:x1] *= 1.0 - alpha
    return ShadowMap(center, n, e1, e2, res, extent, transmittance)


def bake(scene: GaussianModel, maps, lobes, strength: float,
         band: float = None) -> GaussianModel:
    """Darken scene Gaussians near the receiver planes.

    Attenuation a = sum_k weight_k * transmittance_k at each receiver's
    in-plane position (1 outside a map's extent or band); the receiver's SH
    coefficients scale by 1 - strength*(1 - a). band defaults to 2x the
    median scene-Gaussian mean scale.
    """
    if not 0 <= strength <= 1:
        raise ValueError("strength must lie in [0, 1]")
    if len(maps) != len(lobes):
        raise ValueError("need one lobe per shadow map")
    out = scene.copy()
    if not maps or not len(scene):
        return out
    if band is None:
        band = 2.0 * float(np.median(scene.scales.mean(axis=1)))
    attenuation = np.zeros(len(scene))
    for map_, lobe in zip(maps, lobes):
        dist = np.abs((scene.positions - map_.plane_point) @ map_.plane_normal)
        trans = np.ones(len(scene))
        in_band = dist <= band
        if in_band.any():
            trans[in_band] = map_.lookup(scene.positions[in_band])
        attenuation += lobe.weight * trans
    weight_total = sum(lobe.weight for lobe in lobes)
    if weight_total > 0:
        attenuation /= weight_total
    factor = 1.0 - strength * (1.0 - np.clip(attenuation, 0.0, 1.0))
    out.sh *= factor[:, None, None]
    return out
