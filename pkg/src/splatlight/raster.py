"""CPU EWA splat renderer, cubemap capture, and mask-weight accumulation.

Deterministic reference renderer: perspective-projected 2D covariances with
a 0.3-pixel isotropic floor, one global front-to-back depth sort (stable,
so ties keep input order), per-pixel alpha compositing with a 0.99 alpha
clamp and T < 1e-4 termination. View-dependent color is evaluated once per
Gaussian along camera-center -> mean, matching stock splatting practice.
"""

import math
import warnings

import numpy as np

from . import envmap as envmap_mod
from . import sh
from .splats import GaussianModel, quat_to_rotmat


class Camera:
    """Pinhole camera: world-to-camera rotation r, translation t, pixel intrinsics."""

    __slots__ = ("r", "t", "fx", "fy", "cx", "cy", "width", "height")

    def __init__(self, r, t, fx, fy, cx, cy, width, height):
        self.r = np.asarray(r, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(t, dtype=np.float64).reshape(3)
        self.fx, self.fy = float(fx), float(fy)
        self.cx, self.cy = float(cx), float(cy)
        self.width, self.height = int(width), int(height)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            warnings.warn("principal point lies outside the image", stacklevel=2)

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.r.T @ self.t

    @classmethod
    def looking_at(cls, eye, target, up=(0.0, 0.0, 1.0), fov_deg: float = 60.0,
                   width: int = 256, height: int = 256) -> "Camera":
        """Camera at eye looking toward target; x right, y down, z forward."""
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd = fwd / np.linalg.norm(fwd)
        up = np.asarray(up, dtype=np.float64)
        right = np.cross(fwd, up)
        if np.linalg.norm(right) < 1e-8:
            right = np.cross(fwd, (1.0, 0.0, 0.0))
        right = right / np.linalg.norm(right)
        down = np.cross(fwd, right)
        r = np.stack([right, down, fwd])
        fx = 0.5 * width / math.tan(math.radians(fov_deg) / 2.0)
        return cls(r, -r @ eye, fx, fx, width / 2.0, height / 2.0, width, height)


class RenderOutput:
    __slots__ = ("color", "alpha", "per_gaussian_weight", "per_gaussian_mask_weight")

    def __init__(self, color, alpha, per_gaussian_weight=None,
                 per_gaussian_mask_weight=None):
        self.color = color
        self.alpha = alpha
        self.per_gaussian_weight = per_gaussian_weight
        self.per_gaussian_mask_weight = per_gaussian_mask_weight


def _covariances_2d(model, camera, keep):
    """2D covariance entries (a, b, c) and camera-space means for kept rows."""
    rot = quat_to_rotmat(model.rotations[keep])
    sc2 = model.scales[keep] ** 2
    cov3 = np.einsum("nij,nj,nkj->nik", rot, sc2, rot)
    cov_cam = np.einsum("ij,njk,lk->nil", camera.r, cov3, camera.r)
    p = model.positions[keep] @ camera.r.T + camera.t
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    ja = camera.fx / z
    jb = -camera.fx * x / z ** 2
    jd = camera.fy / z
    je = -camera.fy * y / z ** 2
    c00, c01, c02 = cov_cam[:, 0, 0], cov_cam[:, 0, 1], cov_cam[:, 0, 2]
    c11, c12, c22 = cov_cam[:, 1, 1], cov_cam[:, 1, 2], cov_cam[:, 2, 2]
    a = ja * ja * c00 + 2.0 * ja * jb * c02 + jb * jb * c22 + 0.3
    b = ja * jd * c01 + ja * je * c02 + jb * jd * c12 + jb * je * c22
    c = jd * jd * c11 + 2.0 * jd * je * c12 + je * je * c22 + 0.3
    return a, b, c, p


def _gaussian_colors(model, keep, cam_center):
    view = model.positions[keep] - cam_center
    norms = np.linalg.norm(view, axis=1, keepdims=True)
    view = np.where(norms > 1e-12, view / np.maximum(norms, 1e-12),
                    np.array([0.0, 0.0, 1.0]))
    basis = sh.eval_basis(model.l_max, view, validate=False)
    return np.maximum(np.einsum("nk,nkc->nc", basis, model.sh[keep]), 0.0)


def render(model: GaussianModel, camera: Camera, background=(0.0, 0.0, 0.0),
           collect_weights: bool = False, mask: np.ndarray = None) -> RenderOutput:
    """Rasterize the model; see module docstring for the compositing rules.

    collect_weights accumulates each Gaussian's total blend weight (sum of
    alpha*T over pixels); mask additionally accumulates the weight landing
    inside a boolean (H, W) mask.
    """
    h, w = camera.height, camera.width
    background = np.asarray(background, dtype=np.float64).reshape(3)
    if np.any(background < 0):
        raise ValueError("background radiance must be nonnegative")
    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape != (h, w):
            raise ValueError(f"mask must be ({h}, {w}), got {mask.shape}")
    n = len(model)
    color = np.zeros((h, w, 3))
    transmit = np.ones((h, w))
    weights = np.zeros(n) if (collect_weights or mask is not None) else None
    mask_weights = np.zeros(n) if mask is not None else None
    if n == 0:
        color += background
        return RenderOutput(color, 1.0 - transmit, weights, mask_weights)

    cam_pts = model.positions @ camera.r.T + camera.t
    keep = np.flatnonzero(cam_pts[:, 2] > 1e-6)
    if keep.size == 0:
        color += background
        return RenderOutput(color, 1.0 - transmit, weights, mask_weights)

    a, b, c, p = _covariances_2d(model, camera, keep)
    det = a * c - b * b
    valid = det > 1e-12
    keep, a, b, c, p = keep[valid], a[valid], b[valid], c[valid], p[valid]
    inv_a, inv_b, inv_c = c / det[valid], -b / det[valid], a / det[valid]
    u = camera.fx * p[:, 0] / p[:, 2] + camera.cx
    v = camera.fy * p[:, 1] / p[:, 2] + camera.cy
    # grazing splats linearize into screen-wide smears; drop any whose
    # center projects outside the frustum expanded by a 30% margin
    infr = ((u > -0.3 * w) & (u < 1.3 * w)
            & (v > -0.3 * h) & (v < 1.3 * h))
    keep, a, b, c, p, u, v = (arr[infr] for arr in (keep, a, b, c, p, u, v))
    inv_a, inv_b, inv_c = inv_a[infr], inv_b[infr], inv_c[infr]
    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(0.0, (0.5 * (a - c)) ** 2 + b * b))
    radius = 3.0 * np.sqrt(lam_max)
    colors = _gaussian_colors(model, keep, camera.center)
    opacities = model.opacities[keep]

    order = np.argsort(p[:, 2], kind="stable")
    xs = np.arange(w) + 0.5
    ys = np.arange(h) + 0.5
    mask_f = None if mask is None else mask.astype(np.float64)

    for j in order:
        x0 = max(0, int(u[j] - radius[j]))
        x1 = min(w, int(u[j] + radius[j]) + 2)
        y0 = max(0, int(v[j] - radius[j]))
        y1 = min(h, int(v[j] + radius[j]) + 2)
        if x0 >= x1 or y0 >= y1:
            continue
        t_sub = transmit[y0:y1, x0:x1]
        alive = t_sub > 1e-4
        if not alive.any():
            continue
        dx = xs[x0:x1] - u[j]
        dy = ys[y0:y1] - v[j]
        q = (inv_a[j] * dx * dx)[None, :] \
            + (inv_c[j] * dy * dy)[:, None] \
            + (2.0 * inv_b[j]) * np.outer(dy, dx)
        alpha = np.minimum(opacities[j] * np.exp(-0.5 * q), 0.99)
        alpha = np.where(alive & (alpha >= 1.0 / 255.0), alpha, 0.0)
        blend = alpha * t_sub
        color[y0:y1, x0:x1] += blend[:, :, None] * colors[j]
        t_sub *= 1.0 - alpha
        if weights is not None:
            g = keep[j]
            weights[g] = blend.sum()
            if mask_weights is not None:
                mask_weights[g] = (blend * mask_f[y0:y1, x0:x1]).sum()

    color += background * transmit[:, :, None]
    return RenderOutput(color, 1.0 - transmit, weights, mask_weights)


def cubemap_cameras(center, face_res: int):
    """Six 90-degree-FOV cameras along +x, -x, +y, -y, +z, -z.

    Rows of each rotation are (right, down, forward) from the shared face
    table, so face pixel (i, j) looks along the same direction
    envmap.face_dirs assigns to it.
    """
    center = np.asarray(center, dtype=np.float64).reshape(3)
    f = face_res / 2.0
    cams = []
    for face in range(6):
        r = np.stack([envmap_mod.FACE_RIGHT[face],
                      envmap_mod.FACE_DOWN[face],
                      envmap_mod.FACE_AXES[face]])
        cams.append(Camera(r, -r @ center, f, f, f, f, face_res, face_res))
    return cams


def render_cubemap(model: GaussianModel, center, face_res: int = 256,
                   background=(0.0, 0.0, 0.0), cull=None) -> envmap_mod.CubeMap:
    """Capture the radiance field at `center` as a cubemap with alpha.

    cull drops the listed Gaussian indices (an inserted object must not
    contribute to its own environment).
    """
    if cull is not None and len(cull):
        keep = np.ones(len(model), dtype=bool)
        keep[np.asarray(cull)] = False
        model = model.subset(keep)
    faces = np.zeros((6, face_res, face_res, 3))
    alpha = np.zeros((6, face_res, face_res))
    for face, cam in enumerate(cubemap_cameras(center, face_res)):
        out = render(model, cam, background)
        faces[face] = np.maximum(out.color, 0.0)
        alpha[face] = out.alpha
    return envmap_mod.CubeMap(faces, alpha)


def accumulate_mask_stats(model: GaussianModel, cameras, masks):
    """Per-Gaussian mask-weighted blend totals over a set of views.

    Returns (numerators, denominator): numerator_j sums each view's blend
    weight of Gaussian j over mask-ON pixels; denominator counts mask-ON
    pixels over all views.
    """
    if len(cameras) != len(masks):
        raise ValueError("need one mask per camera")
    numerators = np.zeros(len(model))
    denominator = 0.0
    for cam, mask in zip(cameras, masks):
        mask = np.asarray(mask).astype(bool)
        out = render(model, cam, collect_weights=True, mask=mask)
        numerators += out.per_gaussian_mask_weight
        denominator += float(mask.sum())
    return numerators, denominator


def parse_cameras(path):
    """Read a plain-text camera list.

    One camera per line, 18 whitespace-separated numbers: width height
    fx fy cx cy, then the world-to-camera rotation row-major (9 numbers),
    then its translation (3 numbers). '#' starts a comment.
    """
    cams = []
    with open(path) as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            vals = line.split()
            if len(vals) != 18:
                raise ValueError(f"{path}:{ln}: expected 18 numbers, got {len(vals)}")
            nums = [float(v) for v in vals]
            cams.append(Camera(np.array(nums[6:15]).reshape(3, 3), nums[15:18],
                               nums[2], nums[3], nums[4], nums[5],
                               int(nums[0]), int(nums[1])))
    if not cams:
        raise ValueError(f"{path}: no cameras found")
    return cams


def save_cameras(path, cameras) -> None:
    with open(path, "w") as fh:
        fh.write("# width height fx fy cx cy r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz\n")
        for cam in cameras:
            vals = [cam.width, cam.height, cam.fx, cam.fy, cam.cx, cam.cy,
                    *cam.r.ravel().tolist(), *cam.t.tolist()]
            fh.write(" ".join(repr(v) if isinstance(v, float) else str(v)
                              for v in vals) + "\n")
