"""Gaussian-splat model container and stock binary PLY serialization.

On disk (stock 3DGS layout, binary little-endian PLY): positions x,y,z;
placeholder normals nx,ny,nz; DC appearance f_dc_0..2; higher-band
appearance f_rest_* laid out channel-major (all R coefficients, then G,
then B, each in sh_index order starting at band 1); opacity as a logit;
scales as logs; rotation as a (w,x,y,z) quaternion. In memory everything
is physical: linear scales, [0,1] opacities, unit quaternions, and sh with
shape (N, (l_max+1)^2, 3).
"""

import math
import warnings

import numpy as np

from . import sh


class PlyParseError(ValueError):
    """Malformed PLY content; message carries the byte offset."""


_CORE_PROPS = ("x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2",
               "opacity", "scale_0", "scale_1", "scale_2",
               "rot_0", "rot_1", "rot_2", "rot_3")

_PLY_DTYPES = {
    b"float": "<f4", b"float32": "<f4", b"double": "<f8", b"float64": "<f8",
    b"uchar": "u1", b"uint8": "u1", b"char": "i1", b"int8": "i1",
    b"short": "<i2", b"int16": "<i2", b"ushort": "<u2", b"uint16": "<u2",
    b"int": "<i4", b"int32": "<i4", b"uint": "<u4", b"uint32": "<u4",
}


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """(…, 4) unit quaternions (w,x,y,z) to (…, 3, 3) rotation matrices."""
    q = quat_normalize(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def rotmat_to_quat(r: np.ndarray) -> np.ndarray:
    """3x3 rotation matrix to a unit quaternion (w, x, y, z)."""
    r = np.asarray(r, dtype=np.float64)
    t = np.trace(r)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array([0.25 * s, (r[2, 1] - r[1, 2]) / s,
                      (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(r)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = math.sqrt(max(1e-12, 1.0 + r[i, i] - r[j, j] - r[k, k])) * 2.0
        q = np.empty(4)
        q[0] = (r[k, j] - r[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (r[j, i] + r[i, j]) / s
        q[1 + k] = (r[k, i] + r[i, k]) / s
    return quat_normalize(q)


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def _check_rotation(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3) or np.abs(r @ r.T - np.eye(3)).max() > 1e-6 \
            or abs(np.linalg.det(r) - 1.0) > 1e-6:
        raise ValueError("R must be a proper rotation matrix")
    return r


class Gaussian:
    """Single-Gaussian view (copies) of a model row."""

    __slots__ = ("position", "rotation", "scale", "opacity", "sh", "score")

    def __init__(self, position, rotation, scale, opacity, sh_coeffs, score=None):
        self.position = np.asarray(position, dtype=np.float64)
        self.rotation = np.asarray(rotation, dtype=np.float64)
        self.scale = np.asarray(scale, dtype=np.float64)
        self.opacity = float(opacity)
        self.sh = np.asarray(sh_coeffs, dtype=np.float64)
        self.score = None if score is None else float(score)


class GaussianModel:
    """Struct-of-arrays Gaussian collection with uniform SH degree."""

    def __init__(self, positions, rotations, scales, opacities, sh_coeffs,
                 kind: str = "ellipsoid", scores=None, ply_normals=None,
                 extras=None):
        self.positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        n = len(self.positions)
        self.rotations = np.asarray(rotations, dtype=np.float64).reshape(n, 4)
        self.scales = np.asarray(scales, dtype=np.float64).reshape(n, 3)
        self.opacities = np.asarray(opacities, dtype=np.float64).reshape(n)
        self.sh = np.asarray(sh_coeffs, dtype=np.float64)
        if self.sh.ndim != 3 or self.sh.shape[0] != n or self.sh.shape[2] != 3:
            raise ValueError(f"sh must be (N, K, 3), got {self.sh.shape}")
        k = self.sh.shape[1]
        l_max = int(math.isqrt(k)) - 1
        if (l_max + 1) ** 2 != k:
            raise ValueError(f"sh coefficient count {k} is not a square")
        self.l_max = l_max
        if kind not in ("ellipsoid", "surfel"):
            raise ValueError(f"kind must be ellipsoid or surfel, got {kind!r}")
        self.kind = kind
        self.scores = None if scores is None else \
            np.asarray(scores, dtype=np.float64).reshape(n)
        self.ply_normals = np.zeros((n, 3)) if ply_normals is None else \
            np.asarray(ply_normals, dtype=np.float64).reshape(n, 3)
        self.extras = dict(extras) if extras else {}
        if n:
            norm_err = np.abs(np.linalg.norm(self.rotations, axis=1) - 1.0).max()
            if norm_err > 1e-6:
                raise ValueError(f"quaternions must be unit (max error {norm_err:.2e})")
            if np.any(self.scales <= 0):
                raise ValueError("scales must be positive")
            if np.any(self.opacities < 0) or np.any(self.opacities > 1):
                raise ValueError("opacities must lie in [0, 1]")
            if not np.all(np.isfinite(self.sh)):
                raise ValueError("sh coefficients must be finite")
        if kind == "surfel" and n:
            smallest, others = _split_scale_axes(self.scales)
            frac_flat = float(np.mean(smallest <= 0.1 * np.median(others, axis=1)))
            if frac_flat < 0.9:
                warnings.warn(
                    f"surfel model: only {frac_flat:.0%} of Gaussians are flat "
                    "(min axis <= 0.1x median of the others)", stacklevel=2)

    def __len__(self) -> int:
        return len(self.positions)

    def gaussian(self, i: int) -> Gaussian:
        return Gaussian(self.positions[i], self.rotations[i], self.scales[i],
                        self.opacities[i], self.sh[i],
                        None if self.scores is None else self.scores[i])

    def copy(self) -> "GaussianModel":
        return GaussianModel(
            self.positions.copy(), self.rotations.copy(), self.scales.copy(),
            self.opacities.copy(), self.sh.copy(), self.kind,
            None if self.scores is None else self.scores.copy(),
            self.ply_normals.copy(),
            {k: (dt, arr.copy()) for k, (dt, arr) in self.extras.items()})

    def subset(self, index) -> "GaussianModel":
        return GaussianModel(
            self.positions[index], self.rotations[index], self.scales[index],
            self.opacities[index], self.sh[index], self.kind,
            None if self.scores is None else self.scores[index],
            self.ply_normals[index],
            {k: (dt, arr[index]) for k, (dt, arr) in self.extras.items()})

    def centroid(self) -> np.ndarray:
        return self.positions.mean(axis=0)


def _split_scale_axes(scales: np.ndarray):
    ordered = np.sort(scales, axis=1)
    return ordered[:, 0], ordered[:, 1:]


def detect_kind(scales: np.ndarray) -> str:
    """surfel when >= 90% of Gaussians have min axis <= 0.1x median of others."""
    smallest, others = _split_scale_axes(np.asarray(scales, dtype=np.float64))
    flat = smallest <= 0.1 * np.median(others, axis=1)
    return "surfel" if flat.size and flat.mean() >= 0.9 else "ellipsoid"


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _logit(p: np.ndarray) -> np.ndarray:
    # saturation clamp keeps the encoding finite; beyond |36| the float32
    # sigmoid is indistinguishable from 0/1 anyway
    p = np.clip(p, _sigmoid(np.array([-36.0]))[0], _sigmoid(np.array([36.0]))[0])
    return np.log(p) - np.log1p(-p)


def _parse_header(data: bytes):
    end = data.find(b"end_header\n")
    if end < 0:
        raise PlyParseError("byte 0: end_header not found; not a PLY file")
    payload_start = end + len(b"end_header\n")
    lines = data[:end].split(b"\n")
    if not lines or lines[0].strip() != b"ply":
        raise PlyParseError("byte 0: missing 'ply' magic")
    props = []
    n_vertices = None
    offset = 0
    in_vertex = False
    for line in lines:
        stripped = line.strip()
        tok = stripped.split()
        if stripped == b"ply" or stripped == b"" or (tok and tok[0] == b"comment"):
            pass
        elif tok[0] == b"format":
            if stripped != b"format binary_little_endian 1.0":
                raise PlyParseError(
                    f"byte {offset}: unsupported format {stripped.decode(errors='replace')!r}")
        elif tok[0] == b"element":
            if len(tok) != 3:
                raise PlyParseError(f"byte {offset}: malformed element line")
            if tok[1] == b"vertex":
                n_vertices = int(tok[2])
                in_vertex = True
            else:
                raise PlyParseError(
                    f"byte {offset}: unsupported element {tok[1].decode(errors='replace')!r}")
        elif tok[0] == b"property":
            if not in_vertex:
                raise PlyParseError(f"byte {offset}: property before vertex element")
            if len(tok) != 3 or tok[1] not in _PLY_DTYPES:
                raise PlyParseError(
                    f"byte {offset}: unsupported property {stripped.decode(errors='replace')!r}")
            props.append((tok[2].decode(), _PLY_DTYPES[tok[1]]))
        else:
            raise PlyParseError(
                f"byte {offset}: unrecognized header line {stripped.decode(errors='replace')!r}")
        offset += len(line) + 1
    if n_vertices is None:
        raise PlyParseError(f"byte {offset}: no vertex element declared")
    if len(set(name for name, _ in props)) != len(props):
        raise PlyParseError(f"byte {offset}: duplicate property names")
    return n_vertices, props, payload_start


def _collect_rest(names: set) -> int:
    count = 0
    while f"f_rest_{count}" in names:
        count += 1
    return count


def load_ply(path, keep_extra: bool = True, kind: str = None) -> GaussianModel:
    """Load a stock 3DGS PLY.

    keep_extra preserves unknown properties (reattached on save, after the
    stock block); kind overrides surfel/ellipsoid auto-detection.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    n, props, start = _parse_header(data)
    names = {name for name, _ in props}
    missing = [p for p in _CORE_PROPS if p not in names]
    if missing:
        raise PlyParseError(f"byte {start}: missing required properties {missing}")
    dtype = np.dtype([(name, dt) for name, dt in props])
    need = n * dtype.itemsize
    have = len(data) - start
    if have < need:
        done = have // dtype.itemsize
        raise PlyParseError(
            f"byte {start + done * dtype.itemsize}: payload truncated at vertex "
            f"{done} of {n}")
    if have > need:
        raise PlyParseError(f"byte {start + need}: {have - need} trailing bytes after payload")
    rows = np.frombuffer(data, dtype=dtype, count=n, offset=start)

    n_rest = _collect_rest(names)
    if n_rest % 3:
        raise PlyParseError(f"byte {start}: f_rest count {n_rest} not divisible by 3")
    per_channel = n_rest // 3
    l_max = int(math.isqrt(per_channel + 1)) - 1
    if (l_max + 1) ** 2 - 1 != per_channel:
        raise PlyParseError(
            f"byte {start}: f_rest count {n_rest} does not match any SH degree")

    k = (l_max + 1) ** 2
    sh_coeffs = np.zeros((n, k, 3))
    for c in range(3):
        sh_coeffs[:, 0, c] = rows[f"f_dc_{c}"]
        for j in range(per_channel):
            sh_coeffs[:, 1 + j, c] = rows[f"f_rest_{c * per_channel + j}"]

    positions = np.stack([rows["x"], rows["y"], rows["z"]], axis=1).astype(np.float64)
    ply_normals = np.stack([rows["nx"], rows["ny"], rows["nz"]], axis=1).astype(np.float64)
    scales = np.exp(np.stack([rows[f"scale_{i}"] for i in range(3)], axis=1).astype(np.float64))
    opacities = _sigmoid(rows["opacity"].astype(np.float64))
    quats = np.stack([rows[f"rot_{i}"] for i in range(4)], axis=1).astype(np.float64)
    norms = np.linalg.norm(quats, axis=1)
    if n and np.abs(norms - 1.0).max() > 1e-6:
        warnings.warn("non-unit quaternions in PLY; normalizing", stacklevel=2)
        quats = quats / norms[:, None]

    scores = rows["label"].astype(np.float64) if "label" in names else None
    known = set(_CORE_PROPS) | {"label"} | {f"f_rest_{i}" for i in range(n_rest)}
    extras = {}
    if keep_extra:
        for name, dt in props:
            if name not in known:
                extras[name] = (dt, np.array(rows[name]))
    if kind is None:
        kind = detect_kind(scales)
    return GaussianModel(positions, quats, scales, opacities, sh_coeffs,
                         kind=kind, scores=scores, ply_normals=ply_normals,
                         extras=extras)


def save_ply(model: GaussianModel, path) -> None:
    """Write the stock layout; exact inverse of load_ply's decoding."""
    n = len(model)
    if n == 0:
        raise ValueError("refusing to save an empty model")
    per_channel = (model.l_max + 1) ** 2 - 1
    props = [(p, "<f4") for p in ("x", "y", "z", "nx", "ny", "nz",
                                  "f_dc_0", "f_dc_1", "f_dc_2")]
    props += [(f"f_rest_{i}", "<f4") for i in range(3 * per_channel)]
    props += [(p, "<f4") for p in ("opacity", "scale_0", "scale_1", "scale_2",
                                   "rot_0", "rot_1", "rot_2", "rot_3")]
    if model.scores is not None:
        props.append(("label", "<f4"))
    props += [(name, dt) for name, (dt, _) in model.extras.items()]

    rows = np.zeros(n, dtype=np.dtype(props))
    for i, name in enumerate(("x", "y", "z")):
        rows[name] = model.positions[:, i]
    for i, name in enumerate(("nx", "ny", "nz")):
        rows[name] = model.ply_normals[:, i]
    for c in range(3):
        rows[f"f_dc_{c}"] = model.sh[:, 0, c]
        for j in range(per_channel):
            rows[f"f_rest_{c * per_channel + j}"] = model.sh[:, 1 + j, c]
    rows["opacity"] = _logit(model.opacities)
    for i in range(3):
        rows[f"scale_{i}"] = np.log(np.maximum(model.scales[:, i], 1e-32))
    for i in range(4):
        rows[f"rot_{i}"] = model.rotations[:, i]
    if model.scores is not None:
        rows["label"] = model.scores
    for name, (_, arr) in model.extras.items():
        rows[name] = arr

    type_names = {"<f4": "float", "<f8": "double", "u1": "uchar", "i1": "char",
                  "<i2": "short", "<u2": "ushort", "<i4": "int", "<u4": "uint"}
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property {type_names[dt]} {name}" for name, dt in props]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode())
        fh.write(rows.tobytes())


def normal_of(g: Gaussian, kind: str, outward_hint) -> np.ndarray:
    """Unit normal of one Gaussian; sign points away from outward_hint."""
    rot = quat_to_rotmat(g.rotation)
    if kind == "surfel":
        normal = rot[:, 2]
    else:
        normal = rot[:, int(np.argmin(g.scale))]
    if np.dot(normal, g.position - np.asarray(outward_hint, dtype=np.float64)) < 0:
        normal = -normal
    return normal


def normals_of(model: GaussianModel, outward_hint=None):
    """Per-Gaussian normals plus a low-confidence mask.

    Low confidence marks Gaussians whose two smallest scale axes differ by
    less than a 1.2 ratio (no well-defined flat axis).
    """
    hint = model.centroid() if outward_hint is None else \
        np.asarray(outward_hint, dtype=np.float64)
    rots = quat_to_rotmat(model.rotations)
    if model.kind == "surfel":
        normals = rots[:, :, 2]
    else:
        axes = np.argmin(model.scales, axis=1)
        normals = rots[np.arange(len(model)), :, axes]
    flip = np.einsum("nk,nk->n", normals, model.positions - hint) < 0
    normals = np.where(flip[:, None], -normals, normals)
    ordered = np.sort(model.scales, axis=1)
    low_confidence = ordered[:, 1] < 1.2 * ordered[:, 0]
    return normals, low_confidence


def transform_model(model: GaussianModel, r: np.ndarray, t=(0.0, 0.0, 0.0),
                    s: float = 1.0) -> GaussianModel:
    """Similarity transform: positions s*R*p + t, quats left-multiplied,
    scales scaled, SH rotated by resample-refit."""
    r = _check_rotation(r)
    t = np.asarray(t, dtype=np.float64).reshape(3)
    if s <= 0:
        raise ValueError("scale must be positive")
    positions = s * (model.positions @ r.T) + t
    q_r = rotmat_to_quat(r)
    rotations = quat_normalize(quat_multiply(q_r[None, :], model.rotations))
    refit = sh.rotation_refit_matrix(r, model.l_max)
    sh_new = np.einsum("kl,nlc->nkc", refit, model.sh)
    return GaussianModel(positions, rotations, model.scales * s,
                         model.opacities, sh_new, model.kind,
                         None if model.scores is None else model.scores.copy(),
                         model.ply_normals @ r.T)


def pad_to_degree(model: GaussianModel, l_max: int) -> GaussianModel:
    """Zero-pad SH storage to a higher degree (reconstruct() unchanged)."""
    if l_max < model.l_max:
        raise ValueError("cannot pad to a lower degree")
    if l_max == model.l_max:
        return model
    k_new = (l_max + 1) ** 2
    sh_new = np.zeros((len(model), k_new, 3))
    sh_new[:, :model.sh.shape[1]] = model.sh
    return GaussianModel(model.positions, model.rotations, model.scales,
                         model.opacities, sh_new, model.kind, model.scores,
                         model.ply_normals)


def merge_models(obj: GaussianModel, scene: GaussianModel):
    """Concatenate scene followed by object.

    Returns (merged, object_indices); the lower-degree side is zero-padded.
    """
    l_max = max(obj.l_max, scene.l_max)
    obj = pad_to_degree(obj, l_max)
    scene = pad_to_degree(scene, l_max)
    if obj.kind != scene.kind:
        warnings.warn(f"merging kind={obj.kind} object into kind={scene.kind} scene",
                      stacklevel=2)
    scores = None
    if obj.scores is not None or scene.scores is not None:
        scores = np.concatenate([
            scene.scores if scene.scores is not None else np.zeros(len(scene)),
            obj.scores if obj.scores is not None else np.zeros(len(obj))])
    merged = GaussianModel(
        np.concatenate([scene.positions, obj.positions]),
        np.concatenate([scene.rotations, obj.rotations]),
        np.concatenate([scene.scales, obj.scales]),
        np.concatenate([scene.opacities, obj.opacities]),
        np.concatenate([scene.sh, obj.sh]),
        scene.kind, scores,
        np.concatenate([scene.ply_normals, obj.ply_normals]))
    return merged, np.arange(len(scene), len(scene) + len(obj))


def extract_by_score(model: GaussianModel, threshold: float,
                     allow_empty: bool = False) -> GaussianModel:
    """Subset with score strictly above threshold."""
    if model.scores is None:
        raise ValueError("model has no segmentation scores")
    keep = model.scores > threshold
    if not keep.any() and not allow_empty:
        raise ValueError(f"no Gaussians with score > {threshold}")
    return model.subset(keep)


def parse_placement(path):
    """Read a placement file: rotation quaternion, translation, scale.

    Grammar: 'key = values' lines, '#' comments. Keys: rotation (w x y z
    unit quaternion), translation (x y z), scale (single positive real).
    Missing keys default to identity. Returns (R, t, s).
    """
    values = {"rotation": [1.0, 0.0, 0.0, 0.0],
              "translation": [0.0, 0.0, 0.0],
              "scale": [1.0]}
    expected = {"rotation": 4, "translation": 3, "scale": 1}
    with open(path) as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected 'key = values'")
            key, _, rest = line.partition("=")
            key = key.strip().lower()
            if key not in values:
                raise ValueError(f"{path}:{ln}: unknown key {key!r}")
            try:
                nums = [float(v) for v in rest.split()]
            except ValueError as exc:
                raise ValueError(f"{path}:{ln}: {exc}") from None
            if len(nums) != expected[key]:
                raise ValueError(
                    f"{path}:{ln}: {key} needs {expected[key]} numbers, got {len(nums)}")
            values[key] = nums
    q = np.asarray(values["rotation"])
    if abs(np.linalg.norm(q) - 1.0) > 1e-6:
        raise ValueError(f"{path}: rotation quaternion must be unit length")
    s = values["scale"][0]
    if s <= 0:
        raise ValueError(f"{path}: scale must be positive")
    return quat_to_rotmat(q), np.asarray(values["translation"]), s
