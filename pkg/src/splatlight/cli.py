"""Batch pipeline tool: capture, fit, relight, shadow, segment, render.

Subcommands chain the library stages over files on disk. Settings come
from an INI config file (sections [paths], [placement], [transfer],
[capture], [shadow], [segmentation], [render]); any command-line flag
overrides its config key. Every command writes diagnostics.json (stage
timings, clamp rates, lobe directions) into the output directory.

Exit codes: 0 success, 2 validation/config error, 3 numerical error,
4 file or format error.
"""

import argparse
import configparser
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import envmap as envmap_mod
from . import image_io, segmentation, sh, shadow, transfer
from .envmap import EquirectMap
from .raster import parse_cameras, render, render_cubemap
from .sampling import sample_sphere
from .splats import (GaussianModel, PlyParseError, load_ply, merge_models,
                     parse_placement, quat_to_rotmat, save_ply,
                     transform_model)


class ConfigError(ValueError):
    """Bad or missing configuration; maps to exit code 2."""


# ---------------------------------------------------------------- config --

def _floats(text: str, n: int, label: str) -> np.ndarray:
    parts = text.replace(",", " ").split()
    if len(parts) != n:
        raise ConfigError(f"{label}: expected {n} numbers, got {len(parts)}")
    try:
        return np.array([float(p) for p in parts])
    except ValueError as exc:
        raise ConfigError(f"{label}: {exc}") from None


def _bool(text: str, label: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{label}: expected a boolean, got {text!r}")


_KNOWN_KEYS = {
    "paths": {"object", "source_scene", "target_scene", "masks",
              "mask_cameras", "source_env", "target_env", "output"},
    "placement": {"file", "rotation", "translation", "scale"},
    "transfer": {"l_max", "n_samples", "epsilon", "tau_min", "tau_max",
                 "per_gaussian_shading"},
    "capture": {"center", "face_res", "height", "hdr_expand", "background",
                "gamma", "boost", "knee", "fill_threshold"},
    "shadow": {"k", "plane_point", "plane_normal", "res", "extent",
               "strength", "band"},
    "segmentation": {"threshold"},
    "render": {"cameras", "background"},
}


class PipelineConfig:
    """All pipeline settings with defaults; flags override file values."""

    def __init__(self):
        self.object_path = None
        self.source_scene = None
        self.target_scene = None
        self.masks_dir = None
        self.mask_cameras = None
        self.source_env = None
        self.target_env = None
        self.output_dir = "out"
        self.rotation = np.eye(3)
        self.translation = np.zeros(3)
        self.scale = 1.0
        self.transfer_kwargs = {}
        self.capture_center = None
        self.face_res = 256
        self.equirect_height = None
        self.hdr_expand = True
        self.background = np.zeros(3)
        self.gamma = 2.2
        self.boost = 4.0
        self.knee = 0.9
        self.fill_threshold = 0.5
        self.shadow_k = 1
        self.plane_point = None
        self.plane_normal = None
        self.shadow_res = 256
        self.shadow_extent = None
        self.shadow_strength = 0.7
        self.shadow_band = None
        self.seg_threshold = 0.5
        self.render_cameras = None
        self.render_background = np.zeros(3)

    # -- file parsing

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        cfg = cls()
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            with open(path) as fh:
                parser.read_file(fh, source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in parser.sections():
            if section not in _KNOWN_KEYS:
                raise ConfigError(f"{path}: unknown section [{section}]")
            for key in parser[section]:
                if key not in _KNOWN_KEYS[section]:
                    raise ConfigError(
                        f"{path}: unknown key {key!r} in [{section}]")
                value = parser[section][key].strip()
                if value:
                    cfg._set(section, key, value)
        return cfg

    def _set(self, section: str, key: str, value: str) -> None:
        label = f"[{section}] {key}"
        if section == "paths":
            attr = {"object": "object_path", "masks": "masks_dir",
                    "output": "output_dir"}.get(key, key)
            setattr(self, attr, value)
        elif section == "placement":
            if key == "file":
                r, t, s = parse_placement(value)
                self.rotation, self.translation, self.scale = r, t, s
            elif key == "rotation":
                quat = _floats(value, 4, label)
                norm = np.linalg.norm(quat)
                if abs(norm - 1.0) > 1e-6:
                    raise ConfigError(f"{label}: quaternion must be unit")
                self.rotation = quat_to_rotmat(quat / norm)
            elif key == "translation":
                self.translation = _floats(value, 3, label)
            else:
                self.scale = float(value)
                if self.scale <= 0:
                    raise ConfigError(f"{label}: scale must be positive")
        elif section == "transfer":
            if key in ("l_max", "n_samples"):
                self.transfer_kwargs[key] = int(value)
            elif key == "per_gaussian_shading":
                self.transfer_kwargs[key] = _bool(value, label)
            else:
                self.transfer_kwargs[key] = float(value)
        elif section == "capture":
            if key == "center":
                self.capture_center = _floats(value, 3, label)
            elif key == "face_res":
                self.face_res = int(value)
            elif key == "height":
                self.equirect_height = int(value)
            elif key == "hdr_expand":
                self.hdr_expand = _bool(value, label)
            elif key == "background":
                self.background = _floats(value, 3, label)
            else:
                setattr(self, key, float(value))
        elif section == "shadow":
            if key == "k":
                self.shadow_k = int(value)
            elif key == "plane_point":
                self.plane_point = _floats(value, 3, label)
            elif key == "plane_normal":
                self.plane_normal = _floats(value, 3, label)
            elif key == "res":
                self.shadow_res = int(value)
            elif key == "extent":
                self.shadow_extent = float(value)
            elif key == "strength":
                self.shadow_strength = float(value)
            else:
                self.shadow_band = float(value)
        elif section == "segmentation":
            self.seg_threshold = float(value)
        elif section == "render":
            if key == "cameras":
                self.render_cameras = value
            else:
                self.render_background = _floats(value, 3, label)

    # -- flag overrides

    def apply_args(self, args) -> None:
        direct = {
            "object": "object_path", "source_scene": "source_scene",
            "target_scene": "target_scene", "masks": "masks_dir",
            "mask_cameras": "mask_cameras", "source_env": "source_env",
            "target_env": "target_env", "output": "output_dir",
            "face_res": "face_res", "height": "equirect_height",
            "threshold": "seg_threshold", "k": "shadow_k",
            "res": "shadow_res", "extent": "shadow_extent",
            "strength": "shadow_strength", "render_cameras": "render_cameras",
        }
        for flag, attr in direct.items():
            value = getattr(args, flag, None)
            if value is not None:
                setattr(self, attr, value)
        if getattr(args, "placement", None) is not None:
            r, t, s = parse_placement(args.placement)
            self.rotation, self.translation, self.scale = r, t, s
        if getattr(args, "center", None) is not None:
            self.capture_center = _floats(args.center, 3, "--center")
        if getattr(args, "background", None) is not None:
            self.background = _floats(args.background, 3, "--background")
            self.render_background = self.background
        if getattr(args, "no_hdr", False):
            self.hdr_expand = False
        if getattr(args, "plane_point", None) is not None:
            self.plane_point = _floats(args.plane_point, 3, "--plane-point")
        if getattr(args, "plane_normal", None) is not None:
            self.plane_normal = _floats(args.plane_normal, 3, "--plane-normal")
        for key in ("l_max", "n_samples", "epsilon"):
            value = getattr(args, key, None)
            if value is not None:
                self.transfer_kwargs[key] = value

    def transfer_params(self) -> transfer.TransferParams:
        try:
            return transfer.TransferParams(**self.transfer_kwargs)
        except ValueError as exc:
            raise ConfigError(f"[transfer] {exc}") from None

    def validate(self, files=(), dirs=(), need=()) -> None:
        """Existence checks before any compute; raises ConfigError."""
        missing = []
        for attr in need:
            if getattr(self, attr) is None:
                missing.append(f"setting {attr!r} is required")
        for attr in files:
            path = getattr(self, attr)
            if path is not None and not os.path.isfile(path):
                missing.append(f"{attr}: no such file: {path}")
        for attr in dirs:
            path = getattr(self, attr)
            if path is not None and not os.path.isdir(path):
                missing.append(f"{attr}: no such directory: {path}")
        if missing:
            raise ConfigError("; ".join(missing))


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if getattr(args, "config", None) \
        else PipelineConfig()
    cfg.apply_args(args)
    return cfg


# ----------------------------------------------------------- diagnostics --

def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value


class Diagnostics:
    """Stage timings plus arbitrary facts, flushed to diagnostics.json."""

    def __init__(self, command: str, out_dir):
        self.data = {"command": command, "stages": {}}
        self.out_dir = Path(out_dir)

    def stage(self, name: str):
        diag = self

        class _Timer:
            def __enter__(self):
                self.start = time.perf_counter()

            def __exit__(self, exc_type, exc, tb):
                diag.data["stages"][name] = round(
                    time.perf_counter() - self.start, 4)

        return _Timer()

    def write(self) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        with open(self.out_dir / "diagnostics.json", "w") as fh:
            json.dump(_jsonable(self.data), fh, indent=2)
            fh.write("\n")


# ----------------------------------------------------------- lib helpers --

def capture_environment(scene: GaussianModel, center, face_res: int = 256,
                        height: int = None, background=(0.0, 0.0, 0.0),
                        expand: bool = True, gamma: float = 2.2,
                        boost: float = 4.0, knee: float = 0.9,
                        fill_threshold: float = 0.5,
                        cull=None) -> EquirectMap:
    """Render a cubemap at `center` and assemble the equirect environment.

    Uncovered texels are filled with the background color; unless expand is
    False the assembled map is treated as LDR and pushed through the
    highlight-boost curve.
    """
    cube = render_cubemap(scene, center, face_res, background, cull=cull)
    eq = envmap_mod.cubemap_to_equirect(
        cube, face_res if height is None else height)
    eq = envmap_mod.fill_missing(eq, threshold=fill_threshold,
                                 color=background)
    if expand:
        eq = EquirectMap(np.clip(eq.pixels, 0.0, 1.0))
        eq = envmap_mod.ldr_to_hdr(eq, gamma=gamma, boost=boost, knee=knee)
    return eq


def _load_masks(masks_dir, cameras):
    paths = sorted(Path(masks_dir).glob("*.png"))
    if len(paths) != len(cameras):
        raise ConfigError(
            f"{masks_dir}: found {len(paths)} mask PNGs for "
            f"{len(cameras)} cameras")
    return segmentation.MaskSet([image_io.read_mask_png(p) for p in paths],
                                cameras)


def _segment_scene(cfg: PipelineConfig, diag: Diagnostics):
    """Score the source scene against its masks and split off the object."""
    cfg.validate(files=("source_scene", "mask_cameras"), dirs=("masks_dir",),
                 need=("source_scene", "mask_cameras", "masks_dir"))
    scene = load_ply(cfg.source_scene)
    cameras = parse_cameras(cfg.mask_cameras)
    mask_set = _load_masks(cfg.masks_dir, cameras)
    scored = segmentation.score(scene, mask_set)
    obj, remainder = segmentation.extract(scored, cfg.seg_threshold)
    diag.data["segmentation"] = {
        "threshold": cfg.seg_threshold,
        "object_gaussians": len(obj),
        "remainder_gaussians": len(remainder),
    }
    return obj, remainder, scored


def _is_identity_placement(cfg: PipelineConfig) -> bool:
    return (np.allclose(cfg.rotation, np.eye(3))
            and np.allclose(cfg.translation, 0.0) and cfg.scale == 1.0)


def _resolve_envs(cfg: PipelineConfig, obj: GaussianModel, object_indices,
                  diag: Diagnostics):
    """Source and target environments, loaded or captured.

    L_S comes from source_env or a capture of source_scene at the object's
    original centroid (the object itself culled when it came from that
    scene); L_T from target_env or a capture of target_scene at the placed
    centroid.
    """
    capture_kwargs = dict(
        face_res=cfg.face_res, height=cfg.equirect_height,
        background=cfg.background, expand=cfg.hdr_expand, gamma=cfg.gamma,
        boost=cfg.boost, knee=cfg.knee, fill_threshold=cfg.fill_threshold)
    with diag.stage("capture_source"):
        if cfg.source_env:
            l_s = EquirectMap.load_hdr(cfg.source_env)
        elif cfg.source_scene:
            center = cfg.capture_center if cfg.capture_center is not None \
                else obj.centroid()
            l_s = capture_environment(load_ply(cfg.source_scene), center,
                                      cull=object_indices, **capture_kwargs)
        else:
            raise ConfigError("need source_env or source_scene for L_S")
    with diag.stage("capture_target"):
        placed = cfg.scale * (obj.centroid() @ cfg.rotation.T) + cfg.translation
        if cfg.target_env:
            l_t = EquirectMap.load_hdr(cfg.target_env)
        elif cfg.target_scene:
            l_t = capture_environment(load_ply(cfg.target_scene), placed,
                                      **capture_kwargs)
        else:
            raise ConfigError("need target_env or target_scene for L_T")
    return l_s, l_t


def _relight_object(cfg: PipelineConfig, obj: GaussianModel, l_s, l_t,
                    seed: int, diag: Diagnostics):
    """Placement transform plus SH transfer; returns the placed relit object."""
    params = cfg.transfer_params()
    with diag.stage("transform"):
        if not _is_identity_placement(cfg):
            obj = transform_model(obj, cfg.rotation, cfg.translation,
                                  cfg.scale)
            # the object's remembered lighting turns with it
            l_s = envmap_mod.rotate_equirect(l_s, cfg.rotation)
    with diag.stage("relight"):
        relit, stats = transfer.relight(obj, l_s, l_t, params, seed=seed)
    diag.data["relight"] = stats
    if stats["seconds"] > 60:
        print(f"warning: relight took {stats['seconds']:.1f}s (budget 60s)",
              file=sys.stderr)
    return relit


def _shadow_pass(cfg: PipelineConfig, obj: GaussianModel,
                 scene: GaussianModel, l_t, diag: Diagnostics):
    """Detect lobes from L_T, project the object, bake onto the scene."""
    cfg.validate(need=("plane_point", "plane_normal"))
    with diag.stage("shadows"):
        lobes = shadow.dominant_lobes(l_t, cfg.shadow_k)
        maps = []
        plane = (cfg.plane_point, cfg.plane_normal)
        for lobe in lobes:
            maps.append(shadow.project_shadow(
                obj, lobe, plane, res=cfg.shadow_res,
                extent=cfg.shadow_extent))
        baked = shadow.bake(scene, maps, lobes, cfg.shadow_strength,
                            band=cfg.shadow_band)
    diag.data["shadows"] = {
        "lobes": [{"direction": lobe.direction, "intensity": lobe.intensity,
                   "weight": lobe.weight} for lobe in lobes],
        "min_transmittance": [float(m.transmittance.min()) for m in maps],
        "strength": cfg.shadow_strength,
    }
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, map_ in enumerate(maps):
        map_.save_png(out_dir / f"shadow_{i}.png")
    return baked


def _render_views(cfg: PipelineConfig, model: GaussianModel,
                  diag: Diagnostics, save_hdr: bool = False) -> None:
    cfg.validate(files=("render_cameras",), need=("render_cameras",))
    cameras = parse_cameras(cfg.render_cameras)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with diag.stage("render"):
        for i, cam in enumerate(cameras):
            out = render(model, cam, cfg.render_background)
            image_io.write_png(out_dir / f"view_{i:03d}.png", out.color)
            if save_hdr:
                image_io.write_hdr(out_dir / f"view_{i:03d}.hdr",
                                   np.maximum(out.color, 0.0))
    diag.data["rendered_views"] = len(cameras)


# ----------------------------------------------------------- subcommands --

def cmd_capture_env(args) -> None:
    cfg = _load_config(args)
    cfg.object_path = args.scene
    cfg.validate(files=("object_path",))
    diag = Diagnostics("capture-env", Path(args.out).parent or ".")
    scene = load_ply(cfg.object_path)
    center = cfg.capture_center if cfg.capture_center is not None \
        else (scene.centroid() if len(scene) else np.zeros(3))
    with diag.stage("capture"):
        eq = capture_environment(
            scene, center, face_res=cfg.face_res, height=cfg.equirect_height,
            background=cfg.background, expand=cfg.hdr_expand, gamma=cfg.gamma,
            boost=cfg.boost, knee=cfg.knee, fill_threshold=cfg.fill_threshold)
    eq.save_hdr(args.out)
    diag.data["capture"] = {"center": center, "face_res": cfg.face_res,
                            "hdr_expand": cfg.hdr_expand,
                            "output": str(args.out)}
    diag.write()
    print(f"wrote {args.out} ({eq.pixels.shape[0]}x{eq.pixels.shape[1]})")


def cmd_fit_sh(args) -> None:
    if not os.path.isfile(args.env):
        raise ConfigError(f"no such file: {args.env}")
    env = EquirectMap.load_hdr(args.env)
    samples = sample_sphere(args.samples, strategy=args.strategy,
                            seed=args.seed, l_max=args.l_max)
    coeffs = envmap_mod.envmap_to_sh(env, args.l_max, samples=samples)
    payload = {"l_max": args.l_max, "coefficients": coeffs.data.tolist()}
    with open(args.out, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    if args.reproject:
        envmap_mod.sh_to_envmap(coeffs, args.height).save_hdr(args.reproject)
    dc = coeffs.data[0]
    print(f"wrote {args.out}; DC = [{dc[0]:.4g}, {dc[1]:.4g}, {dc[2]:.4g}]")


def cmd_segment(args) -> None:
    cfg = _load_config(args)
    diag = Diagnostics("segment", cfg.output_dir)
    obj, remainder, scored = _segment_scene(cfg, diag)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if len(obj):
        save_ply(obj, out_dir / "object.ply")
    if len(remainder):
        save_ply(remainder, out_dir / "remainder.ply")
    scores = scored.scores
    diag.data["segmentation"]["score_range"] = [float(scores.min()),
                                                float(scores.max())]
    diag.write()
    print(f"object: {len(obj)} Gaussians, remainder: {len(remainder)}")


def cmd_relight(args) -> None:
    cfg = _load_config(args)
    diag = Diagnostics("relight", cfg.output_dir)
    object_indices = None
    if cfg.object_path:
        cfg.validate(files=("object_path", "source_env", "target_env",
                            "source_scene", "target_scene"))
        obj = load_ply(cfg.object_path)
    else:
        cfg.validate(files=("source_env", "target_env", "source_scene",
                            "target_scene"))
        obj, _, scored = _segment_scene(cfg, diag)
        if not len(obj):
            raise ConfigError("segmentation produced an empty object; "
                              "lower [segmentation] threshold")
        object_indices = np.flatnonzero(scored.scores > cfg.seg_threshold)
    l_s, l_t = _resolve_envs(cfg, obj, object_indices, diag)
    relit = _relight_object(cfg, obj, l_s, l_t, args.seed, diag)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_ply(relit, out_dir / "relit.ply")
    diag.data["seed"] = args.seed
    diag.write()
    stats = diag.data["relight"]
    print(f"relit {stats['gaussians']} Gaussians in {stats['seconds']:.2f}s "
          f"-> {out_dir / 'relit.ply'}")


def cmd_shadows(args) -> None:
    cfg = _load_config(args)
    cfg.validate(files=("object_path", "target_env", "target_scene"),
                 need=("object_path",))
    diag = Diagnostics("shadows", cfg.output_dir)
    obj = load_ply(cfg.object_path)
    if cfg.target_env:
        l_t = EquirectMap.load_hdr(cfg.target_env)
    elif cfg.target_scene:
        l_t = capture_environment(
            load_ply(cfg.target_scene), obj.centroid(),
            face_res=cfg.face_res, height=cfg.equirect_height,
            background=cfg.background, expand=cfg.hdr_expand)
    else:
        raise ConfigError("need target_env or target_scene")
    scene = load_ply(cfg.target_scene) if cfg.target_scene else None
    baked = _shadow_pass(cfg, obj,
                         scene if scene is not None else obj.copy(), l_t,
                         diag)
    out_dir = Path(cfg.output_dir)
    if scene is not None:
        save_ply(baked, out_dir / "baked_scene.ply")
    diag.write()
    n_lobes = len(diag.data["shadows"]["lobes"])
    print(f"{n_lobes} lobe(s); maps in {out_dir}")


def cmd_render(args) -> None:
    cfg = _load_config(args)
    cfg.object_path = args.model
    cfg.render_cameras = args.cameras
    cfg.validate(files=("object_path",))
    diag = Diagnostics("render", cfg.output_dir)
    model = load_ply(cfg.object_path)
    _render_views(cfg, model, diag, save_hdr=args.hdr)
    diag.write()
    print(f"rendered {diag.data['rendered_views']} view(s) into "
          f"{cfg.output_dir}")


def cmd_insert(args) -> None:
    cfg = _load_config(args)
    cfg.validate(files=("object_path", "target_scene"),
                 need=("target_scene",))
    diag = Diagnostics("insert", cfg.output_dir)
    if cfg.object_path:
        obj = load_ply(cfg.object_path)
    else:
        obj, _, _ = _segment_scene(cfg, diag)
    with diag.stage("transform"):
        if not _is_identity_placement(cfg):
            obj = transform_model(obj, cfg.rotation, cfg.translation,
                                  cfg.scale)
    scene = load_ply(cfg.target_scene)
    merged, indices = merge_models(obj, scene)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_ply(merged, out_dir / "merged.ply")
    diag.data["insert"] = {"object_gaussians": len(obj),
                           "scene_gaussians": len(scene),
                           "object_index_start": int(indices[0])}
    diag.write()
    print(f"merged {len(obj)} object Gaussians into {len(scene)} -> "
          f"{out_dir / 'merged.ply'}")


def cmd_pipeline(args) -> None:
    cfg = _load_config(args)
    if not cfg.object_path:
        cfg.validate(files=("source_scene", "mask_cameras"),
                     dirs=("masks_dir",),
                     need=("source_scene", "mask_cameras", "masks_dir"))
    cfg.validate(files=("object_path", "source_scene", "target_scene",
                        "source_env", "target_env", "render_cameras"))
    if not cfg.target_scene:
        raise ConfigError("pipeline needs paths.target_scene")
    if not args.skip_shadows:
        cfg.validate(need=("plane_point", "plane_normal"))

    diag = Diagnostics("pipeline", cfg.output_dir)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    object_indices = None
    if cfg.object_path:
        obj = load_ply(cfg.object_path)
    else:
        obj, remainder, scored = _segment_scene(cfg, diag)
        if not len(obj):
            raise ConfigError("segmentation produced an empty object; "
                              "lower [segmentation] threshold")
        object_indices = np.flatnonzero(scored.scores > cfg.seg_threshold)
        if len(remainder):
            save_ply(remainder, out_dir / "remainder.ply")

    l_s, l_t = _resolve_envs(cfg, obj, object_indices, diag)
    relit = _relight_object(cfg, obj, l_s, l_t, args.seed, diag)
    save_ply(relit, out_dir / "relit.ply")

    scene = load_ply(cfg.target_scene)
    with diag.stage("merge"):
        merged, indices = merge_models(relit, scene)
    diag.data["merge"] = {"object_index_start": int(indices[0]),
                          "total_gaussians": len(merged)}

    if args.skip_shadows:
        final = merged
    else:
        final = _shadow_pass(cfg, relit, merged, l_t, diag)
    save_ply(final, out_dir / "scene.ply")

    if cfg.render_cameras:
        _render_views(cfg, final, diag)
    diag.data["seed"] = args.seed
    diag.write()
    print(f"pipeline complete -> {out_dir / 'scene.ply'}")


def _verify_zonals() -> float:
    """Closed-form clamped-cosine zonals vs Gauss-Legendre quadrature."""
    nodes, weights = np.polynomial.legendre.leggauss(64)
    x = 0.5 * (nodes + 1.0)  # cos(theta) over the lit hemisphere
    w = 0.5 * weights
    dirs = np.stack([np.sqrt(np.maximum(0.0, 1.0 - x * x)),
                     np.zeros_like(x), x], axis=1)
    basis = sh.eval_basis(4, dirs)
    worst = 0.0
    closed = sh.clamped_cosine_zonal(4)
    for l in range(5):
        quad = 2.0 * math.pi * float(np.sum(w * x * basis[:, sh.sh_index(l, 0)]))
        worst = max(worst, abs(quad - closed[l]))
    return worst


def _verify_projection(seed: int) -> float:
    rng = np.random.default_rng(seed)
    truth = sh.ShCoeffs(3, rng.normal(size=(16, 3)))
    samples = sample_sphere(256, seed=seed)
    recovered = sh.project(samples, sh.reconstruct(truth, samples.dirs))
    return float(np.abs(recovered.data - truth.data).max())


def _verify_cubemap(seed: int) -> float:
    rng = np.random.default_rng(seed)
    coeffs = sh.ShCoeffs(2, rng.normal(size=(9, 3)))
    coeffs.data[0] += 5.0  # keep radiance positive
    eq = envmap_mod.sh_to_envmap(coeffs, 128)
    eq = EquirectMap(np.maximum(eq.pixels, 0.0))
    cube = envmap_mod.CubeMap(np.stack([
        np.maximum(eq.sample(envmap_mod.face_dirs(f, 256)), 0.0)
        for f in range(6)]))
    back = envmap_mod.cubemap_to_equirect(cube, 128)
    return image_io.psnr(eq.pixels, back.pixels)


def cmd_verify(args) -> None:
    checks = []
    zonal_err = _verify_zonals()
    checks.append(("clamped-cosine zonals vs quadrature", zonal_err < 1e-6,
                   f"max abs err {zonal_err:.2e}"))
    proj_err = _verify_projection(args.seed)
    checks.append(("degree-3 projection round trip", proj_err < 1e-9,
                   f"max abs err {proj_err:.2e}"))
    cube_psnr = _verify_cubemap(args.seed)
    checks.append(("equirect/cubemap round trip", cube_psnr > 40.0,
                   f"PSNR {cube_psnr:.1f} dB"))
    if args.env:
        if not os.path.isfile(args.env):
            raise ConfigError(f"no such file: {args.env}")
        env = EquirectMap.load_hdr(args.env)
        from .reference import verify_product_formula
        err = verify_product_formula(env, l_max=3, n_dirs=32, n_quad=20000)
        checks.append(("product formula on given env", err < 0.05,
                       f"worst rel err {err:.3f}"))
    failed = 0
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name} ({detail})")
        failed += 0 if ok else 1
    if failed:
        raise sh.ProjectionError(f"{failed} verification check(s) failed")


# ----------------------------------------------------------------- entry --

def _add_common(sub, config: bool = True, seed: bool = True,
                output: bool = True):
    if config:
        sub.add_argument("--config", help="INI settings file")
    if seed:
        sub.add_argument("--seed", type=int, default=0,
                         help="RNG seed; fixed seed + config = fixed output")
    if output:
        sub.add_argument("-o", "--output", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splatlight",
        description="Relight, shadow, and composite Gaussian splat objects "
                    "between scenes.")
    subs = parser.add_subparsers(dest="command")

    p = subs.add_parser("capture-env",
                        help="render a scene into an equirect .hdr")
    p.add_argument("scene", help="scene PLY")
    p.add_argument("-o", "--out", required=True, help="output .hdr path")
    p.add_argument("--config")
    p.add_argument("--center", help="capture point 'x y z'")
    p.add_argument("--face-res", dest="face_res", type=int)
    p.add_argument("--height", type=int, help="equirect height")
    p.add_argument("--background", help="'r g b' fill color")
    p.add_argument("--no-hdr", action="store_true",
                   help="skip the LDR-to-HDR expansion")
    p.set_defaults(func=cmd_capture_env)

    p = subs.add_parser("fit-sh", help="project an .hdr to SH coefficients")
    p.add_argument("env", help="input .hdr")
    p.add_argument("-o", "--out", required=True, help="output JSON path")
    p.add_argument("--l-max", dest="l_max", type=int, default=3)
    p.add_argument("--samples", type=int, default=5000)
    p.add_argument("--strategy", default="equal_area",
                   choices=("equal_area", "equirect_sin_weighted",
                            "uniform_uv"))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--reproject", help="also write the SH-smoothed .hdr here")
    p.add_argument("--height", type=int, default=128,
                   help="height of the reprojected map")
    p.set_defaults(func=cmd_fit_sh)

    p = subs.add_parser("segment", help="split a scene by mask support")
    _add_common(p, seed=False)
    p.add_argument("--source-scene", dest="source_scene", help="scene PLY")
    p.add_argument("--masks", help="directory of mask PNGs (name-sorted)")
    p.add_argument("--mask-cameras", dest="mask_cameras",
                   help="camera list file")
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_segment)

    p = subs.add_parser("relight", help="transfer an object between lightings")
    _add_common(p)
    p.add_argument("--object", help="object PLY (skips segmentation)")
    p.add_argument("--source-scene", dest="source_scene")
    p.add_argument("--target-scene", dest="target_scene")
    p.add_argument("--source-env", dest="source_env", help="L_S .hdr")
    p.add_argument("--target-env", dest="target_env", help="L_T .hdr")
    p.add_argument("--masks")
    p.add_argument("--mask-cameras", dest="mask_cameras")
    p.add_argument("--placement", help="placement transform file")
    p.add_argument("--center", help="capture point override 'x y z'")
    p.add_argument("--no-hdr", action="store_true")
    p.add_argument("--l-max", dest="l_max", type=int)
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--epsilon", type=float)
    p.set_defaults(func=cmd_relight)

    p = subs.add_parser("shadows", help="project and bake lobe shadows")
    _add_common(p, seed=False)
    p.add_argument("--object", help="occluder PLY")
    p.add_argument("--target-scene", dest="target_scene",
                   help="receiver scene PLY")
    p.add_argument("--target-env", dest="target_env", help="L_T .hdr")
    p.add_argument("--k", type=int, help="number of lobes")
    p.add_argument("--plane-point", dest="plane_point", help="'x y z'")
    p.add_argument("--plane-normal", dest="plane_normal", help="'x y z'")
    p.add_argument("--res", type=int, help="shadow map resolution")
    p.add_argument("--extent", type=float, help="shadow map size")
    p.add_argument("--strength", type=float)
    p.set_defaults(func=cmd_shadows)

    p = subs.add_parser("render", help="render PNG views of a model")
    p.add_argument("model", help="model PLY")
    p.add_argument("--cameras", required=True, help="camera list file")
    p.add_argument("-o", "--output", help="output directory")
    p.add_argument("--config")
    p.add_argument("--background", help="'r g b'")
    p.add_argument("--hdr", action="store_true",
                   help="also write linear .hdr per view")
    p.set_defaults(func=cmd_render)

    p = subs.add_parser("insert",
                        help="place an object into a scene (no relight)")
    _add_common(p, seed=False)
    p.add_argument("--object")
    p.add_argument("--source-scene", dest="source_scene")
    p.add_argument("--masks")
    p.add_argument("--mask-cameras", dest="mask_cameras")
    p.add_argument("--target-scene", dest="target_scene")
    p.add_argument("--placement")
    p.set_defaults(func=cmd_insert)

    p = subs.add_parser("pipeline",
                        help="segment, relight, merge, shadow, render")
    _add_common(p)
    p.add_argument("--object")
    p.add_argument("--source-scene", dest="source_scene")
    p.add_argument("--target-scene", dest="target_scene")
    p.add_argument("--source-env", dest="source_env")
    p.add_argument("--target-env", dest="target_env")
    p.add_argument("--masks")
    p.add_argument("--mask-cameras", dest="mask_cameras")
    p.add_argument("--placement")
    p.add_argument("--skip-shadows", action="store_true",
                   help="stop after the merge; no lobe detection or bake")
    p.add_argument("--no-hdr", action="store_true")
    p.set_defaults(func=cmd_pipeline)

    p = subs.add_parser("verify", help="run built-in numerical self-checks")
    p.add_argument("--env", help="optional .hdr for the product-formula check")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_help()
        return 2
    try:
        args.func(args)
        return 0
    except (image_io.HdrFormatError, PlyParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (sh.ProjectionError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ValueError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
