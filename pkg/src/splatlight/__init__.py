"""Relighting, shadowing, and segmentation for Gaussian splat scenes.

The pipeline moves a splat object between scenes: segment it out with 2D
masks, capture source and target environment maps, rescale its SH
appearance by the per-Gaussian lighting-transfer ratio, bake lobe shadows
onto the receiving scene, and render the merged result.
"""

from .envmap import (CubeMap, EquirectMap, cubemap_to_equirect, envmap_to_sh,
                     fill_missing, ldr_to_hdr, rotate_equirect, sh_to_envmap)
from .image_io import HdrFormatError, psnr, read_hdr, write_hdr
from .raster import Camera, RenderOutput, render, render_cubemap
from .reference import (DiffuseSurfacePoint, integrate_radiance,
                        make_lambertian_sphere, verify_product_formula)
from .sampling import SampleSet, sample_sphere
from .segmentation import MaskSet, extract, score
from .sh import (ProjectionError, ShCoeffs, clamped_cosine_zonal, eval_basis,
                 lambert_band_gains, project, reconstruct)
from .shadow import LightLobe, ShadowMap, bake, dominant_lobes, project_shadow
from .splats import (Gaussian, GaussianModel, PlyParseError, load_ply,
                     merge_models, normals_of, save_ply, transform_model)
from .transfer import TransferParams, relight, transfer_ratio

__version__ = "0.1.0"

__all__ = [
    "Camera", "CubeMap", "DiffuseSurfacePoint", "EquirectMap", "Gaussian",
    "GaussianModel", "HdrFormatError", "LightLobe", "MaskSet",
    "PlyParseError", "ProjectionError", "RenderOutput", "SampleSet",
    "ShCoeffs", "ShadowMap", "TransferParams", "bake", "clamped_cosine_zonal",
    "cubemap_to_equirect", "dominant_lobes", "envmap_to_sh", "eval_basis",
    "extract", "fill_missing", "integrate_radiance", "lambert_band_gains",
    "ldr_to_hdr", "load_ply", "make_lambertian_sphere", "merge_models",
    "normals_of", "project", "project_shadow", "psnr", "read_hdr",
    "reconstruct", "relight", "render", "render_cubemap", "rotate_equirect",
    "sample_sphere", "save_ply", "score", "sh_to_envmap",
    "transfer_ratio", "transform_model", "verify_product_formula",
    "write_hdr", "__version__",
]
