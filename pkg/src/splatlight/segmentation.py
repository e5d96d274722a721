"""Mask-driven object scoring and extraction.

Each Gaussian's score is its blend-weight mass inside the 2D masks,
normalized by total mask area, then max-normalized across the model to
[0, 1]. Scores computed here reflect only the final Gaussians: masses that
densification once split across parents are not recovered, so fine tendrils
of an object may score low and need a lower threshold.
"""

import numpy as np

from .raster import Camera, accumulate_mask_stats
from .splats import GaussianModel


class MaskSet:
    """Binary masks paired one-to-one with cameras of matching size."""

    __slots__ = ("masks", "cameras")

    def __init__(self, masks, cameras):
        if len(masks) != len(cameras):
            raise ValueError("need exactly one mask per camera")
        if not masks:
            raise ValueError("mask set must not be empty")
        self.masks = []
        self.cameras = list(cameras)
        for mask, cam in zip(masks, self.cameras):
            if not isinstance(cam, Camera):
                raise TypeError("cameras must be Camera instances")
            mask = np.asarray(mask)
            if mask.dtype != bool:
                mask = mask > 0
            if mask.shape != (cam.height, cam.width):
                raise ValueError(
                    f"mask shape {mask.shape} does not match camera "
                    f"{cam.height}x{cam.width}")
            self.masks.append(mask)

    def __len__(self) -> int:
        return len(self.masks)


def score(model: GaussianModel, mask_set: MaskSet) -> GaussianModel:
    """Attach per-Gaussian mask-support scores in [0, 1].

    Raw score: sum over views and pixels of mask * blend weight, divided by
    the total masked pixel count; an all-empty mask set yields all zeros.
    """
    numerators, denominator = accumulate_mask_stats(
        model, mask_set.cameras, mask_set.masks)
    if denominator == 0:
        scores = np.zeros(len(model))
    else:
        scores = numerators / denominator
        peak = scores.max()
        scores = scores / peak if peak > 0 else np.zeros(len(model))
    out = model.copy()
    out.scores = scores
    return out


def extract(model: GaussianModel, threshold: float = 0.5):
    """Split into (object, remainder) at score > threshold."""
    if model.scores is None:
        raise ValueError("model has no scores; run score() first")
    keep = model.scores > threshold
    return (model.subset(np.flatnonzero(keep)),
            model.subset(np.flatnonzero(~keep)))
