"""Mask-driven scoring and extraction tests.

Two well-separated clusters viewed perpendicular to their separation axis:
masks drawn over one cluster must score it high and the other near zero.
"""

import numpy as np
import pytest

from splatlight.raster import Camera, render
from splatlight.segmentation import MaskSet, extract, score
from splatlight.splats import GaussianModel
from conftest import random_model


def two_cluster_scene(seed=17, na=25, nb=30, spread=0.5):
    rng = np.random.default_rng(seed)
    pa = rng.uniform(-spread, spread, size=(na, 3)) + [0.0, 0.0, 2.0]
    pb = rng.uniform(-spread, spread, size=(nb, 3)) + [0.0, 0.0, -2.0]
    n = na + nb
    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    coeffs = np.full((n, 1, 3), 1.5)
    return GaussianModel(np.concatenate([pa, pb]), quats,
                         np.full((n, 3), 0.06), np.full(n, 0.7), coeffs), na


def cluster_views(width=96, height=96):
    """Cameras orbiting in the plane perpendicular to the cluster axis."""
    eyes = [(6.0, 0.0, 0.0), (0.0, 6.0, 0.0), (-6.0, 0.0, 0.0),
            (4.2, 4.2, 0.0)]
    return [Camera.looking_at(e, (0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0),
                              fov_deg=55.0, width=width, height=height)
            for e in eyes]


def masks_for_cluster(model, indices, cams, alpha_cut=0.2):
    """Render only the target cluster and threshold its alpha as the mask."""
    target = model.subset(indices)
    return [render(target, cam).alpha > alpha_cut for cam in cams]


def test_mask_set_validation():
    cams = cluster_views()
    good = [np.zeros((96, 96), dtype=bool) for _ in cams]
    ms = MaskSet(good, cams)
    assert len(ms) == len(cams)
    with pytest.raises(ValueError):
        MaskSet(good[:2], cams)
    with pytest.raises(ValueError):
        MaskSet([], [])
    with pytest.raises(TypeError):
        MaskSet(good, ["not a camera"] * len(cams))
    with pytest.raises(ValueError):
        MaskSet([np.zeros((4, 4))] + good[1:], cams)
    # integer masks coerce to boolean
    ints = [np.zeros((96, 96), dtype=np.uint8) for _ in cams]
    ints[0][3, 3] = 255
    ms2 = MaskSet(ints, cams)
    assert ms2.masks[0].dtype == bool and ms2.masks[0][3, 3]


def test_scores_separate_clusters():
    model, na = two_cluster_scene()
    cams = cluster_views()
    masks = masks_for_cluster(model, np.arange(na), cams)
    scored = score(model, MaskSet(masks, cams))
    a_scores = scored.scores[:na]
    b_scores = scored.scores[na:]
    assert a_scores.min() > 0.5, f"cluster A floor {a_scores.min():.3f}"
    assert b_scores.max() < 0.05, f"cluster B leak {b_scores.max():.3f}"
    assert scored.scores.max() == 1.0
    # input model is untouched
    assert model.scores is None


def test_empty_masks_score_zero():
    model, _ = two_cluster_scene()
    cams = cluster_views()
    empty = [np.zeros((96, 96), dtype=bool) for _ in cams]
    scored = score(model, MaskSet(empty, cams))
    assert np.all(scored.scores == 0.0)


def test_extract_partitions_exactly():
    model, na = two_cluster_scene()
    cams = cluster_views()
    masks = masks_for_cluster(model, np.arange(na), cams)
    scored = score(model, MaskSet(masks, cams))
    obj, rest = extract(scored, threshold=0.5)
    assert len(obj) + len(rest) == len(model)
    assert len(obj) == na
    assert np.array_equal(obj.positions, model.positions[:na])
    assert np.array_equal(rest.positions, model.positions[na:])
    with pytest.raises(ValueError):
        extract(random_model(0, 4), threshold=0.5)


def test_extract_empty_side_is_legal():
    model, _ = two_cluster_scene()
    cams = cluster_views()
    empty = [np.zeros((96, 96), dtype=bool) for _ in cams]
    scored = score(model, MaskSet(empty, cams))
    obj, rest = extract(scored, threshold=0.5)
    assert len(obj) == 0 and len(rest) == len(model)
