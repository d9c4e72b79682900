"""Homogeneous median materials: the pixel-median and inverse-render-median
baselines, also used for parts too small to optimize."""
from __future__ import annotations

import numpy as np

from ..errors import EmptyMask, MissingPredictions
from ..matgraph import get_template

PIXEL_MEDIAN = "pixelMedian"
INV_RENDER_MEDIAN = "invRenderMedian"
BASELINE_ROUGHNESS = 0.7
HOMOGENEOUS = "homogeneous"


def median_material(mask, source=PIXEL_MEDIAN, photo=None, albedo_pred=None, roughness_pred=None):
    """(albedo RGB, roughness) medians over ``mask``.

    ``photoPixels`` takes the per-channel median of the photo and fixes the
    roughness; ``invRenderMaps`` takes medians of the predicted maps.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyMask("median material of an empty mask")
    if source in (PIXEL_MEDIAN, "photoPixels"):
        if photo is None:
            raise ValueError("pixel median needs a photo")
        albedo = np.median(np.asarray(photo)[mask], axis=0)
        return albedo, BASELINE_ROUGHNESS
    if source in (INV_RENDER_MEDIAN, "invRenderMaps"):
        if albedo_pred is None or roughness_pred is None:
            raise MissingPredictions("inverse-render median needs albedo and roughness predictions")
        albedo = np.median(np.asarray(albedo_pred)[mask], axis=0)
        rough = np.asarray(roughness_pred)
        rough = rough[..., 0] if rough.ndim == 3 else rough
        return albedo, float(np.median(rough[mask]))
    raise ValueError(f"unknown median source {source!r}")


def homogeneous_theta(albedo, roughness):
    """Homogeneous-template parameters reproducing a constant material exactly
    (zero albedo offset)."""
    t = get_template(HOMOGENEOUS)
    values = [albedo[0], albedo[1], albedo[2], roughness]
    theta = np.full(t.n_params, 0.5)
    for i, p in enumerate(t.params):
        theta[i] = (float(np.clip(values[i], p.lower, p.upper)) - p.lower) / (p.upper - p.lower)
    return theta
