"""Evaluation metrics: masked RMSE per part on linear RGB and SSIM per image on
the luma of tonemapped images."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from skimage.metrics import structural_similarity

from .errors import DimensionMismatch, EmptyMask
from .imagefiles import tonemap

LUMA = np.array([0.2126, 0.7152, 0.0722])
SSIM_SIGMA = 1.5


def _same_shape(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def masked_rmse(photo, rendered, mask):
    photo, rendered = _same_shape(photo, rendered)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != photo.shape[:2]:
        raise DimensionMismatch(f"mask {mask.shape} does not match image {photo.shape[:2]}")
    if not mask.any():
        raise EmptyMask("RMSE over an empty mask")
    d = photo[mask] - rendered[mask]
    return float(np.sqrt(np.mean(d * d)))


def luma(image, exposure=1.0):
    return tonemap(image, exposure) @ LUMA


def ssim(photo, rendered, exposure=1.0):
    """SSIM with an 11x11 Gaussian window (sigma 1.5) on tonemapped luma."""
    photo, rendered = _same_shape(photo, rendered)
    return float(structural_similarity(luma(photo, exposure), luma(rendered, exposure), data_range=1.0,
                                       gaussian_weights=True, sigma=SSIM_SIGMA, use_sample_covariance=False))


@dataclass
class MetricsReport:
    method: str
    rmse: dict = field(default_factory=dict)     # part id -> masked RMSE
    ssim: dict = field(default_factory=dict)     # view index -> SSIM

    @property
    def mean_rmse(self):
        return float(np.mean(list(self.rmse.values()))) if self.rmse else None

    @property
    def mean_ssim(self):
        return float(np.mean(list(self.ssim.values()))) if self.ssim else None

    def as_dict(self):
        return {"method": self.method, "rmse": dict(sorted(self.rmse.items())),
                "ssim": {str(k): v for k, v in sorted(self.ssim.items())},
                "meanRmse": self.mean_rmse, "meanSsim": self.mean_ssim}


def evaluate(photos, renders, part_masks, method=""):
    """Metrics for aligned photo/render pairs.

    ``photos`` and ``renders`` map view index to (H, W, 3) images;
    ``part_masks`` maps part id to (view index, mask) for the RMSE.
    """
    report = MetricsReport(method)
    for v in sorted(photos):
        if v not in renders:
            raise DimensionMismatch(f"no render for view {v}")
        report.ssim[v] = ssim(photos[v], renders[v])
    for pid, (v, mask) in part_masks.items():
        report.rmse[pid] = masked_rmse(photos[v], renders[v], mask)
    return report
