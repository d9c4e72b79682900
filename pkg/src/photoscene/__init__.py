"""Inverse rendering of indoor photos into procedural materials, UV transforms,
light intensities and exposures."""
from .bundle import FittedAssets, FittedPart, SceneBundle, load_bundle, load_fitted_assets, save_fitted_assets
from .errors import PhotosceneError
from .metrics import MetricsReport, evaluate, masked_rmse, ssim
from .pipeline import STAGES, PipelineConfig, StageError, render_view, run_baseline, run_pipeline
from .relight import LightCoeffs, refine_lighting, solve_light_coeffs
from .synthetic import SyntheticConfig, generate

__version__ = "0.1.0"

__all__ = [
    "FittedAssets",
    "FittedPart",
    "LightCoeffs",
    "MetricsReport",
    "PhotosceneError",
    "PipelineConfig",
    "STAGES",
    "SceneBundle",
    "StageError",
    "SyntheticConfig",
    "evaluate",
    "generate",
    "load_bundle",
    "load_fitted_assets",
    "masked_rmse",
    "refine_lighting",
    "render_view",
    "run_baseline",
    "run_pipeline",
    "save_fitted_assets",
    "solve_light_coeffs",
    "ssim",
]
