"""Material fitting: losses, graph selection, optimization and median baselines."""
from .baselines import (
    BASELINE_ROUGHNESS,
    INV_RENDER_MEDIAN,
    PIXEL_MEDIAN,
    homogeneous_theta,
    median_material,
)
from .losses import (
    FeatureBank,
    LossTarget,
    LossWeights,
    default_bank,
    feature_loss,
    masked_stats,
    stat_loss,
    total_loss,
)
from .optimize import (
    Adam,
    FitResult,
    MaterialObjective,
    MaterialOptConfig,
    PhiGrid,
    fitted_maps,
    optimize_material,
    reoptimize_material,
    search_phi,
)
from .scene import PartScene, final_roughness, shade_textures
from .selection import GraphSelectionConfig, SelectionResult, select_graph

__all__ = [
    "Adam",
    "BASELINE_ROUGHNESS",
    "FeatureBank",
    "FitResult",
    "GraphSelectionConfig",
    "INV_RENDER_MEDIAN",
    "LossTarget",
    "LossWeights",
    "MaterialObjective",
    "MaterialOptConfig",
    "PIXEL_MEDIAN",
    "PartScene",
    "PhiGrid",
    "SelectionResult",
    "default_bank",
    "feature_loss",
    "final_roughness",
    "fitted_maps",
    "homogeneous_theta",
    "masked_stats",
    "median_material",
    "optimize_material",
    "reoptimize_material",
    "search_phi",
    "select_graph",
    "shade_textures",
    "stat_loss",
    "total_loss",
]
