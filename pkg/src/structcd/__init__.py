"""Bi-temporal change detection from structural image features.

The pipeline compares two co-registered acquisitions of the same area
through dense orientated-gradient descriptors rather than raw intensities,
making it robust to the radiometric gain/bias differences that sink naive
differencing. Per-pixel neighborhood correlation (r, a, b) and a
template-matching error feed a deterministic random forest; CVA and an
intensity-domain correlation baseline are included for comparison, along
with an evaluation harness and a synthetic scene generator.
"""

from .baselines import CvaParams, CvaResult, cva, nci_intensity, otsu_threshold
from .cfog import (
    CfogExtractor,
    CfogParams,
    FeatureStack,
    extract_cfog,
    gaussian_smooth,
    gradients,
    oriented_channels,
    smooth_and_normalize,
)
from .config import (
    ForestConfig,
    PipelineConfig,
    SamplingConfig,
    format_changes,
    load_config,
    parse_changes,
    scene_config_text,
)
from .evaluation import (
    ConfusionMatrix,
    MetricsReport,
    confusion,
    evaluate_masks,
    format_table,
    metrics,
)
from .forest import (
    ChangeForestClassifier,
    DecisionTree,
    Forest,
    load_forest,
    predict,
    predict_batch,
    predict_map,
    predict_tree,
    save_forest,
    train,
)
from .neighborhood import (
    MeMap,
    NeighborhoodFeatureExtractor,
    NeighborhoodParams,
    NsciMap,
    feature_image,
    matching_error,
    ncc_surface,
    nsci,
    window_stats,
)
from .raster import (
    BinaryMask,
    MultibandRaster,
    load_mask,
    load_raster,
    save_raster,
    to_intensity,
)
from .synth import ChangeRegion, SceneSpec, acceptance_scene, generate
from .validation import (
    DegenerateTrainingError,
    RasterFormatError,
    ShapeMismatchError,
)

__version__ = "0.1.0"

__all__ = [
    "BinaryMask",
    "CfogExtractor",
    "CfogParams",
    "ChangeForestClassifier",
    "ChangeRegion",
    "ConfusionMatrix",
    "CvaParams",
    "CvaResult",
    "DecisionTree",
    "DegenerateTrainingError",
    "FeatureStack",
    "Forest",
    "ForestConfig",
    "MeMap",
    "MetricsReport",
    "MultibandRaster",
    "NeighborhoodFeatureExtractor",
    "NeighborhoodParams",
    "NsciMap",
    "PipelineConfig",
    "RasterFormatError",
    "SamplingConfig",
    "SceneSpec",
    "ShapeMismatchError",
    "acceptance_scene",
    "confusion",
    "cva",
    "evaluate_masks",
    "extract_cfog",
    "feature_image",
    "format_changes",
    "format_table",
    "gaussian_smooth",
    "generate",
    "gradients",
    "load_config",
    "load_forest",
    "load_mask",
    "load_raster",
    "matching_error",
    "metrics",
    "ncc_surface",
    "nci_intensity",
    "nsci",
    "oriented_channels",
    "otsu_threshold",
    "parse_changes",
    "predict",
    "predict_batch",
    "predict_map",
    "predict_tree",
    "save_forest",
    "save_raster",
    "scene_config_text",
    "smooth_and_normalize",
    "to_intensity",
    "train",
    "window_stats",
]
