"""Infrared/visible image fusion toolkit.

A multi-scale convolutional fusion network trained unsupervised with a
mask-guided content loss, an SSIM loss, and a four-scale global feature loss
computed by a frozen windowed-attention extractor, plus the full quantitative
evaluation protocol (EN, SD, SF, VIF, Q^{AB/F}, MI over repeated random
trials).
"""

from .config import TrainConfig, TrialSpec, load_train_config
from .dataio import (
    ImagePair,
    NormalizedImage,
    PatchSet,
    extract_patches,
    load_image_pair,
    load_pair_directory,
    sample_test_pairs,
)
from .errors import IvfuseError
from .fusion_net import FusionNetConfig, MultiScaleFusionNet, build_fusion_net
from .global_features import (
    FeatureExtractorConfig,
    GlobalFeatureExtractor,
    build_feature_extractor,
)
from .losses import LossBreakdown, LossWeights, total_loss
from .metrics import MetricReport, evaluate
from .saliency import MaskParams, SaliencyMask, generate_mask, validate_mask
from .training import lr_at, sweep, train

__version__ = "0.1.0"

__all__ = [
    "TrainConfig",
    "TrialSpec",
    "load_train_config",
    "ImagePair",
    "NormalizedImage",
    "PatchSet",
    "extract_patches",
    "load_image_pair",
    "load_pair_directory",
    "sample_test_pairs",
    "IvfuseError",
    "FusionNetConfig",
    "MultiScaleFusionNet",
    "build_fusion_net",
    "FeatureExtractorConfig",
    "GlobalFeatureExtractor",
    "build_feature_extractor",
    "LossBreakdown",
    "LossWeights",
    "total_loss",
    "MetricReport",
    "evaluate",
    "MaskParams",
    "SaliencyMask",
    "generate_mask",
    "validate_mask",
    "lr_at",
    "sweep",
    "train",
    "__version__",
]
