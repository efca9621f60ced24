"""Ensemble skin-lesion diagnosis: detection, multi-model classification,
soft voting, and class activation explanations."""

from .classify import (
    ClassDistribution,
    ClassifierModel,
    ModelRegistry,
    classify,
    load_model,
    load_registry,
    save_model,
)
from .detect import BBox, DetectorModel, detect_lesions, iou
from .ensemble import Diagnosis, EnsembleConfig, align_classes, diagnose, soft_vote
from .errors import EnselError
from .explain import CamResult, cam_overlay, grad_cam
from .imaging import ImageU8, decode, encode
from .rng import Rng
from .timing import LatencyStats, StageTimer, TimingBreakdown, summarize
from .train import (
    LabeledSample,
    SyntheticSpec,
    TrainConfig,
    generate_synthetic,
    train_classifier,
    train_detector,
)

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "CamResult",
    "ClassDistribution",
    "ClassifierModel",
    "Diagnosis",
    "DetectorModel",
    "EnselError",
    "EnsembleConfig",
    "ImageU8",
    "LabeledSample",
    "LatencyStats",
    "ModelRegistry",
    "Rng",
    "StageTimer",
    "SyntheticSpec",
    "TimingBreakdown",
    "TrainConfig",
    "align_classes",
    "cam_overlay",
    "classify",
    "decode",
    "detect_lesions",
    "diagnose",
    "encode",
    "generate_synthetic",
    "grad_cam",
    "iou",
    "load_model",
    "load_registry",
    "save_model",
    "soft_vote",
    "summarize",
    "train_classifier",
    "train_detector",
    "__version__",
]
