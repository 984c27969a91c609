"""Prediction-guided temporal BEV object detection on synthetic scenes.

Previous-frame features forecast current-frame objects; the forecast seeds
sparse object queries whose deformable cross-attention aggregates all
temporal features for the final detection head.
"""

from .alignment import ALIGNED, RAW_EGO, BEVFeature, SE2Transform, relative_transform, warp_bev
from .attention import TemporalDeformableAttention, attend_and_scatter, deform_attn
from .config import (
    EvalConfig,
    ExperimentConfig,
    ModelConfig,
    TrainingConfig,
    load_config,
    save_config,
)
from .encoder import BEVEncoder, encode_frame, encode_sequence
from .estimator import TemporalBEVDetector, check_episodes
from .evaluation import run_evaluation
from .heads import (
    DenseDetectionHead,
    DetectionBox,
    DetectionOutput,
    PredictionOutput,
    decode,
    detect,
    predict,
)
from .losses import LossReport, TargetMaps, build_targets, focal_loss, reg_loss, total_loss
from .metrics import MetricsReport, evaluate_detections
from .model import TemporalDetector
from .queries import QueryEncoder, QueryMask, QuerySet, class_agnostic_heatmap, select_queries
from .scenes import (
    Episode,
    EgoPose,
    Frame,
    GridSpec,
    SceneConfig,
    SceneObject,
    generate_dataset,
    generate_episode,
    load_dataset,
    render_observation,
    save_dataset,
)
from .training import load_checkpoint, save_checkpoint, train
from .validation import ConfigurationError

__version__ = "0.1.0"

__all__ = [
    "ALIGNED",
    "BEVEncoder",
    "BEVFeature",
    "ConfigurationError",
    "DenseDetectionHead",
    "DetectionBox",
    "DetectionOutput",
    "EgoPose",
    "Episode",
    "EvalConfig",
    "ExperimentConfig",
    "Frame",
    "GridSpec",
    "LossReport",
    "MetricsReport",
    "ModelConfig",
    "PredictionOutput",
    "QueryEncoder",
    "QueryMask",
    "QuerySet",
    "RAW_EGO",
    "SE2Transform",
    "SceneConfig",
    "SceneObject",
    "TargetMaps",
    "TemporalBEVDetector",
    "TemporalDeformableAttention",
    "TemporalDetector",
    "TrainingConfig",
    "attend_and_scatter",
    "build_targets",
    "check_episodes",
    "class_agnostic_heatmap",
    "decode",
    "deform_attn",
    "detect",
    "encode_frame",
    "encode_sequence",
    "evaluate_detections",
    "focal_loss",
    "generate_dataset",
    "generate_episode",
    "load_checkpoint",
    "load_config",
    "load_dataset",
    "predict",
    "reg_loss",
    "relative_transform",
    "render_observation",
    "run_evaluation",
    "save_checkpoint",
    "save_config",
    "save_dataset",
    "select_queries",
    "total_loss",
    "train",
    "warp_bev",
]
