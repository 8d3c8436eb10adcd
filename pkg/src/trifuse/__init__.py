"""Tri-stream image forgery localization at desk scale.

RGB, frequency (blockwise DCT bands), and noise-residual streams feed
per-stage attention fusion and a progressive squeeze-excite decoder with six
supervised outputs. Includes a synthetic splice/copy-move data generator,
threshold-sweep metrics, and a training / robustness / ablation CLI.
"""

from .backbone import StageConfig, StagedBackbone, make_stage_config
from .config import DctConfig, ModelConfig, TrainConfig
from .decoder import Decoder, Predictions
from .losses import LossFlags, total_loss
from .model import TriFuseNet, build_model

__all__ = [
    "DctConfig",
    "Decoder",
    "LossFlags",
    "ModelConfig",
    "Predictions",
    "StageConfig",
    "StagedBackbone",
    "TrainConfig",
    "TriFuseNet",
    "build_model",
    "make_stage_config",
    "total_loss",
]
