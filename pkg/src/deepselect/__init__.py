"""Supervised best-view camera selection from synchronized multi-camera video."""

__version__ = "0.1.0"

from .losses import LossConfig, binary_cross_entropy, dice_score, focal_loss, label_imbalance
from .model import ModelConfig, MultiCamSequence, SelectionOutput, forward
from .nn import ParamStore, init_params

__all__ = [
    "LossConfig",
    "ModelConfig",
    "MultiCamSequence",
    "ParamStore",
    "SelectionOutput",
    "binary_cross_entropy",
    "dice_score",
    "focal_loss",
    "forward",
    "init_params",
    "label_imbalance",
]
