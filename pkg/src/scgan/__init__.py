"""Unpaired x4 face super-resolution with learned degradation branches."""

from .losses import LossWeights, composite_losses
from .networks import ArchConfig
from .training import TrainConfig, cosine_lr, train, train_step
from .variants import ModelBundle, VariantSpec, build_models

__all__ = [
    "ArchConfig",
    "LossWeights",
    "ModelBundle",
    "TrainConfig",
    "VariantSpec",
    "build_models",
    "composite_losses",
    "cosine_lr",
    "train",
    "train_step",
]
__version__ = "0.1.0"
