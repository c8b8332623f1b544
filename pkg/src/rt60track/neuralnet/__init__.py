"""CRNN estimator with hand-written forward and backward passes."""

from .checkpoint import load_model, save_model
from .model import (
    DEFAULT_ENCODER,
    ConvSpec,
    CrnnModel,
    EncoderSpec,
    analysis_window_s,
    output_times,
    receptive_field,
)
from .train import RMSprop, TrainConfig, TrainResult, mse_loss, rmsprop_step, train

__all__ = [
    "DEFAULT_ENCODER",
    "ConvSpec",
    "CrnnModel",
    "EncoderSpec",
    "RMSprop",
    "TrainConfig",
    "TrainResult",
    "analysis_window_s",
    "load_model",
    "mse_loss",
    "output_times",
    "receptive_field",
    "rmsprop_step",
    "save_model",
    "train",
]
