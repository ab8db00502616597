"""Autodiff engine, equalizer models, Adam training and checkpoints."""

from .autodiff import Tensor, ShapeError, mse_loss
from .checkpoint import ModelCheckpoint
from .layers import (
    FCNN,
    FCNNConfig,
    TransformerConfig,
    TransformerEqualizer,
    build_model,
    fcnn_parameter_count,
    positional_encoding,
    transformer_parameter_count,
)
from .optim import Adam, AdamState, adam_step
from .training import TrainConfig, TrainingDivergedError, TrainResult, equalize, predict, train
