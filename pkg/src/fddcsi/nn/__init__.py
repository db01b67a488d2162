"""Small numpy network substrate: layer graphs, exact gradients, Adam."""

from .gradcheck import gradient_check, layer_check_specs
from .layers import KINDS, n_params
from .model import (
    Cache,
    GraphBuilder,
    Layer,
    ModelSpec,
    TrainedModel,
    backward,
    extract,
    forward,
    init_model,
    load_model,
    predict,
    save_model,
)
from .train import AdamState, Schedule, TrainingDivergedError, adam_step, evaluate_loss, mse_loss, train

__all__ = [
    "KINDS",
    "AdamState",
    "Cache",
    "GraphBuilder",
    "Layer",
    "ModelSpec",
    "Schedule",
    "TrainedModel",
    "TrainingDivergedError",
    "adam_step",
    "backward",
    "evaluate_loss",
    "extract",
    "forward",
    "gradient_check",
    "init_model",
    "layer_check_specs",
    "load_model",
    "mse_loss",
    "n_params",
    "predict",
    "save_model",
    "train",
]
