"""Differentiable numeric substrate: tensors, GRU cell, SGD, gradient checks, checkpoints."""

from rlst.nn_core.checkpoint import CheckpointError
from rlst.nn_core.layers import gru_step, gru_step_values, masked_step
from rlst.nn_core.optim import DEFAULT_CLIP_NORM, grad_check, sgd_step
from rlst.nn_core.params import ConfigurationError, GruParams, ParameterSet, uniform_init
from rlst.nn_core.tensor import (
    LOG_FLOOR,
    PROB_FLOOR,
    NumericalError,
    Tensor,
    cross_entropy,
    no_grad,
    softmax,
)

__all__ = [
    "CheckpointError",
    "ConfigurationError",
    "DEFAULT_CLIP_NORM",
    "GruParams",
    "LOG_FLOOR",
    "NumericalError",
    "PROB_FLOOR",
    "ParameterSet",
    "Tensor",
    "cross_entropy",
    "grad_check",
    "gru_step",
    "gru_step_values",
    "masked_step",
    "no_grad",
    "sgd_step",
    "softmax",
    "uniform_init",
]
