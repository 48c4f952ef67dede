"""Minimal reverse-mode differentiation: tape, primitives, layers, Adam."""

from . import tensor
from .nn import (
    NonFiniteGradientError,
    ParameterStore,
    adam_step,
    bce_loss,
    init_linear,
    init_lstm,
    init_mlp,
    linear,
    load_checkpoint,
    lstm_cell,
    lstm_unroll,
    mlp,
    save_checkpoint,
    softmax_power_head,
)
from .tensor import Tape, Tensor, no_tape, set_debug

__all__ = [
    "tensor",
    "Tape",
    "Tensor",
    "no_tape",
    "set_debug",
    "ParameterStore",
    "NonFiniteGradientError",
    "adam_step",
    "bce_loss",
    "init_linear",
    "init_lstm",
    "init_mlp",
    "linear",
    "load_checkpoint",
    "lstm_cell",
    "lstm_unroll",
    "mlp",
    "save_checkpoint",
    "softmax_power_head",
]
