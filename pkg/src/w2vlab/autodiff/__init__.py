"""Reverse-mode autodiff engine, layers, optimizer and training controller."""
from .tensor import (
    Parameter, ShapeError, TapeError, Tensor, activation, as_tensor, concat, dropout,
    getitem, layer_norm, linear, matmul, mean, mse, no_grad, relu, reshape, sigmoid, softmax,
    stack, swap_last, tanh, transpose, tsum,
)
from .nn import MLP, Linear, Module, uniform_fan_in
from .optim import CONTINUE, DECAY_LR, STOP, RAdam, TrainingController, TrainingError, controller_step
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import numeric_grad, relative_error

__all__ = [
    "Parameter", "ShapeError", "TapeError", "Tensor", "activation", "as_tensor", "concat",
    "dropout", "getitem", "layer_norm", "linear", "matmul", "mean", "mse", "no_grad", "relu", "reshape",
    "sigmoid", "softmax", "stack", "swap_last", "tanh", "transpose", "tsum",
    "MLP", "Linear", "Module", "uniform_fan_in",
    "CONTINUE", "DECAY_LR", "STOP", "RAdam", "TrainingController", "TrainingError",
    "controller_step", "load_checkpoint", "save_checkpoint", "numeric_grad", "relative_error",
]
