"""Minimal NCHW tensor engine with tape-based reverse-mode differentiation."""
from . import ops
from .gradcheck import GradCheckReport, grad_check
from .nn import (BatchNorm2d, Conv2d, Dense, Module, Parameter, SeparableConv2d,
                 param_count)
from .ops import (add, avg_pool2d, batch_norm, bce_loss, channel_max, channel_mean,
                  concat_channels, conv2d, dense, depthwise_conv2d, flatten,
                  global_avg_pool, global_max_pool, max_pool2d, mul_broadcast,
                  pointwise_conv2d, relu, reshape, sigmoid, sum_all)
from .optim import SGD, Adam
from .tensor import Tape, Tensor, apply, backward, default_dtype, precision, zero_grads
from .debug import dump_csv, load_csv

__all__ = [
    "Adam", "BatchNorm2d", "Conv2d", "Dense", "GradCheckReport", "Module", "Parameter",
    "SGD", "SeparableConv2d", "Tape", "Tensor", "add", "apply", "avg_pool2d", "backward",
    "batch_norm", "bce_loss", "channel_max", "channel_mean", "concat_channels", "conv2d",
    "default_dtype", "dense", "depthwise_conv2d", "dump_csv", "flatten", "global_avg_pool",
    "global_max_pool", "grad_check", "load_csv", "max_pool2d", "mul_broadcast", "ops",
    "param_count", "pointwise_conv2d", "precision", "relu", "reshape", "sigmoid",
    "sum_all", "zero_grads",
]
