"""Minimal dense-tensor reverse-mode differentiation engine."""

from .tensor import (
    Tensor,
    backward,
    debug_checks_enabled,
    enable_grad,
    grad,
    grad_enabled,
    no_grad,
    set_debug_checks,
)
from .ops import (
    absolute,
    add,
    add_scalar,
    broadcast_to,
    concat_channels,
    constant,
    conv2d,
    conv_transpose2d,
    dropout,
    instance_norm,
    instance_norm_graph,
    leaky_relu,
    mean,
    mul,
    neg,
    relu,
    reshape,
    rsqrt,
    scale,
    sigmoid,
    slice_channels,
    softplus,
    sub,
    sum_,
    tanh,
)
from .losses import bce_with_logits, l1, masked_l1, masked_mse
from .optim import Adam, adam_step, init_adam_state
from .gradcheck import check_gradients, numeric_gradient, relative_error

__all__ = [
    "Tensor", "backward", "grad", "no_grad", "enable_grad", "grad_enabled",
    "set_debug_checks", "debug_checks_enabled",
    "absolute", "add", "add_scalar", "broadcast_to", "concat_channels",
    "constant", "conv2d", "conv_transpose2d", "dropout", "instance_norm",
    "instance_norm_graph",
    "leaky_relu", "mean", "mul", "neg", "relu", "reshape", "rsqrt", "scale",
    "sigmoid", "slice_channels", "softplus", "sub", "sum_", "tanh",
    "bce_with_logits", "l1", "masked_l1", "masked_mse",
    "Adam", "adam_step", "init_adam_state",
    "check_gradients", "numeric_gradient", "relative_error",
]
