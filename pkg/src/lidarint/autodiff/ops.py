"""Differentiable operations.

Primitives carry hand-written backward rules; the rules themselves are
built from these same ops, which is what makes gradient-of-gradient work
along input chains. Reductions accumulate in float64 before casting back
to the storage dtype. Shape checks raise ValueError.
"""

from __future__ import annotations

import numpy as np

from . import _conv
from .tensor import Tensor, make_output

__all__ = [
    "constant", "add", "sub", "neg", "mul", "scale", "add_scalar",
    "relu", "leaky_relu", "tanh", "sigmoid", "softplus", "absolute",
    "rsqrt", "reshape", "broadcast_to", "sum_", "mean",
    "concat_channels", "slice_channels", "dropout",
    "conv2d", "conv_transpose2d", "instance_norm", "instance_norm_graph",
]


def constant(value, dtype=None) -> Tensor:
    """Untracked tensor (masks, targets, plain numbers)."""
    arr = np.asarray(value)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return Tensor(arr)


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# --- arithmetic -------------------------------------------------------------

def add(x, y) -> Tensor:
    x, y = _t(x), _t(y)
    _same_shape(x, y, "add")

    def vjp(out, g, need):
        return (g if need[0] else None, g if need[1] else None)

    return make_output(x.data + y.data, (x, y), vjp)


def neg(x) -> Tensor:
    x = _t(x)

    def vjp(out, g, need):
        return (neg(g),)

    return make_output(-x.data, (x,), vjp)


def sub(x, y) -> Tensor:
    return add(_t(x), neg(_t(y)))


def mul(x, y) -> Tensor:
    x, y = _t(x), _t(y)
    _same_shape(x, y, "mul")

    def vjp(out, g, need):
        return (mul(g, y) if need[0] else None,
                mul(g, x) if need[1] else None)

    return make_output(x.data * y.data, (x, y), vjp)


def scale(x, c: float) -> Tensor:
    x = _t(x)
    c = float(c)

    def vjp(out, g, need):
        return (scale(g, c),)

    return make_output(x.data * x.dtype.type(c), (x,), vjp)


def add_scalar(x, c: float) -> Tensor:
    x = _t(x)

    def vjp(out, g, need):
        return (g,)

    return make_output(x.data + x.dtype.type(float(c)), (x,), vjp)


# --- activations ------------------------------------------------------------

def relu(x) -> Tensor:
    x = _t(x)
    mask = (x.data > 0).astype(x.dtype)

    def vjp(out, g, need):
        return (mul(g, constant(mask)),)

    return make_output(x.data * mask, (x,), vjp)


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = _t(x)
    factor = np.where(x.data > 0, x.dtype.type(1), x.dtype.type(slope))

    def vjp(out, g, need):
        return (mul(g, constant(factor)),)

    return make_output(x.data * factor, (x,), vjp)


def tanh(x) -> Tensor:
    x = _t(x)

    def vjp(out, g, need):
        return (mul(g, add_scalar(neg(mul(out, out)), 1.0)),)

    return make_output(np.tanh(x.data), (x,), vjp)


def sigmoid(x) -> Tensor:
    x = _t(x)
    # exp(-|x|) form never overflows
    e = np.exp(-np.abs(x.data))
    out_data = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)

    def vjp(out, g, need):
        return (mul(g, mul(out, add_scalar(neg(out), 1.0))),)

    return make_output(out_data, (x,), vjp)


def softplus(x) -> Tensor:
    """log(1 + exp(x)) via logaddexp; derivative is the sigmoid."""
    x = _t(x)

    def vjp(out, g, need):
        return (mul(g, sigmoid(x)),)

    return make_output(np.logaddexp(x.dtype.type(0), x.data), (x,), vjp)


def absolute(x) -> Tensor:
    x = _t(x)
    sign = np.sign(x.data)

    def vjp(out, g, need):
        return (mul(g, constant(sign)),)

    return make_output(np.abs(x.data), (x,), vjp)


def rsqrt(x) -> Tensor:
    """x ** -0.5 for strictly positive inputs."""
    x = _t(x)

    def vjp(out, g, need):
        # d/dx x^-1/2 = -1/2 x^-3/2 = -out^3 / 2
        return (scale(mul(g, mul(out, mul(out, out))), -0.5),)

    return make_output(1.0 / np.sqrt(x.data), (x,), vjp)


# --- shape ------------------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = _t(x)
    shape = tuple(shape)
    old = x.shape

    def vjp(out, g, need):
        return (reshape(g, old),)

    return make_output(x.data.reshape(shape), (x,), vjp)


def broadcast_to(x, shape) -> Tensor:
    """Broadcast along size-1 axes; ndim must already match."""
    x = _t(x)
    shape = tuple(shape)
    if len(shape) != x.data.ndim:
        raise ValueError(f"broadcast_to: rank mismatch {x.shape} -> {shape}")
    axes = tuple(i for i, (a, b) in enumerate(zip(x.shape, shape)) if a != b)
    for i in axes:
        if x.shape[i] != 1:
            raise ValueError(f"broadcast_to: cannot expand axis {i} of {x.shape} to {shape}")

    def vjp(out, g, need):
        return (sum_(g, axis=axes, keepdims=True) if axes else g,)

    return make_output(np.broadcast_to(x.data, shape).copy(), (x,), vjp)


def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _t(x)
    data = np.sum(x.data, axis=axis, keepdims=keepdims, dtype=np.float64)
    data = np.asarray(data, dtype=x.dtype)
    in_shape = x.shape
    if axis is None:
        red_axes = tuple(range(len(in_shape)))
    else:
        red_axes = axis if isinstance(axis, tuple) else (axis,)
        red_axes = tuple(a % len(in_shape) for a in red_axes)

    def vjp(out, g, need):
        if not keepdims:
            kept = tuple(1 if i in red_axes else s for i, s in enumerate(in_shape))
            g = reshape(g, kept)
        return (broadcast_to(g, in_shape),)

    return make_output(data, (x,), vjp)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _t(x)
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for a in axes:
            count *= x.shape[a]
    return scale(sum_(x, axis=axis, keepdims=keepdims), 1.0 / count)


# --- channel plumbing -------------------------------------------------------

def concat_channels(parts) -> Tensor:
    """Concatenate (N, C_i, H, W) tensors along the channel axis."""
    parts = [_t(p) for p in parts]
    if len(parts) < 1:
        raise ValueError("concat_channels: nothing to concatenate")
    first = parts[0]
    for p in parts[1:]:
        if p.data.ndim != 4 or p.shape[0] != first.shape[0] or p.shape[2:] != first.shape[2:]:
            raise ValueError(f"concat_channels: incompatible shapes {first.shape} vs {p.shape}")
    widths = [p.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def vjp(out, g, need):
        return tuple(
            slice_channels(g, offsets[i], offsets[i + 1]) if need[i] else None
            for i in range(len(parts))
        )

    return make_output(np.concatenate([p.data for p in parts], axis=1), tuple(parts), vjp)


def slice_channels(x, start: int, stop: int) -> Tensor:
    x = _t(x)
    if x.data.ndim != 4:
        raise ValueError("slice_channels expects (N, C, H, W)")
    n, c, h, w = x.shape
    if not (0 <= start < stop <= c):
        raise ValueError(f"slice_channels: bad range [{start}, {stop}) for C={c}")

    def vjp(out, g, need):
        pieces = []
        if start > 0:
            pieces.append(constant(np.zeros((n, start, h, w), dtype=x.dtype)))
        pieces.append(g)
        if stop < c:
            pieces.append(constant(np.zeros((n, c - stop, h, w), dtype=x.dtype)))
        return (concat_channels(pieces) if len(pieces) > 1 else g,)

    return make_output(np.ascontiguousarray(x.data[:, start:stop]), (x,), vjp)


def dropout(x, p: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: surviving activations are scaled by 1/(1-p) at train time."""
    x = _t(x)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1.0 - p)

    def vjp(out, g, need):
        return (mul(g, constant(keep)),)

    return make_output(x.data * keep, (x,), vjp)


# --- convolution ------------------------------------------------------------

def conv2d(x, w, b=None, stride: int = 1, pad: int = 0) -> Tensor:
    """Strided cross-correlation of (N, Ci, H, W) with (Co, Ci, K, K) weights."""
    x, w = _t(x), _t(w)
    b = _t(b) if b is not None else None
    y, cols = _conv.conv2d_forward(x.data, w.data, None if b is None else b.data,
                                   stride, pad)
    inputs = (x, w) if b is None else (x, w, b)

    def vjp(out, g, need):
        gx = gw = gb = None
        if need[0]:
            gx = conv_transpose2d(g, w, None, stride=stride, pad=pad)
        if need[1]:
            raw = _conv.conv2d_weight_grad(cols, g.data).reshape(w.shape)
            gw = Tensor(raw.astype(w.dtype, copy=False))
        if b is not None and need[2]:
            gb = Tensor(np.sum(g.data, axis=(0, 2, 3), dtype=np.float64).astype(b.dtype))
        return (gx, gw) if b is None else (gx, gw, gb)

    return make_output(y, inputs, vjp)


def conv_transpose2d(x, w, b=None, stride: int = 1, pad: int = 0) -> Tensor:
    """Adjoint of conv2d with the same (C_from, C_to, K, K) weights."""
    x, w = _t(x), _t(w)
    b = _t(b) if b is not None else None
    y = _conv.conv_transpose2d_forward(x.data, w.data, None if b is None else b.data,
                                       stride, pad)
    inputs = (x, w) if b is None else (x, w, b)

    def vjp(out, g, need):
        gx = gw = gb = None
        if need[0] or need[1]:
            raw_gx, raw_gw = _conv.conv_transpose2d_grads(
                x.data, w.data, g.data, stride, pad, need[0], need[1]
            )
            if need[0]:
                # The input gradient of the adjoint is a plain conv of g; built
                # as a graph op so penalty terms stay twice-differentiable.
                gx = conv2d(g, w, None, stride=stride, pad=pad)
                del raw_gx
            if need[1]:
                gw = Tensor(raw_gw.astype(w.dtype, copy=False))
        if b is not None and need[2]:
            gb = Tensor(np.sum(g.data, axis=(0, 2, 3), dtype=np.float64).astype(b.dtype))
        return (gx, gw) if b is None else (gx, gw, gb)

    return make_output(y, inputs, vjp)


# --- normalization ----------------------------------------------------------

def _check_instance_norm_args(x, gain, bias, eps):
    if x.data.ndim != 4:
        raise ValueError("instance_norm expects (N, C, H, W)")
    c = x.shape[1]
    if gain.shape != (c,) or bias.shape != (c,):
        raise ValueError("instance_norm: gain/bias must have shape (C,)")
    if eps <= 0:
        raise ValueError("instance_norm: eps must be positive")


def instance_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize each (n, c) plane to zero mean / unit variance, then affine.

    Fused primitive with a hand-written first-order backward rule; use
    :func:`instance_norm_graph` where the gradient itself must stay
    differentiable (gradient-penalty paths).
    """
    x, gain, bias = _t(x), _t(gain), _t(bias)
    _check_instance_norm_args(x, gain, bias, eps)
    dtype = x.dtype
    mu = np.mean(x.data, axis=(2, 3), keepdims=True, dtype=np.float64)
    sq = np.mean(np.square(x.data), axis=(2, 3), keepdims=True, dtype=np.float64)
    var = np.maximum(sq - mu * mu, 0.0)
    inv = (1.0 / np.sqrt(var + eps)).astype(dtype)
    xhat = (x.data - mu.astype(dtype)) * inv
    g4 = gain.data.reshape(1, -1, 1, 1)
    out_data = xhat * g4 + bias.data.reshape(1, -1, 1, 1)

    def vjp(out, g, need):
        gd = g.data
        gx = ggain = gbias = None
        if need[0]:
            g_mean = np.mean(gd, axis=(2, 3), keepdims=True, dtype=np.float64).astype(dtype)
            gx_mean = np.mean(gd * xhat, axis=(2, 3), keepdims=True,
                              dtype=np.float64).astype(dtype)
            gx = Tensor((g4 * inv) * (gd - g_mean - xhat * gx_mean))
        if need[1]:
            ggain = Tensor(np.sum(gd * xhat, axis=(0, 2, 3), dtype=np.float64).astype(dtype))
        if need[2]:
            gbias = Tensor(np.sum(gd, axis=(0, 2, 3), dtype=np.float64).astype(dtype))
        return (gx, ggain, gbias)

    return make_output(out_data.astype(dtype, copy=False), (x, gain, bias), vjp)


def instance_norm_graph(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Instance normalization composed from primitives.

    Slower than :func:`instance_norm` but every derivative (including
    second order along the input) comes out of the recorded graph.
    """
    x, gain, bias = _t(x), _t(gain), _t(bias)
    _check_instance_norm_args(x, gain, bias, eps)
    c = x.shape[1]
    mu = mean(x, axis=(2, 3), keepdims=True)
    centered = sub(x, broadcast_to(mu, x.shape))
    var = mean(mul(centered, centered), axis=(2, 3), keepdims=True)
    inv = rsqrt(add_scalar(var, eps))
    normed = mul(centered, broadcast_to(inv, x.shape))
    g4 = broadcast_to(reshape(gain, (1, c, 1, 1)), x.shape)
    b4 = broadcast_to(reshape(bias, (1, c, 1, 1)), x.shape)
    return add(mul(normed, g4), b4)


# Operator sugar on Tensor ----------------------------------------------------

def _radd(self, other):
    return add(self, _t(other))


Tensor.__add__ = lambda self, other: add(self, _t(other))
Tensor.__radd__ = _radd
Tensor.__sub__ = lambda self, other: sub(self, _t(other))
Tensor.__neg__ = lambda self: neg(self)
Tensor.__mul__ = lambda self, other: mul(self, _t(other))
Tensor.__rmul__ = lambda self, other: mul(self, _t(other))
