"""Training objectives.

``masked_mse`` divides the masked squared error by the number of masked
cells (the count of successful rays), not by the total cell count; an
all-zero mask yields 0 by convention. Because the residual is multiplied
by the binary mask before squaring, predictions at masked-out cells have
exactly zero influence on the value and on every gradient.
"""

from __future__ import annotations

import numpy as np

from .ops import absolute, constant, mean, mul, scale, softplus, sub, sum_, _t
from .tensor import Tensor


def _mask_const(mask, like: Tensor) -> Tensor:
    arr = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    if arr.shape != like.shape:
        raise ValueError(f"mask shape {arr.shape} does not match {like.shape}")
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError("mask must be binary")
    return constant(arr.astype(like.dtype, copy=False))


def masked_mse(pred, target, mask) -> Tensor:
    """Sum of squared masked residuals over the masked-cell count."""
    pred, target = _t(pred), _t(target)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match target {target.shape}")
    m = _mask_const(mask, pred)
    d = mul(sub(pred, target), m)
    denom = float(np.sum(m.data, dtype=np.float64))
    return scale(sum_(mul(d, d)), 1.0 / max(denom, 1.0))


def masked_l1(pred, target, mask) -> Tensor:
    """Mean absolute masked residual, normalized by the masked-cell count."""
    pred, target = _t(pred), _t(target)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match target {target.shape}")
    m = _mask_const(mask, pred)
    d = absolute(mul(sub(pred, target), m))
    denom = float(np.sum(m.data, dtype=np.float64))
    return scale(sum_(d), 1.0 / max(denom, 1.0))


def l1(pred, target) -> Tensor:
    pred, target = _t(pred), _t(target)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match target {target.shape}")
    return mean(absolute(sub(pred, target)))


def bce_with_logits(logits, labels) -> Tensor:
    """Binary cross entropy on raw logits, stabilized through logaddexp.

    ``labels`` may be a scalar (0 or 1 for all cells) or an array matching
    the logits; labels are treated as constants.
    """
    logits = _t(logits)
    labels_arr = np.broadcast_to(np.asarray(labels, dtype=logits.dtype), logits.shape)
    y = constant(labels_arr.copy())
    return mean(sub(softplus(logits), mul(logits, y)))
