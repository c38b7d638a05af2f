"""Central finite-difference verification of analytic gradients.

The numeric side re-evaluates the checked function on float64 copies of
the inputs (a shadow evaluation), perturbing one element at a time by
``h``. Analytic gradients come from the engine's own backward pass on the
float32 originals, so the comparison exercises the full storage pipeline.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward, no_grad


def _scalar_eval(fn, arrays) -> float:
    with no_grad():
        out = fn([Tensor(a) for a in arrays])
    return float(out.data)


def numeric_gradient(fn, arrays, index: int, h: float = 1e-3) -> np.ndarray:
    """d fn / d arrays[index] by central differences in float64."""
    shadow = [np.array(a, dtype=np.float64) for a in arrays]
    target = shadow[index]
    grad = np.zeros_like(target)
    flat, gflat = target.ravel(), grad.ravel()
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + h
        f_plus = _scalar_eval(fn, shadow)
        flat[j] = orig - h
        f_minus = _scalar_eval(fn, shadow)
        flat[j] = orig
        gflat[j] = (f_plus - f_minus) / (2.0 * h)
    return grad


def analytic_gradients(fn, arrays, wrt):
    tensors = [Tensor(np.asarray(a, dtype=np.float32), requires_grad=(i in wrt))
               for i, a in enumerate(arrays)]
    out = fn(tensors)
    backward(out)
    return {i: tensors[i].grad.copy() for i in wrt}


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max-norm difference over the larger of the two max-norms."""
    diff = float(np.max(np.abs(a - b))) if a.size else 0.0
    denom = max(float(np.max(np.abs(a))) if a.size else 0.0,
                float(np.max(np.abs(b))) if b.size else 0.0, 1e-8)
    return diff / denom


def check_gradients(fn, arrays, wrt=None, h: float = 1e-3) -> dict:
    """Relative error per checked input; callers assert against their tolerance.

    ``fn`` maps a list of Tensors to a scalar Tensor. ``wrt`` selects which
    input positions to differentiate (default: all).
    """
    if wrt is None:
        wrt = tuple(range(len(arrays)))
    analytic = analytic_gradients(fn, arrays, wrt)
    errors = {}
    for i in wrt:
        numeric = numeric_gradient(fn, arrays, i, h=h)
        errors[i] = relative_error(analytic[i].astype(np.float64), numeric)
    return errors
