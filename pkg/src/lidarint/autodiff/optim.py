"""Adam with decoupled weight decay.

The decay step ``p -= lr * wd * p`` runs before the moment update, so a
zero gradient with nonzero decay still shrinks the parameter by exactly
``lr * wd * p``. Bias correction follows the standard first/second moment
scheme with the epsilon added outside the square root.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from ..exceptions import ConfigError
from .tensor import Tensor


def _check_hyper(lr, beta1, beta2, eps, weight_decay):
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    for name, b in (("beta1", beta1), ("beta2", beta2)):
        if not 0.0 <= b < 1.0:
            raise ConfigError(f"{name} must lie in [0, 1), got {b}")
    if eps <= 0:
        raise ConfigError("eps must be positive")
    if weight_decay < 0:
        raise ConfigError("weight_decay must be non-negative")


def init_adam_state(params) -> list:
    """Fresh first/second-moment buffers and step counts, one entry per parameter."""
    return [
        {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data), "t": 0}
        for p in params
    ]


@njit(cache=True)
def _adam_kernel(p, g, m, v, lr, beta1, cb1, beta2, cb2, eps, decay, bc1, bc2):
    # cb = 1 - beta, bc = 1 / (1 - beta^t), decay = lr * weight_decay; all scalars
    # arrive pre-cast to the storage dtype so the loop never promotes.
    for i in range(p.size):
        if decay != 0.0:
            p[i] -= decay * p[i]
        m[i] = beta1 * m[i] + cb1 * g[i]
        v[i] = beta2 * v[i] + cb2 * g[i] * g[i]
        p[i] -= lr * (m[i] * bc1) / (np.sqrt(v[i] * bc2) + eps)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8,
              weight_decay=0.0) -> None:
    """One in-place update over parallel lists of parameters and gradients."""
    _check_hyper(lr, beta1, beta2, eps, weight_decay)
    for p, g, st in zip(params, grads, state):
        data = p.data if isinstance(p, Tensor) else p
        if g is None:
            continue
        st["t"] += 1
        ft = data.dtype.type  # keep kernel arithmetic in the storage dtype
        _adam_kernel(data.reshape(-1), np.asarray(g, dtype=data.dtype).reshape(-1),
                     st["m"].reshape(-1), st["v"].reshape(-1),
                     ft(lr), ft(beta1), ft(1.0 - beta1), ft(beta2), ft(1.0 - beta2),
                     ft(eps), ft(lr * weight_decay),
                     ft(1.0 / (1.0 - beta1 ** st["t"])),
                     ft(1.0 / (1.0 - beta2 ** st["t"])))


class Adam:
    """Stateful wrapper tying :func:`adam_step` to a fixed parameter list.

    ``lr == 0`` is allowed here and makes ``step`` a no-op, which the
    training-smoke tests rely on.
    """

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        if lr < 0:
            raise ConfigError(f"learning rate must be non-negative, got {lr}")
        if lr > 0:
            _check_hyper(lr, betas[0], betas[1], eps, weight_decay)
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = init_adam_state(self.params)

    def step(self) -> None:
        if self.lr == 0:
            return
        grads = [p.grad for p in self.params]
        adam_step(self.params, grads, self.state, self.lr, self.betas[0],
                  self.betas[1], self.eps, self.weight_decay)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
