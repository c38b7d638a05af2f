"""Dense-array reverse-mode differentiation core.

A :class:`Tensor` wraps a float32 (or float64, for shadow evaluations)
numpy array. Operations in :mod:`.ops` record a :class:`Node` per output
while gradients are enabled; :func:`backward` replays the recorded graph
in reverse topological order exactly once.

Every operation's backward rule is itself expressed through ops, so
``grad(..., create_graph=True)`` yields gradients that can be
differentiated again along input chains. That is exactly what the
discriminator's gradient penalty needs; second-order derivatives with
respect to weight-gradient outputs are not supported.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_GRAD_ENABLED = True
_DEBUG_CHECKS = False


def set_debug_checks(enabled: bool) -> None:
    """Verify every op output is finite (slow; off by default)."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


def debug_checks_enabled() -> bool:
    return _DEBUG_CHECKS


def grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, raw backward math)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextmanager
def enable_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = True
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Node:
    """Operation record: the operand tensors and the backward rule.

    ``vjp(out, g, need)`` receives the op's output tensor, the upstream
    gradient tensor and a per-operand bool tuple; it returns one gradient
    tensor (or None) per operand, skipping work where ``need`` is False.
    """

    __slots__ = ("inputs", "vjp")

    def __init__(self, inputs, vjp):
        self.inputs = inputs
        self.vjp = vjp


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Arithmetic sugar is attached by lidarint.autodiff.ops at import time.


def make_output(data: np.ndarray, inputs, vjp) -> Tensor:
    """Wrap an op result, recording a Node when tracking applies."""
    if _DEBUG_CHECKS and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced by a forward op")
    track = _GRAD_ENABLED and any(
        isinstance(t, Tensor) and t.requires_grad for t in inputs
    )
    out = Tensor(data, requires_grad=track)
    if track:
        out.node = Node(tuple(inputs), vjp)
    return out


def _toposort(root: Tensor):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t.node is None:
            order.append(t)
        else:
            stack.append((t, True))
            for inp in t.node.inputs:
                stack.append((inp, False))
    return order


def grad(output: Tensor, wrt, grad_output: Tensor | None = None,
         create_graph: bool = False):
    """Gradients of ``output`` with respect to the tensors in ``wrt``.

    Does not touch ``.grad`` fields. Unreached ``wrt`` entries get zeros.
    With ``create_graph`` the returned tensors stay differentiable along
    input chains.
    """
    from . import ops  # local import: ops depends on this module

    wrt = list(wrt)
    for t in wrt:
        if not t.requires_grad:
            raise ValueError("grad target does not require gradients")
    if grad_output is None:
        if output.size != 1:
            raise ValueError("gradient seed required for non-scalar outputs")
        grad_output = Tensor(np.ones_like(output.data))

    order = _toposort(output)
    needed = set(map(id, wrt))
    for t in order:
        if t.node is not None and any(id(i) in needed for i in t.node.inputs):
            needed.add(id(t))

    wrt_ids = set(map(id, wrt))
    grads = {id(output): grad_output}
    ctx = enable_grad() if create_graph else no_grad()
    with ctx:
        for t in reversed(order):
            if t.node is None or id(t) not in needed:
                continue
            # Keep grads of requested tensors around for the final collection.
            if id(t) in wrt_ids:
                g = grads.get(id(t))
            else:
                g = grads.pop(id(t), None)
            if g is None:
                continue
            need = tuple(id(i) in needed for i in t.node.inputs)
            contribs = t.node.vjp(t, g, need)
            for inp, gi, ni in zip(t.node.inputs, contribs, need):
                if not ni or gi is None:
                    continue
                prev = grads.get(id(inp))
                grads[id(inp)] = gi if prev is None else ops.add(prev, gi)
    return [grads.get(id(t), Tensor(np.zeros_like(t.data))) for t in wrt]


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every tracked leaf.

    Repeated calls without zeroing add up. The loss must be scalar and
    still attached to its graph.
    """
    if loss.size != 1:
        raise ValueError("backward expects a scalar loss")
    if loss.node is None and not loss.requires_grad:
        raise ValueError("loss is detached from any computation graph")
    order = _toposort(loss)
    leaves = [t for t in order if t.node is None and t.requires_grad]
    gs = grad(loss, leaves)
    for t, g in zip(leaves, gs):
        t.grad = g.data.copy() if t.grad is None else t.grad + g.data
