"""Raw im2col-based convolution kernels on plain arrays.

All heavy lifting is batched matrix products so BLAS does the work; the
window gather/scatter loops are JIT-compiled since they are pure memory
movement. ``conv_transpose2d_forward`` is the exact adjoint of
``conv2d_forward`` with the same weights: the im2col gather and the
col2im scatter-add are transposes of each other by construction.

Weight layouts: conv2d takes (C_out, C_in, K, K); conv_transpose2d takes
(C_from, C_to, K, K), matching the shape the paired conv2d would use.
Kernels are square, stride and padding are scalar ints, and the conv
output extent must be integral: (H + 2*pad - K) divisible by stride.
"""

from __future__ import annotations

import numpy as np
from numba import njit


def conv_out_size(extent: int, k: int, stride: int, pad: int) -> int:
    span = extent + 2 * pad - k
    if span < 0 or span % stride != 0:
        raise ValueError(
            f"convolution output extent is not integral: "
            f"(({extent} + 2*{pad} - {k}) / {stride}) + 1"
        )
    return span // stride + 1


@njit(cache=True)
def _gather(xp, cols6, k, stride):
    n, c = xp.shape[0], xp.shape[1]
    ho, wo = cols6.shape[4], cols6.shape[5]
    for ni in range(n):
        for ci in range(c):
            for ki in range(k):
                for i in range(ho):
                    src = xp[ni, ci, ki + stride * i]
                    for kj in range(k):
                        dst = cols6[ni, ci, ki, kj, i]
                        for j in range(wo):
                            dst[j] = src[kj + stride * j]


@njit(cache=True)
def _scatter_add(out, cols6, k, stride):
    n, c = out.shape[0], out.shape[1]
    ho, wo = cols6.shape[4], cols6.shape[5]
    for ni in range(n):
        for ci in range(c):
            for ki in range(k):
                for i in range(ho):
                    dst = out[ni, ci, ki + stride * i]
                    for kj in range(k):
                        src = cols6[ni, ci, ki, kj, i]
                        for j in range(wo):
                            dst[kj + stride * j] += src[j]


def im2col(x: np.ndarray, k: int, stride: int, pad: int):
    """Unfold (N, C, H, W) into (N, C*K*K, Ho*Wo) window columns."""
    n, c, h, w = x.shape
    ho = conv_out_size(h, k, stride, pad)
    wo = conv_out_size(w, k, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    x = np.ascontiguousarray(x)
    cols = np.empty((n, c, k, k, ho, wo), dtype=x.dtype)
    _gather(x, cols, k, stride)
    return cols.reshape(n, c * k * k, ho * wo), ho, wo


def col2im(cols: np.ndarray, c: int, h: int, w: int,
           k: int, stride: int, pad: int, ho: int, wo: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add (N, C*K*K, Ho*Wo) back to (N, C, H, W)."""
    n = cols.shape[0]
    v = np.ascontiguousarray(cols).reshape(n, c, k, k, ho, wo)
    hp, wp = h + 2 * pad, w + 2 * pad
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    _scatter_add(out, v, k, stride)
    if pad:
        out = np.ascontiguousarray(out[:, :, pad:pad + h, pad:pad + w])
    return out


def conv2d_forward(x, w, b, stride, pad):
    """Cross-correlation; returns (y, cols) with cols kept for the weight gradient."""
    n, ci, h, wd = x.shape
    co, ci_w, k, k2 = w.shape
    if ci_w != ci or k != k2:
        raise ValueError(f"kernel {w.shape} does not match input channels {ci}")
    cols, ho, wo = im2col(x, k, stride, pad)
    y = np.matmul(w.reshape(co, -1), cols)  # (N, Co, Ho*Wo)
    if b is not None:
        y += b[:, None]
    return y.reshape(n, co, ho, wo), cols


def conv2d_weight_grad(cols, g):
    """(C_out, C_in, K, K)-flattened weight gradient from cached columns."""
    n, co, ho, wo = g.shape
    g3 = g.reshape(n, co, ho * wo)
    return np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0)


def conv_transpose2d_forward(x, w, b, stride, pad):
    """Fractionally-strided convolution: (N, Cf, H, W) -> (N, Ct, Ho, Wo).

    Output extent is (H - 1) * stride - 2 * pad + K, the unique size whose
    paired conv2d maps back to (H, W).
    """
    n, cf, h, wd = x.shape
    cf_w, ct, k, k2 = w.shape
    if cf_w != cf or k != k2:
        raise ValueError(f"kernel {w.shape} does not match input channels {cf}")
    ho = (h - 1) * stride - 2 * pad + k
    wo = (wd - 1) * stride - 2 * pad + k
    if ho < 1 or wo < 1:
        raise ValueError("transposed convolution output collapsed to zero extent")
    tmp = np.matmul(w.reshape(cf, -1).T, x.reshape(n, cf, h * wd))  # (N, Ct*K*K, H*W)
    y = col2im(tmp, ct, ho, wo, k, stride, pad, h, wd)
    if b is not None:
        y += b.reshape(1, -1, 1, 1)
    return y


def conv_transpose2d_grads(x, w, g, stride, pad, need_x, need_w):
    """Input/weight gradients for conv_transpose2d; shares one im2col of g."""
    n, cf = x.shape[0], x.shape[1]
    k = w.shape[2]
    gx = gw = None
    cols_g, ho2, wo2 = im2col(g, k, stride, pad)
    if need_x:
        gx = np.matmul(w.reshape(cf, -1), cols_g).reshape(x.shape)
    if need_w:
        x3 = x.reshape(n, cf, -1)
        gw = np.matmul(x3, cols_g.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    return gx, gw
