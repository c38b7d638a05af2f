"""Shared test utilities: per-op gradient-check catalog and small fixtures.

The gradient catalog drives both the unit tests and the acceptance gate:
every differentiable operation appears with a generator of random small
inputs and a scalar read-out built from random linear and quadratic
probes (so no gradient is structurally zero). Inputs keep a margin away
from non-smooth points (relu/leaky/abs kinks) so central differences with
h = 1e-3 stay valid.
"""

from __future__ import annotations

import numpy as np

from lidarint import autodiff as ad
from lidarint.autodiff import Tensor


def probe_readout(out, rng):
    """Scalar loss sum(out * R1) + sum(out^2 * R2) with fixed random probes."""
    r1 = ad.constant(rng.standard_normal(out.shape).astype(np.float64))
    r2 = ad.constant((0.5 * rng.standard_normal(out.shape)).astype(np.float64))
    lin = ad.sum_(ad.mul(out, _cast_like(r1, out)))
    quad = ad.sum_(ad.mul(ad.mul(out, out), _cast_like(r2, out)))
    return ad.add(lin, quad)


def _cast_like(const, out):
    return ad.constant(const.data.astype(out.dtype))


def away_from_zero(rng, shape, lo=0.15, hi=1.5):
    """Values with |x| in [lo, hi]: safe for kinked activations under FD."""
    mag = rng.uniform(lo, hi, size=shape)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return (mag * sign).astype(np.float32)


def _small_nchw(rng, cmax=4, smax=7):
    n = int(rng.integers(1, 3))
    c = int(rng.integers(1, cmax))
    h = int(rng.integers(2, smax))
    w = int(rng.integers(2, smax))
    return n, c, h, w


def gradcheck_cases(rng):
    """Yield (name, fn, arrays) cases covering every differentiable op."""
    cases = []

    def std(shape):
        return rng.standard_normal(shape).astype(np.float32)

    def fresh(seed):
        # probes must be identical on every evaluation of the case function
        return np.random.default_rng(seed)

    # elementwise, one input
    for name, wrap in [
        ("relu", lambda t: ad.relu(t)),
        ("leaky_relu", lambda t: ad.leaky_relu(t, 0.2)),
        ("tanh", lambda t: ad.tanh(t)),
        ("sigmoid", lambda t: ad.sigmoid(t)),
        ("softplus", lambda t: ad.softplus(t)),
        ("absolute", lambda t: ad.absolute(t)),
        ("neg", lambda t: ad.neg(t)),
        ("scale", lambda t: ad.scale(t, -1.7)),
        ("add_scalar", lambda t: ad.add_scalar(t, 0.3)),
    ]:
        shape = _small_nchw(rng)
        arr = away_from_zero(rng, shape) if name in ("relu", "leaky_relu", "absolute") \
            else std(shape)
        ps = int(rng.integers(2 ** 31))
        cases.append((name,
                      lambda ts, w=wrap, ps=ps: probe_readout(w(ts[0]), fresh(ps)),
                      [arr]))

    # rsqrt needs strictly positive input
    shape = _small_nchw(rng)
    ps = int(rng.integers(2 ** 31))
    cases.append(("rsqrt",
                  lambda ts, ps=ps: probe_readout(ad.rsqrt(ts[0]), fresh(ps)),
                  [rng.uniform(0.3, 2.0, shape).astype(np.float32)]))

    # two-input arithmetic
    for name, op in (("add", ad.add), ("sub", ad.sub), ("mul", ad.mul)):
        shape = _small_nchw(rng)
        ps = int(rng.integers(2 ** 31))
        cases.append((name,
                      lambda ts, op=op, ps=ps: probe_readout(op(ts[0], ts[1]), fresh(ps)),
                      [std(shape), std(shape)]))

    # shape ops
    n, c, h, w = _small_nchw(rng)
    ps = [int(rng.integers(2 ** 31)) for _ in range(4)]
    cases.append(("reshape",
                  lambda ts, s2=(n, c * h * w, 1, 1), ps=ps[0]: probe_readout(
                      ad.reshape(ts[0], s2), fresh(ps)),
                  [std((n, c, h, w))]))
    cases.append(("broadcast_to",
                  lambda ts, s2=(n, c, h, w), ps=ps[1]: probe_readout(
                      ad.broadcast_to(ts[0], s2), fresh(ps)),
                  [std((n, c, 1, 1))]))
    cases.append(("sum_axis",
                  lambda ts, ps=ps[2]: probe_readout(
                      ad.sum_(ts[0], axis=(2, 3), keepdims=True), fresh(ps)),
                  [std((n, c, h, w))]))
    cases.append(("mean_all",
                  lambda ts, ps=ps[3]: probe_readout(ad.mean(ts[0]), fresh(ps)),
                  [std((n, c, h, w))]))

    # channel plumbing
    n, c, h, w = _small_nchw(rng)
    c2 = int(rng.integers(1, 4))
    ps = int(rng.integers(2 ** 31))
    cases.append(("concat_channels",
                  lambda ts, ps=ps: probe_readout(
                      ad.concat_channels([ts[0], ts[1]]), fresh(ps)),
                  [std((n, c, h, w)), std((n, c2, h, w))]))
    ctot = c + c2
    lo = int(rng.integers(0, ctot - 1))
    hi = int(rng.integers(lo + 1, ctot + 1))
    ps = int(rng.integers(2 ** 31))
    cases.append(("slice_channels",
                  lambda ts, lo=lo, hi=hi, ps=ps: probe_readout(
                      ad.slice_channels(ts[0], lo, hi), fresh(ps)),
                  [std((n, ctot, h, w))]))

    # dropout with a fixed stream so both FD evaluations see the same mask
    shape = _small_nchw(rng)
    seed = int(rng.integers(0, 2 ** 31))
    ps = int(rng.integers(2 ** 31))
    cases.append(("dropout",
                  lambda ts, s=seed, ps=ps: probe_readout(
                      ad.dropout(ts[0], 0.35, True, np.random.default_rng(s)), fresh(ps)),
                  [std(shape)]))

    # convolutions, including stride 2 / pad 1
    for tag, stride, pad, k in [("s1p0", 1, 0, 3), ("s2p1", 2, 1, 4)]:
        n = int(rng.integers(1, 3))
        ci = int(rng.integers(1, 4))
        co = int(rng.integers(1, 4))
        h = int(rng.integers(2, 4)) * stride + k - 2 * pad
        w = int(rng.integers(2, 4)) * stride + k - 2 * pad
        x = std((n, ci, h, w))
        wgt = (0.4 * rng.standard_normal((co, ci, k, k))).astype(np.float32)
        b = (0.2 * rng.standard_normal(co)).astype(np.float32)
        ps = int(rng.integers(2 ** 31))
        cases.append((f"conv2d_{tag}",
                      lambda ts, s=stride, p=pad, ps=ps: probe_readout(
                          ad.conv2d(ts[0], ts[1], ts[2], stride=s, pad=p), fresh(ps)),
                      [x, wgt, b]))
        xt = std((n, co, (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1))
        wt = (0.4 * rng.standard_normal((co, ci, k, k))).astype(np.float32)
        bt = (0.2 * rng.standard_normal(ci)).astype(np.float32)
        ps = int(rng.integers(2 ** 31))
        cases.append((f"conv_transpose2d_{tag}",
                      lambda ts, s=stride, p=pad, ps=ps: probe_readout(
                          ad.conv_transpose2d(ts[0], ts[1], ts[2], stride=s, pad=p), fresh(ps)),
                      [xt, wt, bt]))

    # normalization, both variants
    n, c, h, w = 2, 3, 4, 5
    for name, fn in (("instance_norm", ad.instance_norm),
                     ("instance_norm_graph", ad.instance_norm_graph)):
        ps = int(rng.integers(2 ** 31))
        cases.append((name,
                      lambda ts, f=fn, ps=ps: probe_readout(f(ts[0], ts[1], ts[2], 1e-5), fresh(ps)),
                      [std((n, c, h, w)),
                       (1.0 + 0.2 * rng.standard_normal(c)).astype(np.float32),
                       (0.2 * rng.standard_normal(c)).astype(np.float32)]))

    # losses
    shape = (2, 1, 4, 6)
    mask = (rng.random(shape) > 0.4).astype(np.float32)
    cases.append(("masked_mse",
                  lambda ts, m=mask: ad.masked_mse(ts[0], ts[1], m),
                  [std(shape), std(shape)]))
    # keep |pred - target| away from zero: abs kink
    pred = std(shape)
    target = pred + away_from_zero(rng, shape, lo=0.2, hi=0.8)
    cases.append(("masked_l1",
                  lambda ts, m=mask: ad.masked_l1(ts[0], ts[1], m),
                  [pred, target]))
    cases.append(("l1",
                  lambda ts: ad.l1(ts[0], ts[1]),
                  [pred, target]))
    labels = (rng.random(shape) > 0.5).astype(np.float32)
    cases.append(("bce_with_logits",
                  lambda ts, y=labels: ad.bce_with_logits(ts[0], y),
                  [std(shape)]))
    return cases


def run_gradcheck_catalog(seed, rtol=1e-4, h=1e-3):
    """One full pass over the catalog; returns {case_name: max_rel_error}."""
    rng = np.random.default_rng(seed)
    results = {}
    for name, fn, arrays in gradcheck_cases(rng):
        errs = ad.check_gradients(fn, arrays, h=h)
        results[name] = max(errs.values())
    return results


class OraclePredictor:
    """Duck-typed estimator that replays the frame's own intensity plane."""

    _kind = "oracle"

    def __init__(self, combo="D"):
        self.combo = combo

    def predict(self, frame):
        if isinstance(frame, (list, tuple)):
            return np.stack([f.channels["intensity"] for f in frame])
        return frame.channels["intensity"]


class ConstantPredictor:
    _kind = "constant"

    def __init__(self, value, combo="D"):
        self.value = value
        self.combo = combo

    def predict(self, frame):
        if isinstance(frame, (list, tuple)):
            return np.stack([np.full(f.shape, self.value, np.float32) for f in frame])
        return np.full(frame.shape, self.value, np.float32)


class ShiftPredictor:
    """Ground truth plus a constant offset."""

    _kind = "shift"

    def __init__(self, delta, combo="D"):
        self.delta = delta
        self.combo = combo

    def predict(self, frame):
        if isinstance(frame, (list, tuple)):
            return np.stack([f.channels["intensity"] + self.delta for f in frame])
        return frame.channels["intensity"] + self.delta
