"""Architecture builders and training objectives for the two predictors.

The encoder-decoder regressor halves the spatial extent per encoder stage
(k=4, stride 2, pad 1), mirrors it back with transposed convolutions, and
concatenates each decoder stage with the matching encoder feature map. The
head is a 1x1 convolution with no activation so raw intensity values come
out directly; the adversarial generator reuses the same trunk with a
sigmoid head, and its patch discriminator scores overlapping receptive
fields with a logit map instead of a single scalar.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import ConfigError, TrainingFault
from .seeding import derived_rng


class Module:
    """Parameter container; subclasses register (name, Tensor) pairs in order."""

    def __init__(self):
        self._params: list = []
        self._children: list = []

    def register(self, name: str, tensor: Tensor) -> Tensor:
        tensor.requires_grad = True
        self._params.append((name, tensor))
        return tensor

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children.append((name, module))
        return module

    def named_parameters(self):
        for name, p in self._params:
            yield name, p
        for child_name, child in self._children:
            for name, p in child.named_parameters():
                yield f"{child_name}.{name}", p

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_arrays(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_arrays(self, state: dict) -> None:
        for name, p in self.named_parameters():
            arr = state[name]
            if arr.shape != p.data.shape:
                raise ConfigError(f"parameter {name}: shape {arr.shape} != {p.data.shape}")
            p.data = arr.astype(np.float32).copy()
            p.grad = None


def _gaussian(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    return (rng.standard_normal(shape) * std).astype(np.float32)


class Conv2d(Module):
    def __init__(self, cin, cout, kernel, stride, pad, rng, std=None):
        super().__init__()
        self.stride, self.pad = stride, pad
        if std is None:
            std = float(np.sqrt(2.0 / (cin * kernel * kernel)))  # fan-in scaled
        self.w = self.register("w", Tensor(_gaussian(rng, (cout, cin, kernel, kernel), std)))
        self.b = self.register("b", Tensor(np.zeros(cout, np.float32)))

    def __call__(self, x):
        return ad.conv2d(x, self.w, self.b, stride=self.stride, pad=self.pad)


class ConvTranspose2d(Module):
    def __init__(self, cin, cout, kernel, stride, pad, rng, std=None):
        super().__init__()
        self.stride, self.pad = stride, pad
        if std is None:
            std = float(np.sqrt(2.0 / (cin * kernel * kernel)))
        self.w = self.register("w", Tensor(_gaussian(rng, (cin, cout, kernel, kernel), std)))
        self.b = self.register("b", Tensor(np.zeros(cout, np.float32)))

    def __call__(self, x):
        return ad.conv_transpose2d(x, self.w, self.b, stride=self.stride, pad=self.pad)


class InstanceNorm2d(Module):
    # twice_differentiable picks the graph-composed variant whose backward is
    # itself differentiable; the gradient-penalty path of the discriminator
    # needs it, everything else uses the fused first-order kernel.
    def __init__(self, channels, eps=1e-5, twice_differentiable=False):
        super().__init__()
        self.eps = eps
        self.twice_differentiable = twice_differentiable
        self.gain = self.register("gain", Tensor(np.ones(channels, np.float32)))
        self.bias = self.register("bias", Tensor(np.zeros(channels, np.float32)))

    def __call__(self, x):
        if self.twice_differentiable:
            return ad.instance_norm_graph(x, self.gain, self.bias, eps=self.eps)
        return ad.instance_norm(x, self.gain, self.bias, eps=self.eps)


class UNetModel(Module):
    """Encoder-decoder with skip connections and a linear or sigmoid head.

    Inputs must be (N, in_channels, H, W) with H and W divisible by
    2**depth. Every encoder stage is conv(s2) -> norm -> leaky ReLU; every
    decoder stage is conv_transpose(s2) -> norm -> ReLU followed by
    concatenation with the mirrored encoder feature map.
    """

    def __init__(self, in_channels, base_width=32, depth=5, head="linear",
                 rng=None, init_std=None):
        super().__init__()
        if in_channels < 1:
            raise ConfigError("in_channels must be >= 1")
        if depth < 1:
            raise ConfigError("depth must be >= 1")
        if head not in ("linear", "sigmoid"):
            raise ConfigError(f"unknown head {head!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels = in_channels
        self.base_width = base_width
        self.depth = depth
        self.head_kind = head

        widths = [base_width * (2 ** i) for i in range(depth)]
        self.enc = []
        cin = in_channels
        for i, wdt in enumerate(widths):
            conv = self.add_child(f"enc{i}.conv", Conv2d(cin, wdt, 4, 2, 1, rng, std=init_std))
            norm = self.add_child(f"enc{i}.norm", InstanceNorm2d(wdt))
            self.enc.append((conv, norm))
            cin = wdt

        self.dec = []
        cur = widths[-1]
        for i in range(depth):
            cout = widths[depth - 2 - i] if i <= depth - 2 else base_width
            convt = self.add_child(f"dec{i}.conv", ConvTranspose2d(cur, cout, 4, 2, 1, rng, std=init_std))
            norm = self.add_child(f"dec{i}.norm", InstanceNorm2d(cout))
            self.dec.append((convt, norm))
            cur = cout * 2 if i <= depth - 2 else cout  # skip concat doubles channels

        self.head = self.add_child("head", Conv2d(cur, 1, 1, 1, 0, rng, std=init_std))

    def __call__(self, x):
        h, w = x.shape[2], x.shape[3]
        block = 1 << self.depth
        if h % block or w % block:
            raise ConfigError(
                f"input {h}x{w} not divisible by 2**depth = {block}"
            )
        skips = []
        cur = x
        for conv, norm in self.enc:
            cur = ad.leaky_relu(norm(conv(cur)), 0.2)
            skips.append(cur)
        for i, (convt, norm) in enumerate(self.dec):
            cur = ad.relu(norm(convt(cur)))
            skip_idx = self.depth - 2 - i
            if skip_idx >= 0:
                cur = ad.concat_channels([cur, skips[skip_idx]])
        out = self.head(cur)
        if self.head_kind == "sigmoid":
            out = ad.sigmoid(out)
        return out


# Patch discriminator layer pattern: (kernel, stride) per conv, head last.
PATCH_LAYERS = ((4, 2), (4, 2), (4, 2), (4, 1), (4, 1))


class PatchDiscriminator(Module):
    """Stacked stride-2 convolutions ending in a one-channel patch logit map.

    Consumes the channel concatenation of the condition stack and the
    intensity plane. The first layer carries no normalization.
    """

    def __init__(self, in_channels, base_width=64, rng=None, init_std=0.02):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels = in_channels
        self.base_width = base_width
        widths = [base_width, base_width * 2, base_width * 4, base_width * 8]
        self.layers = []
        cin = in_channels
        for i, ((k, s), wdt) in enumerate(zip(PATCH_LAYERS[:-1], widths)):
            conv = self.add_child(f"l{i}.conv", Conv2d(cin, wdt, k, s, 1, rng, std=init_std))
            norm = None
            if i > 0:
                norm = self.add_child(f"l{i}.norm",
                                      InstanceNorm2d(wdt, twice_differentiable=True))
            self.layers.append((conv, norm))
            cin = wdt
        k, s = PATCH_LAYERS[-1]
        self.head = self.add_child("head", Conv2d(cin, 1, k, s, 1, rng, std=init_std))

    def __call__(self, stack, intensity):
        cur = ad.concat_channels([stack, intensity])
        for conv, norm in self.layers:
            cur = conv(cur)
            if norm is not None:
                cur = norm(cur)
            cur = ad.leaky_relu(cur, 0.2)
        return self.head(cur)


def build_unet(in_channels, base_width=32, depth=5, seed=0, head="linear",
               input_size=None) -> UNetModel:
    """Construct the regressor with fan-in-scaled Gaussian initialization.

    ``input_size`` (H, W), when known, is validated against the depth up
    front instead of at the first forward pass.
    """
    if input_size is not None:
        h, w = input_size
        block = 1 << depth
        if h % block or w % block:
            raise ConfigError(f"input {h}x{w} not divisible by 2**depth = {block}")
    rng = derived_rng(seed, "unet-init")
    return UNetModel(in_channels, base_width, depth, head=head, rng=rng)


def build_pix2pix(in_channels, base_width=32, depth=5, disc_width=64, seed=0,
                  input_size=None):
    """Generator (sigmoid head) and patch discriminator, both init N(0, 0.02)."""
    if input_size is not None:
        h, w = input_size
        block = 1 << depth
        if h % block or w % block:
            raise ConfigError(f"input {h}x{w} not divisible by 2**depth = {block}")
    rng = derived_rng(seed, "pix2pix-init")
    gen = UNetModel(in_channels, base_width, depth, head="sigmoid", rng=rng, init_std=0.02)
    disc = PatchDiscriminator(in_channels + 1, disc_width, rng=rng, init_std=0.02)
    return gen, disc


@dataclass(frozen=True)
class TrainObjective:
    kind: str = "pix2pix"  # "masked_l2" or "pix2pix"
    lam: float = 100.0
    gp_coeff: float = 10.0

    def __post_init__(self):
        if self.kind not in ("masked_l2", "pix2pix"):
            raise ConfigError(f"unknown objective kind {self.kind!r}")
        if self.lam < 0:
            raise ConfigError("lam must be non-negative")
        if self.gp_coeff < 0:
            raise ConfigError("gp_coeff must be non-negative")


def unet_loss(model: UNetModel, stack, intensity, mask) -> Tensor:
    """Masked squared-error objective on the model's direct output."""
    pred = model(ad.constant(stack))
    return ad.masked_mse(pred, ad.constant(intensity), mask)


def _require_finite(value: float, name: str) -> float:
    if not np.isfinite(value):
        raise TrainingFault(f"non-finite {name} encountered during training")
    return value


def pix2pix_step(gen, disc, gen_opt, disc_opt, stack, intensity, mask,
                 objective: TrainObjective):
    """One adversarial update: discriminator first, then the generator.

    Discriminator loss: BCE(real, 1) + BCE(fake_detached, 0) plus a
    gradient penalty on real pairs - the squared gradient of the summed
    real logits with respect to the real intensity plane, averaged over
    the batch. Generator loss: BCE(fake, 1) + lam * masked L1.

    Returns (g_loss, d_loss, logs) as floats.
    """
    if objective.kind != "pix2pix":
        raise ConfigError("pix2pix_step requires a pix2pix objective")
    n = stack.shape[0]
    stack_c = ad.constant(stack)
    target = ad.constant(intensity)

    fake = gen(stack_c)
    fake_detached = fake.detach()

    # --- discriminator update ---
    disc_opt.zero_grad()
    real_leaf = Tensor(np.asarray(intensity, np.float32).copy(), requires_grad=True)
    logits_real = disc(stack_c, real_leaf)
    bce_real = ad.bce_with_logits(logits_real, 1.0)
    bce_fake = ad.bce_with_logits(disc(stack_c, fake_detached), 0.0)

    d_loss = ad.add(bce_real, bce_fake)
    r1_value = 0.0
    if objective.gp_coeff > 0:
        (g_real,) = ad.grad(ad.sum_(logits_real), [real_leaf], create_graph=True)
        r1 = ad.scale(ad.sum_(ad.mul(g_real, g_real)), 1.0 / n)
        r1_value = _require_finite(r1.item(), "gradient penalty")
        d_loss = ad.add(d_loss, ad.scale(r1, objective.gp_coeff))
    d_loss_value = _require_finite(d_loss.item(), "discriminator loss")
    ad.backward(d_loss)
    disc_opt.step()

    # --- generator update (against the refreshed discriminator) ---
    gen_opt.zero_grad()
    disc_opt.zero_grad()
    g_adv = ad.bce_with_logits(disc(stack_c, fake), 1.0)
    g_l1 = ad.masked_l1(fake, target, mask)
    g_loss = ad.add(g_adv, ad.scale(g_l1, objective.lam))
    g_loss_value = _require_finite(g_loss.item(), "generator loss")
    ad.backward(g_loss)
    gen_opt.step()
    disc_opt.zero_grad()  # discard discriminator grads picked up via the shared path

    logs = {
        "bce_real": _require_finite(bce_real.item(), "bce_real"),
        "bce_fake": _require_finite(bce_fake.item(), "bce_fake"),
        "r1": r1_value,
        "g_adv": _require_finite(g_adv.item(), "g_adv"),
        "g_l1": _require_finite(g_l1.item(), "g_l1"),
    }
    return g_loss_value, d_loss_value, logs


def patchgan_receptive_field(layers=PATCH_LAYERS) -> int:
    """Receptive field in input cells of a stack of (kernel, stride) conv layers."""
    rf, jump = 1, 1
    for k, s in layers:
        rf += (k - 1) * jump
        jump *= s
    return rf
