"""Estimator API for the two intensity predictors.

Both regressors follow the scikit-learn convention: constructor arguments
are stored verbatim (``get_params``/``set_params``/``clone`` work), ``fit``
consumes a list of spherical-image frames, and ``predict`` maps one frame
to an (H, W) intensity plane. Fitted state lives in trailing-underscore
attributes and round-trips through the checkpoint format.

Input channels are standardized per channel with statistics computed on
the fitted training frames only; targets stay on their raw [0, 1] scale.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from threadpoolctl import threadpool_limits

from . import autodiff as ad
from . import models
from .autodiff import Adam
from .checkpoint import load_checkpoint, save_checkpoint
from .exceptions import ConfigError, DataError, GridMismatchError, TrainingFault
from .evaluation import frame_masked_mse
from .seeding import derived_rng
from .projection import channel_names, combo_name, select_channels
from .validation import check_frames


def _epoch_rng(seed, tag, epoch):
    return derived_rng(seed, tag, epoch)


class _IntensityRegressorBase(BaseEstimator):
    _kind = None

    # -- data plumbing -------------------------------------------------------

    def _stack_frames(self, frames):
        stacks = np.stack([select_channels(f, self.combo) for f in frames])
        targets = np.stack([f.channels["intensity"] for f in frames])[:, None]
        masks = np.stack([f.channels["mask"] for f in frames])[:, None]
        return stacks, targets, masks

    def _fit_norm_stats(self, stacks):
        mean = stacks.mean(axis=(0, 2, 3), dtype=np.float64)
        std = stacks.std(axis=(0, 2, 3), dtype=np.float64)
        self.norm_mean_ = mean
        self.norm_std_ = np.maximum(std, 1e-6)

    def _standardize(self, stacks):
        m = self.norm_mean_.astype(np.float32)[None, :, None, None]
        s = self.norm_std_.astype(np.float32)[None, :, None, None]
        return ((stacks - m) / s).astype(np.float32)

    def _check_fitted(self):
        if getattr(self, "model_", None) is None:
            raise ConfigError("estimator is not fitted")

    def _generator(self):
        return self.model_

    # -- inference ------------------------------------------------------------

    def predict(self, frame):
        """Predicted intensity plane(s); accepts one frame or a sequence."""
        self._check_fitted()
        single = not isinstance(frame, (list, tuple))
        frames = [frame] if single else list(frame)
        check_frames(frames, combo=self.combo, require_target=False)
        if frames[0].shape != tuple(self.grid_hw_):
            raise GridMismatchError(
                f"frame grid {frames[0].shape} differs from fitted grid {tuple(self.grid_hw_)}"
            )
        stacks = np.stack([select_channels(f, self.combo) for f in frames])
        x = self._standardize(stacks)
        outs = []
        gen = self._generator()
        with ad.no_grad():
            for lo in range(0, x.shape[0], max(1, int(self.batch_size))):
                batch = ad.constant(x[lo:lo + max(1, int(self.batch_size))])
                outs.append(gen(batch).data[:, 0])
        planes = np.concatenate(outs, axis=0)
        return planes[0] if single else planes

    def evaluate(self, frames) -> float:
        """Mean per-frame masked squared error against the intensity plane."""
        self._check_fitted()
        frames = list(frames)
        check_frames(frames, combo=self.combo)
        preds = self.predict(frames)
        vals = [
            frame_masked_mse(pred, f.channels["intensity"], f.channels["mask"])
            for pred, f in zip(preds, frames)
        ]
        return float(np.mean(vals))

    def score(self, X, y=None) -> float:
        # sklearn convention: larger is better.
        return -self.evaluate(X)

    # -- persistence ----------------------------------------------------------

    def _descriptor(self, which):
        desc = {
            "kind": self._kind,
            "combo": combo_name(self.combo),
            "channel_order": channel_names(self.combo),
            "in_channels": len(channel_names(self.combo)),
            "base_width": self.base_width,
            "depth": self.depth,
            "seed": self.seed,
            "grid_hw": list(self.grid_hw_),
            "norm_mean": [float(v) for v in self.norm_mean_],
            "norm_std": [float(v) for v in self.norm_std_],
            "which": which,
            "val_mse": self.best_val_mse_ if which == "best" else self.final_val_mse_,
        }
        return desc

    def save(self, path, which: str = "best") -> None:
        """Write a checkpoint; ``which`` selects the best-validation or final state."""
        self._check_fitted()
        if which not in ("best", "final"):
            raise ConfigError(f"which must be 'best' or 'final', got {which!r}")
        state = self.best_state_ if which == "best" else self.final_state_
        save_checkpoint(path, self._descriptor(which), state)

    # -- shared fit helpers ----------------------------------------------------

    def _prepare_fit(self, frames, val_frames):
        frames = list(frames)
        h, w = check_frames(frames, combo=self.combo)
        if val_frames:
            val_frames = list(val_frames)
            check_frames(val_frames, combo=self.combo)
            if val_frames[0].shape != (h, w):
                raise GridMismatchError("validation frames on a different grid")
        self.grid_hw_ = (h, w)
        stacks, targets, masks = self._stack_frames(frames)
        self._fit_norm_stats(stacks)
        x = self._standardize(stacks)
        return x, targets.astype(np.float32), masks.astype(np.float32), val_frames

    def _dump_fault(self, fault_dump_dir, state, context):
        if fault_dump_dir is None:
            return None
        path = Path(fault_dump_dir) / "training_fault_dump.npz"
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(path, **{f"param/{k}": v for k, v in state.items()},
                 **{f"context/{k}": np.asarray(v) for k, v in context.items()})
        return str(path)

    def _track_best(self, epoch, val_mse, state_fn):
        if val_mse is not None and (self.best_val_mse_ is None or val_mse < self.best_val_mse_):
            self.best_val_mse_ = val_mse
            self.best_epoch_ = epoch
            self.best_state_ = state_fn()


class UNetIntensityRegressor(_IntensityRegressorBase):
    """Masked-L2 encoder-decoder intensity predictor."""

    _kind = "unet"

    def __init__(self, combo="D", base_width=32, depth=5, epochs=30, batch_size=4,
                 lr=0.003, weight_decay=0.001, seed=0):
        self.combo = combo
        self.base_width = base_width
        self.depth = depth
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.seed = seed

    def fit(self, frames, val_frames=None, fault_dump_dir=None):
        with threadpool_limits(limits=1):
            return self._fit_impl(frames, val_frames, fault_dump_dir)

    def _fit_impl(self, frames, val_frames, fault_dump_dir):
        x, y, m, val_frames = self._prepare_fit(frames, val_frames)
        n, c, h, w = x.shape
        self.model_ = models.build_unet(c, self.base_width, self.depth,
                                        seed=self.seed, input_size=(h, w))
        self.n_params_ = self.model_.param_count()
        opt = Adam(self.model_.parameters(), lr=self.lr, betas=(0.9, 0.999),
                   weight_decay=self.weight_decay)

        self.history_ = []
        self.best_val_mse_ = None
        self.best_epoch_ = None
        self.best_state_ = None
        bs = max(1, int(self.batch_size))
        for epoch in range(1, int(self.epochs) + 1):
            order = _epoch_rng(self.seed, "shuffle", epoch).permutation(n)
            losses = []
            for lo in range(0, n, bs):
                sel = order[lo:lo + bs]
                opt.zero_grad()
                loss = ad.masked_mse(self.model_(ad.constant(x[sel])),
                                     ad.constant(y[sel]), m[sel])
                value = loss.item()
                if not np.isfinite(value):
                    dump = self._dump_fault(fault_dump_dir, self.model_.state_arrays(),
                                            {"epoch": epoch, "batch_start": lo})
                    raise TrainingFault("non-finite training loss", dump_path=dump)
                ad.backward(loss)
                opt.step()
                losses.append(value)
            row = {"epoch": epoch, "train_loss": float(np.mean(losses))}
            if val_frames:
                row["val_mse"] = self.evaluate(val_frames)
                self._track_best(epoch, row["val_mse"], self.model_.state_arrays)
            self.history_.append(row)

        self.final_state_ = self.model_.state_arrays()
        self.final_val_mse_ = self.history_[-1].get("val_mse") if self.history_ else None
        if self.best_state_ is None:
            self.best_state_ = self.final_state_
            self.best_val_mse_ = self.final_val_mse_
            self.best_epoch_ = int(self.epochs)
        return self

    def use_state(self, which: str = "best") -> None:
        """Point the live model at the best or final parameter snapshot."""
        self._check_fitted()
        self.model_.load_state_arrays(self.best_state_ if which == "best" else self.final_state_)


class Pix2PixIntensityRegressor(_IntensityRegressorBase):
    """Conditional adversarial intensity predictor (generator + patch critic)."""

    _kind = "pix2pix"

    def __init__(self, combo="D", base_width=32, depth=5, disc_width=64, epochs=30,
                 batch_size=4, lr=0.0002, weight_decay=0.0, lam=100.0, gp_coeff=10.0,
                 seed=0):
        self.combo = combo
        self.base_width = base_width
        self.depth = depth
        self.disc_width = disc_width
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.lam = lam
        self.gp_coeff = gp_coeff
        self.seed = seed

    def _generator(self):
        return self.gen_

    def fit(self, frames, val_frames=None, fault_dump_dir=None):
        with threadpool_limits(limits=1):
            return self._fit_impl(frames, val_frames, fault_dump_dir)

    def _fit_impl(self, frames, val_frames, fault_dump_dir):
        x, y, m, val_frames = self._prepare_fit(frames, val_frames)
        n, c, h, w = x.shape
        self.gen_, self.disc_ = models.build_pix2pix(
            c, self.base_width, self.depth, self.disc_width, seed=self.seed,
            input_size=(h, w))
        self.model_ = self.gen_  # fitted marker; predictions come from the generator
        self.n_params_ = self.gen_.param_count() + self.disc_.param_count()
        objective = models.TrainObjective(kind="pix2pix", lam=self.lam,
                                          gp_coeff=self.gp_coeff)
        gen_opt = Adam(self.gen_.parameters(), lr=self.lr, betas=(0.5, 0.999),
                       weight_decay=self.weight_decay)
        disc_opt = Adam(self.disc_.parameters(), lr=self.lr, betas=(0.5, 0.999),
                        weight_decay=self.weight_decay)

        self.history_ = []
        self.best_val_mse_ = None
        self.best_epoch_ = None
        self.best_state_ = None
        bs = max(1, int(self.batch_size))
        log_keys = ("bce_real", "bce_fake", "r1", "g_adv", "g_l1")
        for epoch in range(1, int(self.epochs) + 1):
            order = _epoch_rng(self.seed, "shuffle", epoch).permutation(n)
            sums = {k: 0.0 for k in ("g_loss", "d_loss") + log_keys}
            batches = 0
            for lo in range(0, n, bs):
                sel = order[lo:lo + bs]
                try:
                    g_loss, d_loss, logs = models.pix2pix_step(
                        self.gen_, self.disc_, gen_opt, disc_opt,
                        x[sel], y[sel], m[sel], objective)
                except TrainingFault as fault:
                    state = self._gan_state()
                    dump = self._dump_fault(fault_dump_dir, state,
                                            {"epoch": epoch, "batch_start": lo})
                    raise TrainingFault(str(fault), dump_path=dump) from fault
                sums["g_loss"] += g_loss
                sums["d_loss"] += d_loss
                for k in log_keys:
                    sums[k] += logs[k]
                batches += 1
            row = {"epoch": epoch}
            row.update({k: sums[k] / batches for k in sums})
            if val_frames:
                row["val_mse"] = self.evaluate(val_frames)
                self._track_best(epoch, row["val_mse"], self._gan_state)
            self.history_.append(row)

        self.final_state_ = self._gan_state()
        self.final_val_mse_ = self.history_[-1].get("val_mse") if self.history_ else None
        if self.best_state_ is None:
            self.best_state_ = self.final_state_
            self.best_val_mse_ = self.final_val_mse_
            self.best_epoch_ = int(self.epochs)
        return self

    def _gan_state(self):
        state = {f"gen.{k}": v for k, v in self.gen_.state_arrays().items()}
        state.update({f"disc.{k}": v for k, v in self.disc_.state_arrays().items()})
        return state

    def use_state(self, which: str = "best") -> None:
        self._check_fitted()
        state = self.best_state_ if which == "best" else self.final_state_
        self.gen_.load_state_arrays(
            {k[len("gen."):]: v for k, v in state.items() if k.startswith("gen.")})
        self.disc_.load_state_arrays(
            {k[len("disc."):]: v for k, v in state.items() if k.startswith("disc.")})

    def _descriptor(self, which):
        desc = super()._descriptor(which)
        desc["disc_width"] = self.disc_width
        return desc


def load_estimator(path):
    """Rebuild a fitted estimator from a checkpoint file."""
    descriptor, params = load_checkpoint(path)
    kind = descriptor.get("kind")
    h, w = descriptor["grid_hw"]
    if kind == "unet":
        est = UNetIntensityRegressor(combo=descriptor["combo"],
                                     base_width=descriptor["base_width"],
                                     depth=descriptor["depth"],
                                     seed=descriptor.get("seed", 0))
        est.model_ = models.build_unet(descriptor["in_channels"], est.base_width,
                                       est.depth, seed=est.seed, input_size=(h, w))
        est.model_.load_state_arrays(params)
    elif kind == "pix2pix":
        est = Pix2PixIntensityRegressor(combo=descriptor["combo"],
                                        base_width=descriptor["base_width"],
                                        depth=descriptor["depth"],
                                        disc_width=descriptor.get("disc_width", 64),
                                        seed=descriptor.get("seed", 0))
        est.gen_, est.disc_ = models.build_pix2pix(
            descriptor["in_channels"], est.base_width, est.depth, est.disc_width,
            seed=est.seed, input_size=(h, w))
        est.model_ = est.gen_
        est.gen_.load_state_arrays(
            {k[len("gen."):]: v for k, v in params.items() if k.startswith("gen.")})
        est.disc_.load_state_arrays(
            {k[len("disc."):]: v for k, v in params.items() if k.startswith("disc.")})
    else:
        raise DataError(f"{path}: unknown checkpoint kind {kind!r}")

    est.grid_hw_ = (h, w)
    est.norm_mean_ = np.asarray(descriptor["norm_mean"], dtype=np.float64)
    est.norm_std_ = np.asarray(descriptor["norm_std"], dtype=np.float64)
    est.history_ = []
    est.best_val_mse_ = descriptor.get("val_mse")
    est.final_val_mse_ = descriptor.get("val_mse")
    est.best_state_ = dict(params)
    est.final_state_ = dict(params)
    est.descriptor_ = descriptor
    return est
