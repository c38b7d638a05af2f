"""Dataset assembly, splitting, and the training entry point.

Configuration lives in a flat ``key = value`` text file (``#`` starts a
comment); command-line flags override file values. The documented keys and
their defaults are the fields of :class:`TrainConfig`. Angles are given in
degrees in config files and converted once here.

Synthetic mode builds scenes deterministically from the seed; real mode
reads KITTI-layout directories (``velodyne/*.bin`` plus optional
``labels/*.label`` and ``camera/`` with per-frame images and projection
matrices) restricted to an explicit frame-list file.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cloud import load_camera_frame, colorize, read_labels, read_point_cloud
from .estimators import Pix2PixIntensityRegressor, UNetIntensityRegressor
from .exceptions import ConfigError, DataError
from .geometry import estimate_incidence
from .projection import ProjectionConfig, parse_combo, spherical_project
from .seeding import derived_rng, derived_seed
from .synth import SynthSceneConfig, synth_scene

_ARCH_DEFAULTS = {
    "unet": {"lr": 0.003, "weight_decay": 0.001},
    "pix2pix": {"lr": 0.0002, "weight_decay": 0.0},
}


@dataclass
class TrainConfig:
    """Everything one training run needs; also the config-file schema."""

    arch: str = "unet"
    combo: str = "D"
    epochs: int = 30
    batch_size: int = 4
    lr: float | None = None  # None resolves to the architecture default
    weight_decay: float | None = None
    lam: float = 100.0
    gp_coeff: float = 10.0
    seed: int = 0
    base_width: int = 32
    depth: int = 5
    disc_width: int = 64

    height: int = 64
    width: int = 256
    fov_up_deg: float = 2.0
    fov_down_deg: float = -24.8
    r_max: float = 80.0
    knn_k: int = 16

    frames: int = 300
    train_frames: int = 200
    val_frames: int = 50
    test_frames: int = 50

    n_planes: int = 3
    n_boxes: int = 4
    n_cylinders: int = 4
    albedo: str = "0.85,0.2,0.35,0.5,0.65,0.8,0.92"
    attenuation: float = 60.0
    noise_sigma: float = 0.02

    data_dir: str | None = None
    frame_list: str | None = None
    intensity_scale: float = 1.0

    out_dir: str = "runs/latest"
    deterministic: bool = False
    threads: int = 1

    def resolved_lr(self) -> float:
        return self.lr if self.lr is not None else _ARCH_DEFAULTS[self.arch]["lr"]

    def resolved_weight_decay(self) -> float:
        if self.weight_decay is not None:
            return self.weight_decay
        return _ARCH_DEFAULTS[self.arch]["weight_decay"]

    def projection_config(self) -> ProjectionConfig:
        return ProjectionConfig(height=self.height, width=self.width,
                                fov_up=math.radians(self.fov_up_deg),
                                fov_down=math.radians(self.fov_down_deg),
                                r_max=self.r_max)

    def scene_config(self) -> SynthSceneConfig:
        table = tuple(float(v) for v in str(self.albedo).split(",") if v != "")
        return SynthSceneConfig(n_planes=self.n_planes, n_boxes=self.n_boxes,
                                n_cylinders=self.n_cylinders, albedo=table,
                                attenuation=self.attenuation,
                                noise_sigma=self.noise_sigma)

    def validate(self) -> "TrainConfig":
        if self.arch not in _ARCH_DEFAULTS:
            raise ConfigError(f"unknown architecture {self.arch!r}")
        parse_combo(self.combo)
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        sizes = (self.train_frames, self.val_frames, self.test_frames)
        if min(sizes) < 0 or sum(sizes) > self.frames:
            raise ConfigError(
                f"split sizes {sizes} oversubscribe the {self.frames}-frame dataset"
            )
        self.projection_config()
        if self.data_dir is None:
            self.scene_config()
        return self


_BOOL_VALUES = {"true": True, "1": True, "yes": True,
                "false": False, "0": False, "no": False}


def load_train_config(path) -> TrainConfig:
    """Parse a flat key = value config file into a :class:`TrainConfig`."""
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    values = {}
    try:
        f = open(path)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    with f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in fields:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _coerce(key, raw)
    return TrainConfig(**values).validate()


def _coerce(key: str, raw: str):
    target = TrainConfig.__dataclass_fields__[key].type
    if raw.lower() == "none":
        return None
    if key in ("deterministic",):
        if raw.lower() not in _BOOL_VALUES:
            raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
        return _BOOL_VALUES[raw.lower()]
    if "int" in str(target):
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from exc
    if "float" in str(target):
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from exc
    return raw


def apply_overrides(cfg: TrainConfig, overrides: dict) -> TrainConfig:
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    clean = {}
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        clean[key] = value
    return dataclasses.replace(cfg, **clean).validate()


def split_dataset(frames, sizes, seed: int):
    """Deterministic shuffled split into (train, val, test) disjoint lists."""
    frames = list(frames)
    n_train, n_val, n_test = sizes
    if min(sizes) < 0:
        raise ConfigError(f"negative split size in {sizes}")
    if n_train + n_val + n_test > len(frames):
        raise ConfigError(f"split sizes {sizes} exceed {len(frames)} frames")
    rng = derived_rng(seed, "split")
    perm = rng.permutation(len(frames))
    train = [frames[i] for i in perm[:n_train]]
    val = [frames[i] for i in perm[n_train:n_train + n_val]]
    test = [frames[i] for i in perm[n_train + n_val:n_train + n_val + n_test]]
    return train, val, test


def frame_seed(seed: int, index: int) -> int:
    return derived_seed(seed, "frame", index)


def synth_frame(seed: int, scene_cfg: SynthSceneConfig, grid: ProjectionConfig,
                knn_k: int = 16, return_scene: bool = False):
    """One synthetic frame: scene -> estimated incidence -> spherical image."""
    scene = synth_scene(seed, scene_cfg, grid)
    cloud = scene.cloud
    angles, _, _ = estimate_incidence(cloud, k=knn_k)
    cloud = cloud.with_attrs(incidence=angles.astype(np.float32))
    image = spherical_project(cloud, grid)
    if return_scene:
        return image, scene
    return image


def build_synthetic_dataset(cfg: TrainConfig):
    grid = cfg.projection_config()
    scene_cfg = cfg.scene_config()
    threads = 1 if cfg.deterministic else max(1, int(cfg.threads))
    seeds = [frame_seed(cfg.seed, i) for i in range(cfg.frames)]
    if threads == 1:
        return [synth_frame(s, scene_cfg, grid, cfg.knn_k) for s in seeds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda s: synth_frame(s, scene_cfg, grid, cfg.knn_k), seeds))


def load_real_dataset(cfg: TrainConfig):
    """Frames from a KITTI-layout directory restricted to the frame list."""
    if cfg.frame_list is None:
        raise ConfigError("real datasets require a frame_list file")
    root = Path(cfg.data_dir)
    names = [ln.strip() for ln in Path(cfg.frame_list).read_text().splitlines()
             if ln.strip() and not ln.strip().startswith("#")]
    if not names:
        raise DataError(f"{cfg.frame_list}: no frame names")
    grid = cfg.projection_config()
    label_dir = root / "labels"
    cam_dir = root / "camera"
    global_proj = cam_dir / "proj.txt"

    def one(name):
        cloud = read_point_cloud(root / "velodyne" / f"{name}.bin",
                                 intensity_scale=cfg.intensity_scale)
        label_path = label_dir / f"{name}.label"
        if label_path.exists():
            cloud = cloud.with_attrs(label=read_labels(label_path, len(cloud)))
        image_path = None
        for ext in (".png", ".ppm", ".jpg"):
            candidate = cam_dir / f"{name}{ext}"
            if candidate.exists():
                image_path = candidate
                break
        if image_path is not None:
            proj_path = cam_dir / f"{name}.txt"
            if not proj_path.exists():
                proj_path = global_proj
            cam = load_camera_frame(image_path, proj_path)
            cloud = colorize(cloud, cam)
        angles, _, _ = estimate_incidence(cloud, k=cfg.knn_k)
        cloud = cloud.with_attrs(incidence=angles.astype(np.float32))
        return spherical_project(cloud, grid)

    threads = 1 if cfg.deterministic else max(1, int(cfg.threads))
    if threads == 1:
        return [one(n) for n in names]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, names))


def build_dataset(cfg: TrainConfig):
    if cfg.data_dir is not None:
        return load_real_dataset(cfg)
    return build_synthetic_dataset(cfg)


def make_estimator(cfg: TrainConfig):
    if cfg.arch == "unet":
        return UNetIntensityRegressor(
            combo=cfg.combo, base_width=cfg.base_width, depth=cfg.depth,
            epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.resolved_lr(),
            weight_decay=cfg.resolved_weight_decay(), seed=cfg.seed)
    return Pix2PixIntensityRegressor(
        combo=cfg.combo, base_width=cfg.base_width, depth=cfg.depth,
        disc_width=cfg.disc_width, epochs=cfg.epochs, batch_size=cfg.batch_size,
        lr=cfg.resolved_lr(), weight_decay=cfg.resolved_weight_decay(),
        lam=cfg.lam, gp_coeff=cfg.gp_coeff, seed=cfg.seed)


@dataclass
class TrainResult:
    estimator: object
    best_path: str
    final_path: str
    metrics_path: str
    history: list


def write_metrics_csv(path, history) -> None:
    """Long-format metric log: one (epoch, split, loss_name, value) row per metric."""
    split_of = {"train_loss": "train", "val_mse": "val"}
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "split", "loss_name", "value"])
        for row in history:
            epoch = row["epoch"]
            for key in sorted(row):
                if key == "epoch":
                    continue
                writer.writerow([epoch, split_of.get(key, "train"), key,
                                 repr(float(row[key]))])


def train(cfg: TrainConfig) -> TrainResult:
    """Build the dataset, fit the configured estimator, save checkpoints + metrics."""
    cfg.validate()
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    frames = build_dataset(cfg)
    train_frames, val_frames, _ = split_dataset(
        frames, (cfg.train_frames, cfg.val_frames, cfg.test_frames), cfg.seed)

    estimator = make_estimator(cfg)
    estimator.fit(train_frames, val_frames or None, fault_dump_dir=out_dir)

    best_path = out_dir / "checkpoint_best.lickpt"
    final_path = out_dir / "checkpoint_final.lickpt"
    estimator.save(best_path, which="best")
    estimator.save(final_path, which="final")
    metrics_path = out_dir / "metrics.csv"
    write_metrics_csv(metrics_path, estimator.history_)
    return TrainResult(estimator=estimator, best_path=str(best_path),
                       final_path=str(final_path), metrics_path=str(metrics_path),
                       history=estimator.history_)
