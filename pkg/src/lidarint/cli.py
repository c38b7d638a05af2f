"""Command-line interface.

One binary with subcommands::

    lidarint synth      generate synthetic frames to disk
    lidarint project    project a point cloud to a spherical image
    lidarint angles     per-point incidence angles as CSV
    lidarint train      train a predictor from a config file
    lidarint eval       masked MSE of a checkpoint on a dataset split
    lidarint ablation   combo-by-combo MSE table as CSV
    lidarint histogram  signed-error histogram as CSV
    lidarint heatmap    per-cell MSE map as PGM + raw sidecar
    lidarint render     reference/predicted grayscale image pair

Global flags: ``--config PATH`` (key = value file), ``--seed N``,
``--deterministic``, ``--threads N``. Exit codes: 0 success, 2 config
error, 3 data error, 4 training fault.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import pipeline
from .cloud import load_camera_frame, colorize, read_labels, read_point_cloud, \
    save_labels, save_point_cloud
from .estimators import load_estimator
from .evaluation import (
    ablation_matrix,
    error_heatmap,
    error_histogram,
    eval_mse,
    export_heatmap,
    render_intensity,
    write_ablation_csv,
    write_histogram_csv,
)
from .exceptions import ConfigError, DataError, TrainingFault
from .geometry import estimate_incidence
from .projection import export_spherical_image, spherical_project
from .synth import synth_scene

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_FAULT = 4


def _build_parser():
    parser = argparse.ArgumentParser(prog="lidarint", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--deterministic", action="store_true",
                        help="single-threaded, bitwise-reproducible runs")
    parser.add_argument("--threads", type=int, help="worker threads for frame preprocessing")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write synthetic frames (point clouds + labels)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--count", type=int, default=None, help="frames to write (default: config)")
    p.add_argument("--dump-angles", action="store_true",
                   help="also write exact per-point angles as CSV")

    p = sub.add_parser("project", help="spherical projection of one point cloud")
    p.add_argument("--cloud", required=True)
    p.add_argument("--labels")
    p.add_argument("--camera-image")
    p.add_argument("--camera-proj")
    p.add_argument("--with-incidence", action="store_true",
                   help="estimate and attach the incidence channel")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--stem", default="frame")

    p = sub.add_parser("angles", help="estimated per-point incidence angles as CSV")
    p.add_argument("--cloud", required=True)
    p.add_argument("--k", type=int, default=None, help="neighborhood size (default: config)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train the configured predictor")
    p.add_argument("--out-dir", default=None)
    for key in ("arch", "combo"):
        p.add_argument(f"--{key}")
    for key in ("epochs", "batch-size", "frames", "train-frames", "val-frames",
                "test-frames", "height", "width", "base-width", "depth", "disc-width"):
        p.add_argument(f"--{key}", type=int)
    for key in ("lr", "weight-decay", "lam", "gp-coeff", "noise-sigma"):
        p.add_argument(f"--{key}", type=float)
    p.add_argument("--data-dir")
    p.add_argument("--frame-list")

    for name in ("eval", "histogram", "heatmap", "render"):
        p = sub.add_parser(name)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
        p.add_argument("--data-dir")
        p.add_argument("--frame-list")
        if name == "histogram":
            p.add_argument("--bins", type=int, default=201)
            p.add_argument("--out", required=True)
        elif name == "heatmap":
            p.add_argument("--out-prefix", required=True)
        elif name == "render":
            p.add_argument("--index", type=int, default=0)
            p.add_argument("--out-dir", required=True)

    p = sub.add_parser("ablation", help="combo-by-combo masked-MSE table")
    p.add_argument("--checkpoint", action="append", default=[],
                   help="repeatable; one trained checkpoint per combo")
    p.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    p.add_argument("--dataset-name", default="synthetic")
    p.add_argument("--data-dir")
    p.add_argument("--frame-list")
    p.add_argument("--out", required=True)
    return parser


def _load_config(args) -> pipeline.TrainConfig:
    if args.config:
        cfg = pipeline.load_train_config(args.config)
    else:
        cfg = pipeline.TrainConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.deterministic:
        overrides["deterministic"] = True
    if args.threads is not None:
        overrides["threads"] = args.threads
    for key in ("data_dir", "frame_list"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return pipeline.apply_overrides(cfg, overrides)


def _split_frames(cfg, split):
    frames = pipeline.build_dataset(cfg)
    if split == "all":
        return frames
    train, val, test = pipeline.split_dataset(
        frames, (cfg.train_frames, cfg.val_frames, cfg.test_frames), cfg.seed)
    chosen = {"train": train, "val": val, "test": test}[split]
    if not chosen:
        raise DataError(f"split {split!r} is empty under the current config")
    return chosen


def _cmd_synth(args, cfg):
    out = Path(args.out_dir)
    (out / "velodyne").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    if args.dump_angles:
        (out / "angles").mkdir(parents=True, exist_ok=True)
    grid = cfg.projection_config()
    scene_cfg = cfg.scene_config()
    count = args.count if args.count is not None else cfg.frames
    names = []
    for i in range(count):
        frame = synth_scene(pipeline.frame_seed(cfg.seed, i), scene_cfg, grid)
        name = f"{i:05d}"
        save_point_cloud(frame.cloud, out / "velodyne" / f"{name}.bin")
        save_labels(frame.cloud.label, out / "labels" / f"{name}.label")
        if args.dump_angles:
            with open(out / "angles" / f"{name}.csv", "w") as f:
                f.write("index,angle_rad\n")
                for j, a in enumerate(frame.angles):
                    f.write(f"{j},{float(a)!r}\n")
        names.append(name)
    (out / "frames.txt").write_text("\n".join(names) + "\n")
    print(f"wrote {count} frames to {out}")
    return EXIT_OK


def _cmd_project(args, cfg):
    cloud = read_point_cloud(args.cloud, intensity_scale=cfg.intensity_scale)
    if args.labels:
        cloud = cloud.with_attrs(label=read_labels(args.labels, len(cloud)))
    if args.camera_image or args.camera_proj:
        if not (args.camera_image and args.camera_proj):
            raise ConfigError("--camera-image and --camera-proj go together")
        cloud = colorize(cloud, load_camera_frame(args.camera_image, args.camera_proj))
    if args.with_incidence:
        angles, _, _ = estimate_incidence(cloud, k=cfg.knn_k)
        cloud = cloud.with_attrs(incidence=angles.astype(np.float32))
    img = spherical_project(cloud, cfg.projection_config())
    written = export_spherical_image(args.out_dir, img, stem=args.stem)
    print(f"wrote {len(written) - 2} channel images + packed stack to {args.out_dir}")
    return EXIT_OK


def _cmd_angles(args, cfg):
    from .geometry import write_incidence_csv

    cloud = read_point_cloud(args.cloud, intensity_scale=cfg.intensity_scale)
    k = args.k if args.k is not None else cfg.knn_k
    angles, _, degenerate = estimate_incidence(cloud, k=k)
    write_incidence_csv(args.out, angles, degenerate)
    print(f"wrote {len(angles)} angles to {args.out}")
    return EXIT_OK


def _cmd_train(args, cfg):
    overrides = {}
    for key in ("arch", "combo", "epochs", "batch_size", "frames", "train_frames",
                "val_frames", "test_frames", "height", "width", "base_width",
                "depth", "disc_width", "lr", "weight_decay", "lam", "gp_coeff",
                "noise_sigma", "out_dir"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    cfg = pipeline.apply_overrides(cfg, overrides)
    result = pipeline.train(cfg)
    last = result.history[-1] if result.history else {}
    print(f"checkpoints: {result.best_path} {result.final_path}")
    print(f"metrics: {result.metrics_path}")
    if "val_mse" in last:
        print(f"final val masked-MSE: {last['val_mse']!r}")
    return EXIT_OK


def _cmd_eval(args, cfg):
    est = load_estimator(args.checkpoint)
    frames = _split_frames(cfg, args.split)
    mse = eval_mse(est, frames)
    print(f"masked-MSE[{est._kind}/{est.combo} on {args.split}] = {mse!r}")
    return EXIT_OK


def _cmd_ablation(args, cfg):
    frames = _split_frames(cfg, args.split) if args.checkpoint else []
    rows = ablation_matrix(args.checkpoint, frames, args.dataset_name)
    write_ablation_csv(args.out, rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def _cmd_histogram(args, cfg):
    est = load_estimator(args.checkpoint)
    frames = _split_frames(cfg, args.split)
    edges, counts = error_histogram(est, frames, bins=args.bins)
    write_histogram_csv(args.out, edges, counts)
    print(f"wrote {len(counts)} bins ({int(counts.sum())} samples) to {args.out}")
    return EXIT_OK


def _cmd_heatmap(args, cfg):
    est = load_estimator(args.checkpoint)
    frames = _split_frames(cfg, args.split)
    mse_map, count_map = error_heatmap(est, frames)
    written = export_heatmap(args.out_prefix, mse_map, count_map)
    print(f"wrote {written['pgm']} and {written['raw']}")
    return EXIT_OK


def _cmd_render(args, cfg):
    est = load_estimator(args.checkpoint)
    frames = _split_frames(cfg, args.split)
    if not 0 <= args.index < len(frames):
        raise DataError(f"frame index {args.index} outside 0..{len(frames) - 1}")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ref, pred = out / "reference.png", out / "predicted.png"
    render_intensity(est, frames[args.index], ref, pred)
    print(f"wrote {ref} and {pred}")
    return EXIT_OK


_COMMANDS = {
    "synth": _cmd_synth,
    "project": _cmd_project,
    "angles": _cmd_angles,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablation": _cmd_ablation,
    "histogram": _cmd_histogram,
    "heatmap": _cmd_heatmap,
    "render": _cmd_render,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        limit = 1 if cfg.deterministic else None
        with threadpool_limits(limits=limit):
            return _COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingFault as exc:
        where = f" (state dump: {exc.dump_path})" if exc.dump_path else ""
        print(f"training fault: {exc}{where}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
