"""Analysis artifacts: ablation table, error histograms, error heatmaps, renders.

All accumulators run in float64 and frames merge associatively in frame
order, so parallel evaluation reproduces the sequential result. Outputs
are plain CSV/PGM/PNG; plotting happens elsewhere.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .exceptions import DataError, GridMismatchError
from .projection import COMBO_ORDER, combo_name, write_lsi, write_pgm16
from .validation import check_frames


def frame_masked_mse(pred, target, mask) -> float:
    """Masked squared error of one plane, normalized by the masked-cell count."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if pred.shape != target.shape or pred.shape != mask.shape:
        raise DataError(
            f"plane shapes differ: pred {pred.shape}, target {target.shape}, mask {mask.shape}"
        )
    denom = mask.sum()
    if denom == 0:
        return 0.0
    d = (pred - target) * mask
    return float((d * d).sum() / denom)


def eval_mse(estimator, frames) -> float:
    """Mean over frames of the masked squared error under the estimator's own scaling."""
    frames = list(frames)
    check_frames(frames, combo=estimator.combo)
    preds = estimator.predict(frames)
    return float(np.mean([
        frame_masked_mse(p, f.channels["intensity"], f.channels["mask"])
        for p, f in zip(preds, frames)
    ]))


@dataclass(frozen=True)
class EvalRow:
    architecture: str
    dataset: str
    combo: str
    mse: float | None  # None renders as "-" (modality or checkpoint unavailable)


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    histogram: tuple | None = None  # (edges, counts)
    heatmap: tuple | None = None  # (mse_map, count_map)


def ablation_matrix(checkpoint_paths, frames, dataset_name: str) -> list:
    """Evaluate checkpoints over the canonical combo columns.

    Returns one :class:`EvalRow` per (architecture, combo) cell across the
    full combo column set; cells with no checkpoint or with modalities the
    frames cannot supply hold None. An empty checkpoint list yields an
    empty table.
    """
    from .estimators import load_estimator  # deferred: avoids an import cycle

    if not checkpoint_paths:
        return []
    loaded = {}
    for path in checkpoint_paths:
        est = load_estimator(path)
        key = (est._kind, combo_name(est.combo))
        loaded[key] = est

    archs = sorted({kind for kind, _ in loaded})
    rows = []
    for arch in archs:
        for combo in COMBO_ORDER:
            est = loaded.get((arch, combo))
            mse = None
            if est is not None:
                try:
                    mse = eval_mse(est, frames)
                except DataError:
                    mse = None  # modality not present on this dataset
            rows.append(EvalRow(architecture=arch, dataset=dataset_name,
                                combo=combo, mse=mse))
    return rows


def write_ablation_csv(path, rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["architecture", "dataset", "combo", "masked_mse"])
        for row in rows:
            value = "-" if row.mse is None else repr(float(row.mse))
            writer.writerow([row.architecture, row.dataset, row.combo, value])


def error_histogram(estimator, frames, bins: int = 201):
    """Signed error (target - prediction) histogram over masked cells.

    Bin edges span [-1, 1]; errors beyond that are clamped into the edge
    bins so the total count always equals the number of masked cells.
    """
    if bins < 2:
        raise DataError(f"need at least 2 bins, got {bins}")
    frames = list(frames)
    check_frames(frames, combo=estimator.combo)
    edges = np.linspace(-1.0, 1.0, bins + 1)
    counts = np.zeros(bins, dtype=np.int64)
    preds = estimator.predict(frames)
    for pred, frame in zip(preds, frames):
        mask = frame.channels["mask"] > 0
        err = frame.channels["intensity"][mask].astype(np.float64) - pred[mask]
        np.clip(err, -1.0, 1.0, out=err)
        counts += np.histogram(err, bins=edges)[0]
    return edges, counts


def write_histogram_csv(path, edges, counts) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["bin_low", "bin_high", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            writer.writerow([repr(float(lo)), repr(float(hi)), int(c)])


def error_heatmap(estimator, frames):
    """Per-cell mean squared error across frames (cells never hit stay 0).

    Returns ``(mse_map, count_map)`` as float64/int64 arrays.
    """
    frames = list(frames)
    shape = check_frames(frames, combo=estimator.combo)
    sq_sum = np.zeros(shape, dtype=np.float64)
    count = np.zeros(shape, dtype=np.int64)
    preds = estimator.predict(frames)
    for pred, frame in zip(preds, frames):
        mask = frame.channels["mask"] > 0
        err = frame.channels["intensity"].astype(np.float64) - pred
        sq_sum[mask] += err[mask] ** 2
        count[mask] += 1
    mse_map = np.divide(sq_sum, count, out=np.zeros(shape, dtype=np.float64),
                        where=count > 0)
    return mse_map, count


def export_heatmap(prefix, mse_map, count_map) -> dict:
    """Write the heatmap as a 16-bit PGM plus a raw float sidecar."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    pgm = prefix.with_suffix(".pgm")
    write_pgm16(pgm, np.clip(mse_map, 0.0, 1.0))
    raw = prefix.with_suffix(".lsi")
    write_lsi(raw, np.stack([mse_map.astype(np.float32),
                             count_map.astype(np.float32)]),
              names=["mse", "count"])
    return {"pgm": str(pgm), "raw": str(raw)}


def _to_gray(plane) -> np.ndarray:
    return np.floor(np.clip(plane, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def render_intensity(estimator, frame, out_reference, out_predicted) -> None:
    """Write reference and predicted intensity as 8-bit grayscale images.

    Cells without a return render black in both images.
    """
    check_frames([frame], combo=estimator.combo)
    mask = frame.channels["mask"]
    pred = estimator.predict(frame)
    Image.fromarray(_to_gray(frame.channels["intensity"] * mask), mode="L").save(out_reference)
    Image.fromarray(_to_gray(pred * mask), mode="L").save(out_predicted)
