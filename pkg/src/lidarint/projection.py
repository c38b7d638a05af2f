"""Spherical (range-image) projection and channel assembly.

A point maps to grid cell ``(v, u)`` through its azimuth phi = atan2(y, x)
and elevation psi = asin(z / r):

    u = floor(0.5 * (1 - phi/pi) * W)            clamped to [0, W-1]
    v = floor((1 - (psi - fov_down) / fov) * H)   clamped to [0, H-1]

Points outside the elevation field of view are discarded. When several
points land in one cell the nearest range wins; equal ranges keep the
lowest point index so projection is order-independent.

Channel stack order is fixed so checkpoints stay unambiguous:

    depth, mask, incidence, label, r, g, b, color_mask

``D`` selects {depth, mask}, ``I`` incidence, ``L`` label, ``RGB``
{r, g, b, color_mask}; subsets preserve the relative order above.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cloud import PointCloud
from .exceptions import ConfigError, DataError, EmptyCloudError, ModalityUnavailableError

LSI_MAGIC = b"LSI1"

# (channel name, modality token) in stack order.
_CHANNEL_TABLE = (
    ("depth", "D"),
    ("mask", "D"),
    ("incidence", "I"),
    ("label", "L"),
    ("r", "RGB"),
    ("g", "RGB"),
    ("b", "RGB"),
    ("color_mask", "RGB"),
)

MODALITIES = ("D", "I", "L", "RGB")

# Table column order used for ablation reports.
COMBO_ORDER = ("D", "D+I", "D+L", "D+L+I", "D+RGB", "D+RGB+I", "D+RGB+L", "D+RGB+L+I")

_LABEL_SCALE = 255.0  # single-plane label encoding: class_id / 255


@dataclass(frozen=True)
class ProjectionConfig:
    """Grid geometry for the spherical projection (angles in radians)."""

    height: int = 64
    width: int = 1024
    fov_up: float = math.radians(2.0)
    fov_down: float = math.radians(-24.8)
    r_max: float = 80.0

    def __post_init__(self):
        if self.height < 1:
            raise ConfigError("height must be >= 1")
        if self.width < 2:
            raise ConfigError("width must be >= 2")
        if not self.fov_up > self.fov_down:
            raise ConfigError("fov_up must exceed fov_down")
        if not self.r_max > 0:
            raise ConfigError("r_max must be positive")

    @property
    def fov(self) -> float:
        return self.fov_up - self.fov_down

    def ray_directions(self) -> np.ndarray:
        """(H*W, 3) unit directions through every cell center, row-major.

        A point cast along the direction of cell (v, u) projects back to
        exactly that cell.
        """
        h, w = self.height, self.width
        u = np.arange(w, dtype=np.float64) + 0.5
        v = np.arange(h, dtype=np.float64) + 0.5
        phi = math.pi * (1.0 - 2.0 * u / w)
        psi = self.fov_up - (v / h) * self.fov
        cp = np.cos(psi)[:, None]
        d = np.empty((h, w, 3), dtype=np.float64)
        d[:, :, 0] = cp * np.cos(phi)[None, :]
        d[:, :, 1] = cp * np.sin(phi)[None, :]
        d[:, :, 2] = np.sin(psi)[:, None]
        return d.reshape(-1, 3)


@dataclass
class SphericalImage:
    """Multi-channel spherical grid with the winning source point per cell.

    ``channels`` maps names to (H, W) float32 planes; cells with mask=0 hold
    zeros everywhere and point_index -1. The ground-truth ``intensity``
    plane rides along with the input channels.
    """

    channels: dict
    point_index: np.ndarray
    config: ProjectionConfig
    n_points: int
    meta: dict = field(default_factory=dict)

    @property
    def mask(self) -> np.ndarray:
        return self.channels["mask"]

    @property
    def shape(self):
        return (self.config.height, self.config.width)


def parse_combo(combo) -> frozenset:
    """Normalize a modality combination like ``"D+L+I"`` to a frozenset of tokens."""
    if isinstance(combo, str):
        tokens = [t for t in combo.replace(" ", "").split("+") if t]
    else:
        tokens = list(combo)
    bad = [t for t in tokens if t not in MODALITIES]
    if bad:
        raise ConfigError(f"unknown modalities {bad}; valid tokens are {list(MODALITIES)}")
    if not tokens:
        raise ConfigError("empty modality combination")
    return frozenset(tokens)


def combo_name(combo) -> str:
    """Canonical display name (token order D, RGB, L, I as in the ablation table)."""
    tokens = parse_combo(combo)
    return "+".join(t for t in ("D", "RGB", "L", "I") if t in tokens)


def channel_names(combo) -> list:
    """Stack channel names for a combo, in the fixed order."""
    tokens = parse_combo(combo)
    return [name for name, mod in _CHANNEL_TABLE if mod in tokens]


def spherical_project(cloud: PointCloud, cfg: ProjectionConfig) -> SphericalImage:
    """Project a cloud onto the spherical grid, keeping the nearest point per cell."""
    n = len(cloud)
    if n == 0:
        raise EmptyCloudError("cannot project an empty cloud")
    h, w = cfg.height, cfg.width

    pts = cloud.points.astype(np.float64)
    r = np.linalg.norm(pts, axis=1)
    if np.any(r <= 0):
        raise DataError("cloud contains zero-range points")
    phi = np.arctan2(pts[:, 1], pts[:, 0])
    psi = np.arcsin(np.clip(pts[:, 2] / r, -1.0, 1.0))

    in_fov = (psi >= cfg.fov_down) & (psi <= cfg.fov_up)
    idx = np.flatnonzero(in_fov)

    u = np.floor(0.5 * (1.0 - phi[idx] / math.pi) * w).astype(np.int64)
    v = np.floor((1.0 - (psi[idx] - cfg.fov_down) / cfg.fov) * h).astype(np.int64)
    np.clip(u, 0, w - 1, out=u)
    np.clip(v, 0, h - 1, out=v)
    cell = v * w + u

    # Nearest range wins; ties keep the lowest original index.
    order = np.lexsort((idx, r[idx]))
    _, first = np.unique(cell[order], return_index=True)
    win = order[first]
    win_cell = cell[win]
    win_idx = idx[win]

    point_index = np.full(h * w, -1, dtype=np.int64)
    point_index[win_cell] = win_idx

    def plane(values):
        p = np.zeros(h * w, dtype=np.float32)
        p[win_cell] = values
        return p.reshape(h, w)

    channels = {
        "depth": plane(np.clip(r[win_idx] / cfg.r_max, 0.0, 1.0)),
        "mask": plane(np.ones(len(win_idx))),
        "intensity": plane(cloud.intensity[win_idx]),
    }
    if cloud.incidence is not None:
        channels["incidence"] = plane(cloud.incidence[win_idx])
    if cloud.label is not None:
        channels["label"] = plane(cloud.label[win_idx] / _LABEL_SCALE)
    if cloud.rgb is not None:
        channels["r"] = plane(cloud.rgb[win_idx, 0])
        channels["g"] = plane(cloud.rgb[win_idx, 1])
        channels["b"] = plane(cloud.rgb[win_idx, 2])
        cm = cloud.color_mask if cloud.color_mask is not None else np.ones(n, dtype=np.uint8)
        channels["color_mask"] = plane(cm[win_idx])

    return SphericalImage(channels=channels, point_index=point_index.reshape(h, w),
                          config=cfg, n_points=n)


def select_channels(img: SphericalImage, combo) -> np.ndarray:
    """(C, H, W) float32 input stack for a modality combination."""
    names = channel_names(combo)
    missing = [name for name in names if name not in img.channels]
    if missing:
        raise ModalityUnavailableError(
            f"channels {missing} not present on this image (combo {combo_name(combo)})"
        )
    return np.stack([img.channels[name] for name in names]).astype(np.float32)


def unproject(img: SphericalImage, pred: np.ndarray) -> np.ndarray:
    """Write a predicted plane back onto the source points.

    Points that won a cell receive the plane value there; occluded or
    discarded points receive the sentinel -1.
    """
    pred = np.asarray(pred)
    if pred.shape != img.point_index.shape:
        raise DataError(f"plane shape {pred.shape} does not match grid {img.point_index.shape}")
    out = np.full(img.n_points, -1.0, dtype=np.float32)
    hit = img.point_index >= 0
    out[img.point_index[hit]] = pred[hit]
    return out


# ---------------------------------------------------------------------------
# Serialization: packed channel stacks and per-channel PGMs with a sidecar.
# ---------------------------------------------------------------------------

def write_lsi(path, planes: np.ndarray, names=None) -> None:
    """Write a (C, H, W) stack as the packed binary format.

    Layout: magic "LSI1", u32 H, u32 W, u32 C, a name table (u32 count then
    length-prefixed UTF-8 strings; count is 0 or C), then C*H*W
    little-endian float32 values in C order.
    """
    planes = np.ascontiguousarray(planes, dtype="<f4")
    if planes.ndim != 3:
        raise DataError("LSI payload must be (C, H, W)")
    c, h, w = planes.shape
    names = list(names) if names is not None else []
    if names and len(names) != c:
        raise DataError("channel name count must match channel count")
    with open(path, "wb") as f:
        f.write(LSI_MAGIC)
        f.write(struct.pack("<III", h, w, c))
        f.write(struct.pack("<I", len(names)))
        for name in names:
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
        f.write(planes.tobytes())


def read_lsi(path):
    """Read a packed stack; returns (names, (C, H, W) float32 array)."""
    with open(path, "rb") as f:
        if f.read(4) != LSI_MAGIC:
            raise DataError(f"{path}: not a valid packed channel file")
        h, w, c = struct.unpack("<III", f.read(12))
        (n_names,) = struct.unpack("<I", f.read(4))
        names = []
        for _ in range(n_names):
            (ln,) = struct.unpack("<I", f.read(4))
            names.append(f.read(ln).decode("utf-8"))
        data = np.frombuffer(f.read(4 * c * h * w), dtype="<f4")
    if data.size != c * h * w:
        raise DataError(f"{path}: truncated channel payload")
    return names, data.reshape(c, h, w).copy()


def write_pgm16(path, plane01: np.ndarray) -> None:
    """Write an (H, W) plane of [0, 1] values as a 16-bit binary PGM."""
    scaled = np.floor(np.clip(plane01, 0.0, 1.0) * 65535.0 + 0.5).astype(">u2")
    h, w = scaled.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(scaled.tobytes())


def write_pgm8(path, plane01: np.ndarray) -> None:
    """Write an (H, W) plane of [0, 1] values as an 8-bit binary PGM (round half up)."""
    scaled = np.floor(np.clip(plane01, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    h, w = scaled.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(scaled.tobytes())


# PGM export rescales angle planes onto [0, 1]; everything else is already there.
_PGM_SCALE = {"incidence": 2.0 / math.pi}


def export_spherical_image(out_dir, img: SphericalImage, stem: str = "frame") -> dict:
    """Write one 16-bit PGM per channel plus the packed stack and a JSON sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = sorted(img.channels)
    written = {}
    for name in names:
        plane = img.channels[name] * _PGM_SCALE.get(name, 1.0)
        pgm_path = out_dir / f"{stem}_{name}.pgm"
        write_pgm16(pgm_path, plane)
        written[name] = str(pgm_path)

    lsi_path = out_dir / f"{stem}.lsi"
    write_lsi(lsi_path, np.stack([img.channels[n] for n in names]), names)

    sidecar = {
        "channels": names,
        "pgm_scale": {n: _PGM_SCALE.get(n, 1.0) for n in names},
        "n_points": img.n_points,
        "config": {
            "height": img.config.height,
            "width": img.config.width,
            "fov_up_rad": img.config.fov_up,
            "fov_down_rad": img.config.fov_down,
            "r_max": img.config.r_max,
        },
    }
    sidecar_path = out_dir / f"{stem}.json"
    with open(sidecar_path, "w") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
    written["__lsi__"] = str(lsi_path)
    written["__sidecar__"] = str(sidecar_path)
    return written
