"""Point-cloud and camera ingest.

On-disk formats
---------------
* Point cloud (``.bin``): little-endian float32 quadruples
  ``(x, y, z, intensity)``, 16 bytes per point (KITTI velodyne layout).
* Labels (``.label``): one little-endian uint32 per point; the semantic
  class id is the low 16 bits, the high bits carry instance ids and are
  discarded.
* Camera: a PPM/PNG image plus a plain-text file holding the 3x4
  projection matrix in row-major order (12 whitespace-separated numbers).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .exceptions import (
    DataError,
    EmptyCloudError,
    LabelMismatchError,
    MalformedFileError,
)

_POINT_RECORD_BYTES = 16


@dataclass
class PointCloud:
    """Sensor-centered point cloud with per-point attributes.

    ``points`` is (n, 3) float32 in meters; ``intensity`` is (n,) float32 in
    [0, 1]. Optional attributes are None or length-n arrays: ``label``
    (int32 class ids), ``rgb`` ((n, 3) float32 in [0, 1]), ``color_mask``
    ((n,) uint8 in {0, 1}), ``normal`` ((n, 3) unit float32), ``incidence``
    ((n,) float32 radians in [0, pi/2]).
    """

    points: np.ndarray
    intensity: np.ndarray
    label: np.ndarray | None = None
    rgb: np.ndarray | None = None
    color_mask: np.ndarray | None = None
    normal: np.ndarray | None = None
    incidence: np.ndarray | None = None

    def __len__(self) -> int:
        return self.points.shape[0]

    def ranges(self) -> np.ndarray:
        """Euclidean distance of every point from the sensor origin."""
        return np.linalg.norm(self.points.astype(np.float64), axis=1)

    def with_attrs(self, **kwargs) -> "PointCloud":
        """Copy of this cloud with the given attribute arrays replaced."""
        return replace(self, **kwargs)


@dataclass(frozen=True)
class ParseReport:
    """Counts from one point-cloud parse. Invalid points are dropped, not errors."""

    n_records: int
    n_kept: int
    n_dropped_zero_range: int
    n_dropped_nonfinite: int


@dataclass
class CameraFrame:
    """Camera image plus the 3x4 matrix projecting sensor-frame points into it."""

    pixels: np.ndarray  # (H, W, 3) float32 in [0, 1]
    proj: np.ndarray  # (3, 4) float64

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        self.proj = np.asarray(self.proj, dtype=np.float64)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise MalformedFileError("camera image must be (H, W, 3)")
        if self.proj.shape != (3, 4):
            raise MalformedFileError("projection matrix must be 3x4")
        if np.linalg.matrix_rank(self.proj) != 3:
            raise MalformedFileError("projection matrix must have full row rank")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise MalformedFileError("camera pixel values must lie in [0, 1]")


def read_point_cloud(path, intensity_scale: float = 1.0, return_report: bool = False):
    """Parse a binary point cloud file into a :class:`PointCloud`.

    Points with zero range or any non-finite field are dropped and counted
    in the report. ``intensity_scale`` divides raw intensities for sources
    that store them on another scale; values are clipped to [0, 1] after.
    """
    path = Path(path)
    try:
        raw = np.fromfile(path, dtype="<f4")
    except OSError as exc:
        raise DataError(f"cannot read point cloud {path}: {exc}") from exc
    if (raw.size * 4) % _POINT_RECORD_BYTES != 0:
        raise MalformedFileError(
            f"{path}: size {raw.size * 4} bytes is not a multiple of {_POINT_RECORD_BYTES}"
        )
    records = raw.reshape(-1, 4)
    n_records = records.shape[0]

    finite = np.isfinite(records).all(axis=1)
    r2 = (records[:, 0].astype(np.float64) ** 2
          + records[:, 1].astype(np.float64) ** 2
          + records[:, 2].astype(np.float64) ** 2)
    nonzero = r2 > 0.0
    keep = finite & nonzero

    points = np.ascontiguousarray(records[keep, :3], dtype=np.float32)
    intensity = records[keep, 3].astype(np.float32)
    if intensity_scale != 1.0:
        if intensity_scale <= 0:
            raise MalformedFileError("intensity_scale must be positive")
        intensity = intensity / np.float32(intensity_scale)
    intensity = np.clip(intensity, 0.0, 1.0)

    cloud = PointCloud(points=points, intensity=intensity)
    if not return_report:
        return cloud
    report = ParseReport(
        n_records=n_records,
        n_kept=int(keep.sum()),
        n_dropped_zero_range=int((finite & ~nonzero).sum()),
        n_dropped_nonfinite=int((~finite).sum()),
    )
    return cloud, report


def save_point_cloud(cloud: PointCloud, path) -> None:
    """Serialize to the 16-byte-per-point binary layout read by :func:`read_point_cloud`."""
    rec = np.empty((len(cloud), 4), dtype="<f4")
    rec[:, :3] = cloud.points
    rec[:, 3] = cloud.intensity
    rec.tofile(path)


def read_labels(path, n: int) -> np.ndarray:
    """Read per-point semantic class ids (low 16 bits of each uint32 record)."""
    try:
        raw = np.fromfile(path, dtype="<u4")
    except OSError as exc:
        raise DataError(f"cannot read labels {path}: {exc}") from exc
    if raw.size != n:
        raise LabelMismatchError(f"{path}: {raw.size} label records for {n} points")
    return (raw & 0xFFFF).astype(np.int32)


def save_labels(labels: np.ndarray, path) -> None:
    np.asarray(labels, dtype="<u4").tofile(path)


def load_camera_frame(image_path, proj_path) -> CameraFrame:
    """Load a camera frame from an image file (PPM/PNG/...) and a matrix file."""
    try:
        img = Image.open(image_path).convert("RGB")
        pixels = np.asarray(img, dtype=np.float32) / 255.0
        values = np.loadtxt(proj_path, dtype=np.float64)
    except OSError as exc:
        raise DataError(f"cannot read camera frame: {exc}") from exc
    if values.size != 12:
        raise MalformedFileError(f"{proj_path}: expected 12 numbers, got {values.size}")
    return CameraFrame(pixels=pixels, proj=values.reshape(3, 4))


def colorize(cloud: PointCloud, cam: CameraFrame) -> PointCloud:
    """Attach camera RGB to every point that projects into the image.

    Points landing inside the image with positive projected depth receive
    the nearest pixel's RGB and color_mask=1; everything else gets black
    and color_mask=0. Geometry and point count are untouched.
    """
    if len(cloud) == 0:
        raise EmptyCloudError("cannot colorize an empty cloud")
    h_img, w_img = cam.pixels.shape[:2]
    pts = cloud.points.astype(np.float64)
    proj = pts @ cam.proj[:, :3].T + cam.proj[:, 3]
    depth = proj[:, 2]
    valid = depth > 0.0

    rgb = np.zeros((len(cloud), 3), dtype=np.float32)
    mask = np.zeros(len(cloud), dtype=np.uint8)
    if valid.any():
        u = proj[valid, 0] / depth[valid]
        v = proj[valid, 1] / depth[valid]
        iu = np.floor(u + 0.5).astype(np.int64)
        iv = np.floor(v + 0.5).astype(np.int64)
        inside = (iu >= 0) & (iu < w_img) & (iv >= 0) & (iv < h_img)
        src = np.flatnonzero(valid)[inside]
        rgb[src] = cam.pixels[iv[inside], iu[inside]]
        mask[src] = 1
    return cloud.with_attrs(rgb=rgb, color_mask=mask)
