"""Surface normals and laser incidence angles.

The incidence angle at a point is the angle between the ray direction from
the sensor origin to the point and the local surface normal, folded into
[0, pi/2] by taking ``arccos(|u . n|)`` so the normal's sign never matters.
Normals come from the smallest principal axis of the neighborhood
covariance (the query point plus its k nearest neighbors).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud
from .exceptions import DataError, InsufficientPointsError

# Eigengap below this fraction of the largest eigenvalue marks a neighborhood
# whose smallest principal axis is not unique (collinear or otherwise degenerate).
_DEGENERATE_REL_GAP = 1e-9


@dataclass(frozen=True)
class NormalEstimate:
    """Unit surface normal with a planarity score and a degeneracy flag.

    ``planarity`` is the smallest-eigenvalue share lambda0 / trace in
    [0, 1/3]; 0 means a perfect plane. Degenerate neighborhoods fall back
    to the inward ray direction -u so downstream angles come out as 0.
    """

    normal: np.ndarray
    planarity: float
    degenerate: bool


@dataclass(frozen=True)
class IncidenceResult:
    angle: float
    cos_angle: float
    direction: np.ndarray  # unit vector from the sensor origin to the point


def _as_points(cloud) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        pts = cloud.points
    else:
        pts = np.asarray(cloud)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise DataError("expected an (n, 3) point array")
    return pts.astype(np.float64, copy=False)


def _rank_candidates(points, q, cand):
    """Order candidate indices by (squared distance, index)."""
    d2 = ((points[cand] - points[q]) ** 2).sum(axis=1)
    order = np.lexsort((cand, d2))
    return cand[order], d2[order]


def knn(cloud, k: int, q: int, tree: cKDTree | None = None) -> np.ndarray:
    """Indices of the k nearest points to point ``q``, excluding ``q`` itself.

    Exact, with ties broken by lower index. Requires k >= 3 per the normal
    estimation contract upstream, but any k >= 1 is answered.
    """
    points = _as_points(cloud)
    n = points.shape[0]
    if k > n - 1:
        raise InsufficientPointsError(f"k={k} neighbors requested from {n} points")
    if tree is None:
        tree = cKDTree(points)

    m = min(n, k + 9)
    while True:
        d, idx = tree.query(points[q], k=m)
        idx = np.atleast_1d(idx)[np.isfinite(np.atleast_1d(d))]
        cand, d2 = _rank_candidates(points, q, idx[idx != q])
        # Complete when every point was inspected or the candidate horizon
        # lies strictly beyond the k-th distance (tie group fully captured).
        if m >= n or (len(cand) > k and d2[k - 1] < d2[-1]):
            return cand[:k].astype(np.int64)
        m = min(n, m * 2)


def knn_all(points, k: int) -> np.ndarray:
    """(n, k) nearest-neighbor indices for every point, same tie rules as :func:`knn`."""
    pts = _as_points(points)
    n = pts.shape[0]
    if k > n - 1:
        raise InsufficientPointsError(f"k={k} neighbors requested from {n} points")
    tree = cKDTree(pts)
    m = min(n, k + 9)
    d, idx = tree.query(pts, k=m)
    d = d.reshape(n, -1)
    idx = idx.reshape(n, -1)

    rows = np.repeat(np.arange(n), idx.shape[1]).reshape(n, -1)
    d2 = ((pts[idx] - pts[:, None, :]) ** 2).sum(axis=2)
    invalid = ~np.isfinite(d) | (idx == rows)
    d2[invalid] = np.inf
    idx = np.where(invalid, n, idx)  # park invalid entries last in the sort

    flat_order = np.lexsort((idx.ravel(), d2.ravel(), rows.ravel()))
    idx_sorted = idx.ravel()[flat_order].reshape(n, -1)
    d2_sorted = d2.ravel()[flat_order].reshape(n, -1)

    out = idx_sorted[:, :k].copy()
    if m < n:
        # Rows whose candidate horizon may clip a tie group get an exact re-query.
        unsettled = ~(d2_sorted[:, k - 1] < d2_sorted[:, m - 1])
        for q in np.flatnonzero(unsettled):
            out[q] = knn(pts, k, int(q), tree=tree)
    return out.astype(np.int64)


def _unit_directions(points) -> np.ndarray:
    pts = _as_points(points)
    r = np.linalg.norm(pts, axis=1)
    if np.any(r <= 0):
        raise DataError("zero-range point has no ray direction")
    return pts / r[:, None]


def estimate_normal(cloud, q: int, k: int) -> NormalEstimate:
    """PCA normal of the neighborhood of point ``q`` (the point plus k neighbors)."""
    points = _as_points(cloud)
    nbrs = knn(points, k, q)
    group = np.concatenate([points[nbrs], points[q][None, :]], axis=0)
    normal, planarity, degenerate = _pca_normal(group)
    if degenerate:
        normal = -_unit_directions(points[q][None, :])[0]
    return NormalEstimate(normal=normal.astype(np.float64), planarity=planarity,
                          degenerate=degenerate)


def _pca_normal(group):
    centered = group - group.mean(axis=0)
    cov = centered.T @ centered / group.shape[0]
    w, v = np.linalg.eigh(cov)
    scale = max(w[2], 0.0)
    degenerate = not np.all(np.isfinite(w)) or (w[1] - w[0]) <= _DEGENERATE_REL_GAP * max(scale, 1e-30)
    trace = w.sum()
    planarity = float(w[0] / trace) if trace > 0 else 0.0
    return v[:, 0], planarity, degenerate


def orient_toward_sensor(p, n) -> np.ndarray:
    """Flip ``n`` if needed so it faces the sensor at the origin; dot=0 keeps the sign."""
    p = np.asarray(p, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    u = p / np.linalg.norm(p)
    return -n if float(u @ n) > 0.0 else n


def incidence_angle(p, n) -> IncidenceResult:
    """Angle between the sensor ray through ``p`` and unit normal ``n``, in [0, pi/2]."""
    p = np.asarray(p, dtype=np.float64)
    r = np.linalg.norm(p)
    if r <= 0:
        raise DataError("zero-range point has no incidence angle")
    u = p / r
    cos_angle = float(np.clip(abs(u @ np.asarray(n, dtype=np.float64)), 0.0, 1.0))
    return IncidenceResult(angle=float(np.arccos(cos_angle)), cos_angle=cos_angle,
                           direction=u)


def estimate_incidence(cloud, k: int = 16):
    """Per-point incidence angles for a whole cloud.

    Returns ``(angles, normals, degenerate)`` where normals are unit vectors
    oriented toward the sensor and degenerate marks neighborhoods that fell
    back to -u (those points get angle 0 by construction).
    """
    points = _as_points(cloud)
    n = points.shape[0]
    nbrs = knn_all(points, k)

    group = np.concatenate([points[nbrs], points[:, None, :]], axis=1)
    mean = group.mean(axis=1, keepdims=True)
    centered = group - mean
    cov = np.einsum("nki,nkj->nij", centered, centered) / group.shape[1]
    w, v = np.linalg.eigh(cov)

    normals = v[:, :, 0]
    scale = np.maximum(w[:, 2], 1e-30)
    degenerate = (~np.isfinite(w).all(axis=1)) | ((w[:, 1] - w[:, 0]) <= _DEGENERATE_REL_GAP * scale)

    u = _unit_directions(points)
    normals[degenerate] = -u[degenerate]
    flip = np.einsum("ni,ni->n", u, normals) > 0.0
    normals[flip] = -normals[flip]

    cos = np.clip(np.abs(np.einsum("ni,ni->n", u, normals)), 0.0, 1.0)
    angles = np.arccos(cos)
    return angles, normals, degenerate


def incidence_channel(cloud, k: int = 16) -> np.ndarray:
    """Per-point incidence angle array (radians in [0, pi/2])."""
    return estimate_incidence(cloud, k)[0]


def write_incidence_csv(path, angles, degenerate) -> None:
    """Dump per-point angles as CSV rows (index, angle_rad, degenerate_flag)."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["index", "angle_rad", "degenerate_flag"])
        for i, (a, d) in enumerate(zip(angles, degenerate)):
            writer.writerow([i, repr(float(a)), int(d)])
