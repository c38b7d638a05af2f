"""Synthetic Lambertian scenes with analytic ground truth.

Scenes are built from plane patches, axis-aligned boxes, and vertical
cylinders around a sensor at the origin. Casting the projection grid's
ray directions against them yields a point cloud whose intensity follows

    I = albedo[class] * cos(theta) * exp(-r / attenuation) + noise

clamped to [0, 1], where theta is the exact incidence angle at the hit.
The exact angles (and normals) are returned alongside the cloud so
geometry estimators can be checked against them. Rays with no hit inside
``r_cut`` are reported as misses, not errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cloud import PointCloud
from .exceptions import ConfigError
from .projection import ProjectionConfig

_EPS_T = 1e-9


@dataclass(frozen=True)
class PlanePatch:
    center: np.ndarray  # (3,)
    normal: np.ndarray  # unit (3,)
    axis_u: np.ndarray  # unit, in-plane
    axis_v: np.ndarray  # unit, in-plane, orthogonal to axis_u
    half_u: float
    half_v: float
    label: int


@dataclass(frozen=True)
class Box:
    lo: np.ndarray  # (3,)
    hi: np.ndarray  # (3,)
    label: int


@dataclass(frozen=True)
class Cylinder:
    center_xy: np.ndarray  # (2,)
    radius: float
    z_lo: float
    z_hi: float
    label: int


@dataclass(frozen=True)
class SynthSceneConfig:
    """Scene content knobs; grid geometry comes from the projection config."""

    n_planes: int = 3
    n_boxes: int = 4
    n_cylinders: int = 4
    albedo: tuple = (0.85, 0.2, 0.35, 0.5, 0.65, 0.8, 0.92)
    attenuation: float = 60.0
    noise_sigma: float = 0.02
    include_ground: bool = True
    r_cut: float | None = None  # defaults to 0.95 * r_max of the grid

    def __post_init__(self):
        if min(self.n_planes, self.n_boxes, self.n_cylinders) < 0:
            raise ConfigError("primitive counts must be non-negative")
        if len(self.albedo) < 2:
            raise ConfigError("albedo table needs at least two classes")
        for rho in self.albedo:
            if not 0.05 <= rho <= 0.95:
                raise ConfigError(f"albedo {rho} outside [0.05, 0.95]")
        if self.attenuation <= 0:
            raise ConfigError("attenuation length must be positive")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")


@dataclass
class SynthFrame:
    """Ray-cast result: the cloud plus exact per-point geometry."""

    cloud: PointCloud
    angles: np.ndarray  # analytic incidence angle per point, radians
    normals: np.ndarray  # analytic unit surface normal per point
    ray_cell: np.ndarray  # (n, 2) grid cell (row, col) each point came from
    n_rays: int
    n_miss: int
    primitives: list = field(default_factory=list)


def _intersect_plane(dirs, patch: PlanePatch):
    denom = dirs @ patch.normal
    cn = float(patch.center @ patch.normal)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(np.abs(denom) > _EPS_T, cn / denom, np.inf)
    t = np.where(t > _EPS_T, t, np.inf)
    with np.errstate(invalid="ignore"):  # inf * 0 rows are discarded below anyway
        pts = dirs * t[:, None]
        local = pts - patch.center
        inside = (np.abs(local @ patch.axis_u) <= patch.half_u) & \
                 (np.abs(local @ patch.axis_v) <= patch.half_v)
    t = np.where(inside, t, np.inf)
    normals = np.broadcast_to(patch.normal, dirs.shape)
    return t, normals


def _intersect_box(dirs, box: Box):
    # Slab test from the origin; entry face supplies the normal.
    with np.errstate(divide="ignore"):
        inv = 1.0 / dirs
    t_lo = box.lo[None, :] * inv
    t_hi = box.hi[None, :] * inv
    t_near_axis = np.minimum(t_lo, t_hi)
    t_far_axis = np.maximum(t_lo, t_hi)
    t_near = t_near_axis.max(axis=1)
    t_far = t_far_axis.min(axis=1)
    hit = (t_near <= t_far) & (t_near > _EPS_T)
    axis = t_near_axis.argmax(axis=1)
    t = np.where(hit, t_near, np.inf)
    normals = np.zeros_like(dirs)
    rows = np.arange(dirs.shape[0])
    normals[rows, axis] = -np.sign(dirs[rows, axis])
    return t, normals


def _intersect_cylinder(dirs, cyl: Cylinder):
    dx, dy = dirs[:, 0], dirs[:, 1]
    cx, cy = float(cyl.center_xy[0]), float(cyl.center_xy[1])
    a = dx * dx + dy * dy
    b = -2.0 * (dx * cx + dy * cy)
    c = cx * cx + cy * cy - cyl.radius ** 2
    disc = b * b - 4.0 * a * c
    ok = (disc >= 0) & (a > _EPS_T)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-b - sq) / (2.0 * a)
        t2 = (-b + sq) / (2.0 * a)
    t = np.where(t1 > _EPS_T, t1, t2)  # nearest positive root (origin outside)
    t = np.where(ok & (t > _EPS_T), t, np.inf)
    z = t * dirs[:, 2]
    t = np.where((z >= cyl.z_lo) & (z <= cyl.z_hi), t, np.inf)
    pts_xy = dirs[:, :2] * t[:, None]
    radial = pts_xy - np.array([cx, cy])
    normals = np.zeros_like(dirs)
    with np.errstate(invalid="ignore"):
        nr = radial / np.maximum(np.linalg.norm(radial, axis=1, keepdims=True), 1e-12)
    normals[:, :2] = np.where(np.isfinite(nr), nr, 0.0)
    return t, normals


def cast_scene(primitives, grid: ProjectionConfig, albedo, attenuation,
               noise_sigma, rng: np.random.Generator, r_cut=None) -> SynthFrame:
    """Cast the grid's rays against a primitive list and build the frame."""
    dirs = grid.ray_directions()
    n_rays = dirs.shape[0]
    if r_cut is None:
        r_cut = 0.95 * grid.r_max

    best_t = np.full(n_rays, np.inf)
    best_n = np.zeros((n_rays, 3))
    best_label = np.zeros(n_rays, dtype=np.int32)
    for prim in primitives:
        if isinstance(prim, PlanePatch):
            t, normals = _intersect_plane(dirs, prim)
        elif isinstance(prim, Box):
            t, normals = _intersect_box(dirs, prim)
        elif isinstance(prim, Cylinder):
            t, normals = _intersect_cylinder(dirs, prim)
        else:
            raise ConfigError(f"unknown primitive type {type(prim).__name__}")
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_n[closer] = normals[closer]
        best_label[closer] = prim.label

    hit = np.isfinite(best_t) & (best_t <= r_cut)
    idx = np.flatnonzero(hit)
    t = best_t[idx]
    points = (dirs[idx] * t[:, None]).astype(np.float32)
    normals = best_n[idx]
    labels = best_label[idx]

    cos_theta = np.clip(np.abs(np.einsum("ni,ni->n", dirs[idx], normals)), 0.0, 1.0)
    angles = np.arccos(cos_theta)

    rho = np.asarray(albedo, dtype=np.float64)[labels]
    intensity = rho * cos_theta * np.exp(-t / attenuation)
    if noise_sigma > 0:
        intensity = intensity + noise_sigma * rng.standard_normal(intensity.shape)
    intensity = np.clip(intensity, 0.0, 1.0).astype(np.float32)

    cells = np.stack([idx // grid.width, idx % grid.width], axis=1)
    cloud = PointCloud(points=points, intensity=intensity, label=labels.astype(np.int32))
    return SynthFrame(cloud=cloud, angles=angles, normals=normals, ray_cell=cells,
                      n_rays=n_rays, n_miss=int(n_rays - idx.size),
                      primitives=list(primitives))


def _unit(v):
    return v / np.linalg.norm(v)


def _random_primitives(rng: np.random.Generator, cfg: SynthSceneConfig,
                       max_dist: float):
    n_classes = len(cfg.albedo)
    prims = []
    if cfg.include_ground:
        ground_z = -rng.uniform(1.5, 2.2)
        ext = 4.0 * max_dist  # reaches past r_cut so range alone limits the ground
        prims.append(PlanePatch(
            center=np.array([0.0, 0.0, ground_z]),
            normal=np.array([0.0, 0.0, 1.0]),
            axis_u=np.array([1.0, 0.0, 0.0]),
            axis_v=np.array([0.0, 1.0, 0.0]),
            half_u=ext, half_v=ext, label=0,
        ))

    def rand_label():
        return int(rng.integers(1, n_classes))

    for _ in range(cfg.n_planes):
        az = rng.uniform(0.0, 2.0 * math.pi)
        dist = rng.uniform(0.25 * max_dist, 0.9 * max_dist)
        center = np.array([dist * math.cos(az), dist * math.sin(az),
                           rng.uniform(-0.5, 2.5)])
        # Face roughly back toward the sensor with random yaw and tilt.
        yaw = az + math.pi + rng.uniform(-1.0, 1.0)
        tilt = rng.uniform(-0.6, 0.6)
        normal = _unit(np.array([
            math.cos(tilt) * math.cos(yaw),
            math.cos(tilt) * math.sin(yaw),
            math.sin(tilt),
        ]))
        helper = np.array([0.0, 0.0, 1.0])
        if abs(normal @ helper) > 0.95:
            helper = np.array([1.0, 0.0, 0.0])
        axis_u = _unit(np.cross(normal, helper))
        axis_v = np.cross(normal, axis_u)
        prims.append(PlanePatch(center=center, normal=normal, axis_u=axis_u,
                                axis_v=axis_v,
                                half_u=rng.uniform(2.0, 7.0),
                                half_v=rng.uniform(1.5, 3.5),
                                label=rand_label()))

    for _ in range(cfg.n_boxes):
        az = rng.uniform(0.0, 2.0 * math.pi)
        dist = rng.uniform(0.15 * max_dist, 0.8 * max_dist)
        cx, cy = dist * math.cos(az), dist * math.sin(az)
        half = rng.uniform(0.6, 2.5, size=3)
        base = rng.uniform(-2.0, 0.0)
        lo = np.array([cx - half[0], cy - half[1], base])
        hi = np.array([cx + half[0], cy + half[1], base + 2.0 * half[2]])
        prims.append(Box(lo=lo, hi=hi, label=rand_label()))

    for _ in range(cfg.n_cylinders):
        az = rng.uniform(0.0, 2.0 * math.pi)
        dist = rng.uniform(0.12 * max_dist, 0.7 * max_dist)
        base = rng.uniform(-2.2, -1.0)
        prims.append(Cylinder(
            center_xy=np.array([dist * math.cos(az), dist * math.sin(az)]),
            radius=float(rng.uniform(0.25, 1.2)),
            z_lo=base,
            z_hi=base + float(rng.uniform(2.0, 6.0)),
            label=rand_label(),
        ))
    return prims


def synth_scene(seed: int, cfg: SynthSceneConfig,
                grid: ProjectionConfig | None = None) -> SynthFrame:
    """Deterministically generate one scene and ray-cast it (same seed, same bytes)."""
    grid = grid if grid is not None else ProjectionConfig(height=64, width=256)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    max_dist = 0.45 * grid.r_max
    prims = _random_primitives(rng, cfg, max_dist)
    return cast_scene(prims, grid, cfg.albedo, cfg.attenuation, cfg.noise_sigma,
                      rng, r_cut=cfg.r_cut)
