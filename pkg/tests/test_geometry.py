import csv
import math

import numpy as np
import pytest

from lidarint.cloud import PointCloud
from lidarint.exceptions import DataError, InsufficientPointsError
from lidarint.geometry import (
    estimate_incidence,
    estimate_normal,
    incidence_angle,
    incidence_channel,
    knn,
    knn_all,
    orient_toward_sensor,
    write_incidence_csv,
)


def brute_force_knn(points, k, q):
    """Independent oracle: full distance sort, ties by lower index."""
    points = np.asarray(points, dtype=np.float64)
    d2 = ((points - points[q]) ** 2).sum(axis=1)
    order = np.lexsort((np.arange(len(points)), d2))
    order = order[order != q]
    return order[:k]


def test_knn_collinear_example():
    pts = [[1.0, 0, 0], [2.0, 0, 0], [3.0, 0, 0], [4.0, 0, 0]]
    got = knn(np.array(pts), 2, 2)
    assert sorted(got.tolist()) == [1, 3]


def test_knn_all_others():
    pts = np.random.default_rng(0).uniform(-1, 1, (9, 3))
    got = knn(pts, 8, 3)
    assert sorted(got.tolist()) == [i for i in range(9) if i != 3]


def test_knn_insufficient_points():
    pts = np.zeros((5, 3)) + np.arange(5)[:, None]
    with pytest.raises(InsufficientPointsError):
        knn(pts, 5, 0)


def test_knn_matches_brute_force_random():
    rng = np.random.default_rng(42)
    for trial in range(20):
        n = int(rng.integers(30, 400))
        pts = rng.uniform(-10, 10, (n, 3))
        k = int(rng.integers(1, min(12, n - 1) + 1))
        q = int(rng.integers(0, n))
        got = knn(pts, k, q)
        expect = brute_force_knn(pts, k, q)
        np.testing.assert_array_equal(got, expect)


def test_knn_exact_ties_lowest_index():
    # 8 cube corners equidistant from the center, plus far decoys
    corners = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1)
                        for sz in (-1, 1)], dtype=np.float64)
    pts = np.vstack([[0.0, 0.0, 0.0], corners, corners * 5])
    got = knn(pts, 3, 0)
    assert got.tolist() == [1, 2, 3]  # exact distance ties break by index
    np.testing.assert_array_equal(got, brute_force_knn(pts, 3, 0))


def test_knn_duplicate_points():
    pts = np.array([[1.0, 0, 0], [1.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
    got = knn(pts, 2, 2)
    assert got.tolist() == [0, 1]  # duplicates of q are valid neighbors


def test_knn_all_matches_per_query(rng):
    pts = rng.uniform(-5, 5, (300, 3))
    k = 7
    batched = knn_all(pts, k)
    for q in range(0, 300, 17):
        np.testing.assert_array_equal(batched[q], knn(pts, k, q))


def _plane_cloud(rng, normal, d, n=400, extent=6.0):
    """Points on the plane {p : p . normal = d}."""
    normal = np.asarray(normal, dtype=np.float64)
    normal = normal / np.linalg.norm(normal)
    helper = np.array([0.0, 0.0, 1.0])
    if abs(normal @ helper) > 0.9:
        helper = np.array([1.0, 0.0, 0.0])
    a = np.cross(normal, helper)
    a /= np.linalg.norm(a)
    b = np.cross(normal, a)
    uv = rng.uniform(-extent, extent, (n, 2))
    return d * normal + uv[:, :1] * a + uv[:, 1:] * b


def test_normal_on_axis_plane(rng):
    pts = _plane_cloud(rng, [0, 0, 1], 3.0)
    est = estimate_normal(pts, q=0, k=12)
    assert not est.degenerate
    assert abs(abs(est.normal[2]) - 1.0) < 1e-6
    assert est.planarity < 1e-9


def test_normal_on_tilted_plane(rng):
    pts = _plane_cloud(rng, [1, 0, 1], 5.0)
    est = estimate_normal(pts, q=3, k=16)
    expected = np.array([1.0, 0.0, 1.0]) / math.sqrt(2)
    assert abs(abs(est.normal @ expected) - 1.0) < 1e-6


def test_normal_collinear_degenerate():
    pts = np.array([[1.0, 0, 0], [2.0, 0, 0], [3.0, 0, 0], [4.0, 0, 0]])
    est = estimate_normal(pts, q=1, k=3)
    assert est.degenerate
    np.testing.assert_allclose(est.normal, [-1.0, 0.0, 0.0], atol=1e-12)


def test_orient_toward_sensor():
    np.testing.assert_array_equal(
        orient_toward_sensor([5.0, 0, 0], [1.0, 0, 0]), [-1.0, 0, 0])
    np.testing.assert_array_equal(
        orient_toward_sensor([5.0, 0, 0], [-1.0, 0, 0]), [-1.0, 0, 0])
    # orthogonal: keep the sign
    np.testing.assert_array_equal(
        orient_toward_sensor([3.0, 4.0, 0], [0.0, 0, 1.0]), [0.0, 0, 1.0])


def test_incidence_angle_examples():
    res = incidence_angle([5.0, 0, 0], [-1.0, 0, 0])
    assert res.angle == pytest.approx(0.0, abs=1e-12)
    assert res.cos_angle == pytest.approx(1.0)

    n = -np.array([1.0, 0.0, 1.0]) / math.sqrt(2)
    res = incidence_angle([5.0, 0.0, 0.0], n)
    assert res.angle == pytest.approx(math.pi / 4, abs=1e-12)


def test_incidence_angle_sign_invariant(rng):
    for _ in range(50):
        p = rng.uniform(-5, 5, 3)
        if np.linalg.norm(p) < 0.1:
            continue
        n = rng.standard_normal(3)
        n /= np.linalg.norm(n)
        a = incidence_angle(p, n).angle
        b = incidence_angle(p, -n).angle
        assert a == b  # exact: |dot| folds the sign away


def test_incidence_angle_scale_invariant(rng):
    p = rng.uniform(0.5, 3, 3)
    n = rng.standard_normal(3)
    n /= np.linalg.norm(n)
    a = incidence_angle(p, n).angle
    b = incidence_angle(17.0 * p, n).angle
    assert a == pytest.approx(b, abs=1e-12)


def test_incidence_angle_zero_range():
    with pytest.raises(DataError):
        incidence_angle([0.0, 0.0, 0.0], [1.0, 0, 0])


def test_incidence_channel_plane_oracle(rng):
    normal = rng.standard_normal(3)
    normal /= np.linalg.norm(normal)
    pts = _plane_cloud(rng, normal, 8.0, n=600)
    angles = incidence_channel(pts, k=16)
    u = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    expected = np.arccos(np.clip(np.abs(u @ normal), 0, 1))
    np.testing.assert_allclose(angles, expected, atol=1e-5)


def test_incidence_channel_sphere(rng):
    # points on a sphere centered at the sensor at ~10 pts/m^2: angles near 0
    radius = 5.0
    n = int(10 * 4 * math.pi * radius ** 2)
    dirs = rng.standard_normal((n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pts = radius * dirs
    angles = incidence_channel(pts, k=16)
    assert np.all(angles < 0.05)


def test_incidence_rotation_invariance(rng):
    pts = rng.uniform(-6, 6, (400, 3))
    pts[np.linalg.norm(pts, axis=1) < 0.5] += 2.0
    angles = incidence_channel(pts, k=10)
    # random rotation via QR
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    rotated = pts @ q.T
    angles_rot = incidence_channel(rotated, k=10)
    np.testing.assert_allclose(angles, angles_rot, atol=1e-5)


def test_incidence_channel_too_small():
    pts = np.ones((5, 3)) * np.arange(5)[:, None] + 1
    with pytest.raises(InsufficientPointsError):
        incidence_channel(pts, k=5)


def test_degenerate_points_get_zero_angle():
    # strictly collinear cloud: every neighborhood degenerate -> angle 0
    pts = np.column_stack([np.linspace(1, 10, 30), np.zeros(30), np.zeros(30)])
    angles, normals, degenerate = estimate_incidence(pts, k=4)
    assert degenerate.all()
    np.testing.assert_allclose(angles, 0.0, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(normals, axis=1), 1.0, atol=1e-9)


def test_normals_unit_and_oriented(rng):
    pts = rng.uniform(-8, 8, (500, 3))
    pts = pts[np.linalg.norm(pts, axis=1) > 1.0]
    angles, normals, _ = estimate_incidence(pts, k=12)
    np.testing.assert_allclose(np.linalg.norm(normals, axis=1), 1.0, atol=1e-6)
    u = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    assert np.all(np.einsum("ni,ni->n", u, normals) <= 1e-9)  # faces the sensor
    assert np.all((angles >= 0) & (angles <= math.pi / 2 + 1e-12))


def test_accepts_point_cloud_objects(rng):
    pts = rng.uniform(1, 5, (50, 3)).astype(np.float32)
    cloud = PointCloud(points=pts, intensity=np.zeros(50, np.float32))
    assert knn(cloud, 3, 0).shape == (3,)
    assert incidence_channel(cloud, k=8).shape == (50,)


def test_incidence_csv_dump(tmp_path, rng):
    pts = rng.uniform(1, 5, (40, 3))
    angles, _, degenerate = estimate_incidence(pts, k=8)
    path = tmp_path / "angles.csv"
    write_incidence_csv(path, angles, degenerate)
    with open(path) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["index", "angle_rad", "degenerate_flag"]
    assert len(rows) == 41
    assert float(rows[1][1]) == pytest.approx(angles[0])
