import math

import numpy as np
import pytest

from lidarint.cloud import PointCloud
from lidarint.exceptions import (
    ConfigError,
    DataError,
    EmptyCloudError,
    ModalityUnavailableError,
)
from lidarint.projection import (
    ProjectionConfig,
    channel_names,
    combo_name,
    export_spherical_image,
    parse_combo,
    read_lsi,
    select_channels,
    spherical_project,
    unproject,
    write_lsi,
)

HDL64 = ProjectionConfig(height=64, width=1024,
                         fov_up=math.radians(2.0), fov_down=math.radians(-24.8))


def _cloud(points, intensity=None, **attrs):
    pts = np.asarray(points, dtype=np.float32)
    if intensity is None:
        intensity = np.full(len(pts), 0.5, np.float32)
    return PointCloud(points=pts, intensity=np.asarray(intensity, np.float32), **attrs)


def test_config_validation():
    with pytest.raises(ConfigError):
        ProjectionConfig(height=0)
    with pytest.raises(ConfigError):
        ProjectionConfig(width=1)
    with pytest.raises(ConfigError):
        ProjectionConfig(fov_up=-1.0, fov_down=0.0)
    with pytest.raises(ConfigError):
        ProjectionConfig(r_max=0.0)


def test_forward_axis_maps_to_center_column():
    img = spherical_project(_cloud([[1.0, 0.0, 0.0]]), HDL64)
    v, u = np.argwhere(img.mask == 1)[0]
    assert u == 512
    assert v == 4  # floor((1 - 24.8/26.8) * 64)


def test_elevation_bounds():
    # just inside fov_up -> row 0; just inside fov_down -> last row
    up = math.tan(HDL64.fov_up - 1e-9)
    down = math.tan(HDL64.fov_down + 1e-9)
    img = spherical_project(_cloud([[1.0, 0.0, up], [1.0, 0.0, down]]), HDL64)
    rows = sorted(r for r, _ in np.argwhere(img.mask == 1))
    assert rows == [0, 63]


def test_out_of_fov_dropped():
    img = spherical_project(_cloud([[1.0, 0.0, 5.0], [1.0, 0.0, -5.0],
                                    [1.0, 0.0, 0.0]]), HDL64)
    assert img.mask.sum() == 1


def test_zbuffer_keeps_nearest():
    img = spherical_project(_cloud([[5.0, 0.0, 0.0], [2.0, 0.0, 0.0]]), HDL64)
    v, u = np.argwhere(img.mask == 1)[0]
    assert img.channels["depth"][v, u] == pytest.approx(2.0 / HDL64.r_max, rel=1e-6)
    assert img.point_index[v, u] == 1


def test_zbuffer_tie_lowest_index():
    img = spherical_project(_cloud([[2.0, 0.0, 0.0], [2.0, 0.0, 0.0]]), HDL64)
    v, u = np.argwhere(img.mask == 1)[0]
    assert img.point_index[v, u] == 0
    # under permutation the winner is still the same physical point
    img2 = spherical_project(_cloud([[2.0, 0.0, 0.0], [2.0, 0.0, 0.0]][::-1]), HDL64)
    assert img2.point_index[v, u] == 0


def test_empty_cloud_error():
    with pytest.raises(EmptyCloudError):
        spherical_project(_cloud(np.zeros((0, 3))), HDL64)


def _random_cloud(rng, n=4000):
    pts = rng.uniform(-40, 40, (n, 3)).astype(np.float32)
    pts[:, 2] = rng.uniform(-8, 1.2, n)
    keep = np.linalg.norm(pts, axis=1) > 1.0
    pts = pts[keep]
    return _cloud(pts, intensity=rng.random(len(pts)).astype(np.float32),
                  label=rng.integers(0, 20, len(pts)).astype(np.int32))


def test_depth_round_trip_and_zbuffer_property(rng):
    cloud = _random_cloud(rng)
    cfg = ProjectionConfig(height=32, width=128)
    img = spherical_project(cloud, cfg)
    r = cloud.ranges()
    hit = img.point_index >= 0
    # depth * r_max equals the winning point's range
    np.testing.assert_allclose(
        img.channels["depth"][hit] * cfg.r_max, r[img.point_index[hit]], atol=1e-5)

    # no losing point that maps to a cell is nearer than the winner
    phi = np.arctan2(cloud.points[:, 1], cloud.points[:, 0])
    psi = np.arcsin(cloud.points[:, 2] / r)
    infov = (psi >= cfg.fov_down) & (psi <= cfg.fov_up)
    u = np.clip(np.floor(0.5 * (1 - phi / math.pi) * cfg.width), 0, cfg.width - 1)
    v = np.clip(np.floor((1 - (psi - cfg.fov_down) / cfg.fov) * cfg.height),
                0, cfg.height - 1)
    for i in np.flatnonzero(infov):
        win = img.point_index[int(v[i]), int(u[i])]
        assert win >= 0
        assert r[win] <= r[i] + 1e-12


def test_permutation_invariance(rng):
    cloud = _random_cloud(rng, n=2000)
    cfg = ProjectionConfig(height=32, width=128)
    img = spherical_project(cloud, cfg)
    perm = rng.permutation(len(cloud))
    shuffled = PointCloud(points=cloud.points[perm], intensity=cloud.intensity[perm],
                          label=cloud.label[perm])
    img2 = spherical_project(shuffled, cfg)
    for name in img.channels:
        np.testing.assert_array_equal(img.channels[name], img2.channels[name])


def test_mask_semantics(rng):
    cloud = _random_cloud(rng, n=1000)
    cfg = ProjectionConfig(height=16, width=64)
    img = spherical_project(cloud, cfg)
    hit = img.point_index >= 0
    np.testing.assert_array_equal(img.mask == 1, hit)
    assert img.mask.sum() <= len(cloud)
    for name, plane in img.channels.items():
        assert np.all(plane[~hit] == 0), name


def test_combo_parsing_and_channel_order():
    assert channel_names("D") == ["depth", "mask"]
    assert channel_names("D+L+I") == ["depth", "mask", "incidence", "label"]
    assert channel_names({"D", "RGB", "L", "I"}) == [
        "depth", "mask", "incidence", "label", "r", "g", "b", "color_mask"]
    assert combo_name("I+D+L") == "D+L+I"
    assert combo_name(frozenset({"RGB", "D"})) == "D+RGB"
    with pytest.raises(ConfigError):
        parse_combo("D+X")
    with pytest.raises(ConfigError):
        parse_combo("")


def test_select_channels_counts(rng):
    cloud = _random_cloud(rng, n=500)
    cloud = cloud.with_attrs(
        incidence=rng.uniform(0, math.pi / 2, len(cloud)).astype(np.float32),
        rgb=rng.random((len(cloud), 3)).astype(np.float32),
        color_mask=(rng.random(len(cloud)) > 0.5).astype(np.uint8))
    img = spherical_project(cloud, ProjectionConfig(height=16, width=64))
    assert select_channels(img, "D").shape[0] == 2
    assert select_channels(img, "D+L+I").shape[0] == 4
    assert select_channels(img, "D+RGB+L+I").shape[0] == 8


def test_select_channels_missing_modality(rng):
    cloud = _random_cloud(rng, n=300)  # labels but no RGB
    img = spherical_project(cloud, ProjectionConfig(height=16, width=64))
    with pytest.raises(ModalityUnavailableError):
        select_channels(img, "D+RGB")


def test_unproject_round_trip(rng):
    cloud = _random_cloud(rng, n=800)
    img = spherical_project(cloud, ProjectionConfig(height=16, width=64))
    back = unproject(img, img.channels["intensity"])
    hit = img.point_index >= 0
    winners = img.point_index[hit]
    np.testing.assert_array_equal(back[winners], cloud.intensity[winners])
    losers = np.setdiff1d(np.arange(len(cloud)), winners)
    assert np.all(back[losers] == -1.0)


def test_unproject_all_zero_plane():
    img = spherical_project(_cloud([[1.0, 0.0, 0.0]]), HDL64)
    back = unproject(img, np.zeros(img.shape, np.float32))
    assert (back == 0).sum() == 1
    assert (back == -1).sum() == 0


def test_unproject_shape_mismatch():
    img = spherical_project(_cloud([[1.0, 0.0, 0.0]]), HDL64)
    with pytest.raises(DataError):
        unproject(img, np.zeros((3, 3), np.float32))


def test_lsi_round_trip(tmp_path, rng):
    planes = rng.random((3, 8, 12)).astype(np.float32)
    path = tmp_path / "stack.lsi"
    write_lsi(path, planes, names=["a", "b", "c"])
    names, back = read_lsi(path)
    assert names == ["a", "b", "c"]
    np.testing.assert_array_equal(back, planes)


def test_lsi_rejects_garbage(tmp_path):
    path = tmp_path / "junk.lsi"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(DataError):
        read_lsi(path)


def test_export_spherical_image(tmp_path, rng):
    cloud = _random_cloud(rng, n=400)
    img = spherical_project(cloud, ProjectionConfig(height=16, width=64))
    written = export_spherical_image(tmp_path, img, stem="f0")
    assert (tmp_path / "f0.json").exists()
    names, planes = read_lsi(written["__lsi__"])
    assert set(names) == set(img.channels)
    for i, name in enumerate(names):
        np.testing.assert_array_equal(planes[i], img.channels[name])
    # PGM headers well-formed
    for name in img.channels:
        head = (tmp_path / f"f0_{name}.pgm").read_bytes()[:20]
        assert head.startswith(b"P5\n64 16\n65535\n")
