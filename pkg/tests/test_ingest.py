import struct

import numpy as np
import pytest

from lidarint.cloud import (
    CameraFrame,
    colorize,
    load_camera_frame,
    read_labels,
    read_point_cloud,
    save_labels,
    save_point_cloud,
)
from lidarint.exceptions import (
    EmptyCloudError,
    LabelMismatchError,
    MalformedFileError,
)


def _write_points(path, records):
    with open(path, "wb") as f:
        for rec in records:
            f.write(struct.pack("<4f", *rec))


def test_single_point_decode(tmp_path):
    path = tmp_path / "one.bin"
    _write_points(path, [(1.0, 0.0, 0.0, 0.5)])
    cloud = read_point_cloud(path)
    assert len(cloud) == 1
    np.testing.assert_array_equal(cloud.points, [[1.0, 0.0, 0.0]])
    assert cloud.intensity[0] == np.float32(0.5)


def test_empty_file(tmp_path):
    path = tmp_path / "empty.bin"
    path.write_bytes(b"")
    cloud = read_point_cloud(path)
    assert len(cloud) == 0


def test_zero_range_dropped_and_counted(tmp_path):
    path = tmp_path / "two.bin"
    _write_points(path, [(1.0, 2.0, 3.0, 0.25), (0.0, 0.0, 0.0, 0.1)])
    cloud, report = read_point_cloud(path, return_report=True)
    assert len(cloud) == 1
    assert report.n_records == 2
    assert report.n_kept == 1
    assert report.n_dropped_zero_range == 1
    assert report.n_dropped_nonfinite == 0


def test_nonfinite_dropped(tmp_path):
    path = tmp_path / "nan.bin"
    _write_points(path, [(np.nan, 0.0, 1.0, 0.2), (1.0, 1.0, 1.0, 0.3)])
    cloud, report = read_point_cloud(path, return_report=True)
    assert len(cloud) == 1
    assert report.n_dropped_nonfinite == 1


def test_bad_record_size(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"\x00" * 15)
    with pytest.raises(MalformedFileError):
        read_point_cloud(path)


def test_parse_serialize_round_trip_bytes(tmp_path, rng):
    n = 500
    records = np.empty((n, 4), dtype="<f4")
    records[:, :3] = rng.uniform(-50, 50, (n, 3))
    records[:, 3] = rng.random(n)
    raw = tmp_path / "cloud.bin"
    records.tofile(raw)
    cloud = read_point_cloud(raw)
    assert len(cloud) == n  # all valid
    out = tmp_path / "copy.bin"
    save_point_cloud(cloud, out)
    assert out.read_bytes() == raw.read_bytes()


def test_intensity_scale_and_clip(tmp_path):
    path = tmp_path / "s.bin"
    _write_points(path, [(1.0, 0.0, 0.0, 200.0), (0.0, 1.0, 0.0, 120.0)])
    cloud = read_point_cloud(path, intensity_scale=255.0)
    assert np.all(cloud.intensity <= 1.0)
    np.testing.assert_allclose(cloud.intensity, [200 / 255, 120 / 255], rtol=1e-6)


def test_labels_low_bits(tmp_path):
    path = tmp_path / "l.label"
    np.array([0x00000028, 0x00030028], dtype="<u4").tofile(path)
    labels = read_labels(path, 2)
    assert labels.tolist() == [40, 40]  # instance bits in the high half drop out


def test_labels_count_mismatch(tmp_path):
    path = tmp_path / "l.label"
    np.array([1, 2, 3], dtype="<u4").tofile(path)
    with pytest.raises(LabelMismatchError):
        read_labels(path, 4)


def test_labels_round_trip(tmp_path, rng):
    labels = rng.integers(0, 260, 100).astype(np.int64)
    path = tmp_path / "r.label"
    save_labels(labels, path)
    out = read_labels(path, 100)
    np.testing.assert_array_equal(out, labels & 0xFFFF)


def _center_camera(h=8, w=8):
    # Looks down +x; x maps to depth, y/z to image coordinates around center.
    pixels = np.linspace(0, 1, h * w * 3, dtype=np.float32).reshape(h, w, 3)
    proj = np.array([
        [0.0, -1.0, 0.0, w / 2],
        [0.0, 0.0, -1.0, h / 2],
        [1.0, 0.0, 0.0, 0.0],
    ])
    # proj @ [x, y, z, 1]: u = (-y + x*w/2)/x, v = (-z + x*h/2)/x
    return CameraFrame(pixels=pixels, proj=proj)


def _cloud_of(points):
    from lidarint.cloud import PointCloud

    pts = np.asarray(points, dtype=np.float32)
    return PointCloud(points=pts, intensity=np.full(len(pts), 0.5, np.float32))


def test_colorize_center_pixel():
    cam = _center_camera()
    cloud = _cloud_of([[1.0, 0.0, 0.0]])  # projects to image center (4, 4)
    out = colorize(cloud, cam)
    assert out.color_mask.tolist() == [1]
    np.testing.assert_allclose(out.rgb[0], cam.pixels[4, 4])


def test_colorize_behind_camera():
    cam = _center_camera()
    out = colorize(_cloud_of([[-1.0, 0.0, 0.0]]), cam)
    assert out.color_mask.tolist() == [0]
    np.testing.assert_array_equal(out.rgb[0], [0, 0, 0])


def test_colorize_off_image():
    cam = _center_camera()
    out = colorize(_cloud_of([[1.0, 50.0, 0.0]]), cam)  # u far negative
    assert out.color_mask.tolist() == [0]


def test_colorize_preserves_geometry(rng):
    cam = _center_camera()
    pts = rng.uniform(-5, 5, (200, 3)).astype(np.float32)
    pts[:, 0] += 6  # keep ranges positive and mostly in front
    cloud = _cloud_of(pts)
    out = colorize(cloud, cam)
    assert len(out) == len(cloud)
    np.testing.assert_array_equal(out.points, cloud.points)
    assert out.color_mask.sum() <= len(cloud)


def test_colorize_empty_cloud():
    cam = _center_camera()
    with pytest.raises(EmptyCloudError):
        colorize(_cloud_of(np.zeros((0, 3))), cam)


def test_load_camera_frame(tmp_path):
    from PIL import Image

    img = Image.new("RGB", (6, 4), color=(255, 128, 0))
    img_path = tmp_path / "cam.png"
    img.save(img_path)
    proj_path = tmp_path / "proj.txt"
    proj_path.write_text("0 -1 0 3\n0 0 -1 2\n1 0 0 0\n")
    cam = load_camera_frame(img_path, proj_path)
    assert cam.pixels.shape == (4, 6, 3)
    np.testing.assert_allclose(cam.pixels[0, 0], [1.0, 128 / 255, 0.0])
    assert cam.proj.shape == (3, 4)


def test_camera_rank_validation():
    with pytest.raises(MalformedFileError):
        CameraFrame(pixels=np.zeros((2, 2, 3), np.float32), proj=np.zeros((3, 4)))
