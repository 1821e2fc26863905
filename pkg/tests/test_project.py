import numpy as np
import pytest

from cloudmap.cloud import PointCloud, synth_shape
from cloudmap.project import (GradPath, MappedImage, basic_project,
                              basic_project_leaky, cloud_key, remap_frozen)


def cloud_of(points, label=None):
    return PointCloud(np.asarray(points, dtype=np.float64), label)


def test_basic_project_shape_and_path():
    img = basic_project(synth_shape("sphere", 128, 0))
    assert img.data.shape == (456, 456, 1)
    assert img.grad_path is GradPath.BLOCKED
    assert img.leak_map is None


def test_basic_project_values_binary():
    img = basic_project(synth_shape("torus", 256, 1))
    assert set(np.unique(img.data)) <= {0.0, 1.0}


def test_pixel_mapping_known_point():
    # x = y = 0 lands in the center pixel
    img = basic_project(cloud_of([[0.0, 0.0, 0.5]]), size=456)
    assert img.data[228, 228, 0] == 1.0
    assert img.data.sum() == 1.0


def test_pixel_mapping_corners():
    # top-left pixel is (x, y) near (-1, +1)
    img = basic_project(cloud_of([[-0.999, 0.999, 0.0]]), size=10)
    assert img.data[0, 0, 0] == 1.0


def test_out_of_bounds_goes_to_origin_pixel():
    img = basic_project(cloud_of([[5.0, 5.0, 0.0]]), size=16)
    assert img.data[0, 0, 0] == 1.0
    assert img.data.sum() == 1.0


def test_empty_cloud_rejected():
    with pytest.raises(ValueError):
        basic_project(cloud_of(np.empty((0, 3))))
    with pytest.raises(ValueError):
        basic_project_leaky(cloud_of(np.empty((0, 3))))


def test_same_cloud_same_image():
    c = synth_shape("cube", 128, 2)
    a = basic_project(c)
    b = basic_project(c)
    assert np.array_equal(a.data, b.data)


def test_leaky_encodes_coordinates():
    c = cloud_of([[0.2, -0.4, 0.6]])
    img = basic_project_leaky(c, size=64)
    r, colv, pt, ch = img.leak_map[0]
    assert img.grad_path is GradPath.COORDINATE_LEAK
    expected = (np.array([0.2, -0.4, 0.6]) + 1.0) / 2.0
    assert np.allclose(img.data[r, colv, :], expected)


def test_leaky_intensity_decodes_back():
    c = synth_shape("cone", 128, 3)
    img = basic_project_leaky(c)
    rows, cols, pts, chans = img.leak_map.T
    decoded = 2.0 * img.data[rows, cols, chans] - 1.0
    assert np.allclose(decoded, c.points[pts, chans], atol=1e-15)


def test_leaky_collision_last_writer_wins():
    # both points fall in the same pixel; point 1 (later) wins
    c = cloud_of([[0.001, 0.001, 0.1], [0.002, 0.002, 0.9]])
    img = basic_project_leaky(c, size=8)
    assert set(img.leak_map[:, 2].tolist()) == {1}
    r, colv = img.leak_map[0, 0], img.leak_map[0, 1]
    assert img.data[r, colv, 2] == pytest.approx((0.9 + 1) / 2)


def test_leaky_leak_map_covers_lit_pixels():
    c = synth_shape("cylinder", 256, 4)
    img = basic_project_leaky(c)
    lit = np.argwhere(img.data.sum(axis=2) > 0)
    linked = np.unique(img.leak_map[:, :2], axis=0)
    assert len(linked) == len(lit)
    assert len(img.leak_map) == 3 * len(linked)


def test_leaky_same_geometry_as_basic():
    c = synth_shape("sphere", 256, 5)
    occ = basic_project(c).data[:, :, 0] > 0
    leaky = basic_project_leaky(c).data.sum(axis=2) > 0
    assert np.array_equal(occ, leaky)


def test_mapped_image_leak_consistency_enforced():
    with pytest.raises(ValueError):
        MappedImage(np.zeros((4, 4, 3)), GradPath.COORDINATE_LEAK)
    with pytest.raises(ValueError):
        MappedImage(np.zeros((4, 4, 1)), GradPath.BLOCKED,
                    leak_map=np.array([[0, 0, 0, 0]]))


def test_cloud_key_tracks_content():
    a = synth_shape("cube", 128, 6)
    b = a.with_points(a.points + 0.001)
    assert cloud_key(a) != cloud_key(b)
    assert cloud_key(a) == cloud_key(PointCloud(a.points.copy()))


def test_remap_frozen_tracks_coordinates():
    c = synth_shape("torus", 128, 7)
    img = basic_project_leaky(c)
    shifted = c.with_points(np.clip(c.points + 0.01, -1, 1))
    data = remap_frozen(img, shifted)
    rows, cols, pts, chans = img.leak_map.T
    assert np.allclose(data[rows, cols, chans],
                       (shifted.points[pts, chans] + 1) / 2)
    # untouched pixels unchanged
    mask = np.ones_like(data, dtype=bool)
    mask[rows, cols, chans] = False
    assert np.array_equal(data[mask], img.data[mask])


def test_remap_frozen_requires_leak():
    img = basic_project(synth_shape("cube", 128, 8))
    with pytest.raises(ValueError):
        remap_frozen(img, synth_shape("cube", 128, 8))
