"""Flow-threshold motion classification and mask bookkeeping."""

import numpy as np
import pytest

from bevss.grid import PointCloud
from bevss.masks import (
    DYNAMIC,
    STATIC,
    UNKNOWN,
    MaskThresholds,
    StaticDynamicMask,
    build_mask,
    classify_point,
    split,
)


def test_threshold_validation():
    with pytest.raises(ValueError):
        MaskThresholds(tau_2d=0.0)
    with pytest.raises(ValueError):
        MaskThresholds(tau_3d=-1.0)


def test_classify_point_requires_both_magnitudes_small():
    thr = MaskThresholds(tau_2d=5.0, tau_3d=1.0)
    assert classify_point((1.0, 1.0), (0.1, 0.1, 0.0), thr) == STATIC
    assert classify_point((6.0, 0.0), (0.1, 0.1, 0.0), thr) == DYNAMIC  # 2D too big
    assert classify_point((1.0, 0.0), (1.5, 0.0, 0.0), thr) == DYNAMIC  # 3D too big


def test_classification_is_strictly_below_threshold():
    thr = MaskThresholds(tau_2d=5.0, tau_3d=1.0)
    assert classify_point((5.0, 0.0), (0.0, 0.0, 0.0), thr) == DYNAMIC  # |f2d| == tau
    assert classify_point((0.0, 0.0), (1.0, 0.0, 0.0), thr) == DYNAMIC  # |f3d| == tau
    assert classify_point((5.0 - 1e-9, 0.0), (1.0 - 1e-9, 0.0, 0.0), thr) == STATIC


def test_mask_validation():
    with pytest.raises(ValueError):
        StaticDynamicMask(0, np.array([0, 1, 3], dtype=np.uint8))
    with pytest.raises(ValueError):
        StaticDynamicMask(0, np.zeros((2, 2), dtype=np.uint8))


def test_build_mask_input_validation(one_box):
    cloud = one_box.clouds[0]
    with pytest.raises(ValueError):
        build_mask(cloud, [], [], MaskThresholds())
    with pytest.raises(ValueError):
        build_mask(cloud, one_box.frame_flows(0), one_box.cam_pair(0)[:1], MaskThresholds())


def test_build_mask_marks_invisible_points_unknown(one_box):
    mask = build_mask(
        one_box.clouds[0], one_box.frame_flows(0), one_box.cam_pair(0), MaskThresholds()
    )
    # Points that project into no camera cannot be classified.
    outside = np.array([[0.0, 0.0, 50.0]])  # far above every camera's field of view
    tall = PointCloud(0, outside)
    m2 = build_mask(tall, one_box.frame_flows(0), one_box.cam_pair(0), MaskThresholds())
    assert m2.status[0] == UNKNOWN
    assert len(mask) == len(one_box.clouds[0])


def test_ground_override_forces_static(one_box):
    thr = MaskThresholds()
    low = PointCloud(0, np.array([[8.0, 0.0, -1.6]]))  # below the ground height
    mask = build_mask(low, one_box.frame_flows(0), one_box.cam_pair(0), thr)
    assert mask.status[0] == STATIC


def test_split_partitions_and_keeps_unknown_static(rng):
    pts = rng.normal(size=(9, 3))
    status = np.array([STATIC, DYNAMIC, UNKNOWN] * 3, dtype=np.uint8)
    cloud = PointCloud(0, pts)
    dyn, stat, (dyn_idx, stat_idx) = split(cloud, StaticDynamicMask(0, status))
    assert len(dyn) + len(stat) == 9
    assert set(dyn_idx) == {1, 4, 7}
    np.testing.assert_array_equal(dyn.points, pts[[1, 4, 7]])
    np.testing.assert_array_equal(stat.points, pts[sorted(set(range(9)) - {1, 4, 7})])


def test_split_length_mismatch():
    with pytest.raises(ValueError):
        split(PointCloud(0, np.zeros((3, 3))), StaticDynamicMask(0, np.zeros(4, dtype=np.uint8)))
