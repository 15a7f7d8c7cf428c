"""Superpixel oversegmentation, point labeling, and piece fusion."""

import numpy as np
import pytest

from bevss.grid import BevGridSpec, PointCloud
from bevss.pieces import (
    PieceParams,
    RigidPieces,
    Segmentation2D,
    fuse_by_height,
    occlusion_filter,
    oversegment,
)
from bevss.projection import CalibratedCamera, FlowImage


def test_params_validation():
    with pytest.raises(ValueError):
        PieceParams(superpixel_count=0)
    with pytest.raises(ValueError):
        PieceParams(delta_d=0.0)


def test_rigid_pieces_validation():
    with pytest.raises(ValueError):
        RigidPieces(0, np.array([0, 1, 5], dtype=np.int32), 3)  # label out of range
    pieces = RigidPieces(0, np.array([-1, 0, 1], dtype=np.int32), 2)
    assert len(pieces) == 3


def test_oversegment_labels_are_contiguous_and_cover_image():
    rng = np.random.default_rng(0)
    data = rng.normal(size=(60, 80, 2)).astype(np.float32)
    seg = oversegment(FlowImage(3, 0, 1, data), PieceParams(superpixel_count=24))
    assert seg.camera_id == 3
    assert seg.labels.shape == (60, 80)
    uniq = np.unique(seg.labels)
    np.testing.assert_array_equal(uniq, np.arange(seg.count))  # ids 0..K-1, no gaps
    assert seg.count >= 2


def test_oversegment_is_deterministic():
    rng = np.random.default_rng(1)
    data = rng.normal(size=(40, 40, 2)).astype(np.float32)
    a = oversegment(FlowImage(0, 0, 1, data), PieceParams(superpixel_count=9))
    b = oversegment(FlowImage(0, 0, 1, data), PieceParams(superpixel_count=9))
    np.testing.assert_array_equal(a.labels, b.labels)


def test_oversegment_splits_along_flow_boundaries():
    # Two flow regions with a sharp vertical boundary: no superpixel may
    # straddle it, because the flow distance dominates the spatial term.
    data = np.zeros((40, 60, 2), dtype=np.float32)
    data[:, 30:, 0] = 50.0
    seg = oversegment(FlowImage(0, 0, 1, data), PieceParams(superpixel_count=12))
    left = set(np.unique(seg.labels[:, :30]).tolist())
    right = set(np.unique(seg.labels[:, 30:]).tolist())
    assert not (left & right)


def test_oversegment_rejects_too_many_superpixels():
    data = np.zeros((4, 4, 2), dtype=np.float32)
    with pytest.raises(ValueError):
        oversegment(FlowImage(0, 0, 1, data), PieceParams(superpixel_count=100))


def test_segmentation_validation():
    with pytest.raises(ValueError):
        Segmentation2D(0, np.zeros((2, 2, 2), dtype=np.int32))


def _identity_camera():
    # Center at the origin looking along +x: u = 240 - 250 y/x, v = 120 - 250 z/x.
    proj = np.array(
        [
            [240.0, -250.0, 0.0, 0.0],
            [120.0, 0.0, -250.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
        ]
    )
    return CalibratedCamera(0, 0, proj, 480, 240)


def test_occlusion_filter_drops_deep_points_per_label():
    cam = _identity_camera()
    pts = np.array(
        [
            [5.0, 0.0, 0.0],  # closest member of label 0
            [5.2, 0.0, 0.0],  # within delta_d: kept
            [7.0, 0.0, 0.0],  # 2 m deeper: bleed-through, dropped
            [9.0, 1.0, 0.0],  # label 1, alone: kept
        ]
    )
    labels = np.array([0, 0, 0, 1], dtype=np.int32)
    camera_of_label = np.array([0, 0], dtype=np.int32)
    out = occlusion_filter(PointCloud(0, pts), labels, [cam], 0.5, camera_of_label)
    np.testing.assert_array_equal(out, [0, 0, -1, 1])


def test_occlusion_filter_keeps_unlabeled_points():
    cam = _identity_camera()
    pts = np.array([[5.0, 0.0, 0.0], [50.0, 0.0, 0.0]])
    labels = np.array([-1, -1], dtype=np.int32)
    out = occlusion_filter(PointCloud(0, pts), labels, [cam], 0.5, np.zeros(0, dtype=np.int32))
    np.testing.assert_array_equal(out, [-1, -1])


def test_fuse_by_height_unions_labels_sharing_a_cell():
    spec = BevGridSpec()
    # Labels 0 and 1 share the cell at the origin; label 2 is elsewhere.
    pts = np.array(
        [
            [0.05, 0.05, -1.0],
            [0.05, 0.05, -1.0],
            [0.05, 0.05, -1.0],
            [0.10, 0.10, 0.5],  # same cell, different height, label 1
            [0.10, 0.10, 0.5],
            [0.10, 0.10, 0.5],
            [10.0, 10.0, 0.0],
            [10.0, 10.0, 0.0],
            [10.0, 10.0, 0.0],
        ]
    )
    labels = np.array([0, 0, 0, 1, 1, 1, 2, 2, 2], dtype=np.int32)
    pieces = fuse_by_height(PointCloud(0, pts), labels, spec, min_piece_points=3)
    assert pieces.piece_count == 2
    assert len(set(pieces.labels[:6].tolist())) == 1  # 0 and 1 merged
    assert pieces.labels[6] != pieces.labels[0]


def test_fuse_by_height_drops_small_pieces_and_keeps_order():
    spec = BevGridSpec()
    pts = np.vstack(
        [
            np.tile([1.0, 1.0, 0.0], (6, 1)),
            np.tile([5.0, 5.0, 0.0], (2, 1)),  # below min_piece_points
        ]
    )
    labels = np.array([0] * 6 + [1] * 2, dtype=np.int32)
    pieces = fuse_by_height(PointCloud(0, pts), labels, spec, min_piece_points=5)
    assert pieces.piece_count == 1
    np.testing.assert_array_equal(pieces.labels, [0] * 6 + [-1] * 2)


def test_fuse_by_height_ignores_out_of_grid_points():
    spec = BevGridSpec()
    pts = np.vstack(
        [
            np.tile([1.0, 1.0, 0.0], (5, 1)),
            np.tile([100.0, 100.0, 0.0], (5, 1)),  # outside: no cell, no fusion
        ]
    )
    labels = np.array([0] * 5 + [1] * 5, dtype=np.int32)
    pieces = fuse_by_height(PointCloud(0, pts), labels, spec, min_piece_points=5)
    assert pieces.labels[0] != pieces.labels[5]
    assert pieces.piece_count == 2
