"""Direct field optimization: supervision prep, descent, and failure modes."""

import numpy as np
import pytest

from bevss.grid import FrameSet
from bevss.losses import LossWeights
from bevss.optimizer import (
    DivergenceError,
    OptimConfig,
    field_loss_and_gradients,
    optimize,
    prepare_supervision,
)


def test_config_validation():
    with pytest.raises(ValueError):
        OptimConfig(max_iters=0)
    with pytest.raises(ValueError):
        OptimConfig(learning_rate=0.0)


@pytest.fixture(scope="module")
def supervised(one_box):
    return prepare_supervision(one_box)


def test_prepare_supervision_fills_masks_and_pieces(supervised):
    for t in supervised.mask_frames:
        assert t in supervised.pseudo_masks
        assert len(supervised.pseudo_masks[t]) == len(supervised.clouds[t])
    assert supervised.pieces is not None
    assert len(supervised.pieces) == len(supervised.clouds[0])
    assert supervised.pieces.piece_count > 0


def test_prepare_supervision_is_idempotent(supervised):
    masks_before = supervised.pseudo_masks[0]
    pieces_before = supervised.pieces
    prepare_supervision(supervised)
    assert supervised.pseudo_masks[0] is masks_before  # existing labels kept
    assert supervised.pieces is pieces_before


def test_gradients_at_zero_point_downhill(supervised):
    cfg = OptimConfig(max_iters=1)
    zeros = {
        t: np.zeros((supervised.grid.cells_x, supervised.grid.cells_y, 2))
        for t in cfg.frame_set.offsets
    }
    components, grads = field_loss_and_gradients(supervised, zeros, cfg)
    assert components["total"] > 0.0
    lr = 1e-3
    stepped = {t: zeros[t] - lr * grads[t] for t in zeros}
    after, _ = field_loss_and_gradients(supervised, stepped, cfg)
    assert after["total"] < components["total"]


def test_optimize_reduces_loss_and_reports(supervised):
    fields, report = optimize(supervised, OptimConfig(max_iters=40))
    assert report.iterations <= 40
    assert report.trajectory[-1]["total"] < report.trajectory[0]["total"]
    assert set(fields) == {-1, 1, 2}
    for t, fld in fields.items():
        assert fld.time_offset == t
        assert fld.values.shape == (supervised.grid.cells_x, supervised.grid.cells_y, 2)
    assert report.wall_time_s > 0.0


def test_optimize_respects_frame_subset(supervised):
    cfg = OptimConfig(max_iters=5, frame_set=FrameSet(offsets=(1, 2)))
    fields, _ = optimize(supervised, cfg)
    assert set(fields) == {1, 2}


def test_optimize_diverges_with_huge_learning_rate(supervised):
    with pytest.raises(DivergenceError) as info:
        optimize(supervised, OptimConfig(max_iters=200, learning_rate=500.0))
    assert info.value.report.iterations >= 1


def test_optimize_requires_supervision(one_box):
    import copy

    bare = copy.copy(one_box)
    bare.pseudo_masks = {}
    bare.pieces = None
    with pytest.raises(ValueError, match="mask"):
        optimize(bare, OptimConfig())
    with pytest.raises(ValueError, match="pieces"):
        optimize(bare, OptimConfig(use_mask=False))
    # Without masks and without the rigidity term the plain objective runs.
    cfg = OptimConfig(
        max_iters=2, use_mask=False, weights=LossWeights(lambda_pr=0.0, lambda_tc=0.4)
    )
    fields, _ = optimize(bare, cfg)
    assert set(fields) == {-1, 1, 2}


def test_optimize_requires_all_offset_clouds(supervised):
    cfg = OptimConfig(frame_set=FrameSet(offsets=(1, 5)))
    with pytest.raises(ValueError, match="missing point cloud"):
        optimize(supervised, cfg)
