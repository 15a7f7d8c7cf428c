"""Self-supervised BEV motion fields from LiDAR point clouds and optical flow."""

from .grid import (
    BevGridSpec,
    BevMotionField,
    FrameSet,
    PointCloud,
    PointFlowSet,
    cell_of,
    field_to_point_flows,
    warp,
)
from .losses import LossValue, LossWeights
from .masks import MaskThresholds, StaticDynamicMask
from .pieces import PieceParams, RigidPieces
from .projection import CalibratedCamera, FlowImage

__all__ = [
    "BevGridSpec",
    "BevMotionField",
    "CalibratedCamera",
    "FlowImage",
    "FrameSet",
    "LossValue",
    "LossWeights",
    "MaskThresholds",
    "PieceParams",
    "PointCloud",
    "PointFlowSet",
    "RigidPieces",
    "StaticDynamicMask",
    "cell_of",
    "field_to_point_flows",
    "warp",
]

__version__ = "0.1.0"
