"""Pseudo static/dynamic mask generation from optical flow.

A point is static when both its residual 2D flow and the lifted 3D flow
fall below thresholds; points below the ground height are forced static;
points visible in no camera stay unknown.
"""

from dataclasses import dataclass

import numpy as np

from .grid import PointCloud
from .projection import CalibratedCamera, FlowImage, lift_flow_many, project_many

STATIC = 0
DYNAMIC = 1
UNKNOWN = 2


@dataclass(frozen=True)
class MaskThresholds:
    tau_2d: float = 5.0  # pixels
    tau_3d: float = 1.0  # meters
    ground_z: float = -1.4  # meters; below this a point is forced static

    def __post_init__(self):
        if self.tau_2d <= 0 or self.tau_3d <= 0:
            raise ValueError("thresholds must be positive")


@dataclass(frozen=True)
class StaticDynamicMask:
    frame_index: int
    status: np.ndarray  # (N,) uint8 of STATIC/DYNAMIC/UNKNOWN

    def __post_init__(self):
        s = np.asarray(self.status, dtype=np.uint8)
        if s.ndim != 1:
            raise ValueError("status must be 1-D")
        if not np.all(s <= UNKNOWN):
            raise ValueError("status values must be 0, 1, or 2")
        s.setflags(write=False)
        object.__setattr__(self, "status", s)

    def __len__(self) -> int:
        return self.status.shape[0]


def classify_point(f2d, f3d, thr: MaskThresholds) -> int:
    """Threshold rule: static iff |f2d| < tau_2d and |f3d| < tau_3d."""
    m2 = float(np.linalg.norm(np.asarray(f2d, dtype=np.float64)))
    m3 = float(np.linalg.norm(np.asarray(f3d, dtype=np.float64)))
    if m2 < thr.tau_2d and m3 < thr.tau_3d:
        return STATIC
    return DYNAMIC


def build_mask(
    cloud: PointCloud,
    flow_imgs: list[FlowImage],
    cam_pairs: list[tuple[CalibratedCamera, CalibratedCamera]],
    thr: MaskThresholds,
) -> StaticDynamicMask:
    """Classify every point of the cloud from multi-camera optical flow.

    cam_pairs[k] holds the camera that produced flow_imgs[k] at frames t
    and t+dt. Cameras are tried in order; the first valid projection
    supplies the flows. Invisible points stay UNKNOWN.
    """
    if not flow_imgs:
        raise ValueError("empty camera list")
    if len(flow_imgs) != len(cam_pairs):
        raise ValueError("calibration must cover every flow image")

    n = len(cloud)
    status = np.full(n, UNKNOWN, dtype=np.uint8)
    assigned = np.zeros(n, dtype=bool)

    for flow_img, (cam_t, cam_next) in zip(flow_imgs, cam_pairs):
        todo = ~assigned
        if not np.any(todo):
            break
        idx = np.nonzero(todo)[0]
        pts = cloud.points[idx]
        uv, _, valid_t = project_many(pts, cam_t)
        _, _, valid_next = project_many(pts, cam_next)
        valid = valid_t & valid_next
        if not np.any(valid):
            continue
        idx = idx[valid]
        pts = pts[valid]
        uv = uv[valid]

        u = np.minimum(np.rint(uv[:, 0]).astype(np.int64), cam_t.width - 1)
        v = np.minimum(np.rint(uv[:, 1]).astype(np.int64), cam_t.height - 1)
        total = flow_img.data[v, u].astype(np.float64)

        hom_next = pts @ cam_next.proj[:, :3].T + cam_next.proj[:, 3]
        uv_next = hom_next[:, :2] / hom_next[:, 2:3]
        f2d = total - (uv_next - uv)

        f3d = lift_flow_many(f2d, pts, cam_t)
        m2 = np.linalg.norm(f2d, axis=1)
        m3 = np.linalg.norm(f3d, axis=1)
        static = (m2 < thr.tau_2d) & (m3 < thr.tau_3d)  # NaN lift -> dynamic
        status[idx] = np.where(static, STATIC, DYNAMIC).astype(np.uint8)
        assigned[idx] = True

    # Ground override: height rule wins over any flow evidence.
    ground = cloud.points[:, 2] < thr.ground_z
    status[ground] = STATIC
    return StaticDynamicMask(frame_index=cloud.frame_index, status=status)


def split(cloud: PointCloud, mask: StaticDynamicMask):
    """Partition into (dynamic cloud, static cloud, (dyn_idx, static_idx)).

    Unknown points go to the static side: no fake flow should be learned
    on unobserved points.
    """
    if len(cloud) != len(mask):
        raise ValueError("cloud and mask lengths differ")
    dyn_idx = np.nonzero(mask.status == DYNAMIC)[0]
    static_idx = np.nonzero(mask.status != DYNAMIC)[0]
    dyn = PointCloud(cloud.frame_index, cloud.points[dyn_idx])
    stat = PointCloud(cloud.frame_index, cloud.points[static_idx])
    return dyn, stat, (dyn_idx, static_idx)
