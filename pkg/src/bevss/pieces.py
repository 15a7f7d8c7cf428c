"""Rigid piece generation.

Pipeline: over-segment each flow image into superpixels, project the
segment labels onto the point cloud, drop camera-occluded bleed-through
points, then fuse labels that share a BEV cell into single pieces.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .grid import BevGridSpec, PointCloud, cell_indices
from .projection import CalibratedCamera, FlowImage, project_many


@dataclass(frozen=True)
class PieceParams:
    superpixel_count: int = 400
    compactness: float = 10.0
    flow_gain: float = 4.0  # scales flow channels so boundaries dominate
    slic_iters: int = 10
    delta_d: float = 0.5  # meters of allowed depth spread within a piece
    min_piece_points: int = 5

    def __post_init__(self):
        if self.superpixel_count < 1:
            raise ValueError("superpixel_count must be >= 1")
        if self.delta_d <= 0:
            raise ValueError("delta_d must be positive")


@dataclass(frozen=True)
class Segmentation2D:
    camera_id: int
    labels: np.ndarray  # (H, W) int32, contiguous ids 0..K-1

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.int32)
        if lab.ndim != 2:
            raise ValueError("labels must be 2-D")
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)

    @property
    def count(self) -> int:
        return int(self.labels.max()) + 1


@dataclass(frozen=True)
class RigidPieces:
    frame_index: int
    labels: np.ndarray  # (N,) int32, -1 = unassigned
    piece_count: int

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.int32)
        if lab.ndim != 1:
            raise ValueError("labels must be 1-D")
        if lab.size and lab.max() >= self.piece_count:
            raise ValueError("label exceeds piece_count")
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)

    def __len__(self) -> int:
        return self.labels.shape[0]


def _grid_shape(h: int, w: int, k: int) -> tuple[int, int]:
    ny = max(1, int(round(np.sqrt(k * h / w)))) if w else 1
    ny = min(ny, h)
    nx = max(1, min(w, int(round(k / ny))))
    return ny, nx


def oversegment(flow_img: FlowImage, params: PieceParams) -> Segmentation2D:
    """SLIC-style clustering of the flow image in (u, v, g*du, g*dv) space.

    Centers start on a regular grid; assignment runs inside 2S x 2S
    windows around each center; disconnected fragments are relabeled to a
    neighboring superpixel afterwards.
    """
    h, w = flow_img.data.shape[:2]
    k = params.superpixel_count
    if k > h * w:
        raise ValueError("more superpixels than pixels")

    flow = flow_img.data.astype(np.float64) * params.flow_gain
    ny, nx = _grid_shape(h, w, k)
    s = max(1.0, np.sqrt(h * w / (ny * nx)))
    inv_s2 = (params.compactness / s) ** 2

    cy = (np.arange(ny) + 0.5) * h / ny
    cx = (np.arange(nx) + 0.5) * w / nx
    centers_yx = np.stack(np.meshgrid(cy, cx, indexing="ij"), axis=-1).reshape(-1, 2)
    ci = np.clip(np.rint(centers_yx[:, 0]).astype(int), 0, h - 1)
    cj = np.clip(np.rint(centers_yx[:, 1]).astype(int), 0, w - 1)
    centers_f = flow[ci, cj].copy()

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    labels = np.zeros((h, w), dtype=np.int32)
    half = int(np.ceil(2 * s))

    for _ in range(params.slic_iters):
        best = np.full((h, w), np.inf)
        labels.fill(-1)
        for c in range(centers_yx.shape[0]):
            y0 = max(0, int(centers_yx[c, 0]) - half)
            y1 = min(h, int(centers_yx[c, 0]) + half + 1)
            x0 = max(0, int(centers_yx[c, 1]) - half)
            x1 = min(w, int(centers_yx[c, 1]) + half + 1)
            df = flow[y0:y1, x0:x1] - centers_f[c]
            dy = yy[y0:y1, x0:x1] - centers_yx[c, 0]
            dx = xx[y0:y1, x0:x1] - centers_yx[c, 1]
            dist = (df * df).sum(axis=2) + inv_s2 * (dy * dy + dx * dx)
            win = best[y0:y1, x0:x1]
            closer = dist < win
            win[closer] = dist[closer]
            labels[y0:y1, x0:x1][closer] = c
        # Orphans outside every window: nearest center by spatial distance.
        orphan = labels < 0
        if np.any(orphan):
            oy, ox = np.nonzero(orphan)
            d = (oy[:, None] - centers_yx[None, :, 0]) ** 2 + (
                ox[:, None] - centers_yx[None, :, 1]
            ) ** 2
            labels[oy, ox] = np.argmin(d, axis=1)
        for c in range(centers_yx.shape[0]):
            m = labels == c
            if np.any(m):
                centers_yx[c, 0] = yy[m].mean()
                centers_yx[c, 1] = xx[m].mean()
                centers_f[c] = flow[m].reshape(-1, 2).mean(axis=0)

    labels = _enforce_connectivity(labels)
    return Segmentation2D(camera_id=flow_img.camera_id, labels=labels)


def _enforce_connectivity(labels: np.ndarray) -> np.ndarray:
    """Keep each label's largest component; merge fragments into a neighbor."""
    out = labels.copy()
    structure = np.ones((3, 3), dtype=bool)
    for lab in np.unique(out):
        comp, ncomp = ndimage.label(out == lab, structure=structure)
        if ncomp <= 1:
            continue
        sizes = ndimage.sum_labels(np.ones_like(comp), comp, range(1, ncomp + 1))
        keep = int(np.argmax(sizes)) + 1
        for frag in range(1, ncomp + 1):
            if frag == keep:
                continue
            mask = comp == frag
            ring = ndimage.binary_dilation(mask, structure=structure) & ~mask
            ring &= out != lab
            if np.any(ring):
                vals, counts = np.unique(out[ring], return_counts=True)
                out[mask] = vals[np.argmax(counts)]
            # A fragment surrounded by its own label keeps it.
    return _compact_labels(out)


def _compact_labels(labels: np.ndarray) -> np.ndarray:
    uniq, inv = np.unique(labels, return_inverse=True)
    return inv.reshape(labels.shape).astype(np.int32)


def label_points(
    cloud: PointCloud,
    segs: list[Segmentation2D],
    cams: list[CalibratedCamera],
    params: PieceParams,
):
    """Give each point the superpixel label under its projected pixel.

    Labels from different cameras are offset to stay globally unique.
    Returns (labels (N,) int32 with -1 for invisible points,
    camera_of_label mapping global label id -> camera index).
    """
    n = len(cloud)
    labels = np.full(n, -1, dtype=np.int32)
    camera_of_label: list[int] = []
    offset = 0
    assigned = np.zeros(n, dtype=bool)
    for cam_idx, (seg, cam) in enumerate(zip(segs, cams)):
        todo = ~assigned
        if np.any(todo):
            idx = np.nonzero(todo)[0]
            uv, _, valid = project_many(cloud.points[idx], cam)
            idx = idx[valid]
            if idx.size:
                u = np.minimum(np.rint(uv[valid, 0]).astype(np.int64), cam.width - 1)
                v = np.minimum(np.rint(uv[valid, 1]).astype(np.int64), cam.height - 1)
                labels[idx] = seg.labels[v, u] + offset
                assigned[idx] = True
        camera_of_label.extend([cam_idx] * seg.count)
        offset += seg.count
    return labels, np.asarray(camera_of_label, dtype=np.int32)


def occlusion_filter(
    cloud: PointCloud,
    labels: np.ndarray,
    cams: list[CalibratedCamera],
    delta_d: float,
    camera_of_label: np.ndarray,
) -> np.ndarray:
    """Drop points much deeper than their piece's closest member.

    LiDAR sees slightly around camera occluders, so background points can
    land inside a foreground superpixel; they sit farther from the camera
    than the real piece surface and get label -1.
    """
    out = labels.copy()
    centers = np.stack([cam.center() for cam in cams])
    valid = labels >= 0
    if not np.any(valid):
        return out
    cam_idx = camera_of_label[labels[valid]]
    dist = np.linalg.norm(cloud.points[valid] - centers[cam_idx], axis=1)
    lab = labels[valid]
    order = np.argsort(lab, kind="stable")
    sorted_lab = lab[order]
    sorted_dist = dist[order]
    starts = np.searchsorted(sorted_lab, np.unique(sorted_lab))
    d_min = np.minimum.reduceat(sorted_dist, starts)
    min_of = dict(zip(np.unique(sorted_lab).tolist(), d_min.tolist()))
    dmin_per_point = np.array([min_of[v] for v in lab])
    drop = dist > dmin_per_point + delta_d
    drop_idx = np.nonzero(valid)[0][drop]
    out[drop_idx] = -1
    return out


def fuse_by_height(
    cloud: PointCloud,
    labels: np.ndarray,
    spec: BevGridSpec,
    min_piece_points: int = 5,
) -> RigidPieces:
    """Union labels that share a BEV cell; compact ids; drop tiny pieces.

    Multi-view cameras see objects in horizontal slices, so one object
    splits into stacked segments that land in the same BEV cells.
    """
    n_labels = int(labels.max()) + 1 if labels.size and labels.max() >= 0 else 0
    parent = np.arange(n_labels)

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a: int, b: int):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    idx, in_range = cell_indices(cloud.points, spec)
    valid = (labels >= 0) & in_range
    if np.any(valid):
        cell_key = idx[valid, 0].astype(np.int64) * spec.cells_y + idx[valid, 1]
        lab = labels[valid]
        order = np.lexsort((lab, cell_key))
        ck = cell_key[order]
        lb = lab[order]
        same_cell = ck[1:] == ck[:-1]
        for a, b in zip(lb[:-1][same_cell], lb[1:][same_cell]):
            if a != b:
                union(int(a), int(b))

    fused = np.full(len(cloud), -1, dtype=np.int32)
    has = labels >= 0
    if n_labels:
        roots = np.array([find(i) for i in range(n_labels)])
        fused[has] = roots[labels[has]]

    # Compact to 0..N_r-1 and drop undersized pieces.
    uniq, counts = np.unique(fused[fused >= 0], return_counts=True)
    keep = uniq[counts >= min_piece_points]
    remap = np.full(n_labels, -1, dtype=np.int32)
    remap[keep] = np.arange(keep.size, dtype=np.int32)
    out = np.full(len(cloud), -1, dtype=np.int32)
    out[has] = remap[fused[has]]
    return RigidPieces(frame_index=cloud.frame_index, labels=out, piece_count=int(keep.size))


def build_pieces(
    cloud: PointCloud,
    flow_imgs: list[FlowImage],
    cams: list[CalibratedCamera],
    params: PieceParams,
    spec: BevGridSpec,
) -> RigidPieces:
    """Full pipeline: oversegment -> label -> occlusion filter -> fuse."""
    segs = [oversegment(f, params) for f in flow_imgs]
    labels, camera_of_label = label_points(cloud, segs, cams, params)
    labels = occlusion_filter(cloud, labels, cams, params.delta_d, camera_of_label)
    return fuse_by_height(cloud, labels, spec, params.min_piece_points)
