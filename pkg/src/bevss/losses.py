"""Self-supervised training objectives.

Every loss returns a value and, on request, analytic gradients with
respect to the per-point flows. Nearest-neighbor correspondences are
recomputed per evaluation and held fixed within one gradient computation
(the standard subgradient for piecewise-smooth NN objectives).
"""

import os
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .grid import FrameSet, PointCloud, PointFlowSet
from .masks import DYNAMIC, StaticDynamicMask
from .pieces import RigidPieces


def _workers() -> int:
    return int(os.environ.get("BEVSS_THREADS", "-1") or -1)


@dataclass(frozen=True)
class LossValue:
    """Scalar loss plus optional gradients, keyed per time offset."""

    value: float
    grad: dict | None = None


@dataclass(frozen=True)
class LossWeights:
    lambda_mc: float = 1.0
    lambda_pr: float = 0.1
    lambda_tc: float = 0.4

    def __post_init__(self):
        if min(self.lambda_mc, self.lambda_pr, self.lambda_tc) < 0:
            raise ValueError("loss weights must be non-negative")


def chamfer_pairs(a: np.ndarray, b: np.ndarray):
    """Nearest-neighbor index maps (a->b, b->a) for the Chamfer terms."""
    tree_b = cKDTree(b)
    _, a_to_b = tree_b.query(a, workers=_workers())
    tree_a = cKDTree(a)
    _, b_to_a = tree_a.query(b, workers=_workers())
    return a_to_b, b_to_a


def chamfer(a: PointCloud, b: PointCloud, with_grad: bool = False, pairs=None) -> LossValue:
    """Symmetric sum of squared nearest-neighbor distances (sums, not means)."""
    pa, pb = a.points, b.points
    if pa.shape[0] == 0 or pb.shape[0] == 0:
        raise ValueError("empty operand")
    if pairs is None:
        pairs = chamfer_pairs(pa, pb)
    a_to_b, b_to_a = pairs
    da = pa - pb[a_to_b]
    db = pb - pa[b_to_a]
    value = float((da * da).sum() + (db * db).sum())
    if not with_grad:
        return LossValue(value)
    ga = 2.0 * da
    np.add.at(ga, b_to_a, -2.0 * db)
    gb = 2.0 * db
    np.add.at(gb, a_to_b, -2.0 * da)
    return LossValue(value, grad={"a": ga, "b": gb})


def masked_chamfer(
    clouds: dict[int, PointCloud],
    masks: dict[int, StaticDynamicMask],
    flows: dict[int, PointFlowSet],
    with_grad: bool = False,
    nn_cache: dict | None = None,
) -> LossValue:
    """Chamfer on the pseudo-dynamic parts plus a static zero-motion penalty.

    clouds/masks must cover frame 0 and every predicted offset in flows.
    For each offset the dynamic subset of frame 0 is warped and compared
    against the dynamic subset of that frame; pseudo-static frame-0 points
    pay the mean L1 norm of their flow. An empty dynamic set on either
    side skips the Chamfer term for that offset.
    """
    if 0 not in clouds or 0 not in masks:
        raise ValueError("frame 0 cloud and mask are required")
    cloud0, mask0 = clouds[0], masks[0]
    if len(cloud0) != len(mask0):
        raise ValueError("frame 0 cloud and mask lengths differ")
    offsets = sorted(flows)
    dyn0 = mask0.status == DYNAMIC
    dyn0_idx = np.nonzero(dyn0)[0]
    stat0_idx = np.nonzero(~dyn0)[0]
    n0 = len(cloud0)

    value = 0.0
    grads: dict[int, np.ndarray] = {}
    for t in offsets:
        fl = flows[t]
        if len(fl) != n0:
            raise ValueError("flow length differs from frame 0 cloud")
        if t not in clouds or t not in masks:
            raise ValueError(f"missing frame data for offset {t}")
        if len(clouds[t]) != len(masks[t]):
            raise ValueError(f"cloud and mask lengths differ at offset {t}")
        g = np.zeros((n0, 3)) if with_grad else None

        target = clouds[t].points[masks[t].status == DYNAMIC]
        if dyn0_idx.size and target.shape[0]:
            warped = cloud0.points[dyn0_idx] + fl.flows[dyn0_idx]
            pairs = nn_cache.get(t) if nn_cache is not None else None
            if pairs is None:
                pairs = chamfer_pairs(warped, target)
                if nn_cache is not None:
                    nn_cache[t] = pairs
            cd = chamfer(
                PointCloud(t, warped), PointCloud(t, target), with_grad=with_grad, pairs=pairs
            )
            value += cd.value
            if with_grad:
                g[dyn0_idx] += cd.grad["a"]

        if stat0_idx.size:
            fs = fl.flows[stat0_idx]
            value += float(np.abs(fs).sum()) / stat0_idx.size
            if with_grad:
                g[stat0_idx] += np.sign(fs) / stat0_idx.size
        if with_grad:
            grads[t] = g

    n_t = len(offsets)
    value /= n_t
    if not with_grad:
        return LossValue(value)
    return LossValue(value, grad={t: g / n_t for t, g in grads.items()})


def rigidity(
    pieces: RigidPieces,
    flows: dict[int, PointFlowSet],
    with_grad: bool = False,
    norm: str = "l1",
) -> LossValue:
    """Mean absolute deviation of flows about their piece mean, per frame.

    Pieces with no constraint (piece_count 0) yield 0.
    """
    if pieces.piece_count == 0:
        if not with_grad:
            return LossValue(0.0)
        return LossValue(0.0, grad={t: np.zeros((len(f), 3)) for t, f in flows.items()})
    labels = pieces.labels
    valid = labels >= 0
    lab = labels[valid]
    n_r = pieces.piece_count
    counts = np.bincount(lab, minlength=n_r).astype(np.float64)
    w = 1.0 / (n_r * counts[lab])  # per-point weight 1/(N_r |R_j|)

    value = 0.0
    grads: dict[int, np.ndarray] = {}
    for t, fl in sorted(flows.items()):
        f = fl.flows[valid]
        means = np.zeros((n_r, 3))
        for c in range(3):
            means[:, c] = np.bincount(lab, weights=f[:, c], minlength=n_r)
        means /= counts[:, None]
        dev = f - means[lab]
        if norm == "l1":
            value += float((w[:, None] * np.abs(dev)).sum())
            s = np.sign(dev)
        elif norm == "l2":
            mag = np.linalg.norm(dev, axis=1)
            value += float((w * mag).sum())
            s = np.divide(dev, mag[:, None], out=np.zeros_like(dev), where=mag[:, None] > 0)
        else:
            raise ValueError(f"unknown norm {norm!r}")
        if with_grad:
            piece_s = np.zeros((n_r, 3))
            for c in range(3):
                piece_s[:, c] = np.bincount(lab, weights=s[:, c], minlength=n_r)
            g_valid = w[:, None] * (s - piece_s[lab] / counts[lab, None])
            g = np.zeros((len(fl), 3))
            g[valid] = g_valid
            grads[t] = g

    n_t = len(flows)
    value /= n_t
    if not with_grad:
        return LossValue(value)
    return LossValue(value, grad={t: g / n_t for t, g in grads.items()})


def temporal_consistency(
    flows: dict[int, PointFlowSet],
    frame_set: FrameSet,
    with_grad: bool = False,
    norm: str = "l1",
) -> LossValue:
    """Penalize per-frame velocities that deviate from their mean.

    Displacements are divided by their signed offset, so a backward frame
    contributes a forward velocity and constant-velocity motion is the
    exact zero of the loss.
    """
    offsets = sorted(flows)
    if 0 in offsets:
        raise ValueError("offset 0 has no velocity")
    if len(offsets) < 2:
        raise ValueError("temporal consistency needs at least two offsets")
    n = len(flows[offsets[0]])
    n_t = len(offsets)
    vel = np.stack([flows[t].flows / t for t in offsets])  # (T, N, 3)
    vbar = vel.mean(axis=0)
    x = vbar[None] - vel
    if norm == "l1":
        value = float(np.abs(x).sum()) / (n * n_t)
        s = np.sign(x)
    elif norm == "l2":
        mag = np.linalg.norm(x, axis=2)
        value = float(mag.sum()) / (n * n_t)
        s = np.divide(x, mag[..., None], out=np.zeros_like(x), where=mag[..., None] > 0)
    else:
        raise ValueError(f"unknown norm {norm!r}")
    if not with_grad:
        return LossValue(value)
    s_sum = s.sum(axis=0)  # (N, 3)
    grads = {}
    for k, t in enumerate(offsets):
        grads[t] = (s_sum / (n_t * t) - s[k] / t) / (n * n_t)
    return LossValue(value, grad=grads)


def smoothness(
    cloud: PointCloud, flows: PointFlowSet, k: int = 8, with_grad: bool = False
) -> LossValue:
    """Local smoothness baseline: squared flow differences to k neighbors."""
    n = len(cloud)
    if k < 1 or n <= k:
        raise ValueError("need k >= 1 and more points than neighbors")
    if len(flows) != n:
        raise ValueError("cloud and flow lengths differ")
    tree = cKDTree(cloud.points)
    _, nbr = tree.query(cloud.points, k=k + 1, workers=_workers())
    nbr = nbr[:, 1:]  # drop self
    f = flows.flows
    diffs = f[:, None, :] - f[nbr]  # (N, k, 3)
    value = float((diffs * diffs).sum()) / k
    if not with_grad:
        return LossValue(value)
    g = 2.0 * diffs.sum(axis=1) / k
    np.add.at(g, nbr.ravel(), (-2.0 / k) * diffs.reshape(-1, 3))
    return LossValue(value, grad={flows.time_offset: g})


def total(mc: LossValue, pr: LossValue, tc: LossValue, weights: LossWeights) -> LossValue:
    """Weighted sum of the three supervision signals; gradients add linearly."""
    value = weights.lambda_mc * mc.value + weights.lambda_pr * pr.value + weights.lambda_tc * tc.value
    parts = [(weights.lambda_mc, mc), (weights.lambda_pr, pr), (weights.lambda_tc, tc)]
    if all(p.grad is None for _, p in parts):
        return LossValue(value)
    grads: dict[int, np.ndarray] = {}
    for lam, part in parts:
        if part.grad is None:
            continue
        for t, g in part.grad.items():
            if t in grads:
                grads[t] = grads[t] + lam * g
            else:
                grads[t] = lam * g
    return LossValue(value, grad=grads)
