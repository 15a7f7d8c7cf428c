"""Command-line entry point.

Subcommands: synth, labels, loss, optimize, eval, gradcheck, render.
All numeric text output uses 9 significant digits so golden-file tests
are stable across platforms.
"""

import argparse
import os
import sys

import numpy as np

from . import evaluation, fileio, gradcheck, synth
from .grid import FrameSet, PointFlowSet, cell_indices
from .losses import LossWeights, masked_chamfer, rigidity, temporal_consistency, total
from .masks import DYNAMIC, STATIC, MaskThresholds
from .optimizer import OptimConfig, optimize, prepare_supervision
from .pieces import PieceParams, oversegment


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def _field_name(t: int) -> str:
    return f"field_m{-t}.bev" if t < 0 else f"field_{t}.bev"


def _parse_frames(text: str) -> tuple:
    return tuple(int(x) for x in text.split(","))


def _add_scene_arg(p):
    p.add_argument("--scene", required=True, help="scene manifest (file or directory)")


def _weights(args) -> LossWeights:
    return LossWeights(args.lambda_mc, args.lambda_pr, args.lambda_tc)


def _add_lambda_args(p):
    p.add_argument("--lambda-mc", type=float, default=1.0)
    p.add_argument("--lambda-pr", type=float, default=0.1)
    p.add_argument("--lambda-tc", type=float, default=0.4)


def _supervision(bundle, args):
    thr = MaskThresholds(tau_2d=args.tau2d, tau_3d=args.tau3d, ground_z=args.ground_z)
    params = PieceParams(delta_d=args.delta_d)
    return prepare_supervision(bundle, thr, params)


def _add_label_args(p):
    p.add_argument("--tau2d", type=float, default=5.0)
    p.add_argument("--tau3d", type=float, default=1.0)
    p.add_argument("--ground-z", type=float, default=-1.4, dest="ground_z")
    p.add_argument("--delta-d", type=float, default=0.5, dest="delta_d")


def cmd_synth(args) -> int:
    spec = synth.preset(args.preset, seed=args.seed)
    if args.frames:
        spec = synth.SceneSpec(
            background=spec.background,
            actors=spec.actors,
            ego=spec.ego,
            cameras=spec.cameras,
            frame_set=FrameSet(offsets=_parse_frames(args.frames)),
            grid=spec.grid,
            noise_sigma=spec.noise_sigma,
            flow_noise_px=spec.flow_noise_px,
            seed=spec.seed,
        )
    bundle = synth.generate(spec)
    path = fileio.save_scene(bundle, args.out)
    print(path)
    return 0


def cmd_labels(args) -> int:
    bundle = fileio.load_scene(args.scene)
    bundle.pseudo_masks.clear()
    bundle.pieces = None
    _supervision(bundle, args)
    out = args.out or (args.scene if os.path.isdir(args.scene) else os.path.dirname(args.scene))
    fileio.save_scene(bundle, out)
    for t in bundle.mask_frames:
        status = bundle.pseudo_masks[t].status
        print(
            f"frame {t}: static {int((status == STATIC).sum())} "
            f"dynamic {int((status == DYNAMIC).sum())} "
            f"unknown {int((status > DYNAMIC).sum())}"
        )
    print(f"pieces: {bundle.pieces.piece_count}")
    return 0


def _load_pred_fields(pred_dir: str, bundle):
    fields = {}
    for t in bundle.frame_set.offsets:
        fields[t] = fileio.load_field(os.path.join(pred_dir, _field_name(t)), bundle.grid)
    return fields


def cmd_loss(args) -> int:
    bundle = fileio.load_scene(args.scene)
    _supervision(bundle, args)
    fields = _load_pred_fields(args.pred, bundle)
    flows = {}
    cloud0 = bundle.clouds[0]
    idx, valid = cell_indices(cloud0.points, bundle.grid)
    for t, fld in fields.items():
        f = np.zeros((len(cloud0), 3))
        f[valid, :2] = fld.values[idx[valid, 0], idx[valid, 1]]
        flows[t] = PointFlowSet(t, f)
    mc = masked_chamfer(bundle.clouds, bundle.pseudo_masks, flows)
    pr = rigidity(bundle.pieces, flows)
    tc = temporal_consistency(flows, bundle.frame_set)
    tot = total(mc, pr, tc, _weights(args))
    print(f"mc: {_fmt(mc.value)}")
    print(f"pr: {_fmt(pr.value)}")
    print(f"tc: {_fmt(tc.value)}")
    print(f"total: {_fmt(tot.value)}")
    return 0


def cmd_optimize(args) -> int:
    bundle = fileio.load_scene(args.scene)
    _supervision(bundle, args)
    frame_set = bundle.frame_set
    if args.frames:
        frame_set = FrameSet(offsets=_parse_frames(args.frames), frame_interval_s=frame_set.frame_interval_s)
    cfg = OptimConfig(
        max_iters=args.iters,
        learning_rate=args.lr,
        frame_set=frame_set,
        weights=_weights(args),
        use_mask=not args.no_mask,
        seed=args.seed,
    )
    fields, report = optimize(bundle, cfg)
    os.makedirs(args.out, exist_ok=True)
    for t, fld in fields.items():
        fileio.save_field(os.path.join(args.out, _field_name(t)), fld)
    last = report.trajectory[-1]
    lines = [
        f"iterations={report.iterations}",
        f"converged={str(report.converged).lower()}",
        f"wall_time_s={_fmt(report.wall_time_s)}",
        f"loss_total={_fmt(last['total'])}",
        f"loss_mc={_fmt(last['mc'])}",
        f"loss_pr={_fmt(last['pr'])}",
        f"loss_tc={_fmt(last['tc'])}",
    ]
    with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def cmd_eval(args) -> int:
    bundle = fileio.load_scene(args.scene)
    horizon_frames = args.horizon / bundle.frame_set.frame_interval_s
    for t in bundle.frame_set.offsets:
        pred = fileio.load_field(os.path.join(args.pred, _field_name(t)), bundle.grid)
        gt = bundle.gt_fields[t]
        pred_h = evaluation.interpolate_flow(pred, horizon_frames)
        gt_h = evaluation.interpolate_flow(gt, horizon_frames)
        rep = evaluation.evaluate(pred_h, gt_h, bundle.clouds[0], horizon_s=args.horizon)
        print(f"offset {t}:")
        for name in evaluation.BUCKETS:
            b = rep.bucket(name)
            print(f"  {name}: mean {_fmt(b.mean)} median {_fmt(b.median)} cells {b.count}")
        if args.kv:
            for name in evaluation.BUCKETS:
                b = rep.bucket(name)
                print(f"eval.{t}.{name}.mean={_fmt(b.mean)}")
                print(f"eval.{t}.{name}.median={_fmt(b.median)}")
                print(f"eval.{t}.{name}.count={b.count}")
    return 0


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_all(seed=args.seed, instances=args.instances)
    worst = 0.0
    for name, err in results.items():
        print(f"{name}: {_fmt(err)}")
        worst = max(worst, err)
    print(f"max: {_fmt(worst)}")
    return 0


def _write_ppm(path: str, rgb: np.ndarray):
    h, w = rgb.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(rgb.astype(np.uint8).tobytes())


def _label_colors(n: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(40, 255, size=(max(n, 1), 3))


def cmd_render(args) -> int:
    bundle = fileio.load_scene(args.scene)
    spec = bundle.grid
    if args.what == "field":
        fld = bundle.gt_fields[args.t] if not args.pred else fileio.load_field(
            os.path.join(args.pred, _field_name(args.t)), spec
        )
        mag = np.linalg.norm(fld.values, axis=2)
        peak = max(mag.max(), 1e-9)
        rgb = np.zeros((spec.cells_y, spec.cells_x, 3))
        rgb[:, :, 0] = np.abs(fld.values[:, :, 0]).T / peak * 255
        rgb[:, :, 1] = np.abs(fld.values[:, :, 1]).T / peak * 255
        rgb[:, :, 2] = mag.T / peak * 128
        _write_ppm(args.out, rgb[::-1])
    elif args.what in ("mask", "pieces"):
        cloud = bundle.clouds[args.t if args.what == "mask" else 0]
        idx, valid = cell_indices(cloud.points, spec)
        rgb = np.zeros((spec.cells_x, spec.cells_y, 3), dtype=np.uint8)
        if args.what == "mask":
            status = bundle.pseudo_masks[args.t].status
            palette = np.array([[90, 90, 90], [60, 220, 60], [60, 60, 220]])
            colors = palette[np.minimum(status, 2)]
        else:
            labels = bundle.pieces.labels
            palette = _label_colors(bundle.pieces.piece_count)
            colors = np.where(labels[:, None] >= 0, palette[np.clip(labels, 0, None)], 30)
        rgb[idx[valid, 0], idx[valid, 1]] = colors[valid]
        _write_ppm(args.out, np.transpose(rgb, (1, 0, 2))[::-1])
    elif args.what == "seg2d":
        flow = bundle.flow_images[(args.camera, args.t)]
        seg = oversegment(flow, PieceParams())
        palette = _label_colors(seg.count)
        _write_ppm(args.out, palette[seg.labels])
    print(args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bevss")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("--preset", choices=synth.PRESETS, default="one-box")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", default=None, help='prediction offsets, e.g. "-1,1,2"')
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("labels", help="compute pseudo masks and rigid pieces")
    _add_scene_arg(p)
    _add_label_args(p)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_labels)

    p = sub.add_parser("loss", help="print loss components for given fields")
    _add_scene_arg(p)
    _add_label_args(p)
    _add_lambda_args(p)
    p.add_argument("--pred", required=True, help="directory with BEV1 field files")
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("optimize", help="fit BEV fields by gradient descent")
    _add_scene_arg(p)
    _add_label_args(p)
    _add_lambda_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--frames", default=None)
    p.add_argument("--no-mask", action="store_true", help="plain Chamfer on full clouds")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("eval", help="speed-bucketed errors against ground truth")
    _add_scene_arg(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--horizon", type=float, default=1.0, help="evaluation horizon, seconds")
    p.add_argument("--kv", action="store_true", help="also print key=value lines")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("render", help="portable-pixmap visualizations")
    _add_scene_arg(p)
    p.add_argument("--what", choices=("field", "mask", "pieces", "seg2d"), required=True)
    p.add_argument("--t", type=int, default=1)
    p.add_argument("--camera", type=int, default=0)
    p.add_argument("--pred", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # argparse handles usage errors with code 2
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
