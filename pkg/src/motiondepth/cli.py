"""Command-line surface: synth, train, eval, infer, gradcheck.

Exit codes: 0 on success, 1 when inputs fail validation, 2 for usage
errors (argparse prints those to standard error).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from .data import (
    SceneSpec,
    generate_synthetic,
    load_dataset,
    save_pfm,
    save_rgb_png,
    save_sequence,
)
from .exceptions import MotionDepthError
from .geometry import Intrinsics
from .gradcheck import SUITES, run_suites
from .losses import METRICS_HEADER, save_metrics_csv
from .network import infer_sequence, load_model
from .training import clips_of, evaluate, parse_train_config, train

_SCENE_STR_KEYS = ("geometry", "trajectory")
_SCENE_INT_KEYS = ("frame_count", "texture_seed")
_SCENE_FLOAT_KEYS = ("speed", "fps", "base_depth")
_INTRINSIC_KEYS = ("fx", "fy", "s", "cx", "cy", "width", "height")


def parse_scene_config(text):
    """Flat key=value scene description.

    geometry and trajectory accept comma-separated lists, cycled over
    the generated sequences; intrinsics keys (width, height, fx, fy, s,
    cx, cy) override the defaults; cx/cy default to the image center.
    """
    fields = {}
    intr = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key in _SCENE_STR_KEYS:
            fields[key] = [v.strip() for v in value.split(",") if v.strip()]
        elif key in _SCENE_INT_KEYS:
            fields[key] = int(value)
        elif key in _SCENE_FLOAT_KEYS:
            fields[key] = float(value)
        elif key == "direction":
            fields[key] = tuple(float(v) for v in value.split(","))
        elif key in _INTRINSIC_KEYS:
            intr[key] = float(value)
        else:
            raise ValueError(f"unknown scene key {key!r}")

    width = int(intr.pop("width", 64))
    height = int(intr.pop("height", 64))
    intr.setdefault("fx", float(width))
    intr.setdefault("fy", intr["fx"])
    intr.setdefault("s", 0.0)
    intr.setdefault("cx", (width - 1) / 2.0)
    intr.setdefault("cy", (height - 1) / 2.0)
    k = Intrinsics(width=width, height=height, **intr)

    geometries = fields.pop("geometry", ["plane"])
    trajectories = fields.pop("trajectory", ["straight"])
    base = SceneSpec(geometry=geometries[0], trajectory=trajectories[0],
                     intrinsics=k, **fields)
    return base, geometries, trajectories


def _cmd_synth(args):
    with open(args.spec) as fh:
        base, geometries, trajectories = parse_scene_config(fh.read())
    os.makedirs(args.out, exist_ok=True)
    for i in range(args.count):
        spec = replace(
            base,
            geometry=geometries[i % len(geometries)],
            trajectory=trajectories[i % len(trajectories)],
            texture_seed=base.texture_seed + i,
        )
        sample = generate_synthetic(spec, seed=args.base_seed + i)
        save_sequence(args.out, f"{i:04d}", sample)
    print(f"wrote {args.count} sequences to {args.out}")
    return 0


def _cmd_train(args):
    with open(args.config) as fh:
        cfg = parse_train_config(fh.read())
    sequences = list(load_dataset(args.data))
    clips = clips_of(sequences, cfg.seq_len)
    _, history = train(cfg, clips, out_dir=args.out, log_every=args.log_every)
    final = history[-1][1]
    print(f"finished {cfg.total_iters} iterations, final loss {final:.6f}")
    print(f"model and loss curve written to {args.out}")
    return 0


def _format_table(report):
    labels = ("Abs Rel", "Sq Rel", "RMSE", "RMSE log",
              "d<1.25", "d<1.25^2", "d<1.25^3")
    values = (report.abs_rel, report.sq_rel, report.rmse, report.rmse_log,
              report.delta1, report.delta2, report.delta3)
    head = " | ".join(f"{l:>9s}" for l in labels)
    row = " | ".join(f"{v:9.4f}" for v in values)
    return head + "\n" + row


def _cmd_eval(args):
    cfg, params = load_model(args.ckpt)
    dataset = list(load_dataset(args.data))
    if not dataset:
        raise ValueError(f"no sequences under {args.data}")
    report = evaluate(cfg, params, dataset, args.seq_len)
    print(f"{len(dataset)} sequences, last {args.seq_len} frame(s) each, "
          "final frame scored:")
    print(_format_table(report))
    if args.csv:
        save_metrics_csv(args.csv, report)
        print(f"metrics written to {args.csv}")
    else:
        print(METRICS_HEADER)
        print(report.csv_row())
    return 0


_RAMP_POS = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
_RAMP_RGB = np.array([
    (0.19, 0.07, 0.23),
    (0.22, 0.49, 0.72),
    (0.13, 0.77, 0.55),
    (0.83, 0.87, 0.19),
    (0.90, 0.25, 0.10),
])


def colorize_depth(depth):
    """Log-depth mapped through a dark-blue-to-red ramp, per-frame range."""
    lg = np.log(np.maximum(np.asarray(depth, dtype=np.float64), 1e-6))
    lo, hi = lg.min(), lg.max()
    t = (lg - lo) / (hi - lo) if hi > lo else np.zeros_like(lg)
    rgb = np.stack([np.interp(t, _RAMP_POS, _RAMP_RGB[:, c]) for c in range(3)],
                   axis=-1)
    return rgb.astype(np.float32)


def _cmd_infer(args):
    cfg, params = load_model(args.ckpt)
    count = 0
    for sample in load_dataset(args.data):
        maps = infer_sequence(sample, cfg, params)
        seq_dir = os.path.join(args.out, sample.seq_id or f"{count:04d}")
        depth_dir = os.path.join(seq_dir, "depth")
        os.makedirs(depth_dir, exist_ok=True)
        if args.png:
            viz_dir = os.path.join(seq_dir, "viz")
            os.makedirs(viz_dir, exist_ok=True)
        for t, depth in enumerate(maps):
            save_pfm(os.path.join(depth_dir, f"{t:06d}.pfm"), depth)
            if args.png:
                save_rgb_png(os.path.join(viz_dir, f"{t:06d}.png"),
                             colorize_depth(depth))
        count += 1
    if count == 0:
        raise ValueError(f"no sequences under {args.data}")
    print(f"wrote depth maps for {count} sequences to {args.out}")
    return 0


def _cmd_gradcheck(args):
    names = [args.module] if args.module else None
    results = run_suites(names)
    all_ok = True
    for name, err, bound, ok in results:
        all_ok &= ok
        print(f"{name:18s} max rel err {err:.3e}  (bound {bound:g})  "
              f"{'ok' if ok else 'FAIL'}")
    return 0 if all_ok else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="motiondepth",
        description="Motion-conditioned monocular depth estimation toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render synthetic sequences")
    p.add_argument("--spec", required=True, help="scene config (key=value)")
    p.add_argument("--out", required=True, help="output dataset root")
    p.add_argument("--count", type=int, required=True, help="sequences to render")
    p.add_argument("--base-seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--config", required=True, help="training config (key=value)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--log-every", type=int, default=100)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint (last-N protocol)")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seq-len", type=int, required=True)
    p.add_argument("--csv", default=None, help="write metrics CSV here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("infer", help="write per-frame depth maps")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--png", action="store_true", help="also write colorized PNGs")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("gradcheck", help="finite-difference verification suites")
    p.add_argument("--module", choices=sorted(SUITES), default=None)
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except (MotionDepthError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
