"""Command-line entry point: ``cyclecorr <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io

log = logging.getLogger("cyclecorr")


def _global_flags(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="key = value configuration file")
    parser.add_argument("--seed", type=int, default=default, help="random seed")
    parser.add_argument("--threads", type=int, default=default,
                        help="worker threads for compiled kernels and BLAS")


def _configs(args):
    values = io.read_config(args.config) if args.config else {}
    return io.build_configs(values, seed=args.seed)


def _set_threads(n):
    if n is None:
        return
    if n <= 0:
        raise SystemExit("--threads must be positive")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    import numba
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def cmd_optimize(args):
    from .cycle import Cycle, key_name
    from .optimize import optimize_cycle, optimize_pair

    weights, config = _configs(args)
    if args.variant is not None:
        config.two_warp_variant = args.variant
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.cycle:
        images = dict(zip(("l0", "r0", "l1", "r1"), (io.read_image(p) for p in args.cycle)))
        result = optimize_cycle(Cycle(images), weights, config)
    else:
        if not args.mode:
            raise SystemExit("--pair needs --mode flow|stereo")
        a, b = (io.read_image(p) for p in args.pair)
        result = optimize_pair(a, b, args.mode, weights, config)
    for key, field in result.maps.items():
        io.write_flow(out / f"{key_name(key)}.flo", field.astype(np.float32))
    for key, occ in result.occlusions.items():
        io.write_mask(occ, out / f"occ_{key_name(key)}.png")
    io.write_history(out / "history.csv", result.history)
    last = result.history[-1]
    print(f"wrote {len(result.maps)} fields to {out}; final total {last['total']:.6f}")


def cmd_evaluate(args):
    from .metrics import depth_metrics, flow_metrics

    if args.fb is None:
        pred, _ = io.read_flow(args.pred)
        gt, valid = io.read_flow(args.gt)
        noc = None
        if args.noc:
            noc = (io.read_flow(args.noc)[1] if args.noc.endswith((".flo",))
                   else io.read_image(args.noc)[..., 0] > 0.5)
        res = flow_metrics(pred, gt, valid, noc).as_dict()
    else:
        pred, _ = io.read_flow(args.pred)
        gt, valid = io.read_disparity(args.gt)
        res = depth_metrics(pred, gt, args.fb, valid=valid).as_dict()
    print(json.dumps(res, indent=2))


def cmd_occlusion(args):
    from .occlusion import estimate_occlusion

    fwd, _ = io.read_flow(args.forward)
    bwd, _ = io.read_flow(args.backward)
    occ = estimate_occlusion(fwd.astype(np.float64), bwd.astype(np.float64),
                             args.alpha1, args.alpha2)
    io.write_mask(occ, args.out)
    print(f"visible fraction {float(occ.mean()):.4f}")


def cmd_synth(args):
    from . import synth
    from .cycle import FRAMES, key_name

    seed = 0 if args.seed is None else args.seed
    if args.spec:
        spec = _scene_from_file(args.spec, args.seed)
    elif args.scene == "suite":
        spec = synth.suite_scene(seed, size=args.size)
    elif args.scene == "occlusion":
        spec = synth.occlusion_scene()
    else:
        spec = synth.translation_scene()
    cycle = synth.render_cycle(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for f in FRAMES:
        io.write_image(cycle.images[f], out / f"{f}.png", bit_depth=16)
        io.write_disparity(out / f"depth_{f}.pfm", cycle.gt_depth[f])
    for key, field in cycle.gt_maps.items():
        io.write_flow(out / f"gt_{key_name(key)}.flo", field.astype(np.float32))
        io.write_mask(cycle.gt_occlusion[key], out / f"gtocc_{key_name(key)}.png")
    print(f"wrote cycle (fb={cycle.fb}) to {out}")


def _scene_from_file(path, seed):
    """SceneSpec from key = value lines; ``sprites`` is a list of
    ``((cx, cy), (half_w, half_h), depth, (vx, vy), shape)`` tuples."""
    from .synth import SceneSpec, Sprite

    values = io.read_config(path)
    sprites = [Sprite(*s) for s in values.pop("sprites", [])]
    if seed is not None:
        values["seed"] = seed
    try:
        return SceneSpec(sprites=sprites, **values)
    except TypeError as exc:
        raise ValueError(f"bad scene file {path}: {exc}") from None


def cmd_viz(args):
    flow, _ = io.read_flow(args.flow)
    io.write_image(io.flow_to_color(flow, args.max), args.out)


def build_parser():
    p = argparse.ArgumentParser(prog="cyclecorr", description=__doc__)
    _global_flags(p, suppress=False)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)

    o = sub.add_parser("optimize", parents=[common], help="recover correspondence fields")
    g = o.add_mutually_exclusive_group(required=True)
    g.add_argument("--cycle", nargs=4, metavar=("L0", "R0", "L1", "R1"))
    g.add_argument("--pair", nargs=2, metavar=("A", "B"))
    o.add_argument("--mode", choices=("flow", "stereo"))
    o.add_argument("--variant", type=int, choices=(1, 2, 3))
    o.add_argument("--out-dir", required=True)
    o.set_defaults(func=cmd_optimize)

    e = sub.add_parser("evaluate", parents=[common], help="flow or depth metrics")
    e.add_argument("--pred", required=True, help="predicted field (.flo or KITTI png)")
    e.add_argument("--gt", required=True, help="ground-truth flow, or depth (.pfm) with --fb")
    e.add_argument("--noc", help="non-occluded mask (png) for the flow split")
    e.add_argument("--fb", type=float, help="focal length x baseline; switches to depth metrics")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("occlusion", parents=[common], help="forward-backward occlusion mask")
    c.add_argument("--forward", required=True)
    c.add_argument("--backward", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--alpha1", type=float, default=0.01)
    c.add_argument("--alpha2", type=float, default=0.5)
    c.set_defaults(func=cmd_occlusion)

    s = sub.add_parser("synth", parents=[common], help="render a synthetic cycle")
    s.add_argument("--scene", choices=("suite", "occlusion", "translation"), default="suite")
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--spec", help="scene description file (overrides --scene)")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_synth)

    v = sub.add_parser("viz", parents=[common], help="colour-code a flow file")
    v.add_argument("--flow", required=True)
    v.add_argument("--out", required=True)
    v.add_argument("--max", type=float, help="magnitude mapped to full saturation")
    v.set_defaults(func=cmd_viz)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _set_threads(args.threads)
    try:
        args.func(args)
    except (io.FormatError, ValueError, FileNotFoundError) as exc:
        print(f"cyclecorr: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
