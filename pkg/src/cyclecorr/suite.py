"""Seeded synthetic benchmark shared by the scripts and the acceptance tests."""
from __future__ import annotations

import time
from dataclasses import replace

import numpy as np

from . import synth
from .cycle import MAP_KEYS
from .losses import LossWeights
from .metrics import depth_metrics, flow_metrics
from .optimize import OptimizerConfig, optimize_cycle, optimize_pair

#: the two left temporal maps every configuration estimates
FLOW_KEYS = (("l0", "l1"), ("l1", "l0"))
STEREO_KEY = ("l0", "r0")


def _epe_occ(pred, cycle, key):
    r = flow_metrics(pred, cycle.gt_maps[key], noc=cycle.gt_occlusion[key][..., 0] > 0)
    return r.epe_occ


def e2e_errors(maps: dict, cycle) -> dict:
    """EPE-all per map key."""
    return {k: flow_metrics(maps[k], cycle.gt_maps[k]).epe_all for k in MAP_KEYS}


def run_full(seed: int, weights: LossWeights | None = None,
             config: OptimizerConfig | None = None, size: int = 64):
    cycle = synth.render_cycle(synth.suite_scene(seed, size=size))
    t0 = time.perf_counter()
    res = optimize_cycle(cycle, weights or LossWeights(), config or OptimizerConfig())
    return cycle, res, time.perf_counter() - t0


def ablation_row(seed: int, config: OptimizerConfig | None = None, size: int = 64,
                 full=None) -> dict:
    """Occluded-region flow error and stereo Abs Rel for the four configurations.

    ``full`` may pass an existing ``(cycle, result)`` for the full variant-1 run.
    """
    config = config or OptimizerConfig()
    base = LossWeights()
    if full is None:
        cycle, res, _ = run_full(seed, base, replace(config, two_warp_variant=1), size)
    else:
        cycle, res = full
    joint = optimize_cycle(cycle, replace(base, lambda_2warp=0.0), config)
    flow_only = optimize_pair(cycle.images["l0"], cycle.images["l1"], "flow", base, config)
    # a stereo-only run carries twice the left-right weight, matching the
    # balance a batch made only of stereo pairs would have
    stereo_only = optimize_pair(cycle.images["l0"], cycle.images["r0"], "stereo",
                                replace(base, lambda_lr=1.0), config)

    def epe(maps):
        return float(np.mean([_epe_occ(maps[k], cycle, k) for k in FLOW_KEYS]))

    def absrel(maps):
        return depth_metrics(maps[STEREO_KEY], cycle.gt_depth["l0"], cycle.fb).abs_rel

    return {
        "seed": seed,
        "epe_occ": {"full": epe(res.maps), "flow+stereo": epe(joint.maps),
                    "flow-only": epe(flow_only.maps)},
        "abs_rel": {"full": absrel(res.maps), "flow+stereo": absrel(joint.maps),
                    "stereo-only": absrel(stereo_only.maps)},
    }


def ordering_holds(rows) -> dict:
    """Suite-mean orderings, non-strict."""
    mean = {kind: {name: float(np.mean([r[kind][name] for r in rows])) for name in rows[0][kind]}
            for kind in ("epe_occ", "abs_rel")}
    e, a = mean["epe_occ"], mean["abs_rel"]
    return {
        "means": mean,
        "epe_occ": e["full"] <= e["flow+stereo"] <= e["flow-only"],
        "abs_rel": a["full"] <= a["stereo-only"],
    }
