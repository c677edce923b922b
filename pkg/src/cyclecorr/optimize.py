"""Coarse-to-fine Adam optimisation of correspondence fields.

The eight maps of a cycle (or the two maps of a single pair) are free
variables.  Each pyramid level runs Adam on the total objective, with the
flow occlusion masks re-estimated on a fixed schedule and held constant in
between.  Fields start at zero on the coarsest level and are upsampled,
with displacement rescaling, when moving to the next finer level.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import field as F
from .cycle import MAP_KEYS, Cycle
from .losses import (LossWeights, image_pyramid, map_pyramid, num_scales,
                     occlusion_maps, total_loss)

log = logging.getLogger(__name__)


class OptimizationError(RuntimeError):
    pass


@dataclass
class OptimizerConfig:
    pyramid_levels: int = 4
    iterations_per_level: int = 300
    step_size: float = 0.02
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    occlusion_refresh_interval: int = 25
    two_warp_variant: Optional[int] = 1
    seed: int = 0
    loss_scales: int = 4
    occlusion_carry: str = "literal"
    occlusion_alpha1: float = 0.01
    occlusion_alpha2: float = 0.5

    def __post_init__(self):
        for name in ("pyramid_levels", "iterations_per_level", "occlusion_refresh_interval",
                     "loss_scales"):
            if int(getattr(self, name)) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.two_warp_variant not in (None, 1, 2, 3):
            raise ValueError(f"unknown 2-warp variant {self.two_warp_variant!r}")


class Adam:
    """Adam over a dict of arrays, updated in place."""

    def __init__(self, params: dict, lr=0.02, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            g = grads.get(k)
            if g is None:
                continue
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            p -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class OptimizeResult:
    maps: dict
    history: list = field(default_factory=list)
    occlusions: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)


def _check_finite(report, level, it):
    bad = [k for k, v in report.terms.items() if not np.isfinite(v)]
    if bad or not np.isfinite(report.total):
        raise OptimizationError(f"non-finite loss at level {level}, iteration {it}: terms {bad}")


def optimize_fields(images: dict, keys, weights: LossWeights, config: OptimizerConfig,
                    lr_on_stereo: bool = True, two_warp_variant: Optional[int] = None,
                    init: Optional[dict] = None) -> OptimizeResult:
    """Minimise the total objective over the fields named by ``keys``."""
    frames = sorted({f for k in keys for f in k})
    images = {f: np.asarray(images[f], dtype=np.float64) for f in frames}
    levels = [images]
    for _ in range(1, config.pyramid_levels):
        h, w = next(iter(levels[-1].values())).shape[:2]
        if min(h, w) < 4:
            break
        levels.append({f: F.downsample(v) for f, v in levels[-1].items()})

    h, w = next(iter(levels[-1].values())).shape[:2]
    if init is None:
        params = {k: np.zeros((h, w, 2)) for k in keys}
    else:
        params = {k: np.array(init[k], dtype=np.float64) for k in keys}

    history = []
    diagnostics = {"degenerate_mask": 0}
    it_global = 0
    occ_pyr = None
    for li in range(len(levels) - 1, -1, -1):
        ims = levels[li]
        h, w = next(iter(ims.values())).shape[:2]
        if params[keys[0]].shape[:2] != (h, w):
            params = {k: F.upsample_bilinear(v, h, w, corr=True) for k, v in params.items()}
        n = num_scales((h, w), config.loss_scales)
        image_pyr = image_pyramid(ims, n)
        opt = Adam(params, config.step_size, config.adam_beta1, config.adam_beta2, config.adam_eps)
        for it in range(config.iterations_per_level):
            refreshed = it % config.occlusion_refresh_interval == 0
            if refreshed:
                occ_pyr = [occlusion_maps(m, config.occlusion_alpha1, config.occlusion_alpha2)
                           for m in map_pyramid(params, n)]
            tape = F.Tape()
            vars_ = {k: tape.variable(v, name=str(k)) for k, v in params.items()}
            report = total_loss(ims, vars_, weights, scales=n, occlusions=occ_pyr,
                                two_warp_variant=two_warp_variant, carry=config.occlusion_carry,
                                lr_on_stereo=lr_on_stereo, skip_zero_weights=True,
                                image_pyr=image_pyr)
            _check_finite(report, li, it)
            tape.backward(report.loss)
            diagnostics["degenerate_mask"] += tape.diagnostics["degenerate_mask"]
            row = {"iter": it_global, "level": li, **report.as_row(), "refreshed": refreshed}
            history.append(row)
            opt.step({k: v.grad for k, v in vars_.items()})
            it_global += 1
        log.debug("level %d done: total %.5f", li, history[-1]["total"])

    final_occ = occlusion_maps(params, config.occlusion_alpha1, config.occlusion_alpha2)
    return OptimizeResult(maps=params, history=history, occlusions=final_occ,
                          diagnostics=diagnostics)


def optimize_cycle(cycle: Cycle, weights: LossWeights | None = None,
                   config: OptimizerConfig | None = None) -> OptimizeResult:
    """Recover all eight correspondence maps of a cycle."""
    weights = weights or LossWeights()
    config = config or OptimizerConfig()
    variant = config.two_warp_variant if weights.lambda_2warp > 0 else None
    return optimize_fields(cycle.images, list(MAP_KEYS), weights, config,
                           lr_on_stereo=True, two_warp_variant=variant)


def optimize_pair(a, b, mode: str, weights: LossWeights | None = None,
                  config: OptimizerConfig | None = None) -> OptimizeResult:
    """Single-pair baseline; returns maps keyed ``(l0, l1)``/``(l1, l0)`` or ``(l0, r0)``/``(r0, l0)``."""
    weights = weights or LossWeights()
    config = config or OptimizerConfig()
    if np.shape(a) != np.shape(b):
        raise F.ShapeError(f"pair extents differ: {np.shape(a)} vs {np.shape(b)}")
    if mode == "flow":
        other = "l1"
    elif mode == "stereo":
        other = "r0"
    else:
        raise ValueError(f"mode must be 'flow' or 'stereo', got {mode!r}")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    keys = [("l0", other), (other, "l0")]
    return optimize_fields({"l0": a, other: b}, keys, weights, config,
                           lr_on_stereo=(mode == "stereo"), two_warp_variant=None)
