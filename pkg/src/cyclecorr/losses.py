"""Unsupervised objectives over a stereo-video cycle.

Every term is built from :mod:`cyclecorr.field` operations so the result can
be differentiated with respect to the correspondence fields.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from . import field as F
from .cycle import MAP_KEYS, PAIRS, is_stereo, key_name, mirror_frame, mirror_key
from .occlusion import estimate_occlusion, two_warp_occlusion
from .warp import validity_mask, warp

MIN_SCALE_EXTENT = 8


@dataclass
class LossWeights:
    alpha: float = 0.85
    beta: float = 10.0
    lambda_sm: float = 10.0
    lambda_lr: float = 0.5
    lambda_2warp: float = 0.2
    ssim_c1: float = 0.01 ** 2
    ssim_c2: float = 0.03 ** 2
    ssim_window: int = 3
    # smoothness and left-right terms measured in image widths, as a
    # network predicting width-normalised maps would see them
    width_normalized: bool = True

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be nonnegative")
        if self.alpha > 1:
            raise ValueError("alpha must lie in [0, 1]")
        if self.ssim_window % 2 != 1:
            raise ValueError("ssim_window must be odd")


def ssim(a, b, weights: LossWeights | None = None):
    w = weights or LossWeights()
    return F.ssim_map(a, b, w.ssim_window, w.ssim_c1, w.ssim_c2)


def photometric_error(target, recon, weights: LossWeights):
    """Per-pixel alpha * (1 - SSIM) / 2 + (1 - alpha) * |target - recon|, shape (H, W, 1)."""
    return F.photometric_error(target, recon, weights.alpha, weights.ssim_window,
                               weights.ssim_c1, weights.ssim_c2)


def reconstruction_loss(target, recon, mask=None, weights: LossWeights | None = None):
    weights = weights or LossWeights()
    err = photometric_error(target, recon, weights)
    if mask is None:
        mask = np.ones(F.value_of(err).shape)
    return F.reduce_mean(err, mask)


_EDGE_CACHE: dict = {}


def _edge_weight(image, axis, beta):
    # images are constants during optimisation; reuse weights for the same array
    key = (id(image), axis, beta)
    hit = _EDGE_CACHE.get(key)
    if hit is not None and hit[0] is image:
        return hit[1]
    g = np.abs(F.spatial_gradient(F.value_of(image), axis, 1)).mean(axis=-1, keepdims=True)
    wgt = np.exp(-beta * g)
    if len(_EDGE_CACHE) > 256:
        _EDGE_CACHE.clear()
    _EDGE_CACHE[key] = (image, wgt)
    return wgt


def smoothness_loss(corr, image, beta: float = 10.0):
    """Edge-aware second-order smoothness, normalised by the pixel count."""
    F._check_extent(corr, image)
    return F.edge_aware_smoothness(corr, _edge_weight(image, "x", beta),
                                   _edge_weight(image, "y", beta))


def lr_consistency_loss(d_lr, d_rl):
    """Mean |d_lr + warp(d_rl, d_lr)| (u and v summed) over in-view pixels."""
    F._check_extent(d_lr, d_rl)
    return F.masked_abs_mean(F.add(d_lr, warp(d_rl, d_lr)), validity_mask(d_lr))


# ----------------------------------------------------------------------------
# 2-warp consistency


@dataclass(frozen=True)
class TwoWarpPath:
    """One 2-warp comparison on the grid of ``target``.

    The chained reconstruction warps ``I[via[1]]`` by ``via_maps[1]`` then by
    ``via_maps[0]``; the direct one warps ``I[direct[1]]`` by ``direct``.
    Visibility comes from the flow occlusion map ``occ_map``, carried onto the
    target grid by ``carry`` (``None`` when it already lives there).
    """

    target: str
    via_maps: tuple
    direct: tuple
    occ_map: tuple
    carry_literal: Optional[tuple]
    carry_consistent: Optional[tuple]

    def mirrored(self) -> "TwoWarpPath":
        m = mirror_key
        return TwoWarpPath(
            target=mirror_frame(self.target),
            via_maps=(m(self.via_maps[0]), m(self.via_maps[1])),
            direct=m(self.direct),
            occ_map=m(self.occ_map),
            carry_literal=m(self.carry_literal) if self.carry_literal else None,
            carry_consistent=m(self.carry_consistent) if self.carry_consistent else None,
        )


# variant 1 chains the stereo map into the left flow; 2 and 3 are the other
# two chain layouts over the same cycle
TWO_WARP_VARIANTS = {
    # r0 -> l0 -> l1  versus  r0 -> r1
    1: TwoWarpPath("r0", (("r0", "l0"), ("l0", "l1")), ("r0", "r1"),
                   ("l0", "l1"), ("r1", "l1"), ("r0", "l0")),
    # r0 -> r1 -> l1  versus  r0 -> l0
    2: TwoWarpPath("r0", (("r0", "r1"), ("r1", "l1")), ("r0", "l0"),
                   ("r0", "r1"), None, None),
    # r1 -> l1 -> l0  versus  r1 -> r0
    3: TwoWarpPath("r1", (("r1", "l1"), ("l1", "l0")), ("r1", "r0"),
                   ("l1", "l0"), ("r0", "l0"), ("r1", "l1")),
}


def two_warp_paths(variant: int):
    if variant not in TWO_WARP_VARIANTS:
        raise ValueError(f"unknown 2-warp variant {variant!r}")
    p = TWO_WARP_VARIANTS[variant]
    return p, p.mirrored()


def two_warp_mask(path: TwoWarpPath, maps, occlusions, carry: str = "literal") -> np.ndarray:
    occ = F.value_of(occlusions[path.occ_map])
    by = path.carry_literal if carry == "literal" else path.carry_consistent
    if carry not in ("literal", "consistent"):
        raise ValueError(f"unknown occlusion carry mode {carry!r}")
    if by is not None:
        occ = two_warp_occlusion(occ, maps[by])
    first, second = path.via_maps
    # the inner warp must land in view too, judged where the outer warp samples it
    inner = two_warp_occlusion(validity_mask(maps[second]), maps[first])
    return occ * inner * validity_mask(maps[first]) * validity_mask(maps[path.direct])


def two_warp_term(images, maps, path: TwoWarpPath, weights: LossWeights, mask):
    first, second = path.via_maps
    chained = warp(warp(images[second[1]], maps[second]), maps[first])
    direct = warp(images[path.direct[1]], maps[path.direct])
    return reconstruction_loss(chained, direct, mask, weights)


def two_warp_loss(images, maps, variant: int = 1, weights: LossWeights | None = None,
                  occlusions=None, carry: str = "literal", masks=None):
    """Sum of the 2-warp consistency terms for both mirrored targets.

    ``masks`` overrides the computed visibility (one per path), e.g. with a
    ground-truth mask.
    """
    weights = weights or LossWeights()
    if occlusions is None:
        occlusions = occlusion_maps(maps)
    out = None
    for i, path in enumerate(two_warp_paths(variant)):
        mask = masks[i] if masks is not None else two_warp_mask(path, maps, occlusions, carry)
        t = two_warp_term(images, maps, path, weights, mask)
        out = t if out is None else F.add(out, t)
    return out


# ----------------------------------------------------------------------------
# pyramids and the total objective


def occlusion_maps(maps, alpha1: float = 0.01, alpha2: float = 0.5) -> dict:
    """Flow occlusion masks for every flow key present; stereo keys get all ones."""
    out = {}
    for key, m in maps.items():
        v = F.value_of(m)
        back = (key[1], key[0])
        if is_stereo(key) or back not in maps:
            out[key] = np.ones(v.shape[:2] + (1,))
        else:
            out[key] = estimate_occlusion(v, F.value_of(maps[back]), alpha1, alpha2)
    return out


def num_scales(shape, scales: int) -> int:
    h, w = shape[:2]
    n = 1
    while n < scales and min(h, w) // (2 ** n) >= MIN_SCALE_EXTENT:
        n += 1
    return n


def image_pyramid(images: dict, n: int) -> list:
    pyr = [dict(images)]
    for _ in range(1, n):
        pyr.append({k: F.downsample(v) for k, v in pyr[-1].items()})
    return pyr


def map_pyramid(maps: dict, n: int) -> list:
    pyr = [dict(maps)]
    for _ in range(1, n):
        pyr.append({k: F.downsample(v, corr=True) for k, v in pyr[-1].items()})
    return pyr


@dataclass
class CycleLossReport:
    """Per-term values keyed ``(term, scale, direction)`` plus the weighted total.

    ``loss`` is the differentiable total (a :class:`~cyclecorr.field.Var` when
    the maps were tape variables).
    """

    weights: LossWeights
    terms: dict = field(default_factory=dict)
    loss: object = None

    def term_sum(self, name: str) -> float:
        return float(sum(v for (t, _, _), v in self.terms.items() if t == name))

    @property
    def rec(self):
        return self.term_sum("rec")

    @property
    def sm(self):
        return self.term_sum("sm")

    @property
    def lr(self):
        return self.term_sum("lr")

    @property
    def twowarp(self):
        return self.term_sum("2warp")

    @property
    def total(self) -> float:
        return float(F.value_of(self.loss))

    def combined(self) -> float:
        w = self.weights
        return self.rec + w.lambda_sm * self.sm + w.lambda_lr * self.lr + w.lambda_2warp * self.twowarp

    def as_row(self) -> dict:
        return {"rec": self.rec, "sm": self.sm, "lr": self.lr,
                "twowarp": self.twowarp, "total": self.total}


def total_loss(images: dict, maps: dict, weights: LossWeights | None = None, *,
               scales: int = 4, occlusions: Optional[list] = None,
               two_warp_variant: Optional[int] = 1, carry: str = "literal",
               lr_on_stereo: bool = True, skip_zero_weights: bool = False,
               image_pyr: Optional[list] = None) -> CycleLossReport:
    """Weighted multi-scale objective over whatever forward/backward pairs ``maps`` holds.

    ``maps`` are finest-scale fields; coarser scales are differentiable
    downsamplings.  ``occlusions`` is one dict per scale (as from
    :func:`occlusion_maps`); when omitted it is estimated from the maps.
    The 2-warp term is evaluated at the finest scale only and only when all
    eight maps are present.
    """
    weights = weights or LossWeights()
    shape = F.value_of(next(iter(maps.values()))).shape
    n = num_scales(shape, scales)
    if image_pyr is None:
        image_pyr = image_pyramid(images, n)
    maps_pyr = map_pyramid(maps, n)
    if occlusions is None:
        occlusions = [occlusion_maps(m) for m in maps_pyr]

    pairs = [p for p in PAIRS if p in maps and (p[1], p[0]) in maps]
    report = CycleLossReport(weights)
    parts, coeffs = [], []

    def add(term, scale, key, weight, value, unit=1.0):
        report.terms[(term, scale, key_name(key))] = unit * float(F.value_of(value))
        parts.append(value)
        coeffs.append(weight * unit)

    want_sm = not (skip_zero_weights and weights.lambda_sm == 0)
    want_lr = lr_on_stereo and not (skip_zero_weights and weights.lambda_lr == 0)
    # smoothness and lr terms measure displacements relative to the finest
    # width, which also halves their weight at each coarser scale
    unit = 1.0 / shape[1] if weights.width_normalized else 1.0
    for s in range(n):
        ims, ms, occ = image_pyr[s], maps_pyr[s], occlusions[s]
        for a, b in pairs:
            for key in ((a, b), (b, a)):
                recon = warp(ims[key[1]], ms[key])
                mask = validity_mask(ms[key]) * occ[key]
                add("rec", s, key, 1.0, reconstruction_loss(ims[key[0]], recon, mask, weights))
            if want_sm:
                for key in ((a, b), (b, a)):
                    add("sm", s, key, weights.lambda_sm,
                        smoothness_loss(ms[key], ims[key[0]], weights.beta), unit)
            if want_lr and is_stereo((a, b)):
                for key in ((a, b), (b, a)):
                    add("lr", s, key, weights.lambda_lr,
                        lr_consistency_loss(ms[key], ms[(key[1], key[0])]), unit)

    if (two_warp_variant is not None and all(k in maps for k in MAP_KEYS)
            and not (skip_zero_weights and weights.lambda_2warp == 0)):
        for path in two_warp_paths(two_warp_variant):
            mask = two_warp_mask(path, maps_pyr[0], occlusions[0], carry)
            add("2warp", 0, (path.target, path.direct[1]), weights.lambda_2warp,
                two_warp_term(image_pyr[0], maps_pyr[0], path, weights, mask))

    report.loss = F.weighted_sum(parts, coeffs)
    return report
