"""Forward-backward consistency occlusion masks."""
from __future__ import annotations

import numpy as np

from .field import ShapeError, value_of
from .warp import validity_mask, warp


def estimate_occlusion(forward, backward, alpha1: float = 0.01, alpha2: float = 0.5) -> np.ndarray:
    """Visibility mask (H, W, 1) for ``forward``: 1 visible, 0 occluded.

    A pixel is visible when the backward field, warped by the forward field,
    cancels the forward displacement up to a magnitude-dependent tolerance.
    Pixels whose forward target leaves the image are also marked 0.
    No gradient flows through the result.
    """
    f, b = value_of(forward), value_of(backward)
    if f.shape != b.shape:
        raise ShapeError(f"forward/backward extents differ: {f.shape} vs {b.shape}")
    if alpha1 < 0 or alpha2 < 0:
        raise ValueError("alpha1 and alpha2 must be nonnegative")
    r = warp(b, f)
    lhs = np.sum((f + r) ** 2, axis=-1)
    rhs = alpha1 * (np.sum(f ** 2, axis=-1) + np.sum(r ** 2, axis=-1)) + alpha2
    visible = (lhs < rhs)[..., None].astype(np.float64)
    return visible * validity_mask(f)


def two_warp_occlusion(flow_occ, stereo_corr, threshold: float = 0.5) -> np.ndarray:
    """Carry a flow occlusion map onto another view's grid through a stereo field."""
    o, d = value_of(flow_occ), value_of(stereo_corr)
    if o.shape[:2] != d.shape[:2]:
        raise ShapeError(f"extent mismatch: {o.shape[:2]} vs {d.shape[:2]}")
    if o.ndim == 2:
        o = o[..., None]
    moved = warp(o, d)
    return (moved >= threshold).astype(np.float64) * validity_mask(d)
