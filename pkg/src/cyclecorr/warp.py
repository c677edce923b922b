"""Differentiable backward warping by a dense correspondence field."""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import _kernels
from .field import Var, ShapeError, _tape_of, value_of


@lru_cache(maxsize=32)
def _grid(h: int, w: int):
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    ys.flags.writeable = False
    xs.flags.writeable = False
    return ys, xs


def warp(source, corr):
    """Sample ``source`` at ``p + corr(p)`` with bilinear weights, border-clamped.

    Works for images, correspondence fields and masks alike.  Gradients reach
    both the source values and the displacements.
    """
    sv = np.ascontiguousarray(value_of(source))
    cv = np.ascontiguousarray(value_of(corr))
    if sv.shape[:2] != cv.shape[:2]:
        raise ShapeError(f"warp extent mismatch: {sv.shape[:2]} vs {cv.shape[:2]}")
    if cv.ndim != 3 or cv.shape[-1] != 2:
        raise ShapeError("correspondence field must have 2 channels")
    squeeze = sv.ndim == 2
    if squeeze:
        sv = sv[..., None]
    out = _kernels.warp_forward(sv, cv)
    if squeeze:
        out = out[..., 0]
    tape = _tape_of(source, corr)
    if tape is None:
        return out

    def backward(g):
        g = np.ascontiguousarray(g.reshape(sv.shape))
        gs, gc = _kernels.warp_backward(sv, cv, g, isinstance(source, Var), isinstance(corr, Var))
        if squeeze:
            gs = gs[..., 0]
        return (gs if isinstance(source, Var) else None,
                gc if isinstance(corr, Var) else None)

    return tape.record(out, (source, corr), backward)


def validity_mask(corr) -> np.ndarray:
    """1 where ``p + corr(p)`` falls inside the image, else 0. Shape (H, W, 1)."""
    cv = value_of(corr)
    h, w = cv.shape[:2]
    ys, xs = _grid(h, w)
    x = xs + cv[..., 0]
    y = ys + cv[..., 1]
    ok = (x >= 0.0) & (x <= w - 1) & (y >= 0.0) & (y <= h - 1)
    return ok[..., None].astype(np.float64)
