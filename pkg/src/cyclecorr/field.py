"""Dense field containers and a small reverse-mode autodiff tape.

Fields are numpy arrays of shape ``(H, W, C)`` in float64.  Images carry
1 or 3 channels with values in [0, 1]; correspondence fields carry two
channels ``(u, v)`` in pixels (u rightward, v downward); occlusion maps
are single-channel 0/1 masks.

Operations accept either plain arrays or :class:`Var` objects.  When at
least one operand is a :class:`Var` that requires a gradient the result
is recorded on that operand's :class:`Tape`; otherwise a plain array is
returned and nothing is recorded.
"""
from __future__ import annotations

from collections import Counter
from functools import lru_cache
from typing import Callable, Sequence, Union

import numpy as np

from . import _kernels

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class Var:
    __slots__ = ("value", "grad", "tape", "name")

    def __init__(self, value, tape: "Tape", name: str | None = None):
        self.value = value
        self.grad = None
        self.tape = tape
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, name={self.name!r})"


Field = Union[np.ndarray, Var]


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of whole-field operations.

    Each node keeps the forward values its backward closure needs.  One tape
    must only be used from one thread; separate tapes are independent.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.diagnostics: Counter = Counter()

    def variable(self, value, name: str | None = None) -> Var:
        return Var(np.array(value, dtype=DTYPE), self, name)

    def record(self, value, inputs: Sequence, backward: Callable) -> Var:
        out = Var(value, self)
        self.nodes.append(_Node(out, tuple(inputs), backward))
        return out

    def backward(self, out: Var) -> None:
        """Accumulate d(out)/d(var) into ``var.grad`` for every var on the tape."""
        out.grad = np.ones_like(out.value)
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is None:
                continue
            grads = node.backward(g)
            for inp, gi in zip(node.inputs, grads):
                if gi is None or not isinstance(inp, Var):
                    continue
                if inp.grad is None:
                    inp.grad = gi
                else:
                    inp.grad = inp.grad + gi

    def __len__(self):
        return len(self.nodes)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=DTYPE)


def _tape_of(*xs) -> Tape | None:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_extent(a, b) -> None:
    sa, sb = np.shape(value_of(a)), np.shape(value_of(b))
    if len(sa) >= 2 and len(sb) >= 2 and sa[:2] != sb[:2]:
        raise ShapeError(f"spatial extent mismatch: {sa[:2]} vs {sb[:2]}")


def _binary(a, b, fwd, da, db):
    _check_extent(a, b)
    av, bv = value_of(a), value_of(b)
    out = fwd(av, bv)
    tape = _tape_of(a, b)
    if tape is None:
        return out

    def backward(g):
        return (
            _unbroadcast(da(g, av, bv, out), av.shape) if isinstance(a, Var) else None,
            _unbroadcast(db(g, av, bv, out), bv.shape) if isinstance(b, Var) else None,
        )

    return tape.record(out, (a, b), backward)


def _unary(a, fwd, da):
    av = value_of(a)
    out = fwd(av)
    if not isinstance(a, Var):
        return out
    return a.tape.record(out, (a,), lambda g: (da(g, av, out),))


def add(a, b):
    return _binary(a, b, np.add, lambda g, *_: g, lambda g, *_: g)


def sub(a, b):
    return _binary(a, b, np.subtract, lambda g, *_: g, lambda g, *_: -g)


def mul(a, b):
    return _binary(a, b, np.multiply, lambda g, av, bv, o: g * bv, lambda g, av, bv, o: g * av)


def div(a, b):
    return _binary(
        a, b, np.divide,
        lambda g, av, bv, o: g / bv,
        lambda g, av, bv, o: -g * o / bv,
    )


def absolute(a):
    # subgradient 0 at ties
    return _unary(a, np.abs, lambda g, av, o: g * np.sign(av))


def square(a):
    return _unary(a, np.square, lambda g, av, o: 2.0 * g * av)


def exp(a):
    return _unary(a, np.exp, lambda g, av, o: g * o)


def clampmin(a, lo: float):
    return _unary(a, lambda v: np.maximum(v, lo), lambda g, av, o: g * (av > lo))


_ELEMENTWISE = {
    "add": add, "sub": sub, "mul": mul, "div": div,
    "abs": absolute, "square": square, "exp": exp,
}


def elementwise(op: str, a, b=None):
    """Dispatch by name; ``clampmin`` takes its floor as ``b``."""
    if op == "clampmin":
        return clampmin(a, 0.0 if b is None else float(b))
    if op not in _ELEMENTWISE:
        raise ValueError(f"unknown elementwise op {op!r}")
    fn = _ELEMENTWISE[op]
    if op in ("abs", "square", "exp"):
        return fn(a)
    if b is None:
        raise ValueError(f"{op} needs two operands")
    return fn(a, b)


def total(a):
    """Sum of all elements, as a 0-d field."""
    av = value_of(a)
    out = np.asarray(av.sum())
    if not isinstance(a, Var):
        return out
    return a.tape.record(out, (a,), lambda g: (np.broadcast_to(g, av.shape).copy(),))


def channel_sum(a):
    av = value_of(a)
    out = av.sum(axis=-1, keepdims=True)
    if not isinstance(a, Var):
        return out
    return a.tape.record(out, (a,), lambda g: (np.broadcast_to(g, av.shape).copy(),))


def channel_mean(a):
    av = value_of(a)
    c = av.shape[-1]
    out = av.mean(axis=-1, keepdims=True)
    if not isinstance(a, Var):
        return out
    return a.tape.record(out, (a,), lambda g: (np.broadcast_to(g / c, av.shape).copy(),))


def reduce_mean(a, mask=None):
    """Mean of ``a``, or ``sum(a * mask) / sum(mask)`` when a mask is given.

    The mask is a constant.  An all-zero mask yields 0 with zero gradient and
    bumps ``tape.diagnostics['degenerate_mask']``.
    """
    av = value_of(a)
    if mask is None:
        n = av.size
        out = np.asarray(av.sum() / n)
        if not isinstance(a, Var):
            return out
        return a.tape.record(out, (a,), lambda g: (np.full(av.shape, g / n),))

    m = value_of(mask)
    _check_extent(av, m)
    if np.any(m < 0):
        raise ValueError("mask must be nonnegative")
    mb = np.broadcast_to(m, np.broadcast_shapes(av.shape, m.shape))
    # a per-pixel mask applied to a multi-channel field counts each channel
    denom = mb.sum()
    if denom == 0:
        if isinstance(a, Var):
            a.tape.diagnostics["degenerate_mask"] += 1
            return a.tape.record(np.asarray(0.0), (a,), lambda g: (np.zeros(av.shape),))
        return np.asarray(0.0)
    out = np.asarray((av * mb).sum() / denom)
    if not isinstance(a, Var):
        return out
    return a.tape.record(out, (a,), lambda g: (_unbroadcast(g * mb / denom, av.shape),))


# ----------------------------------------------------------------------------
# spatial stencils

def _grad_value(v, axis, order):
    out = np.zeros_like(v)
    n = v.shape[axis]
    sl = [slice(None)] * v.ndim

    def s(a, b):
        sl2 = list(sl)
        sl2[axis] = slice(a, b)
        return tuple(sl2)

    if order == 1:
        if n >= 2:
            out[s(0, n - 1)] = v[s(1, n)] - v[s(0, n - 1)]
    elif order == 2:
        if n >= 3:
            out[s(1, n - 1)] = v[s(2, n)] - 2.0 * v[s(1, n - 1)] + v[s(0, n - 2)]
    else:
        raise ValueError(f"unsupported order {order}")
    return out


def _grad_adjoint(g, axis, order):
    out = np.zeros_like(g)
    n = g.shape[axis]
    sl = [slice(None)] * g.ndim

    def s(a, b):
        sl2 = list(sl)
        sl2[axis] = slice(a, b)
        return tuple(sl2)

    if order == 1:
        if n >= 2:
            gi = g[s(0, n - 1)]
            out[s(1, n)] += gi
            out[s(0, n - 1)] -= gi
    else:
        if n >= 3:
            gi = g[s(1, n - 1)]
            out[s(2, n)] += gi
            out[s(1, n - 1)] -= 2.0 * gi
            out[s(0, n - 2)] += gi
    return out


def spatial_gradient(a, axis: str, order: int = 1):
    """Forward difference (order 1) or central second difference (order 2).

    Pixels where the stencil leaves the image are 0.
    """
    ax = {"x": 1, "y": 0}[axis]
    av = value_of(a)
    out = _grad_value(av, ax, order)
    if not isinstance(a, Var):
        return out
    return a.tape.record(out, (a,), lambda g: (_grad_adjoint(g, ax, order),))


# ----------------------------------------------------------------------------
# resampling as separable linear maps

@lru_cache(maxsize=64)
def _pool_matrix(n: int) -> np.ndarray:
    m = (n + 1) // 2
    P = np.zeros((m, n))
    for i in range(m):
        P[i, 2 * i] += 0.5
        # odd trailing row/column: replicate the edge sample
        P[i, min(2 * i + 1, n - 1)] += 0.5
    return P


@lru_cache(maxsize=64)
def _interp_matrix(n_out: int, n_in: int) -> np.ndarray:
    R = np.zeros((n_out, n_in))
    if n_in == 1 or n_out == 1:
        R[:, 0] = 1.0
        return R
    pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    i0 = np.minimum(np.floor(pos).astype(int), n_in - 2)
    w = pos - i0
    R[np.arange(n_out), i0] = 1.0 - w
    R[np.arange(n_out), i0 + 1] += w
    return R


def _apply_separable(v, Ry, Rx):
    # (H, W, C) -> (C, H, W) so matmul broadcasts over channels
    t = np.moveaxis(v, -1, 0)
    return np.moveaxis(Ry @ t @ Rx.T, 0, -1)


def _separable(a, Ry, Rx, scale=None):
    av = value_of(a)
    out = _apply_separable(av, Ry, Rx)
    if scale is not None:
        out = out * scale
    if not isinstance(a, Var):
        return out

    def backward(g):
        if scale is not None:
            g = g * scale
        return (_apply_separable(g, Ry.T, Rx.T),)

    return a.tape.record(out, (a,), backward)


def downsample(a, factor: int = 2, corr: bool = False):
    """2x2 average pooling; correspondence values are halved when ``corr``."""
    if factor != 2:
        raise ValueError("only factor 2 is supported")
    h, w = value_of(a).shape[:2]
    if h < 2 or w < 2:
        raise ShapeError("downsample needs an extent of at least 2x2")
    Ry, Rx = _pool_matrix(h), _pool_matrix(w)
    scale = None
    if corr:
        scale = np.array([Rx.shape[0] / w, Ry.shape[0] / h])
    return _separable(a, Ry, Rx, scale)


def upsample_bilinear(a, target_h: int, target_w: int, corr: bool = False):
    """Align-corners bilinear resize; correspondence values scale with the extent."""
    h, w = value_of(a).shape[:2]
    if target_h < h or target_w < w:
        raise ShapeError("upsample target must not be smaller than the source")
    Ry, Rx = _interp_matrix(target_h, h), _interp_matrix(target_w, w)
    scale = None
    if corr:
        scale = np.array([target_w / w, target_h / h])
    return _separable(a, Ry, Rx, scale)


# ----------------------------------------------------------------------------
# SSIM and fused loss kernels

class _SSIM:
    """Box-window SSIM; keeps the per-pixel partials for the backward pass."""

    def __init__(self, av, bv, window, c1, c2):
        if av.shape != bv.shape:
            raise ShapeError(f"ssim operands differ: {av.shape} vs {bv.shape}")
        self.av = np.ascontiguousarray(av, dtype=DTYPE)
        self.bv = np.ascontiguousarray(bv, dtype=DTYPE)
        self.window = int(window)
        self.s, self.coef = _kernels.ssim_forward(self.av, self.bv, self.window,
                                                  float(c1), float(c2))

    @property
    def mean(self):
        return self.s.mean(axis=-1, keepdims=True)

    def backward(self, g):
        """Gradients of sum(g * mean_c SSIM) with respect to both inputs."""
        c = self.av.shape[-1]
        gs = np.ascontiguousarray(np.broadcast_to(g / c, self.s.shape))
        return _kernels.ssim_backward(self.av, self.bv, self.coef, gs, self.window)


def ssim_map(a, b, window: int = 3, c1: float = 0.01 ** 2, c2: float = 0.03 ** 2):
    """Per-pixel SSIM from box-window statistics, averaged over channels -> (H, W, 1)."""
    _check_extent(a, b)
    st = _SSIM(value_of(a), value_of(b), window, c1, c2)
    out = st.mean
    tape = _tape_of(a, b)
    if tape is None:
        return out

    def backward(g):
        ga, gb = st.backward(g)
        return (ga if isinstance(a, Var) else None, gb if isinstance(b, Var) else None)

    return tape.record(out, (a, b), backward)


def photometric_error(a, b, alpha: float = 0.85, window: int = 3,
                      c1: float = 0.01 ** 2, c2: float = 0.03 ** 2):
    """Fused alpha * (1 - SSIM(a, b)) / 2 + (1 - alpha) * mean_c |a - b|, shape (H, W, 1)."""
    _check_extent(a, b)
    av, bv = value_of(a), value_of(b)
    diff = av - bv
    c = av.shape[-1]
    out = (1.0 - alpha) * np.abs(diff).mean(axis=-1, keepdims=True)
    st = None
    if alpha > 0:
        st = _SSIM(av, bv, window, c1, c2)
        out = out + alpha * 0.5 * (1.0 - st.mean)
    tape = _tape_of(a, b)
    if tape is None:
        return out

    def backward(g):
        gl = (1.0 - alpha) / c * g * np.sign(diff)
        ga, gb = gl, -gl
        if st is not None:
            sa, sb = st.backward(-0.5 * alpha * g)
            ga, gb = ga + sa, gb + sb
        return (ga if isinstance(a, Var) else None, gb if isinstance(b, Var) else None)

    return tape.record(out, (a, b), backward)


def edge_aware_smoothness(corr, weight_x: np.ndarray, weight_y: np.ndarray):
    """Fused (1/N) * sum over x, y of |second difference| * weight, channels summed."""
    cv = value_of(corr)
    n = cv.shape[0] * cv.shape[1]
    parts = []
    val = 0.0
    for ax, wgt in ((1, weight_x), (0, weight_y)):
        d2 = _grad_value(cv, ax, 2)
        parts.append((ax, np.sign(d2) * wgt))
        val += float((np.abs(d2) * wgt).sum())
    out = np.asarray(val / n)
    if not isinstance(corr, Var):
        return out

    def backward(g):
        gg = g / n
        return (sum(_grad_adjoint(gg * sw, ax, 2) for ax, sw in parts),)

    return corr.tape.record(out, (corr,), backward)


def masked_abs_mean(a, mask):
    """Fused reduce_mean(channel_sum(|a|), mask) with the degenerate-mask policy."""
    av, m = value_of(a), value_of(mask)
    denom = m.sum()
    if denom == 0:
        if isinstance(a, Var):
            a.tape.diagnostics["degenerate_mask"] += 1
            return a.tape.record(np.asarray(0.0), (a,), lambda g: (np.zeros(av.shape),))
        return np.asarray(0.0)
    out = np.asarray((np.abs(av) * m).sum() / denom)
    if not isinstance(a, Var):
        return out
    return a.tape.record(out, (a,), lambda g: (g * np.sign(av) * m / denom,))


def weighted_sum(terms: Sequence, weights: Sequence[float]):
    """sum_i w_i * t_i over 0-d fields as a single tape node."""
    vals = [value_of(t) for t in terms]
    out = np.asarray(sum(float(w) * float(v) for w, v in zip(weights, vals)))
    tape = _tape_of(*terms)
    if tape is None:
        return out

    def backward(g):
        return tuple(np.asarray(g * w) if isinstance(t, Var) else None
                     for t, w in zip(terms, weights))

    return tape.record(out, tuple(terms), backward)
