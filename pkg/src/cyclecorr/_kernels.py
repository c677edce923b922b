"""Compiled inner loops for SSIM and bilinear warping.

All windows clamp coordinates to the image (edge replication).  Backward
kernels scatter into the inputs, so they are the exact adjoints of the
forward loops.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def _clamp(i, n):
    if i < 0:
        return 0
    if i > n - 1:
        return n - 1
    return i


@njit(cache=True)
def ssim_forward(a, b, window, c1, c2):
    """Return (ssim, coefficients) where coefficients[..., k] are the partials
    of SSIM with respect to (mu_a, mu_b, s_aa + s_bb, s_ab)."""
    h, w, c = a.shape
    r = window // 2
    inv = 1.0 / (window * window)
    s = np.empty((h, w, c))
    coef = np.empty((h, w, c, 4))
    for i in range(h):
        for j in range(w):
            for ch in range(c):
                ma = 0.0
                mb = 0.0
                saa = 0.0
                sbb = 0.0
                sab = 0.0
                for di in range(-r, r + 1):
                    ii = _clamp(i + di, h)
                    for dj in range(-r, r + 1):
                        jj = _clamp(j + dj, w)
                        x = a[ii, jj, ch]
                        y = b[ii, jj, ch]
                        ma += x
                        mb += y
                        saa += x * x
                        sbb += y * y
                        sab += x * y
                ma *= inv
                mb *= inv
                saa *= inv
                sbb *= inv
                sab *= inv
                n1 = 2.0 * ma * mb + c1
                n2 = 2.0 * (sab - ma * mb) + c2
                d1 = ma * ma + mb * mb + c1
                d2 = (saa - ma * ma) + (sbb - mb * mb) + c2
                val = (n1 * n2) / (d1 * d2)
                s[i, j, ch] = val
                dd = d1 * d2
                dn1 = n2 / dd
                dn2 = n1 / dd
                dd1 = -val / d1
                dd2 = -val / d2
                coef[i, j, ch, 0] = 2.0 * (mb * (dn1 - dn2) + ma * (dd1 - dd2))
                coef[i, j, ch, 1] = 2.0 * (ma * (dn1 - dn2) + mb * (dd1 - dd2))
                coef[i, j, ch, 2] = dd2
                coef[i, j, ch, 3] = 2.0 * dn2
    return s, coef


@njit(cache=True)
def ssim_backward(a, b, coef, g, window):
    """Adjoint of ssim_forward for upstream ``g`` of shape (H, W, C)."""
    h, w, c = a.shape
    r = window // 2
    inv = 1.0 / (window * window)
    ga = np.zeros((h, w, c))
    gb = np.zeros((h, w, c))
    for i in range(h):
        for j in range(w):
            for ch in range(c):
                gv = g[i, j, ch] * inv
                if gv == 0.0:
                    continue
                k_ma = gv * coef[i, j, ch, 0]
                k_mb = gv * coef[i, j, ch, 1]
                k_sq = gv * coef[i, j, ch, 2]
                k_ab = gv * coef[i, j, ch, 3]
                for di in range(-r, r + 1):
                    ii = _clamp(i + di, h)
                    for dj in range(-r, r + 1):
                        jj = _clamp(j + dj, w)
                        x = a[ii, jj, ch]
                        y = b[ii, jj, ch]
                        ga[ii, jj, ch] += k_ma + 2.0 * x * k_sq + y * k_ab
                        gb[ii, jj, ch] += k_mb + 2.0 * y * k_sq + x * k_ab
    return ga, gb


@njit(cache=True)
def _coords(i, j, u, v, h, w):
    x = j + u
    y = i + v
    in_x = 0.0 <= x <= w - 1
    in_y = 0.0 <= y <= h - 1
    xc = min(max(x, 0.0), w - 1.0)
    yc = min(max(y, 0.0), h - 1.0)
    x0 = min(int(np.floor(xc)), max(w - 2, 0))
    y0 = min(int(np.floor(yc)), max(h - 2, 0))
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    return x0, x1, y0, y1, xc - x0, yc - y0, in_x, in_y


@njit(cache=True)
def warp_forward(src, corr):
    h, w, c = src.shape
    out = np.empty((h, w, c))
    for i in range(h):
        for j in range(w):
            x0, x1, y0, y1, wx, wy, _, _ = _coords(i, j, corr[i, j, 0], corr[i, j, 1], h, w)
            # convex-combination form: exact when a weight is 0 or 1
            for ch in range(c):
                top = (1.0 - wx) * src[y0, x0, ch] + wx * src[y0, x1, ch]
                bot = (1.0 - wx) * src[y1, x0, ch] + wx * src[y1, x1, ch]
                out[i, j, ch] = (1.0 - wy) * top + wy * bot
    return out


@njit(cache=True)
def warp_backward(src, corr, g, want_src, want_corr):
    h, w, c = src.shape
    gs = np.zeros((h, w, c))
    gc = np.zeros((h, w, 2))
    for i in range(h):
        for j in range(w):
            x0, x1, y0, y1, wx, wy, in_x, in_y = _coords(i, j, corr[i, j, 0], corr[i, j, 1], h, w)
            gx = 0.0
            gy = 0.0
            for ch in range(c):
                gv = g[i, j, ch]
                if want_src:
                    gs[y0, x0, ch] += gv * (1.0 - wy) * (1.0 - wx)
                    gs[y0, x1, ch] += gv * (1.0 - wy) * wx
                    gs[y1, x0, ch] += gv * wy * (1.0 - wx)
                    gs[y1, x1, ch] += gv * wy * wx
                if want_corr:
                    v00 = src[y0, x0, ch]
                    v01 = src[y0, x1, ch]
                    v10 = src[y1, x0, ch]
                    v11 = src[y1, x1, ch]
                    gx += gv * ((1.0 - wy) * (v01 - v00) + wy * (v11 - v10))
                    top = v00 + wx * (v01 - v00)
                    bot = v10 + wx * (v11 - v10)
                    gy += gv * (bot - top)
            # clamped coordinates carry no gradient
            gc[i, j, 0] = gx if in_x else 0.0
            gc[i, j, 1] = gy if in_y else 0.0
    return gs, gc
