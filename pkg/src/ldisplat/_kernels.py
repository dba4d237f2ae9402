"""Compiled scatter/gather loops for soft z-buffered bilinear splatting.

All loops run sequentially over source points in index order, so the
floating-point reduction order (and hence every output bit) is fixed.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _tent(a, b):
    v = 1.0 - abs(a - b)
    return v if v > 0.0 else 0.0


@njit(cache=True, nogil=True)
def _tent_grad(a, b):
    # derivative w.r.t. a; 0 at the kinks |a - b| in {0, 1}
    delta = a - b
    ad = abs(delta)
    if ad == 0.0 or ad >= 1.0:
        return 0.0
    return -1.0 if delta > 0.0 else 1.0


@njit(cache=True, nogil=True)
def max_exponent(xt, yt, dt, valid, inv_tau, h, w):
    """Per target pixel, the largest ``d / tau`` among points with nonzero kernel."""
    m = np.full((h, w), -np.inf)
    for k in range(xt.shape[0]):
        if not valid[k]:
            continue
        x, y = xt[k], yt[k]
        if not (x > -1.0 and x < w and y > -1.0 and y < h):
            continue
        x0 = int(math.floor(x))
        y0 = int(math.floor(y))
        e = dt[k] * inv_tau
        for py in range(y0, y0 + 2):
            if py < 0 or py >= h or _tent(y, py) <= 0.0:
                continue
            for px in range(x0, x0 + 2):
                if px < 0 or px >= w or _tent(x, px) <= 0.0:
                    continue
                if e > m[py, px]:
                    m[py, px] = e
    return m


@njit(cache=True, nogil=True)
def splat_forward(xt, yt, dt, valid, colors, inv_tau, m, eps, white):
    """Return ``(image, denominator)``; both include the epsilon terms.

    Weights are stored rescaled by ``exp(-m)`` per target pixel, which leaves
    the normalized color unchanged once epsilon is rescaled the same way.
    """
    h, w = m.shape
    nch = colors.shape[1]
    num = np.zeros((h, w, nch))
    den = np.zeros((h, w))
    for k in range(xt.shape[0]):
        if not valid[k]:
            continue
        x, y = xt[k], yt[k]
        if not (x > -1.0 and x < w and y > -1.0 and y < h):
            continue
        x0 = int(math.floor(x))
        y0 = int(math.floor(y))
        e = dt[k] * inv_tau
        for py in range(y0, y0 + 2):
            if py < 0 or py >= h:
                continue
            by = _tent(y, py)
            if by <= 0.0:
                continue
            for px in range(x0, x0 + 2):
                if px < 0 or px >= w:
                    continue
                bx = _tent(x, px)
                if bx <= 0.0:
                    continue
                s = math.exp(e - m[py, px]) * bx * by
                den[py, px] += s
                for c in range(nch):
                    num[py, px, c] += s * colors[k, c]
    img = np.empty((h, w, nch))
    for py in range(h):
        for px in range(w):
            mm = m[py, px]
            scale = 1.0 if mm == -np.inf else math.exp(-mm)
            den[py, px] += eps * scale
            for c in range(nch):
                img[py, px, c] = (num[py, px, c] + eps * white * scale) / den[py, px]
    return img, den


@njit(cache=True, nogil=True)
def splat_backward(xt, yt, dt, valid, colors, inv_tau, m, den, img, upstream):
    """Reverse pass: gradients w.r.t. point colors and projected ``(x, y, d)``."""
    h, w = m.shape
    n = xt.shape[0]
    nch = colors.shape[1]
    g_col = np.zeros((n, nch))
    g_x = np.zeros(n)
    g_y = np.zeros(n)
    g_d = np.zeros(n)
    for k in range(n):
        if not valid[k]:
            continue
        x, y = xt[k], yt[k]
        if not (x > -1.0 and x < w and y > -1.0 and y < h):
            continue
        x0 = int(math.floor(x))
        y0 = int(math.floor(y))
        e = dt[k] * inv_tau
        for py in range(y0, y0 + 2):
            if py < 0 or py >= h:
                continue
            by = _tent(y, py)
            if by <= 0.0:
                continue
            dby = _tent_grad(y, py)
            for px in range(x0, x0 + 2):
                if px < 0 or px >= w:
                    continue
                bx = _tent(x, px)
                if bx <= 0.0:
                    continue
                dbx = _tent_grad(x, px)
                ex = math.exp(e - m[py, px])
                s = ex * bx * by
                inv_den = 1.0 / den[py, px]
                gs = 0.0
                for c in range(nch):
                    g = upstream[py, px, c]
                    g_col[k, c] += g * s * inv_den
                    gs += g * (colors[k, c] - img[py, px, c])
                gs *= inv_den
                g_d[k] += gs * s * inv_tau
                g_x[k] += gs * ex * dbx * by
                g_y[k] += gs * ex * bx * dby
    return g_col, g_x, g_y, g_d
