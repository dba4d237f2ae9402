"""Slow reference renderer used only by the tests.

It rebuilds each source point in 3-D, moves it to the target camera and
reprojects it, then accumulates raw ``exp(d / tau)`` weights in extended
precision with no stabilization or shared code paths.
"""

import numpy as np


def reference_render(textures, disparities, k_src, k_tgt, rotation, translation,
                     tau, eps, white, out_h, out_w, downsampling):
    ld = np.longdouble
    fx_t = ld(k_tgt.fx) * ld(downsampling)
    fy_t = ld(k_tgt.fy) * ld(downsampling)
    cx_t = (ld(k_tgt.cx) + ld(0.5)) * ld(downsampling) - ld(0.5)
    cy_t = (ld(k_tgt.cy) + ld(0.5)) * ld(downsampling) - ld(0.5)
    num = np.zeros((out_h, out_w, 3), dtype=ld)
    den = np.zeros((out_h, out_w), dtype=ld)
    n_l, h, w = disparities.shape
    r = rotation.astype(ld)
    t = translation.astype(ld)
    for l in range(n_l):
        for i in range(h):
            for j in range(w):
                d = ld(disparities[l, i, j])
                depth = 1 / d
                p = np.array([(ld(j) - ld(k_src.cx)) / ld(k_src.fx) * depth,
                              (ld(i) - ld(k_src.cy)) / ld(k_src.fy) * depth,
                              depth], dtype=ld)
                q = r @ p + t
                if q[2] * d <= ld(1e-8):
                    continue
                x = fx_t * q[0] / q[2] + cx_t
                y = fy_t * q[1] / q[2] + cy_t
                dt = 1 / q[2]
                for yt in range(out_h):
                    by = max(ld(0), 1 - abs(y - yt))
                    if by == 0:
                        continue
                    for xt in range(out_w):
                        bx = max(ld(0), 1 - abs(x - xt))
                        if bx == 0:
                            continue
                        wgt = np.exp(dt / ld(tau)) * bx * by
                        num[yt, xt] += wgt * textures[l, i, j].astype(ld)
                        den[yt, xt] += wgt
    out = (num + ld(eps) * ld(white)) / (den + ld(eps))[..., None]
    return out.astype(np.float64)
