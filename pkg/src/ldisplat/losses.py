"""Multi-view training objective for an LDI and its reverse-mode gradients.

Terms:

* ``vs``  -- masked L1 between the target image and the all-layer render.
* ``mvs`` -- masked per-pixel minimum, over layers, of the L1 error of
  single-layer renders; a hidden layer still learns when a wrong layer
  sits in front of it.
* ``sc``  -- per-layer L1 to the source image, weighted by a softmax over
  layer disparities, so occluded layers may deviate freely.
* ``inc`` -- hinge on disparity increasing with layer index.
* ``sm``  -- L1 of second-order differences of every disparity layer.

``vs`` and ``mvs`` are means over masked pixel-channels and ``sc`` a mean
over pixel-channels, which keeps the weights resolution independent.
``inc`` is a plain sum, so any ordering violation costs its full size.
"""

from __future__ import annotations

from dataclasses import astuple, dataclass, fields
from typing import NamedTuple, Sequence

import numpy as np

from ._parallel import ordered_map
from .geometry import ViewTransform
from .ldi import Ldi, make_boundary_mask
from .splat import Projection, SplatConfig, splat, splat_backward

CSV_HEADER = ("iteration", "vs", "mvs", "sc", "inc", "sm", "total")


@dataclass(frozen=True)
class LossWeights:
    w_vs: float = 1.0
    w_mvs: float = 1.0
    w_sc: float = 10.0
    w_inc: float = 1.0
    w_sm: float = 0.1
    tau_sc: float = 1.0 / 50.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{f.name} must be finite and nonnegative, got {v}")
        if self.tau_sc <= 0:
            raise ValueError("tau_sc must be positive")


@dataclass(frozen=True)
class LossBreakdown:
    vs: float
    mvs: float
    sc: float
    inc: float
    sm: float
    total: float

    def csv_row(self, iteration: int) -> str:
        return ",".join([str(iteration)] + [repr(float(v)) for v in astuple(self)])


class LdiGradient(NamedTuple):
    textures: np.ndarray
    disparities: np.ndarray


View = tuple  # (target_image, ViewTransform)


# ---------------------------------------------------------------------------
# per-LDI terms


def loss_inc(ldi: Ldi) -> float:
    diff = ldi.disparities[1:] - ldi.disparities[:-1]
    return float(np.maximum(diff, 0.0).sum())


def _inc_grad(ldi: Ldi) -> np.ndarray:
    g = np.zeros_like(ldi.disparities)
    active = (ldi.disparities[1:] - ldi.disparities[:-1] > 0).astype(np.float64)
    g[1:] += active
    g[:-1] -= active
    return g


def layer_weights(disparities, tau_sc: float = 1.0 / 50.0) -> np.ndarray:
    """Softmax over layers (axis 0) of ``disparity / tau_sc``."""
    if not tau_sc > 0:
        raise ValueError("tau_sc must be positive")
    z = np.asarray(disparities, dtype=np.float64) / tau_sc
    z = z - z.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def _check_source(ldi: Ldi, source: np.ndarray) -> np.ndarray:
    source = np.asarray(source, dtype=np.float64)
    if source.shape != ldi.textures.shape[1:]:
        raise ValueError(f"source image {source.shape} does not match LDI {ldi.textures.shape[1:]}")
    return source


def _sc_terms(ldi: Ldi, source: np.ndarray, tau_sc: float, need_grad: bool):
    w = layer_weights(ldi.disparities, tau_sc)
    resid = ldi.textures - source[None]
    a = np.abs(resid).sum(axis=-1)
    norm = source.size
    value = float((w * a).sum() / norm)
    if not need_grad:
        return value, None, None
    g_tex = w[..., None] * np.sign(resid) / norm
    g_disp = w * (a - (w * a).sum(axis=0, keepdims=True)) / (tau_sc * norm)
    return value, g_tex, g_disp


def loss_sc(ldi: Ldi, source_image, tau_sc: float = 1.0 / 50.0) -> float:
    return _sc_terms(ldi, _check_source(ldi, source_image), tau_sc, False)[0]


def _second_differences(d: np.ndarray):
    c = d[:, 1:-1, 1:-1]
    dxx = d[:, 1:-1, :-2] - 2.0 * c + d[:, 1:-1, 2:]
    dyy = d[:, :-2, 1:-1] - 2.0 * c + d[:, 2:, 1:-1]
    return dxx, dyy


def _sm_terms(ldi: Ldi, need_grad: bool):
    n_l, h, w = ldi.disparities.shape
    if h < 3 or w < 3:
        raise ValueError(f"smoothness needs at least 3x3 disparity maps, got {w}x{h}")
    dxx, dyy = _second_differences(ldi.disparities)
    norm = n_l * (h - 2) * (w - 2)
    value = float((np.abs(dxx) + np.abs(dyy)).sum() / norm)
    if not need_grad:
        return value, None
    g = np.zeros_like(ldi.disparities)
    sx = np.sign(dxx) / norm
    sy = np.sign(dyy) / norm
    g[:, 1:-1, :-2] += sx
    g[:, 1:-1, 1:-1] -= 2.0 * sx
    g[:, 1:-1, 2:] += sx
    g[:, :-2, 1:-1] += sy
    g[:, 1:-1, 1:-1] -= 2.0 * sy
    g[:, 2:, 1:-1] += sy
    return value, g


def loss_smooth(ldi: Ldi) -> float:
    return _sm_terms(ldi, False)[0]


# ---------------------------------------------------------------------------
# view-synthesis terms


def _check_target(tensor, target, mask):
    target = np.asarray(target, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if target.shape != tensor.image.shape:
        raise ValueError(f"target image {target.shape} does not match render {tensor.image.shape}")
    if mask.shape != target.shape[:2]:
        raise ValueError(f"mask {mask.shape} does not match target {target.shape[:2]}")
    norm = target.shape[-1] * mask.sum()
    if norm <= 0:
        raise ValueError("boundary mask is empty")
    return target, mask, norm


def _view_terms(ldi, view, target, mask, cfg, w_vs=0.0, w_mvs=0.0, need_grad=False):
    """``(vs, mvs, d_tex, d_disp)`` for one view; gradients are pre-weighted."""
    proj = Projection(ldi, view, cfg)
    full = splat(ldi, view, cfg, None, proj)
    target, mask, norm = _check_target(full, target, mask)
    m3 = mask[..., None]

    diff = full.image - target
    vs = float((m3 * np.abs(diff)).sum() / norm)

    if ldi.n_layers == 1:
        per_layer = [full]
    else:
        per_layer = [splat(ldi, view, cfg, l, proj) for l in range(ldi.n_layers)]
    errs = np.stack([np.abs(t.image - target).sum(axis=-1) for t in per_layer])
    best = np.argmin(errs, axis=0)  # lowest index wins ties
    mvs = float((mask * np.take_along_axis(errs, best[None], 0)[0]).sum() / norm)

    if not need_grad:
        return vs, mvs, None, None
    g_tex = np.zeros_like(ldi.textures)
    g_disp = np.zeros_like(ldi.disparities)
    if w_vs:
        gt, gd = splat_backward(full, cfg, w_vs * m3 * np.sign(diff) / norm)
        g_tex += gt
        g_disp += gd
    if w_mvs:
        for l, tensor in enumerate(per_layer):
            sel = mask * (best == l)
            if not sel.any():
                continue
            up = w_mvs * sel[..., None] * np.sign(tensor.image - target) / norm
            gt, gd = splat_backward(tensor, cfg, up)
            g_tex += gt
            g_disp += gd
    return vs, mvs, g_tex, g_disp


def loss_vs(ldi: Ldi, view: ViewTransform, cfg: SplatConfig, target_image, mask) -> float:
    return _view_terms(ldi, view, target_image, mask, cfg)[0]


def loss_mvs(ldi: Ldi, view: ViewTransform, cfg: SplatConfig, target_image, mask) -> float:
    return _view_terms(ldi, view, target_image, mask, cfg)[1]


# ---------------------------------------------------------------------------
# full objective


def default_mask(target_image, fraction: float = 0.1) -> np.ndarray:
    h, w = np.shape(target_image)[:2]
    return make_boundary_mask(w, h, fraction).mask


def _objective(ldi, source_image, views, cfg, weights, boundary_fraction, need_grad, threads):
    views = list(views)
    if not views:
        raise ValueError("at least one target view is required")
    source = _check_source(ldi, source_image)

    def one(item):
        target, view = item
        mask = default_mask(target, boundary_fraction)
        return _view_terms(ldi, view, target, mask, cfg, weights.w_vs, weights.w_mvs, need_grad)

    results = ordered_map(one, views, threads)
    n = len(views)
    vs = sum(r[0] for r in results) / n
    mvs = sum(r[1] for r in results) / n
    sc, sc_tex, sc_disp = _sc_terms(ldi, source, weights.tau_sc, need_grad)
    inc = loss_inc(ldi)
    sm, sm_disp = _sm_terms(ldi, need_grad)
    total = (
        weights.w_vs * vs
        + weights.w_mvs * mvs
        + weights.w_sc * sc
        + weights.w_inc * inc
        + weights.w_sm * sm
    )
    breakdown = LossBreakdown(vs, mvs, sc, inc, sm, total)
    if not need_grad:
        return breakdown, None

    g_tex = np.zeros_like(ldi.textures)
    g_disp = np.zeros_like(ldi.disparities)
    for r in results:
        if r[2] is not None:
            g_tex += r[2]
            g_disp += r[3]
    g_tex /= n
    g_disp /= n
    g_tex += weights.w_sc * sc_tex
    g_disp += weights.w_sc * sc_disp
    g_disp += weights.w_inc * _inc_grad(ldi)
    g_disp += weights.w_sm * sm_disp
    return breakdown, LdiGradient(g_tex, g_disp)


def loss_total(
    ldi: Ldi,
    source_image,
    views: Sequence[View],
    cfg: SplatConfig = SplatConfig(),
    weights: LossWeights = LossWeights(),
    boundary_fraction: float = 0.1,
    threads=None,
) -> LossBreakdown:
    """Weighted objective; ``vs`` and ``mvs`` are averaged over ``views``."""
    return _objective(ldi, source_image, views, cfg, weights, boundary_fraction, False, threads)[0]


def losses_backward(
    ldi: Ldi,
    source_image,
    views: Sequence[View],
    cfg: SplatConfig = SplatConfig(),
    weights: LossWeights = LossWeights(),
    boundary_fraction: float = 0.1,
    threads=None,
) -> tuple[LossBreakdown, LdiGradient]:
    """Objective value and its gradient w.r.t. textures and disparities."""
    return _objective(ldi, source_image, views, cfg, weights, boundary_fraction, True, threads)
