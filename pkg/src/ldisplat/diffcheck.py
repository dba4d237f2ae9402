"""Finite-difference oracle and gradient audit.

The oracle only evaluates forward functions; it never imports or calls the
analytic reverse passes. Kink detection likewise uses forward quantities
(projected coordinates, residuals, hinge and min gaps).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .geometry import Intrinsics, RigidTransform, ViewTransform, project_points, rotation_from_euler
from .geometry import pixel_grid, scale_intrinsics
from .ldi import Ldi, make_boundary_mask

BLOCKS = ("textures", "disparities")


def _block(ldi: Ldi, name: str) -> np.ndarray:
    return getattr(ldi, name)


def fd_gradient(f: Callable[[Ldi], float], ldi: Ldi, step: float = 1e-4, order: int = 2) -> dict:
    """Central-difference gradient of scalar ``f`` for every LDI parameter.

    ``order`` selects the 3-point (2) or 5-point (4) central stencil.
    Returns ``{"textures": array, "disparities": array}`` shaped like the LDI.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    _check_order(order)
    scratch = ldi.copy()
    out = {}
    for name in BLOCKS:
        arr = _block(scratch, name)
        flat = arr.reshape(-1)
        grad = np.zeros(flat.size)
        for j in range(flat.size):
            grad[j] = _central(f, scratch, flat, j, step, order=order)
        out[name] = grad.reshape(arr.shape)
    return out


def _check_order(order: int) -> None:
    if order not in STENCILS:
        raise ValueError(f"finite-difference order must be one of {tuple(STENCILS)}, got {order}")


# offsets (in steps) and weights of the central stencils
STENCILS = {
    2: ((1, -1), (0.5, -0.5)),
    4: ((2, 1, -1, -2), (-1 / 12, 8 / 12, -8 / 12, 1 / 12)),
}


def _central(f, scratch, flat, j, step, kinks=None, order=2):
    """Derivative estimate for parameter ``j``; with ``kinks`` also returns the
    kink coordinates at the two outermost stencil points."""
    offsets, coeffs = STENCILS[order]
    x0 = flat[j]
    values, outer = [], []
    for o in offsets:
        flat[j] = x0 + o * step
        values.append(f(scratch))
        if kinks and abs(o) == offsets[0]:
            outer.append(kinks(scratch))
    flat[j] = x0
    if not np.all(np.isfinite(values)):
        raise FloatingPointError(f"non-finite function value while probing parameter {j}")
    g = sum(c * v for c, v in zip(coeffs, values)) / step
    if kinks is None:
        return g
    return g, outer[0], outer[1]


@dataclass
class BlockStats:
    max_rel_error: float = 0.0
    mean_rel_error: float = 0.0
    n_probes: int = 0
    n_rejected: int = 0
    worst: Optional[tuple] = None  # (index, analytic, numeric)

    def merge(self, other: "BlockStats") -> "BlockStats":
        n = self.n_probes + other.n_probes
        mean = (
            (self.mean_rel_error * self.n_probes + other.mean_rel_error * other.n_probes) / n if n else 0.0
        )
        worst = self.worst if self.max_rel_error >= other.max_rel_error else other.worst
        return BlockStats(
            max(self.max_rel_error, other.max_rel_error),
            mean,
            n,
            self.n_rejected + other.n_rejected,
            worst,
        )


@dataclass
class GradReport:
    name: str
    tolerance: float
    blocks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(b.max_rel_error <= self.tolerance for b in self.blocks.values())

    def merge(self, other: "GradReport") -> "GradReport":
        blocks = dict(self.blocks)
        for k, v in other.blocks.items():
            blocks[k] = blocks[k].merge(v) if k in blocks else v
        return GradReport(self.name, self.tolerance, blocks)

    def table(self) -> str:
        lines = []
        for name, b in self.blocks.items():
            status = "PASS" if b.max_rel_error <= self.tolerance else "FAIL"
            lines.append(
                f"{self.name:<14} {name:<12} {b.max_rel_error:>10.3e} {b.mean_rel_error:>10.3e} "
                f"{b.n_probes:>7d} {b.n_rejected:>8d}  {status}"
            )
        return "\n".join(lines)


TABLE_HEADER = f"{'suite':<14} {'block':<12} {'max_rel':>10} {'mean_rel':>10} {'probes':>7} {'rejected':>8}"


def relative_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def _near_kink(k0, kp, km, margin, step):
    """True when a kink lies within ``margin`` of the probed parameter value.

    Distance is measured in parameter units by linearizing every kink
    coordinate the probe moves; a sign change inside the probe is a kink.
    """
    moved = (kp != k0) | (km != k0)
    if not moved.any():
        return False
    k0, kp, km = k0[moved], kp[moved], km[moved]
    crossed = (np.sign(kp) != np.sign(k0)) | (np.sign(km) != np.sign(k0))
    slope = np.abs(kp - km) / (2.0 * step)
    with np.errstate(divide="ignore"):
        distance = np.where(slope > 0, np.abs(k0) / slope, np.inf)
    return bool(crossed.any() or (distance < margin).any())


def check_gradients(
    f: Callable[[Ldi], float],
    grad_f: Callable[[Ldi], dict],
    ldi: Ldi,
    step: float = 1e-4,
    tolerance: float = 1e-4,
    kink_margin: float = 1e-3,
    n_probes: int = 200,
    seed: int = 0,
    kinks: Optional[Callable[[Ldi], np.ndarray]] = None,
    full: bool = False,
    name: str = "grad",
    order: int = 2,
) -> GradReport:
    """Compare ``grad_f`` with central differences on a random probe subset.

    ``grad_f`` returns a mapping (or object with attributes) holding
    ``textures`` and ``disparities`` arrays. ``kinks`` maps an LDI to a flat
    array of quantities whose zero crossings are non-differentiable points;
    a probe that moves any of them while it sits within ``kink_margin`` of
    zero is rejected. With ``full`` every parameter is probed. ``order``
    picks the finite-difference stencil as in :func:`fd_gradient`.
    """
    _check_order(order)
    reach = step * STENCILS[order][0][0]
    analytic = grad_f(ldi)
    if not isinstance(analytic, dict):
        analytic = {name_: getattr(analytic, name_) for name_ in BLOCKS}
    rng = np.random.default_rng(seed)
    scratch = ldi.copy()
    k0 = kinks(scratch) if kinks else None
    report = GradReport(name, tolerance)
    for block in BLOCKS:
        flat = _block(scratch, block).reshape(-1)
        a_flat = np.asarray(analytic[block]).reshape(-1)
        probe_order = np.arange(flat.size) if full else rng.permutation(flat.size)
        errs, rejected, worst = [], 0, None
        for j in probe_order:
            if not full and len(errs) >= n_probes:
                break
            if kinks:
                g, kp, km = _central(f, scratch, flat, j, step, kinks, order)
                if _near_kink(k0, kp, km, kink_margin, reach):
                    rejected += 1
                    continue
            else:
                g = _central(f, scratch, flat, j, step, order=order)
            e = float(relative_error(a_flat[j], g))
            if worst is None or e > worst[0]:
                worst = (e, int(j), float(a_flat[j]), float(g))
            errs.append(e)
        stats = BlockStats(
            max(errs) if errs else 0.0,
            float(np.mean(errs)) if errs else 0.0,
            len(errs),
            rejected,
            worst[1:] if worst else None,
        )
        report.blocks[block] = stats
    return report


# ---------------------------------------------------------------------------
# kink coordinates


def render_kinks(ldi: Ldi, view: ViewTransform, cfg) -> np.ndarray:
    """Signed offset of each projected coordinate from its nearest integer."""
    n_l, h, w = ldi.disparities.shape
    tv = view.with_target_intrinsics(scale_intrinsics(view.target_intrinsics, cfg.target_downsampling))
    xs, ys = pixel_grid(w, h)
    xs = np.broadcast_to(xs, (n_l, h, w)).reshape(-1)
    ys = np.broadcast_to(ys, (n_l, h, w)).reshape(-1)
    xt, yt, _, valid = project_points(xs, ys, ldi.disparities.reshape(-1), tv)
    xt, yt = xt[valid], yt[valid]
    return np.concatenate([xt - np.round(xt), yt - np.round(yt)])


def loss_kinks(ldi: Ldi, source, views, cfg, boundary_fraction: float = 0.1) -> np.ndarray:
    """Kink coordinates of the full objective built from forward quantities only."""
    from .splat import render

    parts = [
        (ldi.textures - source[None]).reshape(-1),
        (ldi.disparities[1:] - ldi.disparities[:-1]).reshape(-1),
    ]
    d = ldi.disparities
    c = d[:, 1:-1, 1:-1]
    parts.append((d[:, 1:-1, :-2] - 2 * c + d[:, 1:-1, 2:]).reshape(-1))
    parts.append((d[:, :-2, 1:-1] - 2 * c + d[:, 2:, 1:-1]).reshape(-1))
    for target, view in views:
        h, w = target.shape[:2]
        mask = make_boundary_mask(w, h, boundary_fraction).mask > 0
        parts.append(render_kinks(ldi, view, cfg))
        parts.append((render(ldi, view, cfg) - target)[mask].reshape(-1))
        errs = []
        for l in range(ldi.n_layers):
            r = render(ldi, view, cfg, layer=l)
            parts.append((r - target)[mask].reshape(-1))
            errs.append(np.abs(r - target).sum(-1)[mask])
        if len(errs) > 1:
            errs = np.sort(np.stack(errs), axis=0)
            parts.append(errs[1] - errs[0])
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# standard suites


def random_instance(seed: int, size: int = 8, n_layers: int = 2, n_views: int = 2, downsampling: float = 1.0):
    """Random LDI, source image and posed target views for gradient audits."""
    from .splat import SplatConfig, render

    rng = np.random.default_rng(seed)
    tex = rng.uniform(0.0, 1.0, (n_layers, size, size, 3))
    base = rng.uniform(0.45, 0.65, (size, size))
    disp = np.stack([base - 0.1 * l + rng.uniform(-0.06, 0.06, (size, size)) for l in range(n_layers)])
    ldi = Ldi(tex, disp, 1.0)
    k = Intrinsics(float(size), float(size), (size - 1) / 2.0, (size - 1) / 2.0)
    cfg = SplatConfig(target_downsampling=downsampling)
    views = []
    for _ in range(n_views):
        rot = rotation_from_euler(*rng.uniform(-0.05, 0.05, 3))
        trans = rng.uniform(-0.15, 0.15, 3)
        view = ViewTransform(k, k, RigidTransform(rot, trans))
        # targets: a perturbed render keeps residuals away from zero on average
        target = np.clip(render(ldi, view, cfg) + rng.normal(0.0, 0.2, (int(size * downsampling),) * 2 + (3,)), 0, 1)
        views.append((target, view))
    source = np.clip(tex[0] + rng.normal(0.0, 0.2, tex[0].shape), 0, 1)
    return ldi, source, views, cfg


SUITES = ("render", "render_layer", "vs", "mvs", "sc", "inc", "sm", "total")


def run_suite(suite: str, seed: int = 0, n_probes: int = 200, step: float = 1e-4,
              tolerance: float = 1e-4, kink_margin: float = 1e-3, downsampling: float = 0.5,
              order: int = 2) -> GradReport:
    """Audit one gradient path, drawing fresh random instances until every
    block has ``n_probes`` accepted probes."""
    from .losses import LossWeights, loss_total, losses_backward
    from .splat import render, render_backward

    only = {
        "vs": LossWeights(1, 0, 0, 0, 0),
        "mvs": LossWeights(0, 1, 0, 0, 0),
        "sc": LossWeights(0, 0, 1, 0, 0),
        "inc": LossWeights(0, 0, 0, 1, 0),
        "sm": LossWeights(0, 0, 0, 0, 1),
        "total": LossWeights(),
    }
    if suite not in SUITES:
        raise ValueError(f"unknown gradcheck suite {suite!r}; choose from {SUITES}")
    report = None
    attempt = 0
    while report is None or min(b.n_probes for b in report.blocks.values()) < n_probes:
        if attempt >= 20:
            break
        inst_seed = seed * 1000 + attempt
        ldi, source, views, cfg = random_instance(inst_seed, downsampling=downsampling)
        if suite in ("render", "render_layer"):
            layer = None if suite == "render" else 1
            target, view = views[0]
            g_up = np.random.default_rng(inst_seed + 7).normal(size=target.shape) / target.size
            f = lambda x: float((g_up * render(x, view, cfg, layer)).sum())
            grad_f = lambda x: dict(zip(BLOCKS, render_backward(x, view, cfg, layer, g_up)))
            kinks = lambda x: render_kinks(x, view, cfg)
        else:
            weights = only[suite]
            f = lambda x: loss_total(x, source, views, cfg, weights).total
            grad_f = lambda x: losses_backward(x, source, views, cfg, weights)[1]
            kinks = lambda x: loss_kinks(x, source, views, cfg)
        remaining = n_probes if report is None else n_probes - min(b.n_probes for b in report.blocks.values())
        r = check_gradients(
            f, grad_f, ldi, step, tolerance, kink_margin, remaining, inst_seed, kinks, name=suite, order=order
        )
        report = r if report is None else report.merge(r)
        attempt += 1
    return report
