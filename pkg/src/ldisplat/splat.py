"""Differentiable forward splatting of an LDI with a soft z-buffer.

Every pixel of every selected layer becomes a point that is projected into
the target frame and spread over its four neighbouring target pixels with a
bilinear tent. Overlapping contributions are blended with weights
``exp(d / tau)``, so nearer points dominate as ``tau`` shrinks::

    color(p) = (sum_k I_k w_k(p) + eps * white) / (sum_k w_k(p) + eps)
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .geometry import ProjectedPoint, ViewTransform, pixel_grid, project_points, scale_intrinsics
from .ldi import Ldi


@dataclass(frozen=True)
class SplatConfig:
    """Renderer settings.

    Attributes:
        tau: z-buffer temperature on inverse depth (``1 / zbuf_scale``).
        epsilon: stabilizer added to numerator and denominator.
        target_downsampling: target resolution as a fraction of the LDI's.
        white: color empty pixels are biased towards.
    """

    tau: float = 1.0 / 50.0
    epsilon: float = 1e-8
    target_downsampling: float = 0.5
    white: float = 1.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.target_downsampling <= 1:
            raise ValueError(f"target_downsampling must lie in (0, 1], got {self.target_downsampling}")

    @property
    def zbuf_scale(self) -> float:
        return 1.0 / self.tau

    def target_shape(self, height: int, width: int) -> tuple[int, int]:
        f = self.target_downsampling
        th, tw = f * height, f * width
        if abs(th - round(th)) > 1e-9 or abs(tw - round(tw)) > 1e-9:
            raise ValueError(
                f"image size {width}x{height} times downsampling {f} is not integral"
            )
        return int(round(th)), int(round(tw))


def bilinear_kernel(a: float, b: float) -> float:
    return max(0.0, 1.0 - abs(a - b))


def splat_weight(pp: ProjectedPoint, p_t, tau: float) -> float:
    """Unnormalized weight of projected point ``pp`` at integer target pixel ``p_t = (x, y)``."""
    if not pp.valid:
        return 0.0
    b = bilinear_kernel(pp.x, p_t[0]) * bilinear_kernel(pp.y, p_t[1])
    return math.exp(pp.d / tau) * b if b > 0 else 0.0


@dataclass
class SplatTensor:
    """Accumulated splat buffers for one render, kept for the reverse pass.

    ``denominator`` and the per-pixel ``max_exponent`` are stored in the
    rescaled form used by the kernels: true weight sums equal
    ``denominator * exp(max_exponent)``.
    """

    image: np.ndarray
    denominator: np.ndarray
    max_exponent: np.ndarray
    xt: np.ndarray
    yt: np.ndarray
    dt: np.ndarray
    valid: np.ndarray
    jacobian: tuple
    colors: np.ndarray
    layers: tuple
    source_shape: tuple


def _layer_indices(ldi: Ldi, layer) -> tuple:
    if layer is None or layer == "all":
        return tuple(range(ldi.n_layers))
    if not 0 <= int(layer) < ldi.n_layers:
        raise ValueError(f"layer {layer} out of range for an LDI with {ldi.n_layers} layers")
    return (int(layer),)


class Projection:
    """Projected coordinates of every LDI point under one view, reusable across renders."""

    def __init__(self, ldi: Ldi, view: ViewTransform, cfg: SplatConfig):
        n_l, h, w = ldi.disparities.shape
        self.target_shape = cfg.target_shape(h, w)
        target_view = view.with_target_intrinsics(
            scale_intrinsics(view.target_intrinsics, cfg.target_downsampling)
        )
        xs, ys = pixel_grid(w, h)
        xs = np.broadcast_to(xs, (n_l, h, w)).reshape(-1)
        ys = np.broadcast_to(ys, (n_l, h, w)).reshape(-1)
        self.xt, self.yt, self.dt, self.valid, self.jacobian = project_points(
            xs, ys, ldi.disparities.reshape(-1), target_view, with_jacobian=True
        )
        self.colors = ldi.textures.reshape(-1, 3)
        self.points_per_layer = h * w
        self.source_shape = (n_l, h, w)

    def select(self, layers: tuple):
        n = self.points_per_layer
        if len(layers) == self.source_shape[0]:
            sl = slice(None)
        else:
            sl = slice(layers[0] * n, (layers[0] + 1) * n)
        return (
            self.xt[sl],
            self.yt[sl],
            self.dt[sl],
            self.valid[sl],
            tuple(j[sl] for j in self.jacobian),
            self.colors[sl],
        )


def splat(
    ldi: Ldi,
    view: ViewTransform,
    cfg: SplatConfig,
    layer=None,
    projection: Optional[Projection] = None,
) -> SplatTensor:
    """Forward pass; ``layer=None`` renders all layers, an int renders one."""
    layers = _layer_indices(ldi, layer)
    if projection is None:
        projection = Projection(ldi, view, cfg)
    xt, yt, dt, valid, jac, colors = projection.select(layers)
    th, tw = projection.target_shape
    inv_tau = 1.0 / cfg.tau
    m = _kernels.max_exponent(xt, yt, dt, valid, inv_tau, th, tw)
    img, den = _kernels.splat_forward(
        xt, yt, dt, valid, np.ascontiguousarray(colors), inv_tau, m, cfg.epsilon, cfg.white
    )
    return SplatTensor(img, den, m, xt, yt, dt, valid, jac, colors, layers, projection.source_shape)


def render(ldi: Ldi, view: ViewTransform, cfg: SplatConfig = SplatConfig(), layer=None) -> np.ndarray:
    """Render ``ldi`` into the target view; returns a ``(th, tw, 3)`` image."""
    return splat(ldi, view, cfg, layer).image


def splat_backward(tensor: SplatTensor, cfg: SplatConfig, upstream: np.ndarray):
    """Gradients ``(d_textures, d_disparities)`` shaped like the full LDI."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != tensor.image.shape:
        raise ValueError(f"upstream gradient {upstream.shape} does not match render {tensor.image.shape}")
    g_col, g_x, g_y, g_d = _kernels.splat_backward(
        tensor.xt,
        tensor.yt,
        tensor.dt,
        tensor.valid,
        np.ascontiguousarray(tensor.colors),
        1.0 / cfg.tau,
        tensor.max_exponent,
        tensor.denominator,
        tensor.image,
        np.ascontiguousarray(upstream),
    )
    jx, jy, jd = tensor.jacobian
    g_disp = g_x * jx + g_y * jy + g_d * jd

    n_l, h, w = tensor.source_shape
    d_tex = np.zeros((n_l, h, w, 3))
    d_disp = np.zeros((n_l, h, w))
    if len(tensor.layers) == n_l:
        d_tex[:] = g_col.reshape(n_l, h, w, 3)
        d_disp[:] = g_disp.reshape(n_l, h, w)
    else:
        (l,) = tensor.layers
        d_tex[l] = g_col.reshape(h, w, 3)
        d_disp[l] = g_disp.reshape(h, w)
    return d_tex, d_disp


def render_backward(
    ldi: Ldi, view: ViewTransform, cfg: SplatConfig, layer, upstream: np.ndarray
):
    """Reverse-mode gradient of ``sum(upstream * render(...))`` w.r.t. the LDI."""
    return splat_backward(splat(ldi, view, cfg, layer), cfg, upstream)
