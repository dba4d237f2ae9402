"""Differentiable layered-depth-image rendering, losses and per-scene fitting."""

from .geometry import Intrinsics, RigidTransform, ViewTransform, project, project_gradient, scale_intrinsics
from .ldi import BoundaryMask, Ldi, make_boundary_mask, read_ldi, validate, write_ldi
from .splat import SplatConfig, render, render_backward
from .losses import LossBreakdown, LossWeights, loss_total, losses_backward
from .fitter import FitConfig, FitReport, LdiFitter, fit, fit_baseline_single_layer, init_ldi
from .evaluation import EvalReport, depth_error, evaluate, view_synthesis_error

__version__ = "0.1.0"

__all__ = [
    "BoundaryMask",
    "EvalReport",
    "FitConfig",
    "FitReport",
    "Intrinsics",
    "Ldi",
    "LdiFitter",
    "LossBreakdown",
    "LossWeights",
    "RigidTransform",
    "SplatConfig",
    "ViewTransform",
    "depth_error",
    "evaluate",
    "fit",
    "fit_baseline_single_layer",
    "init_ldi",
    "loss_total",
    "losses_backward",
    "make_boundary_mask",
    "project",
    "project_gradient",
    "read_ldi",
    "render",
    "render_backward",
    "scale_intrinsics",
    "validate",
    "view_synthesis_error",
    "write_ldi",
]
