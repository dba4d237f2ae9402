"""View-synthesis and inverse-depth metrics against ground truth."""

from __future__ import annotations

from dataclasses import astuple, dataclass, fields
from typing import Optional

import numpy as np

from .ldi import Ldi, make_boundary_mask
from .splat import SplatConfig, render

EVAL_FIELDS = ("vs_error_all", "vs_error_disocc", "fg_depth_error", "bg_depth_error")


@dataclass(frozen=True)
class EvalReport:
    """Metrics of a predicted LDI on one bundle.

    ``None`` marks a metric whose pixel set was empty (no dis-occluded
    pixels, or no pixel with a second ground-truth surface).
    """

    vs_error_all: float
    vs_error_disocc: Optional[float]
    fg_depth_error: float
    bg_depth_error: Optional[float]

    def csv(self) -> str:
        vals = ["NA" if v is None else repr(float(v)) for v in astuple(self)]
        return ",".join(f.name for f in fields(self)) + "\n" + ",".join(vals) + "\n"


def view_synthesis_error(pred, gt, mask) -> float:
    """Mean absolute error over the masked pixel-channels."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    if mask.shape != gt.shape[:2]:
        raise ValueError(f"mask {mask.shape} does not match image {gt.shape[:2]}")
    n = mask.sum() * (gt.shape[2] if gt.ndim == 3 else 1)
    if n <= 0:
        raise ValueError("mask is empty")
    m = mask[..., None] if gt.ndim == 3 else mask
    return float((m * np.abs(pred - gt)).sum() / n)


def depth_error(pred_ldi: Ldi, gt_ldi: Ldi, layer: int, restrict_mask=None) -> float:
    """Mean ``|D_pred - D_gt|`` of one layer over ``restrict_mask``.

    A prediction with fewer layers than ``layer + 1`` is scored with its last
    (for one layer: its only) disparity map, the substitution used to bound
    a single-layer model on the background.
    """
    if pred_ldi.disparities.shape[1:] != gt_ldi.disparities.shape[1:]:
        raise ValueError("predicted and ground-truth LDIs differ in size")
    if not 0 <= layer < gt_ldi.n_layers:
        raise ValueError(f"layer {layer} out of range for the ground truth")
    pred = pred_ldi.disparities[min(layer, pred_ldi.n_layers - 1)]
    mask = np.ones(pred.shape) if restrict_mask is None else np.asarray(restrict_mask, dtype=np.float64)
    if mask.shape != pred.shape:
        raise ValueError(f"mask {mask.shape} does not match disparity {pred.shape}")
    if mask.sum() <= 0:
        raise ValueError("mask is empty")
    return float((mask * np.abs(pred - gt_ldi.disparities[layer])).sum() / mask.sum())


def evaluate(pred_ldi: Ldi, bundle, cfg: SplatConfig = SplatConfig(), boundary_fraction: float = 0.1) -> EvalReport:
    """Score ``pred_ldi`` on the bundle's evaluation targets.

    Held-out targets are used when the bundle has them, so view synthesis
    is measured on views the fit never saw. View-synthesis errors pool pixels over all targets and ignore the
    boundary band; the dis-occluded error further restricts to the bundle's
    dis-occlusion masks. Depth errors compare against the ground-truth LDI,
    the background one only where a second surface exists.
    """
    if pred_ldi.textures.shape[1:] != bundle.source_image.shape:
        raise ValueError("predicted LDI does not match the bundle's source size")
    abs_all = n_all = abs_dis = n_dis = 0.0
    for target, view, disocc in bundle.eval_views():
        pred = render(pred_ldi, view, cfg)
        if pred.shape != target.shape:
            raise ValueError("render size does not match the bundle targets; check trg_splat_downsampling")
        h, w = target.shape[:2]
        m = make_boundary_mask(w, h, boundary_fraction).mask
        err = np.abs(pred - target).sum(axis=-1)
        abs_all += (m * err).sum()
        n_all += 3 * m.sum()
        md = m * (np.asarray(disocc) > 0.5)
        abs_dis += (md * err).sum()
        n_dis += 3 * md.sum()
    if n_all == 0:
        raise ValueError("bundle has no target views")
    second = np.asarray(bundle.gt_second) > 0.5
    return EvalReport(
        vs_error_all=float(abs_all / n_all),
        vs_error_disocc=float(abs_dis / n_dis) if n_dis > 0 else None,
        fg_depth_error=depth_error(pred_ldi, bundle.gt_ldi, 0),
        bg_depth_error=depth_error(pred_ldi, bundle.gt_ldi, 1, second) if second.any() else None,
    )
