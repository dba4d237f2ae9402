"""Input checks shared by the fitter, estimator and CLI."""

from __future__ import annotations

import numpy as np

from .geometry import ViewTransform


def check_image(image, name: str = "image", channels=None) -> np.ndarray:
    """Finite float64 ``(H, W, C)`` array, or ``(H, W)`` when ``channels == 1``."""
    arr = np.asarray(image, dtype=np.float64)
    if channels == 1:
        if arr.ndim != 2:
            raise ValueError(f"{name} must be a 2-D array, got shape {arr.shape}")
    else:
        if arr.ndim != 3:
            raise ValueError(f"{name} must be (H, W, C), got shape {arr.shape}")
        if channels is not None and arr.shape[-1] != channels:
            raise ValueError(f"{name} must have {channels} channels, got {arr.shape[-1]}")
    if min(arr.shape[:2]) < 1:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_views(views, source_hw, splat_cfg) -> list:
    """Validate ``(target_image, ViewTransform)`` pairs against the render size."""
    if views is None:
        raise ValueError("at least one target view is required")
    views = list(views)
    if not views:
        raise ValueError("at least one target view is required")
    expected = splat_cfg.target_shape(*source_hw)
    out = []
    for i, item in enumerate(views):
        try:
            target, view = item
        except (TypeError, ValueError):
            raise ValueError(f"view {i} must be a (target_image, ViewTransform) pair") from None
        if not isinstance(view, ViewTransform):
            raise ValueError(f"view {i}: expected a ViewTransform, got {type(view).__name__}")
        target = check_image(target, f"target image {i}", channels=3)
        if target.shape[:2] != expected:
            raise ValueError(
                f"target image {i} is {target.shape[1]}x{target.shape[0]}, "
                f"render size is {expected[1]}x{expected[0]}"
            )
        out.append((target, view))
    return out
