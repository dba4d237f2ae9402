"""``key = value`` configuration files for rendering and fitting.

Lines are ``key = value``; ``#`` starts a comment. Recognized keys and the
setting each one controls:

==========================  ============================================
zbuf_scale                  1 / tau of the soft z-buffer (default 50)
splat_bdry_ignore           boundary band fraction (default 0.1)
trg_splat_downsampling      target render scale (default 0.5)
compose_splat_wt            weight of the all-layer view loss (1)
indep_splat_wt              weight of the min-over-layers view loss (1)
self_cons_wt                weight of source consistency (10)
disp_smoothness_wt          weight of disparity smoothness (0.1)
depth_order_wt              weight of the layer-ordering hinge (1)
self_cons_scale             1 / temperature of the layer softmax (50)
n_layers                    LDI layers to fit (2)
splat_epsilon               renderer stabilizer (1e-8)
splat_white                 color of empty pixels (1.0)
iterations                  optimizer steps (2000)
learning_rate               Adam step size (0.01)
beta1, beta2                Adam moment decays (0.9, 0.999)
d_min, d_max                disparity range (1e-4 * d_max, 1.0)
init                        ``source`` or ``random``
seed                        initialization seed (0)
log_every                   trace cadence in iterations (1)
==========================  ============================================

View and source-consistency losses are means over pixel-channels rather
than sums, so the weights do not depend on image resolution.
"""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

from .fitter import FitConfig
from .ldi import MIN_DISPARITY_FRACTION
from .losses import LossWeights
from .splat import SplatConfig


def _int(v: str) -> int:
    f = float(v)
    if f != int(f):
        raise ValueError(f"expected an integer, got {v}")
    return int(f)


_TYPES = {
    "zbuf_scale": float,
    "splat_bdry_ignore": float,
    "trg_splat_downsampling": float,
    "compose_splat_wt": float,
    "indep_splat_wt": float,
    "self_cons_wt": float,
    "disp_smoothness_wt": float,
    "depth_order_wt": float,
    "self_cons_scale": float,
    "n_layers": _int,
    "splat_epsilon": float,
    "splat_white": float,
    "iterations": _int,
    "learning_rate": float,
    "beta1": float,
    "beta2": float,
    "d_min": float,
    "d_max": float,
    "init": str,
    "seed": _int,
    "log_every": _int,
}
KEYS = tuple(_TYPES)


class ConfigError(ValueError):
    pass


def parse_config(text: str, origin: str = "config") -> dict:
    """Parse ``key = value`` lines into a dict of typed values."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{n}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"{origin}:{n}: unknown key {key!r}")
        try:
            out[key] = _TYPES[key](value)
        except ValueError as exc:
            raise ConfigError(f"{origin}:{n}: bad value for {key}: {exc}") from None
    return out


def read_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), str(path))


def fit_config(values: dict, base: FitConfig = FitConfig()) -> FitConfig:
    """Apply parsed config values on top of ``base``."""
    v = dict(values)
    try:
        w = base.weights
        weights = LossWeights(
            w_vs=v.pop("compose_splat_wt", w.w_vs),
            w_mvs=v.pop("indep_splat_wt", w.w_mvs),
            w_sc=v.pop("self_cons_wt", w.w_sc),
            w_inc=v.pop("depth_order_wt", w.w_inc),
            w_sm=v.pop("disp_smoothness_wt", w.w_sm),
            tau_sc=1.0 / v.pop("self_cons_scale", 1.0 / w.tau_sc),
        )
        s = base.splat
        splat = SplatConfig(
            tau=1.0 / v.pop("zbuf_scale", 1.0 / s.tau),
            epsilon=v.pop("splat_epsilon", s.epsilon),
            target_downsampling=v.pop("trg_splat_downsampling", s.target_downsampling),
            white=v.pop("splat_white", s.white),
        )
        d_max = v.pop("d_max", base.d_max)
        d_min = v.pop("d_min", MIN_DISPARITY_FRACTION * d_max if "d_max" in values else base.d_min)
        mapping = {"splat_bdry_ignore": "boundary_fraction"}
        rest = {mapping.get(k, k): val for k, val in v.items()}
        return replace(base, weights=weights, splat=splat, d_min=d_min, d_max=d_max, **rest)
    except ZeroDivisionError:
        raise ConfigError("zbuf_scale and self_cons_scale must be nonzero") from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def splat_config(values: dict) -> SplatConfig:
    return fit_config(values).splat
