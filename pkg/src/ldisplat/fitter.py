"""Direct per-scene LDI recovery by adaptive-moment gradient descent.

Disparities are optimized through a sigmoid squash onto ``(d_min, d_max)``
so they can never leave the valid range; textures are optimized directly
and clamped to ``[0, 1]`` after every step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_image, check_views
from .ldi import MIN_DISPARITY_FRACTION, Ldi
from .losses import CSV_HEADER, LossBreakdown, LossWeights, View, loss_total, losses_backward
from .splat import SplatConfig, render

INIT_MODES = ("source", "random")


class NumericalError(FloatingPointError):
    """Raised when the objective turns non-finite during a fit."""


@dataclass(frozen=True)
class FitConfig:
    """Optimizer and objective settings for one fit.

    Attributes:
        iterations: number of gradient steps.
        learning_rate: Adam step size, shared by textures and disparity logits.
        beta1, beta2: moment decay rates.
        adam_epsilon: Adam denominator guard.
        weights: loss-term weights.
        splat: renderer settings.
        d_min, d_max: disparity range of the sigmoid squash.
        init: ``"source"`` or ``"random"``; see :func:`init_ldi`.
        seed: seeds random initialization.
        log_every: trace cadence in iterations; the final state is always logged.
        boundary_fraction: border band ignored by the view-synthesis terms.
        n_layers: LDI layers to fit.
        threads: worker threads for per-view work (``None`` reads the environment).
    """

    iterations: int = 2000
    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    weights: LossWeights = field(default_factory=LossWeights)
    splat: SplatConfig = field(default_factory=SplatConfig)
    d_min: float = MIN_DISPARITY_FRACTION
    d_max: float = 1.0
    init: str = "source"
    seed: int = 0
    log_every: int = 1
    boundary_fraction: float = 0.1
    n_layers: int = 2
    threads: Optional[int] = None

    def __post_init__(self):
        if int(self.iterations) != self.iterations or self.iterations <= 0:
            raise ValueError(f"iterations must be a positive integer, got {self.iterations}")
        if not (np.isfinite(self.learning_rate) and self.learning_rate >= 0):
            raise ValueError(f"learning_rate must be finite and nonnegative, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0 < b < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {b}")
        if not self.adam_epsilon > 0:
            raise ValueError("adam_epsilon must be positive")
        if not 0 < self.d_min < self.d_max:
            raise ValueError(f"need 0 < d_min < d_max, got {self.d_min}, {self.d_max}")
        if self.init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}, got {self.init!r}")
        if self.log_every < 1:
            raise ValueError("log_every must be at least 1")
        if not 0 <= self.boundary_fraction < 0.5:
            raise ValueError("boundary_fraction must lie in [0, 0.5)")
        if self.n_layers < 1:
            raise ValueError("n_layers must be at least 1")


@dataclass
class FitReport:
    """Outcome of a fit.

    ``trace`` holds ``(iteration, LossBreakdown)`` pairs; the loss at
    iteration ``i`` is evaluated after ``i`` updates, so the first entry is
    the initial state and the last the returned LDI.
    """

    trace: list
    ldi: Ldi
    metrics: dict
    wall_time: float

    def to_csv(self) -> str:
        rows = [",".join(CSV_HEADER)] + [b.csv_row(i) for i, b in self.trace]
        return "\n".join(rows) + "\n"

    @property
    def initial(self) -> LossBreakdown:
        return self.trace[0][1]

    @property
    def final(self) -> LossBreakdown:
        return self.trace[-1][1]


def init_ldi(source_image, mode: str = "source", n_layers: int = 2, d_max: float = 1.0,
             seed: int = 0, d_min: Optional[float] = None) -> Ldi:
    """Starting LDI for a fit.

    ``"source"`` copies the source image into every layer and puts layer
    disparities at constant fractions of ``d_max`` from 0.6 down to 0.3.
    ``"random"`` draws uniform textures and per-pixel sorted disparities.
    """
    source = check_image(source_image, "source image", channels=3)
    if n_layers < 1:
        raise ValueError("n_layers must be at least 1")
    d_min = MIN_DISPARITY_FRACTION * d_max if d_min is None else d_min
    h, w = source.shape[:2]
    if mode == "source":
        tex = np.broadcast_to(source, (n_layers, h, w, 3)).copy()
        levels = np.linspace(0.6, 0.3, n_layers) if n_layers > 1 else np.array([0.6])
        disp = np.broadcast_to((levels * d_max)[:, None, None], (n_layers, h, w)).copy()
    elif mode == "random":
        rng = np.random.default_rng(seed)
        tex = rng.uniform(0.0, 1.0, (n_layers, h, w, 3))
        disp = -np.sort(-rng.uniform(d_min, d_max, (n_layers, h, w)), axis=0)
    else:
        raise ValueError(f"unknown init mode {mode!r}; choose from {INIT_MODES}")
    return Ldi(tex, np.clip(disp, d_min, d_max), d_max)


# ---------------------------------------------------------------------------
# parameterization


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _squash(theta, d_min, d_max):
    return d_min + (d_max - d_min) * _sigmoid(theta)


def _unsquash(d, d_min, d_max):
    u = np.clip((np.asarray(d) - d_min) / (d_max - d_min), 1e-9, 1.0 - 1e-9)
    return np.log(u) - np.log1p(-u)


class Adam:
    """Adam over a list of arrays updated in place."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# fitting


def fit(source_image, views: Sequence[View], cfg: FitConfig = FitConfig(),
        initial: Optional[Ldi] = None) -> FitReport:
    """Recover an LDI explaining ``views`` from ``source_image``.

    Args:
        source_image: ``(H, W, 3)`` image seen by the LDI's camera.
        views: ``(target_image, ViewTransform)`` pairs; target images have the
            downsampled render size.
        cfg: fit settings.
        initial: optional starting LDI; replaces ``cfg.init``.

    Raises:
        ValueError: on empty or inconsistent inputs.
        NumericalError: if the objective becomes non-finite.
    """
    start = time.perf_counter()
    source = check_image(source_image, "source image", channels=3)
    views = check_views(views, source.shape[:2], cfg.splat)
    if initial is None:
        ldi = init_ldi(source, cfg.init, cfg.n_layers, cfg.d_max, cfg.seed, cfg.d_min)
    else:
        if initial.textures.shape[1:] != source.shape:
            raise ValueError("initial LDI does not match the source image size")
        ldi = Ldi(initial.textures, initial.disparities, cfg.d_max)
    tex = np.clip(ldi.textures.copy(), 0.0, 1.0)
    theta = _unsquash(ldi.disparities, cfg.d_min, cfg.d_max)
    opt = Adam([tex, theta], cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_epsilon)

    def objective(current, need_grad):
        if need_grad:
            return losses_backward(current, source, views, cfg.splat, cfg.weights,
                                   cfg.boundary_fraction, cfg.threads)
        return loss_total(current, source, views, cfg.splat, cfg.weights,
                          cfg.boundary_fraction, cfg.threads), None

    trace = []
    for it in range(cfg.iterations + 1):
        s = _sigmoid(theta)
        current = Ldi(tex, cfg.d_min + (cfg.d_max - cfg.d_min) * s, cfg.d_max)
        last = it == cfg.iterations
        breakdown, grad = objective(current, not last)
        if not np.isfinite(breakdown.total):
            raise NumericalError(f"non-finite loss at iteration {it}")
        if it % cfg.log_every == 0 or last:
            trace.append((it, breakdown))
        if last:
            break
        g_theta = grad.disparities * (cfg.d_max - cfg.d_min) * s * (1.0 - s)
        opt.step([grad.textures, g_theta])
        np.clip(tex, 0.0, 1.0, out=tex)

    final = Ldi(tex.copy(), _squash(theta, cfg.d_min, cfg.d_max), cfg.d_max)
    metrics = {
        "initial_vs": trace[0][1].vs,
        "final_vs": trace[-1][1].vs,
        "final_total": trace[-1][1].total,
    }
    return FitReport(trace, final, metrics, time.perf_counter() - start)


def fit_baseline_single_layer(source_image, views: Sequence[View], cfg: FitConfig = FitConfig()) -> FitReport:
    """Same fit restricted to a single layer (a plain depth map with texture)."""
    return fit(source_image, views, replace(cfg, n_layers=1))


# ---------------------------------------------------------------------------
# estimator interface


class LdiFitter(BaseEstimator):
    """Estimator wrapper around :func:`fit`.

    ``fit(X, y)`` takes the source image as ``X`` and the list of
    ``(target_image, ViewTransform)`` pairs as ``y``. ``predict`` renders the
    fitted LDI into each given ``ViewTransform``; ``score`` is the negative
    masked view-synthesis error averaged over views.

    Example:
        >>> est = LdiFitter(iterations=200).fit(source, views)
        >>> images = est.predict([view for _, view in views])
    """

    def __init__(self, n_layers=2, iterations=2000, learning_rate=1e-2, beta1=0.9, beta2=0.999,
                 zbuf_scale=50.0, target_downsampling=0.5, boundary_fraction=0.1,
                 w_vs=1.0, w_mvs=1.0, w_sc=10.0, w_inc=1.0, w_sm=0.1, tau_sc=1.0 / 50.0,
                 d_max=1.0, init="source", seed=0, log_every=1, threads=None):
        self.n_layers = n_layers
        self.iterations = iterations
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.zbuf_scale = zbuf_scale
        self.target_downsampling = target_downsampling
        self.boundary_fraction = boundary_fraction
        self.w_vs = w_vs
        self.w_mvs = w_mvs
        self.w_sc = w_sc
        self.w_inc = w_inc
        self.w_sm = w_sm
        self.tau_sc = tau_sc
        self.d_max = d_max
        self.init = init
        self.seed = seed
        self.log_every = log_every
        self.threads = threads

    def _config(self) -> FitConfig:
        if not self.zbuf_scale > 0:
            raise ValueError("zbuf_scale must be positive")
        return FitConfig(
            iterations=self.iterations,
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            weights=LossWeights(self.w_vs, self.w_mvs, self.w_sc, self.w_inc, self.w_sm, self.tau_sc),
            splat=SplatConfig(tau=1.0 / self.zbuf_scale, target_downsampling=self.target_downsampling),
            d_min=MIN_DISPARITY_FRACTION * self.d_max,
            d_max=self.d_max,
            init=self.init,
            seed=self.seed,
            log_every=self.log_every,
            boundary_fraction=self.boundary_fraction,
            n_layers=self.n_layers,
            threads=self.threads,
        )

    def fit(self, X, y):
        report = fit(X, y, self._config())
        self.report_ = report
        self.ldi_ = report.ldi
        self.n_features_in_ = int(np.prod(np.shape(X)))
        return self

    def _check_fitted(self):
        if not hasattr(self, "ldi_"):
            raise AttributeError("LdiFitter is not fitted yet; call fit first")

    def predict(self, X):
        """Render the fitted LDI into every ``ViewTransform`` in ``X``."""
        self._check_fitted()
        cfg = self._config().splat
        return [render(self.ldi_, v, cfg) for v in X]

    def score(self, X, y):
        """Negative mean masked view-synthesis error of the fitted LDI.

        ``X`` is the source image (used only for size checks) and ``y`` the
        ``(target_image, ViewTransform)`` pairs, as in :meth:`fit`.
        """
        from .evaluation import view_synthesis_error
        from .losses import default_mask

        self._check_fitted()
        cfg = self._config()
        views = check_views(y, check_image(X, "source image", 3).shape[:2], cfg.splat)
        errs = [
            view_synthesis_error(render(self.ldi_, v, cfg.splat), t, default_mask(t, cfg.boundary_fraction))
            for t, v in views
        ]
        return -float(np.mean(errs))
