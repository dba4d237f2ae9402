from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from conftest import default_fit, one_sprite_bundle
from ldisplat import fitter
from ldisplat.fitter import (
    Adam,
    FitConfig,
    LdiFitter,
    NumericalError,
    _squash,
    _unsquash,
    fit,
    fit_baseline_single_layer,
    init_ldi,
)
from ldisplat.ldi import validate
from ldisplat.losses import LossBreakdown, loss_inc, loss_sc

SHORT = FitConfig(iterations=15)


@pytest.fixture(scope="module")
def small():
    return one_sprite_bundle(3, size=32)


class TestInit:
    def test_source_mode(self, small):
        ldi = init_ldi(small.source_image)
        assert loss_sc(ldi, small.source_image) == 0.0
        assert loss_inc(ldi) == 0.0
        assert np.all(ldi.disparities[0] == 0.6) and np.all(ldi.disparities[1] == 0.3)
        assert validate(ldi) == []

    def test_random_mode(self, small):
        ldi = init_ldi(small.source_image, "random", n_layers=3, seed=4)
        assert validate(ldi) == []
        assert np.array_equal(ldi.textures, init_ldi(small.source_image, "random", n_layers=3, seed=4).textures)

    def test_single_layer_and_scale(self, small):
        ldi = init_ldi(small.source_image, n_layers=1, d_max=2.0)
        assert ldi.n_layers == 1 and np.all(ldi.disparities == 1.2)

    def test_unknown_mode(self, small):
        with pytest.raises(ValueError):
            init_ldi(small.source_image, "zeros")


class TestConfig:
    @pytest.mark.parametrize("bad", [dict(iterations=0), dict(beta1=1.0), dict(beta2=0.0), dict(d_min=0.0),
                                     dict(d_min=2.0), dict(init="x"), dict(log_every=0), dict(learning_rate=-1)])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            FitConfig(**bad)


@given(st.floats(-1e6, 1e6))
def test_squash_stays_in_range(theta):
    d = _squash(np.array([theta]), 1e-4, 1.0)[0]
    assert 1e-4 <= d <= 1.0
    if abs(theta) < 30:
        assert 1e-4 < d < 1.0


@given(st.floats(0.01, 0.99))
def test_unsquash_inverts(d):
    assert _squash(_unsquash(d, 1e-4, 1.0), 1e-4, 1.0) == pytest.approx(d, abs=1e-12)


def test_adam_first_step_is_lr_sized():
    p = np.array([1.0, -2.0])
    Adam([p], 0.1).step([np.array([3.0, -0.5])])
    assert np.allclose(p, [0.9, -1.9])


class TestFit:
    def test_requires_views(self, small):
        with pytest.raises(ValueError):
            fit(small.source_image, [], SHORT)

    def test_rejects_wrong_target_size(self, small):
        img, view = small.views()[0]
        with pytest.raises(ValueError):
            fit(small.source_image, [(img[:-2], view)], SHORT)

    def test_ground_truth_with_zero_lr(self, small):
        cfg = replace(SHORT, learning_rate=0.0)
        report = fit(small.source_image, small.views(), cfg, initial=small.gt_ldi)
        totals = {b for _, b in report.trace}
        assert len(report.trace) == 16 and len(totals) == 1
        b = report.initial
        # occluded layers keep softmax weight exp(-gap / tau_sc), so sc is tiny but not zero
        assert b.inc == 0.0 and b.sc < 1e-6 and 0 < b.vs < 0.05
        assert np.allclose(report.ldi.disparities, small.gt_ldi.disparities, atol=1e-8)

    def test_trace_and_csv(self, small):
        report = fit(small.source_image, small.views(), replace(SHORT, log_every=4))
        assert [i for i, _ in report.trace] == [0, 4, 8, 12, 15]
        lines = report.to_csv().splitlines()
        assert lines[0] == "iteration,vs,mvs,sc,inc,sm,total" and len(lines) == 6
        assert report.metrics["initial_vs"] == report.initial.vs
        assert report.wall_time > 0

    def test_deterministic_across_threads(self, small):
        a = fit(small.source_image, small.views(), replace(SHORT, threads=1, init="random", seed=2))
        b = fit(small.source_image, small.views(), replace(SHORT, threads=3, init="random", seed=2))
        assert a.to_csv() == b.to_csv()
        assert np.array_equal(a.ldi.textures, b.ldi.textures)
        assert np.array_equal(a.ldi.disparities, b.ldi.disparities)

    def test_parameters_stay_in_range(self, small):
        cfg = replace(SHORT, learning_rate=5.0, d_min=0.1, d_max=0.8)
        report = fit(small.source_image, small.views(), cfg)
        assert report.ldi.disparities.min() >= 0.1 and report.ldi.disparities.max() <= 0.8
        assert report.ldi.textures.min() >= 0 and report.ldi.textures.max() <= 1

    def test_loss_decreases(self, small):
        report = fit(small.source_image, small.views(), replace(SHORT, iterations=60))
        assert report.final.total < report.initial.total

    def test_non_finite_loss(self, small, monkeypatch):
        real = fitter.losses_backward
        calls = []

        def poisoned(*args, **kwargs):
            calls.append(1)
            b, g = real(*args, **kwargs)
            if len(calls) == 3:
                b = LossBreakdown(b.vs, b.mvs, b.sc, b.inc, b.sm, float("nan"))
            return b, g

        monkeypatch.setattr(fitter, "losses_backward", poisoned)
        with pytest.raises(NumericalError, match="iteration 2"):
            fit(small.source_image, small.views(), SHORT)

    def test_single_layer_baseline(self, small):
        report = fit_baseline_single_layer(small.source_image, small.views(), SHORT)
        assert report.ldi.n_layers == 1
        assert report.initial.inc == 0.0
        assert report.initial.mvs == report.initial.vs
        again = fit_baseline_single_layer(small.source_image, small.views(), SHORT)
        assert report.to_csv() == again.to_csv()


class TestEstimator:
    def test_params_and_clone(self):
        est = LdiFitter(iterations=7, w_sm=0.5)
        assert est.get_params()["iterations"] == 7
        twin = clone(est)
        assert twin.get_params() == est.get_params() and twin is not est
        assert est.set_params(n_layers=1).n_layers == 1

    def test_fit_predict_score(self, small):
        est = LdiFitter(iterations=10).fit(small.source_image, small.views())
        assert est.ldi_.n_layers == 2 and len(est.report_.trace) == 11
        preds = est.predict([v for _, v in small.views()])
        assert len(preds) == 8 and preds[0].shape == (16, 16, 3)
        score = est.score(small.source_image, small.views())
        assert -1 < score < 0

    def test_unfitted(self):
        with pytest.raises(AttributeError):
            LdiFitter().predict([])


@pytest.mark.slow
def test_ema_soft_monotonicity():
    """EMA of the total loss never rises across a 500-iteration window."""
    totals = np.array([b.total for _, b in default_fit(0).trace])
    ema = np.empty_like(totals)
    ema[0] = totals[0]
    for i in range(1, len(totals)):
        ema[i] = 0.95 * ema[i - 1] + 0.05 * totals[i]
    assert np.all(ema[500:] <= ema[:-500])
