import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from _oracle import reference_render
from conftest import identity_view, random_ldi, random_view
from ldisplat.diffcheck import check_gradients, random_instance, render_kinks
from ldisplat.geometry import Intrinsics, ProjectedPoint, RigidTransform, ViewTransform
from ldisplat.ldi import Ldi
from ldisplat.splat import (
    SplatConfig,
    bilinear_kernel,
    render,
    render_backward,
    splat,
    splat_weight,
)

FULL = SplatConfig(target_downsampling=1.0)


def oracle(ldi, view, cfg):
    th, tw = cfg.target_shape(ldi.height, ldi.width)
    return reference_render(ldi.textures, ldi.disparities, view.source_intrinsics, view.target_intrinsics,
                            view.relative.rotation, view.relative.translation, cfg.tau, cfg.epsilon,
                            cfg.white, th, tw, cfg.target_downsampling)


def point_ldi(color, d):
    return Ldi(np.array(color, float).reshape(1, 1, 1, 3), np.full((1, 1, 1), d))


class TestKernel:
    @pytest.mark.parametrize("a,b,out", [(2.0, 2.0, 1.0), (2.5, 2.0, 0.5), (3.2, 2.0, 0.0)])
    def test_examples(self, a, b, out):
        assert bilinear_kernel(a, b) == out

    def test_weight_examples(self):
        assert splat_weight(ProjectedPoint(3.0, 4.0, 0.0, True), (3, 4), 0.02) == 1.0
        assert splat_weight(ProjectedPoint(3.5, 4.0, 0.0, True), (3, 4), 0.02) == 0.5
        assert splat_weight(ProjectedPoint(3.0, 4.0, 0.5, True), (3, 4), 0.02) == pytest.approx(math.exp(25))
        assert splat_weight(ProjectedPoint(3.0, 4.0, 0.5, False), (3, 4), 0.02) == 0.0

    @given(st.floats(0, 100), st.floats(0, 100))
    def test_partition_of_unity(self, x, y):
        x0, y0 = math.floor(x), math.floor(y)
        total = sum(bilinear_kernel(x, px) * bilinear_kernel(y, py)
                    for px in (x0, x0 + 1) for py in (y0, y0 + 1))
        assert total == pytest.approx(1.0, abs=1e-12)


class TestForward:
    def test_config_validation(self):
        for bad in (dict(tau=0), dict(epsilon=0), dict(target_downsampling=0), dict(target_downsampling=1.5)):
            with pytest.raises(ValueError):
                SplatConfig(**bad)

    def test_non_integral_target(self, rng):
        with pytest.raises(ValueError):
            render(random_ldi(rng, size=7), identity_view(7), SplatConfig(target_downsampling=0.5))

    def test_uncovered_pixels_are_white(self, rng):
        # a lateral shift of 3 pixels leaves the leftmost columns empty
        view = ViewTransform(Intrinsics(8, 8, 3.5, 3.5), Intrinsics(8, 8, 3.5, 3.5),
                             RigidTransform(translation=np.array([3.0 / 8 / 0.6, 0, 0])))
        ldi = Ldi(rng.uniform(0, 0.5, (1, 8, 8, 3)), np.full((1, 8, 8), 0.6))
        img = render(ldi, view, FULL)
        assert np.array_equal(img[:, :3], np.ones((8, 3, 3)))
        assert img[:, 4:].max() < 0.6

    def test_single_point(self):
        c = np.array([0.2, 0.4, 0.6])
        img = render(point_ldi(c, 0.0), identity_view(1), FULL)
        assert img.shape == (1, 1, 3)
        assert np.allclose(img[0, 0], (c + 1e-8) / (1 + 1e-8), atol=1e-15)
        assert np.abs(img[0, 0] - c).max() < 1e-7

    def test_identity_reproduces_texture(self, rng):
        ldi = random_ldi(rng, size=12, n_layers=1)
        img = render(ldi, identity_view(12), FULL)
        assert np.abs(img - ldi.textures[0]).max() < 1e-6

    def test_single_layer_mode(self, rng):
        ldi = random_ldi(rng, size=8)
        one = Ldi(ldi.textures[1:], ldi.disparities[1:])
        view = random_view(rng)
        assert np.array_equal(render(ldi, view, FULL, layer=1), render(one, view, FULL))
        with pytest.raises(ValueError):
            render(ldi, view, FULL, layer=2)

    def test_deterministic(self, rng):
        ldi, view = random_ldi(rng, size=16), random_view(rng, size=16)
        assert np.array_equal(render(ldi, view), render(ldi, view))

    def test_buffers(self, rng):
        t = splat(random_ldi(rng, size=8), random_view(rng), FULL)
        assert (t.denominator >= 0).all() and np.isfinite(t.image).all()

    @pytest.mark.parametrize("gap", [0.05, 0.2, 0.6])
    def test_hard_zbuffer_limit(self, gap):
        d1, d2 = 0.7, 0.7 - gap
        c1, c2 = np.array([0.1, 0.8, 0.3]), np.array([0.9, 0.2, 0.5])
        # two layers at one pixel, both landing exactly on target pixel (0, 0)
        ldi = Ldi(np.stack([c1, c2]).reshape(2, 1, 1, 3), np.array([d1, d2]).reshape(2, 1, 1))
        img = render(ldi, identity_view(1), SplatConfig(tau=gap / 20, target_downsampling=1.0))
        assert np.abs(img[0, 0] - c1).max() <= 1e-8
        coarse = render(ldi, identity_view(1), SplatConfig(tau=10.0, target_downsampling=1.0))
        assert np.abs(coarse[0, 0] - c1).max() > 0.1

    def test_no_overflow_at_small_tau(self, rng):
        ldi = random_ldi(rng, size=8, lo=0.8, hi=1.0)
        img = render(ldi, random_view(rng), SplatConfig(tau=1e-4, target_downsampling=1.0))
        assert np.isfinite(img).all()

    @given(st.floats(-30, 30))
    def test_offset_invariance(self, offset):
        ldi = random_ldi(np.random.default_rng(5), size=6)
        view = random_view(np.random.default_rng(6), size=6)
        t = splat(ldi, view, FULL)
        w = np.exp(t.dt / FULL.tau - 30)
        assert np.allclose(_manual(t, w), _manual(t, w * math.exp(offset)), rtol=0, atol=1e-12)

    def test_stabilized_matches_explicit_weights(self, rng):
        ldi, view = random_ldi(rng), random_view(rng)
        cfg = SplatConfig(epsilon=1e-300, target_downsampling=1.0)
        t = splat(ldi, view, cfg)
        assert np.allclose(_manual(t, np.exp(t.dt / cfg.tau)), t.image, rtol=0, atol=1e-12)


def _manual(t, point_weights):
    """Normalized render from explicit point weights with epsilon = 0."""
    th, tw = t.image.shape[:2]
    num = np.zeros((th, tw, 3))
    den = np.zeros((th, tw))
    for k in np.flatnonzero(t.valid):
        x, y = t.xt[k], t.yt[k]
        for py in (math.floor(y), math.floor(y) + 1):
            for px in (math.floor(x), math.floor(x) + 1):
                if 0 <= px < tw and 0 <= py < th:
                    b = bilinear_kernel(x, px) * bilinear_kernel(y, py)
                    num[py, px] += point_weights[k] * b * t.colors[k]
                    den[py, px] += point_weights[k] * b
    out = np.ones((th, tw, 3))
    hit = den > 0
    out[hit] = num[hit] / den[hit][:, None]
    return out


class TestOracle:
    @pytest.mark.parametrize("size,ds,layers", [(8, 1.0, 2), (16, 0.5, 2), (12, 1.0, 3), (32, 0.5, 2)])
    def test_matches_reference(self, rng, size, ds, layers):
        ldi = random_ldi(rng, size=size, n_layers=layers)
        view = random_view(rng, size=size)
        cfg = SplatConfig(target_downsampling=ds)
        assert np.abs(render(ldi, view, cfg) - oracle(ldi, view, cfg)).max() <= 1e-6

    def test_matches_reference_single_layer(self, rng):
        ldi = random_ldi(rng, size=10)
        view = random_view(rng, size=10)
        one = Ldi(ldi.textures[:1], ldi.disparities[:1])
        assert np.abs(render(ldi, view, FULL, layer=0) - oracle(one, view, FULL)).max() <= 1e-6


class TestBackward:
    def test_zero_upstream(self, rng):
        ldi, view = random_ldi(rng), random_view(rng)
        g_tex, g_disp = render_backward(ldi, view, FULL, None, np.zeros((8, 8, 3)))
        assert not g_tex.any() and not g_disp.any()

    def test_texture_formula(self, rng):
        ldi, view = random_ldi(rng), random_view(rng)
        up = rng.normal(size=(8, 8, 3))
        g_tex, _ = render_backward(ldi, view, FULL, None, up)
        t = splat(ldi, view, FULL)
        weights = np.exp(t.dt / FULL.tau)
        full_den = t.denominator * np.exp(t.max_exponent)  # includes epsilon
        expected = np.zeros_like(t.colors)
        for k in np.flatnonzero(t.valid):
            x, y = t.xt[k], t.yt[k]
            for py in (math.floor(y), math.floor(y) + 1):
                for px in (math.floor(x), math.floor(x) + 1):
                    if 0 <= px < 8 and 0 <= py < 8:
                        w = weights[k] * bilinear_kernel(x, px) * bilinear_kernel(y, py)
                        expected[k] += up[py, px] * w / full_den[py, px]
        assert np.allclose(g_tex.reshape(-1, 3), expected, rtol=1e-9, atol=1e-12)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            render_backward(random_ldi(rng), random_view(rng), FULL, None, np.zeros((4, 4, 3)))

    @pytest.mark.parametrize("layer", [None, 1])
    @pytest.mark.parametrize("seed", [0, 1])
    def test_matches_finite_differences(self, layer, seed):
        ldi, _, views, cfg = random_instance(seed)
        view = views[0][1]
        up = np.random.default_rng(seed).normal(size=(8, 8, 3)) / 192

        def f(x):
            return float(np.sum(up * render(x, view, cfg, layer)))

        def grad(x):
            g_tex, g_disp = render_backward(x, view, cfg, layer, up)
            return {"textures": g_tex, "disparities": g_disp}

        report = check_gradients(f, grad, ldi, kinks=lambda x: render_kinks(x, view, cfg), n_probes=60, order=4)
        assert report.passed, report.table()

    def test_unselected_layer_has_zero_gradient(self, rng):
        ldi, view = random_ldi(rng), random_view(rng)
        g_tex, g_disp = render_backward(ldi, view, FULL, 0, rng.normal(size=(8, 8, 3)))
        assert not g_tex[1].any() and not g_disp[1].any()
