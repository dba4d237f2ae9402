from functools import lru_cache

import numpy as np
import pytest
from hypothesis import settings

from ldisplat.geometry import Intrinsics, RigidTransform, ViewTransform, rotation_from_euler
from ldisplat.ldi import Ldi

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

ACCEPTANCE = {}


def random_ldi(rng, size=8, n_layers=2, lo=0.3, hi=0.9):
    tex = rng.uniform(0, 1, (n_layers, size, size, 3))
    disp = -np.sort(-rng.uniform(lo, hi, (n_layers, size, size)), axis=0)
    return Ldi(tex, disp, 1.0)


def random_view(rng, size=8, rot=0.05, trans=0.15):
    k = Intrinsics(float(size), float(size), (size - 1) / 2, (size - 1) / 2)
    rel = RigidTransform(rotation_from_euler(*rng.uniform(-rot, rot, 3)), rng.uniform(-trans, trans, 3))
    return ViewTransform(k, k, rel)


def identity_view(size):
    k = Intrinsics(float(size), float(size), (size - 1) / 2, (size - 1) / 2)
    return ViewTransform(k, k, RigidTransform())


@lru_cache(maxsize=None)
def one_sprite_bundle(seed, size=64):
    from ldisplat.bundle import make_bundle

    return make_bundle(seed, 1, 1, 8, size, size)


@lru_cache(maxsize=None)
def default_fit(seed):
    """Default-config fit on a one-sprite 64x64 bundle; shared by several tests."""
    from ldisplat.fitter import FitConfig, fit

    bundle = one_sprite_bundle(seed)
    return fit(bundle.source_image, bundle.views(), FitConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def acceptance():
    """Record one pass/fail line for an acceptance criterion."""

    def record(key, passed, detail):
        line = f"{key} {'PASS' if passed else 'FAIL'}: {detail}"
        ACCEPTANCE[key] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
