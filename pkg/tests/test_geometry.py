import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fermi_mushroom.geometry import (MushroomShape, Region, ShapeError, area, bounding_box, contains,
                                     delta, delta_prime, region_codes, volumes)

import oracles

TAN_23 = math.tan(math.radians(2.3))

# 4e7-sample Monte-Carlo phase volumes (oracles.mc_phase_volumes, seed 12345): estimate, std error
MC_VOLUMES_TAN23 = {"v_cap": (9.867219, 0.00262), "v_stem": (6.530185, 0.002256),
                    "v_ell": (6.157684, 0.002204), "v_cha": (10.239719, 0.002651)}
# 4e7-sample rejection area (oracles.mc_area, seed 3) for tan_theta = 0.040158
MC_AREA_0040158 = (2.6107578, 0.00047033)
# 1e7-sample island fraction at nu = 0.5 (oracles.mc_island_fraction, seed 7)
MC_DELTA_HALF = (0.3910511, 0.00018574)


def shapes():
    @st.composite
    def build(draw):
        r = draw(st.floats(0.2, 3.0))
        w = draw(st.floats(0.0, 1.0)) * r
        h = draw(st.floats(0.0, 5.0))
        tan_max = w / h if h > 0 else 1.0
        tan_theta = draw(st.floats(0.0, 1.0)) * min(tan_max, 1.0)
        return MushroomShape(r, w, h, tan_theta)
    return build()


def test_delta_endpoints():
    assert delta(0.0) == pytest.approx(1.0, abs=1e-15)
    assert delta(1.0) == 0.0


def test_delta_half_matches_monte_carlo():
    est, err = MC_DELTA_HALF
    assert round(delta(0.5), 3) == round(est, 3)
    assert abs(delta(0.5) - est) < 3 * err


@pytest.mark.parametrize("bad", [-1e-9, 1.0 + 1e-9, float("nan")])
def test_delta_domain_error(bad):
    with pytest.raises(ValueError):
        delta(bad)
    with pytest.raises(ValueError):
        delta_prime(bad)


def test_delta_vectorised():
    nu = np.linspace(0, 1, 11)
    out = delta(nu)
    assert out.shape == nu.shape
    assert np.all(np.diff(out) < 0)


def test_delta_prime_matches_finite_differences():
    rng = np.random.default_rng(0)
    nu = rng.uniform(0.01, 0.99, 100)
    eps = 1e-6
    fd = (delta(nu + eps) - delta(nu - eps)) / (2 * eps)
    assert np.max(np.abs(fd - delta_prime(nu))) < 1e-6


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_delta_bounded_and_decreasing(a, b):
    da, db = delta(a), delta(b)
    assert 0.0 <= da <= 1.0
    if a < b:
        assert da > db or (b - a) < 1e-12


def test_volumes_hole_spans_cap():
    v = volumes(MushroomShape(1, 1, 1, 0))
    assert v.v_ell == 0.0
    assert v.v_cap == pytest.approx(math.pi**2)
    assert v.v_stem == pytest.approx(4 * math.pi)


def test_volumes_closed_hole():
    v = volumes(MushroomShape(1, 0, 1, 0))
    assert v.v_ell == pytest.approx(math.pi**2)
    assert v.v_stem == 0.0


def test_volumes_match_monte_carlo_oracle():
    v = volumes(MushroomShape(1.0, 0.3, 2.0, TAN_23)).to_dict()
    for key, (est, err) in MC_VOLUMES_TAN23.items():
        assert abs(v[key] / est - 1) < 1e-3, key
        assert abs(v[key] - est) < 3 * err, key


def test_island_volume_random_shapes_monte_carlo():
    rng = np.random.default_rng(2024)
    for i in range(20):
        r = rng.uniform(0.5, 2.0)
        w = rng.uniform(0.05, 0.95) * r
        h = rng.uniform(0.2, 3.0)
        tan_theta = rng.uniform(0.0, 1.0) * min(w / h, 0.3)
        est = oracles.mc_phase_volumes(r, w, h, tan_theta, n=400_000, seed=i)
        v = volumes(MushroomShape(r, w, h, tan_theta)).to_dict()
        for key in ("cap", "stem", "ell", "cha"):
            mc, err = est[key]
            assert abs(v["v_" + key] - mc) < 3 * err, (i, key)


@given(shapes())
@settings(max_examples=200)
def test_cap_plus_stem_is_area(shape):
    v = volumes(shape)
    assert v.v_cap + v.v_stem == pytest.approx(2 * math.pi * area(shape), rel=1e-13, abs=1e-13)
    assert 0 <= v.v_ell <= v.v_cap * (1 + 1e-15)
    # a closed hole leaves no chaotic component; a nearly closed one a tiny one
    assert v.v_cha >= 0
    if shape.w > 1e-6 * shape.r:
        assert v.v_cha > 0


def test_area_examples():
    assert area(MushroomShape(1, 0.5, 1, 0)) == pytest.approx(math.pi / 2 + 1)
    assert area(MushroomShape(1, 0, 0, 0.3)) == pytest.approx(math.pi / 2)


def test_area_matches_rejection_sampling():
    est, err = MC_AREA_0040158
    a = area(MushroomShape(1, 0.3, 2, 0.040158))
    assert abs(a / est - 1) < 1e-3
    assert abs(a - est) < 3 * err


def test_contains_examples():
    s = MushroomShape(1.0, 0.3, 2.0, TAN_23)
    assert contains(s, (0.0, 0.5)) is Region.CAP
    assert contains(s, (0.0, -s.h - 0.001)) is Region.OUTSIDE
    assert contains(s, (s.w + (-s.h / 2) * s.tan_theta - 1e-9, -s.h / 2)) is Region.STEM
    assert contains(s, (s.w + (-s.h / 2) * s.tan_theta + 1e-9, -s.h / 2)) is Region.OUTSIDE


def test_shared_segment_belongs_to_cap():
    s = MushroomShape(1.0, 0.3, 2.0, 0.0)
    assert contains(s, (0.1, 0.0)) is Region.CAP
    assert contains(s, (0.5, 0.0)) is Region.CAP
    assert contains(s, (0.5, -1e-12)) is Region.OUTSIDE


def test_contains_consistent_with_area():
    s = MushroomShape(1.0, 0.4, 1.5, 0.1)
    rng = np.random.default_rng(1)
    xmin, xmax, ymin, ymax = bounding_box(s)
    n = 1_000_000
    x = rng.uniform(xmin, xmax, n)
    y = rng.uniform(ymin, ymax, n)
    frac = np.mean(region_codes(s, x, y) >= 0)
    box = (xmax - xmin) * (ymax - ymin)
    expected = area(s) / box
    assert abs(frac - expected) < 4 * math.sqrt(expected * (1 - expected) / n)


@pytest.mark.parametrize("args, message", [
    ((1, 2, 1, 0), "w ≤ r violated"),
    ((0, 0, 1, 0), "r > 0 violated"),
    ((1, 0.5, -1, 0), "h ≥ 0 violated"),
    ((1, -0.1, 1, 0), "w ≥ 0 violated"),
    ((1, 0.1, 2, 0.1), "w ≥ h·tanθ violated"),
])
def test_invalid_shapes_name_the_invariant(args, message):
    with pytest.raises(ShapeError, match=message):
        MushroomShape(*args)
