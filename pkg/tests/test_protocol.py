import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fermi_mushroom.protocol import (TAN_2P3_DEG, BreathingCircle, ProtocolError, RectangleCycle,
                                     SinusoidalCycle, StaticProtocol, reference_rectangle, reference_sinusoid,
                                     protocol_from_dict)
from fermi_mushroom.geometry import MushroomShape

import oracles


def all_protocols():
    return [reference_sinusoid(), reference_sinusoid(a=-0.5, b=0.5), reference_sinusoid(time_scale=3.0),
            reference_rectangle("anticlockwise"), reference_rectangle("clockwise"),
            SinusoidalCycle(c=0.8, tan_theta=0.0, nu_frequency=1.0)]


def test_tan_2p3_is_computed():
    # sine over cosine from their Taylor series, independent of math.tan
    x = 2.3 * math.pi / 180
    sin = sum((-1) ** k * x ** (2 * k + 1) / math.factorial(2 * k + 1) for k in range(10))
    cos = sum((-1) ** k * x ** (2 * k) / math.factorial(2 * k) for k in range(10))
    assert TAN_2P3_DEG == pytest.approx(sin / cos, rel=1e-14)
    assert round(TAN_2P3_DEG, 5) == 0.04016


def test_sinusoid_shape_at_zero():
    p = SinusoidalCycle(r0=1, h0=1, a=-0.5, b=0.5, c=0.8, tan_theta=0.1111)
    s = p.shape_at(0.0)
    assert (s.r, s.w, s.h) == pytest.approx((1.0, 1.0, 1.0))
    assert p.nu(0.0) == 1.0


def test_sinusoid_printed_law_at_quarter_period():
    # the literal law nu = 1 - c sin^2(t); the pinched tilt is dropped for this check
    p = SinusoidalCycle(r0=1, h0=1, a=-0.5, b=0.5, c=0.8, tan_theta=0.0, nu_frequency=1.0)
    s = p.shape_at(math.pi / 2)
    assert (s.r, s.nu, s.w, s.h) == pytest.approx((0.5, 0.2, 0.1, 1.5))
    assert p.nu(math.pi / 2) == pytest.approx(1 - 0.8)


def test_default_sinusoid_reaches_nu_min_at_half_period():
    p = reference_sinusoid()
    assert p.nu(math.pi) == pytest.approx(0.2)
    assert p.nu(math.pi / 2) == pytest.approx(1 - 0.8 * 0.5)


def test_pinched_shape_is_rejected_at_build_time():
    with pytest.raises(ProtocolError, match="w ≥ h·tanθ"):
        SinusoidalCycle(r0=1, h0=1, a=-0.5, b=0.5, c=0.8, tan_theta=0.1111, nu_frequency=1.0)


def test_rectangle_anticlockwise_starts_at_w1_h1():
    p = reference_rectangle("anticlockwise")
    s = p.shape_at(0.0)
    assert (s.w, s.h) == (1.0, 6.0)


@pytest.mark.parametrize("p", all_protocols(), ids=lambda p: p.kind)
def test_periodicity(p):
    rng = np.random.default_rng(0)
    t = rng.uniform(0, p.period, 1000)
    a = np.array(p.laws(t)[:3])
    b = np.array(p.laws(t + p.period)[:3])
    assert np.max(np.abs(a - b)) < 1e-12


@pytest.mark.parametrize("p", all_protocols(), ids=lambda p: p.kind)
def test_derivatives_match_finite_differences(p):
    rng = np.random.default_rng(1)
    t = rng.uniform(0, p.period, 1000)
    bp = np.asarray(p.breakpoints())
    # keep away from junctions of piecewise laws
    t = t[np.min(np.abs(t[:, None] - bp[None, :]), axis=1) > 1e-4 * p.period]
    eps = 1e-6 * p.period
    hi = np.array(p.laws(t + eps)[:3])
    lo = np.array(p.laws(t - eps)[:3])
    fd = (hi - lo) / (2 * eps)
    exact = np.array(np.broadcast_arrays(*p.laws(t))[3:])
    scale = np.max(np.abs(exact)) + 1e-300
    assert np.max(np.abs(fd - exact)) / scale < 1e-6


def test_sinusoid_wall_velocity_at_zero():
    p = SinusoidalCycle(a=0.5, b=-0.5, time_scale=2.0)
    dr, dw, dh = p.wall_velocities(0.0)
    assert dr == pytest.approx(0.5 / 2.0)
    assert p.d_nu(0.0) == 0.0


def test_rectangle_leg_one_moves_only_w():
    p = reference_rectangle("anticlockwise")
    dr, dw, dh = p.wall_velocities(p.period / 8 * 0.7)
    assert dr == 0 and dh == 0 and dw < 0


def test_rectangle_velocity_vanishes_at_corners():
    p = reference_rectangle("anticlockwise")
    for k in range(4):
        assert p.wall_velocities(k * p.period / 4) == (0.0, 0.0, 0.0)


def test_rectangle_d_nu_is_dw_over_r():
    p = RectangleCycle(r=2.0, w0=0.3, w1=1.5, h0=2, h1=6, tan_theta=0.01, period=10.0)
    t = np.linspace(0, 10, 101)
    _, _, _, _, dw, _ = p.laws(t)
    assert np.allclose(p.d_nu(t), dw / 2.0)


def test_rectangle_w_traverses_range_twice():
    p = reference_rectangle("clockwise")
    t = np.linspace(0, p.period, 80001)
    w = p.laws(t)[1]
    monotone_runs = np.sum(np.diff(np.sign(np.diff(w))[np.abs(np.diff(w)) > 1e-14]) != 0)
    assert w.min() == pytest.approx(0.3) and w.max() == pytest.approx(1.0)
    assert monotone_runs == 1  # one decrease then one increase


@pytest.mark.parametrize("p", all_protocols(), ids=lambda p: p.kind)
def test_nu_maximal_at_zero(p):
    t = np.linspace(0, p.period, 10001)
    assert np.all(p.nu(t) <= p.nu(0.0) + 1e-15)


def test_sinusoid_release_is_reflection():
    p = reference_sinusoid()
    t = np.linspace(0.01, math.pi - 0.01, 50)
    assert np.allclose(p.release_time(t), 2 * math.pi - t, atol=1e-12)


def test_release_identity_where_nu_increases():
    p = reference_sinusoid()
    t = np.linspace(math.pi + 0.01, 2 * math.pi - 0.01, 20)
    assert np.array_equal(p.release_time(t), t)


@pytest.mark.parametrize("direction", ["anticlockwise", "clockwise"])
def test_rectangle_release_matches_bisection(direction):
    p = reference_rectangle(direction)
    a, b = p.capture_intervals()[0]
    for t in np.linspace(a, b, 23)[1:-1]:
        tr = p.release_time(t)
        assert tr == pytest.approx(oracles.rectangle_release_by_bisection(p, t), abs=1e-9 * p.period)
        assert abs(p.nu(tr) - p.nu(t)) < 1e-10


@pytest.mark.parametrize("p", all_protocols(), ids=lambda p: p.kind)
def test_release_properties(p):
    for a, b in p.capture_intervals():
        t = np.linspace(a, b, 101)[1:-1]
        tr = p.release_time(t)
        assert np.all(tr >= t) and np.all(tr <= t + p.period)
        assert np.max(np.abs(p.nu(tr) - p.nu(t))) < 1e-10


def test_generic_release_agrees_with_closed_form():
    p = reference_sinusoid()
    t = np.linspace(0.1, 3.0, 15)
    generic = np.array([p._release_scalar(float(s)) for s in t])
    assert np.allclose(generic, p.release_time(t), atol=1e-10)


def test_capture_intervals():
    assert reference_sinusoid().capture_intervals() == [(0.0, pytest.approx(math.pi))]
    assert len(SinusoidalCycle(c=0.8, tan_theta=0.0, nu_frequency=1.0).capture_intervals()) == 2
    assert reference_sinusoid(c=0.0).capture_intervals() == []
    L = reference_rectangle("clockwise").period / 4
    assert reference_rectangle("clockwise").capture_intervals() == [(L, 2 * L)]


def test_rectangle_default_period_keeps_walls_slow():
    e0 = 1e6
    p = reference_rectangle("anticlockwise", e0=e0)
    assert p.max_wall_speed(20001) / math.sqrt(2 * e0) <= 1e-3 * (1 + 1e-9)


@pytest.mark.parametrize("p", all_protocols(), ids=lambda p: p.kind)
def test_reversal_round_trip(p):
    back = p.reversed().reversed()
    assert back.to_dict() == p.to_dict()


@pytest.mark.parametrize("p", all_protocols(), ids=lambda p: p.kind)
def test_json_round_trip(p):
    q = protocol_from_dict(p.to_dict())
    t = np.linspace(0, p.period, 17)
    assert np.allclose(np.array(q.laws(t)[:3]), np.array(p.laws(t)[:3]))


@pytest.mark.parametrize("doc, message", [
    ({"kind": "ellipse"}, "unknown protocol kind"),
    ({"kind": "sinusoidal", "r0": 1}, "missing fields"),
    ({"kind": "rectangle", "r": 1, "w0": 0.3, "w1": 1, "h0": 2, "h1": 6, "direction": "up", "period": 1},
     "direction"),
    ({"kind": "rectangle", "r": 1, "w0": 0.3, "w1": 1.5, "h0": 2, "h1": 6, "period": 1}, "w ≤ r"),
    ([], "object"),
])
def test_protocol_schema_errors(doc, message):
    with pytest.raises(ProtocolError, match=message):
        protocol_from_dict(doc)


def test_static_and_breathing_kinds():
    s = StaticProtocol(MushroomShape(1, 0.5, 1, 0.0))
    assert s.wall_velocities(0.3) == (0.0, 0.0, 0.0)
    b = BreathingCircle(r0=1.0, a=0.2)
    shape = b.shape_at(math.pi / 2)
    assert (shape.r, shape.w, shape.h) == pytest.approx((1.2, 0.0, 0.0))


@st.composite
def sinusoids(draw):
    r0 = draw(st.floats(0.5, 2.0))
    a = draw(st.floats(-0.45, 0.45)) * r0
    h0 = draw(st.floats(0.5, 3.0))
    b = draw(st.floats(-0.9, 0.9)) * h0
    c = draw(st.floats(0.05, 0.95))
    w_min = (r0 - abs(a)) * (1 - c)
    tan_theta = draw(st.floats(0.0, 0.99)) * w_min / (h0 + abs(b))
    return SinusoidalCycle(r0=r0, h0=h0, a=a, b=b, c=c, tan_theta=tan_theta,
                           time_scale=draw(st.floats(0.5, 3.0)))


@given(sinusoids(), st.floats(0.0, 1.0))
@settings(max_examples=100, deadline=None)
def test_random_sinusoid_release_invariant(p, frac):
    t = frac * p.period / 2
    tr = p.release_time(t)
    assert t <= tr <= t + p.period
    assert abs(p.nu(tr) - p.nu(t)) < 1e-10
