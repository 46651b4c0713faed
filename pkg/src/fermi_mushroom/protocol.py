"""Time-periodic laws for the mushroom parameters.

A protocol maps time to a frozen :class:`MushroomShape` together with exact
first derivatives of ``r``, ``w`` and ``h``; ``tan_theta`` is fixed.  All
built-in protocols put the maximum of ``nu = w/r`` at ``t = 0``.

Protocols that the event-driven simulator can run also expose
:meth:`Protocol.kernel_spec`, a flat parameter vector understood by the
compiled dynamics kernel.
"""
from __future__ import annotations

import abc
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .geometry import MushroomShape, ShapeError, check_shape

TAN_2P3_DEG = math.tan(math.radians(2.3))

# kernel protocol kinds
KIND_STATIC = 0
KIND_RECTANGLE = 1
KIND_SINUSOIDAL = 2


class ProtocolError(ValueError):
    """Raised for malformed protocol configuration."""


@dataclass(frozen=True)
class KernelSpec:
    kind: int
    params: np.ndarray
    tan_theta: float
    # bounds on |r''|, |w''|, |h''| over the whole period
    accel_bounds: np.ndarray
    r_max: float
    period: float


class Protocol(abc.ABC):
    """Base class; subclasses implement :meth:`laws`."""

    period: float
    tan_theta: float
    kind: str = "abstract"

    @abc.abstractmethod
    def laws(self, t):
        """Return ``(r, w, h, dr, dw, dh)`` as arrays broadcast against ``t``."""

    def to_dict(self) -> dict:
        raise NotImplementedError

    def kernel_spec(self) -> KernelSpec:
        raise NotImplementedError(f"{type(self).__name__} cannot be simulated by the kernel")

    def breakpoints(self) -> np.ndarray:
        """Times in ``[0, T]`` where the laws are not smooth (always includes 0 and T)."""
        return np.array([0.0, self.period])

    # -- derived quantities -------------------------------------------------

    def shape_at(self, t: float) -> MushroomShape:
        r, w, h, *_ = self.laws(float(t))
        return MushroomShape(float(r), float(w), float(h), self.tan_theta)

    def wall_velocities(self, t: float):
        _, _, _, dr, dw, dh = self.laws(float(t))
        return float(dr), float(dw), float(dh)

    def nu(self, t):
        r, w, *_ = self.laws(t)
        return w / r

    def d_nu(self, t):
        r, w, _, dr, dw, _ = self.laws(t)
        return (r * dw - w * dr) / r**2

    def sample_times(self, n: int = 4001) -> np.ndarray:
        grid = np.linspace(0.0, self.period, n)
        return np.union1d(grid, self.breakpoints())

    def validate(self, n: int = 4001):
        if not (self.period > 0 and math.isfinite(self.period)):
            raise ProtocolError(f"period must be positive (got {self.period})")
        t = self.sample_times(n)
        r, w, h, *_ = self.laws(t)
        r, w, h = np.broadcast_arrays(r, w, h)
        for ti, ri, wi, hi in zip(t, r, w, h):
            try:
                check_shape(float(ri), float(wi), float(hi), self.tan_theta)
            except ShapeError as exc:
                raise ProtocolError(f"shape at t={ti:.6g} invalid: {exc}") from exc

    def max_wall_speed(self, n: int = 4001) -> float:
        """Largest normal speed of any wall over one period."""
        t = self.sample_times(n)
        _, _, _, dr, dw, dh = np.broadcast_arrays(*self.laws(t))
        cos_t = 1.0 / math.sqrt(1.0 + self.tan_theta**2)
        return float(max(np.max(np.abs(dr)), np.max(np.abs(dw)) * cos_t, np.max(np.abs(dh))))

    def capture_intervals(self, n: int = 8192):
        """Maximal time intervals in ``[0, T]`` on which ``nu`` decreases.

        Generic version: sign of ``d_nu`` on a grid, endpoints refined by
        root finding where ``d_nu`` changes sign.
        """
        t = self.sample_times(n)
        dn = np.broadcast_to(self.d_nu(t), t.shape)
        scale = max(float(np.max(np.abs(dn))), 1e-300)
        neg = dn < -1e-12 * scale
        out = []
        i = 0
        while i < len(t):
            if not neg[i]:
                i += 1
                continue
            j = i
            while j + 1 < len(t) and neg[j + 1]:
                j += 1
            ta = t[i - 1] if i > 0 else t[0]
            tb = t[j + 1] if j + 1 < len(t) else t[-1]
            f = lambda s: float(self.d_nu(s))
            if i > 0 and f(t[i - 1]) > 0:
                ta = brentq(f, t[i - 1], t[i], xtol=1e-14)
            if j + 1 < len(t) and f(t[j + 1]) > 0:
                tb = brentq(f, t[j], t[j + 1], xtol=1e-14)
            out.append((float(ta), float(tb)))
            i = j + 1
        return out

    def release_time(self, t):
        """``t_r(t) = inf{t' > t : nu(t') >= nu(t)}``, vectorised over ``t``."""
        t_arr = np.asarray(t, dtype=float)
        out = np.array([self._release_scalar(float(s)) for s in t_arr.ravel()])
        return float(out[0]) if t_arr.ndim == 0 else out.reshape(t_arr.shape)

    def _release_scalar(self, t: float, n: int = 4096) -> float:
        if float(self.d_nu(t)) >= 0:
            return t
        level = float(self.nu(t))
        grid = t + self.period * np.arange(1, n + 1) / n
        vals = np.broadcast_to(self.nu(grid), grid.shape) - level
        hits = np.nonzero(vals >= 0)[0]
        if hits.size == 0:
            return t + self.period
        k = hits[0]
        lo = grid[k - 1] if k > 0 else t + 1e-15 * max(1.0, abs(t))
        hi = grid[k]
        if vals[k] == 0:
            return float(hi)
        return brentq(lambda s: float(self.nu(s)) - level, lo, hi, xtol=1e-14, rtol=1e-15)

    def reversed(self) -> "Protocol":
        """The same closed loop in parameter space traversed in the opposite direction."""
        raise NotImplementedError


def _bang_bang(x):
    """Position and slope of the unit bang-bang profile on ``[0, 1]``."""
    x = np.clip(x, 0.0, 1.0)
    first = x < 0.5
    pos = np.where(first, 2 * x * x, 1 - 2 * (1 - x) ** 2)
    slope = np.where(first, 4 * x, 4 * (1 - x))
    return pos, slope


def _bang_bang_inverse(y):
    y = np.clip(y, 0.0, 1.0)
    return np.where(y <= 0.5, np.sqrt(y / 2), 1 - np.sqrt((1 - y) / 2))


class RectangleCycle(Protocol):
    """Fixed cap, ``(w, h)`` moving around a rectangle in four legs of ``T/4``.

    Anticlockwise: ``(w1,h1) -> (w0,h1) -> (w0,h0) -> (w1,h0) -> (w1,h1)``;
    clockwise visits the corners in the reverse order.  Each leg uses a
    symmetric bang-bang profile, so wall velocities vanish at the corners.
    """

    kind = "rectangle"

    def __init__(self, r=1.0, w0=0.3, w1=1.0, h0=2.0, h1=6.0, tan_theta=TAN_2P3_DEG,
                 direction="anticlockwise", period=None):
        if direction not in ("anticlockwise", "clockwise"):
            raise ProtocolError(f"direction must be 'anticlockwise' or 'clockwise' (got {direction!r})")
        if not w0 < w1:
            raise ProtocolError(f"w0 < w1 violated (w0={w0}, w1={w1})")
        if not h0 < h1:
            raise ProtocolError(f"h0 < h1 violated (h0={h0}, h1={h1})")
        if period is None:
            raise ProtocolError("rectangle protocol needs a period (see RectangleCycle.default_period)")
        self.r, self.w0, self.w1, self.h0, self.h1 = map(float, (r, w0, w1, h0, h1))
        self.tan_theta = float(tan_theta)
        self.direction = direction
        self.period = float(period)
        self.validate()

    @staticmethod
    def default_period(w0, w1, h0, h1, e0, tan_theta=TAN_2P3_DEG, speed_ratio=1e-3):
        """Period giving ``max wall speed / sqrt(2 e0) == speed_ratio``."""
        cos_t = 1.0 / math.sqrt(1.0 + tan_theta**2)
        # peak bang-bang speed on a leg of length T/4 is 8*span/T
        span = max((w1 - w0) * cos_t, h1 - h0)
        return 8.0 * span / (speed_ratio * math.sqrt(2.0 * e0))

    @property
    def _anticlockwise(self):
        return self.direction == "anticlockwise"

    def _leg_table(self):
        # per leg: (parameter index 0=w 1=h, start, end); the other parameter is held
        w0, w1, h0, h1 = self.w0, self.w1, self.h0, self.h1
        if self._anticlockwise:
            return [(0, w1, w0, h1), (1, h1, h0, w0), (0, w0, w1, h0), (1, h0, h1, w1)]
        return [(1, h1, h0, w1), (0, w1, w0, h0), (1, h0, h1, w0), (0, w0, w1, h1)]

    def laws(self, t):
        t = np.asarray(t, dtype=float)
        T = self.period
        L = T / 4
        tau = np.mod(t, T)
        leg = np.minimum((tau // L).astype(int), 3)
        pos, slope = _bang_bang((tau - leg * L) / L)
        w = np.empty_like(tau)
        h = np.empty_like(tau)
        dw = np.zeros_like(tau)
        dh = np.zeros_like(tau)
        for k, (which, start, end, held) in enumerate(self._leg_table()):
            m = leg == k
            val = start + (end - start) * pos[m]
            rate = (end - start) * slope[m] / L
            if which == 0:
                w[m], dw[m], h[m] = val, rate, held
            else:
                h[m], dh[m], w[m] = val, rate, held
        r = np.full_like(tau, self.r)
        zero = np.zeros_like(tau)
        if t.ndim == 0:
            return (float(r), float(w), float(h), 0.0, float(dw), float(dh))
        return r, w, h, zero, dw, dh

    def breakpoints(self):
        return np.arange(9) * self.period / 8

    def capture_intervals(self, n: int = 0):
        L = self.period / 4
        return [(0.0, L)] if self._anticlockwise else [(L, 2 * L)]

    def release_time(self, t):
        t_arr = np.asarray(t, dtype=float)
        T, L = self.period, self.period / 4
        base = np.floor(t_arr / T) * T
        tau = t_arr - base
        ta = 0.0 if self._anticlockwise else L
        inside = (tau >= ta) & (tau <= ta + L) & (self.d_nu(t_arr) <= 0)
        y, _ = _bang_bang((tau - ta) / L)
        release = base + ta + 2 * L + L * _bang_bang_inverse(1 - y)
        out = np.where(inside, release, t_arr)
        return float(out) if t_arr.ndim == 0 else out

    def kernel_spec(self):
        L = self.period / 4
        params = np.array([self.r, self.w0, self.w1, self.h0, self.h1, self.period,
                           1.0 if self._anticlockwise else -1.0])
        accel = np.array([0.0, 4 * (self.w1 - self.w0) / L**2, 4 * (self.h1 - self.h0) / L**2])
        return KernelSpec(KIND_RECTANGLE, params, self.tan_theta, accel, self.r, self.period)

    def reversed(self):
        d = self.to_dict()
        d["direction"] = "clockwise" if self._anticlockwise else "anticlockwise"
        return protocol_from_dict(d)

    def to_dict(self):
        return {"kind": "rectangle", "r": self.r, "w0": self.w0, "w1": self.w1,
                "h0": self.h0, "h1": self.h1, "tan_theta": self.tan_theta,
                "direction": self.direction, "period": self.period}


class SinusoidalCycle(Protocol):
    """``r = r0 + a sin(t/s)``, ``h = h0 + b sin(t/s)``, ``w = r*nu`` with
    ``nu = 1 - c sin^2(k t/s)`` and period ``T = 2 pi s``.

    ``nu_frequency`` is ``k``.  With the default ``k = 1/2``, ``nu`` decreases
    on ``(0, pi s)`` and the release time is ``2 pi s - t``; ``k = 1`` gives
    two capture intervals per period.
    """

    kind = "sinusoidal"

    def __init__(self, r0=1.0, h0=1.0, a=0.5, b=-0.5, c=0.8, tan_theta=0.1111,
                 time_scale=1.0, nu_frequency=0.5):
        if not 0 <= c <= 1:
            raise ProtocolError(f"0 ≤ c ≤ 1 violated (c={c})")
        if time_scale <= 0:
            raise ProtocolError(f"time_scale > 0 violated (time_scale={time_scale})")
        if nu_frequency not in (0.5, 1.0):
            raise ProtocolError(f"nu_frequency must be 0.5 or 1 (got {nu_frequency})")
        self.r0, self.h0, self.a, self.b, self.c = map(float, (r0, h0, a, b, c))
        self.tan_theta = float(tan_theta)
        self.time_scale = float(time_scale)
        self.nu_frequency = float(nu_frequency)
        self.period = 2 * math.pi * self.time_scale
        self.validate()

    def laws(self, t):
        t = np.asarray(t, dtype=float)
        s, k = self.time_scale, self.nu_frequency
        tau = t / s
        S, C = np.sin(tau), np.cos(tau)
        r = self.r0 + self.a * S
        dr = self.a * C / s
        h = self.h0 + self.b * S
        dh = self.b * C / s
        sk = np.sin(k * tau)
        nu = 1.0 - self.c * sk**2
        dnu = -self.c * k * np.sin(2 * k * tau) / s
        w = r * nu
        dw = dr * nu + r * dnu
        if t.ndim == 0:
            return tuple(float(v) for v in (r, w, h, dr, dw, dh))
        return r, w, h, dr, dw, dh

    def nu(self, t):
        return 1.0 - self.c * np.sin(self.nu_frequency * np.asarray(t, dtype=float) / self.time_scale) ** 2

    def d_nu(self, t):
        k, s = self.nu_frequency, self.time_scale
        return -self.c * k * np.sin(2 * k * np.asarray(t, dtype=float) / s) / s

    def capture_intervals(self, n: int = 0):
        if self.c == 0:
            return []
        k, s = self.nu_frequency, self.time_scale
        step = math.pi / k
        return [(m * step * s, (m + 0.5) * step * s) for m in range(int(round(2 * k)))]

    def release_time(self, t):
        t_arr = np.asarray(t, dtype=float)
        k, s = self.nu_frequency, self.time_scale
        if self.c == 0:
            return float(t_arr) if t_arr.ndim == 0 else t_arr.copy()
        tau = t_arr / s
        step = math.pi / k
        m = np.floor(tau / step)
        phase = tau - m * step
        inside = phase <= 0.5 * step
        release = ((2 * m + 1) * step - tau) * s
        out = np.where(inside, release, t_arr)
        return float(out) if t_arr.ndim == 0 else out

    def kernel_spec(self):
        s, k, c, a = self.time_scale, self.nu_frequency, self.c, self.a
        params = np.array([self.r0, a, self.h0, self.b, 1.0, c, s, k])
        nu_abs = max(1.0, abs(1.0 - c))
        acc_w = (abs(a) * nu_abs + 2 * abs(a) * c * k + (self.r0 + abs(a)) * 2 * c * k * k) / s**2
        accel = np.array([abs(a) / s**2, acc_w, abs(self.b) / s**2])
        return KernelSpec(KIND_SINUSOIDAL, params, self.tan_theta, accel,
                          self.r0 + abs(a), self.period)

    def reversed(self):
        d = self.to_dict()
        d["a"], d["b"] = -self.a, -self.b
        return protocol_from_dict(d)

    def to_dict(self):
        return {"kind": "sinusoidal", "r0": self.r0, "h0": self.h0, "a": self.a, "b": self.b,
                "c": self.c, "tan_theta": self.tan_theta, "time_scale": self.time_scale,
                "nu_frequency": self.nu_frequency}


class StaticProtocol(Protocol):
    """A frozen mushroom regarded as a periodic protocol."""

    kind = "static"

    def __init__(self, shape: MushroomShape, period: float = 1.0):
        self.shape = shape
        self.tan_theta = shape.tan_theta
        self.period = float(period)
        self.validate(n=3)

    def laws(self, t):
        t = np.asarray(t, dtype=float)
        sh = self.shape
        if t.ndim == 0:
            return sh.r, sh.w, sh.h, 0.0, 0.0, 0.0
        z = np.zeros_like(t)
        return z + sh.r, z + sh.w, z + sh.h, z, z.copy(), z.copy()

    def capture_intervals(self, n: int = 0):
        return []

    def release_time(self, t):
        t_arr = np.asarray(t, dtype=float)
        return float(t_arr) if t_arr.ndim == 0 else t_arr.copy()

    def kernel_spec(self):
        sh = self.shape
        params = np.array([sh.r, 0.0, sh.h, 0.0, sh.w / sh.r, 0.0, 1.0, 0.5])
        return KernelSpec(KIND_STATIC, params, sh.tan_theta, np.zeros(3), sh.r, self.period)

    def reversed(self):
        return self

    def to_dict(self):
        return {"kind": "static", **self.shape.to_dict(), "period": self.period}


class BreathingCircle(Protocol):
    """Closed cap (``w = h = 0``) whose radius follows ``r0 + a sin(t/s)``."""

    kind = "breathing"

    def __init__(self, r0=1.0, a=0.2, time_scale=1.0):
        self.r0, self.a, self.time_scale = float(r0), float(a), float(time_scale)
        self.tan_theta = 0.0
        self.period = 2 * math.pi * self.time_scale
        self.validate()

    def laws(self, t):
        t = np.asarray(t, dtype=float)
        tau = t / self.time_scale
        r = self.r0 + self.a * np.sin(tau)
        dr = self.a * np.cos(tau) / self.time_scale
        z = np.zeros_like(r)
        if t.ndim == 0:
            return float(r), 0.0, 0.0, float(dr), 0.0, 0.0
        return r, z, z.copy(), dr, z.copy(), z.copy()

    def capture_intervals(self, n: int = 0):
        return []

    def release_time(self, t):
        t_arr = np.asarray(t, dtype=float)
        return float(t_arr) if t_arr.ndim == 0 else t_arr.copy()

    def kernel_spec(self):
        s = self.time_scale
        params = np.array([self.r0, self.a, 0.0, 0.0, 0.0, 0.0, s, 0.5])
        accel = np.array([abs(self.a) / s**2, 0.0, 0.0])
        return KernelSpec(KIND_SINUSOIDAL, params, 0.0, accel, self.r0 + abs(self.a), self.period)

    def to_dict(self):
        return {"kind": "breathing", "r0": self.r0, "a": self.a, "time_scale": self.time_scale}


_REQUIRED = {
    "rectangle": ("w0", "w1", "h0", "h1"),
    "sinusoidal": ("r0", "h0", "a", "b", "c"),
    "static": ("r", "w", "h"),
    "breathing": ("r0", "a"),
}


def protocol_from_dict(d: dict, e0: float | None = None, speed_ratio: float = 1e-3) -> Protocol:
    """Build a protocol from its JSON description.

    A rectangle without ``period`` gets :meth:`RectangleCycle.default_period`
    for the initial energy ``e0``.
    """
    if not isinstance(d, dict) or "kind" not in d:
        raise ProtocolError("protocol description must be an object with a 'kind' field")
    kind = d["kind"]
    if kind not in _REQUIRED:
        raise ProtocolError(f"unknown protocol kind {kind!r}")
    missing = [k for k in _REQUIRED[kind] if k not in d]
    if missing:
        raise ProtocolError(f"{kind} protocol missing fields: {', '.join(missing)}")
    args = {k: v for k, v in d.items() if k != "kind"}
    try:
        if kind == "rectangle":
            if args.get("period") is None:
                if e0 is None:
                    raise ProtocolError("rectangle protocol without period needs an initial energy")
                args["period"] = RectangleCycle.default_period(
                    args["w0"], args["w1"], args["h0"], args["h1"], e0,
                    args.get("tan_theta", TAN_2P3_DEG), speed_ratio)
            return RectangleCycle(**args)
        if kind == "sinusoidal":
            return SinusoidalCycle(**args)
        if kind == "static":
            period = args.pop("period", 1.0)
            return StaticProtocol(MushroomShape(**args), period)
        return BreathingCircle(**args)
    except TypeError as exc:
        raise ProtocolError(str(exc)) from exc
    except ShapeError as exc:
        raise ProtocolError(str(exc)) from exc


def reference_rectangle(direction="anticlockwise", period=None, e0=1e6, speed_ratio=1e-3):
    """The fixed-cap rectangle cycle: r=1, w in [0.3, 1], h in [2, 6], theta = 2.3 deg."""
    if period is None:
        period = RectangleCycle.default_period(0.3, 1.0, 2.0, 6.0, e0, TAN_2P3_DEG, speed_ratio)
    return RectangleCycle(1.0, 0.3, 1.0, 2.0, 6.0, TAN_2P3_DEG, direction, period)


def reference_sinusoid(c=0.8, a=0.5, b=-0.5, time_scale=1.0):
    """The moving-cap cycle with r0 = h0 = 1 and tan(theta) = 0.1111."""
    return SinusoidalCycle(1.0, 1.0, a, b, c, 0.1111, time_scale)
