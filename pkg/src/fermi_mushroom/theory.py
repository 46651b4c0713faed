"""Flux-corrected adiabatic theory of the energy change over one cycle.

Every integral is taken in time.  The phase-space flux rate into the island is

    rate(t) = V_cap / V_cha * delta'(nu) * nu'(t)

which is positive while ``nu`` decreases.  ``Phi(t) = int_0^t rate`` gives

* ``p_cha(t) = exp(-(Phi(t) - Phi(t_a)))`` on a capture interval ``[t_a, t_b]``,
* ``ln E1_nc / E0 = -Phi(T)``,
* ``ln E1(t_in) / E0 = -log g(t_in) - (Phi(t_in + T) - Phi(t_out))``,
* ``m1 = int_capture (g - 1 - log g) p_cha rate dt``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import delta, delta_prime, volume_arrays
from .histogram import Histogram
from .protocol import Protocol

DEFAULT_PANELS = 10_000
TRIVIAL_AREA = 1e-12


class UnsupportedProtocolError(ValueError):
    """The protocol has more than one capture interval per cycle."""


# -- quadrature ---------------------------------------------------------------

def _simpson_samples(y, h):
    return h / 3.0 * (y[0] + y[-1] + 4.0 * y[1:-1:2].sum() + 2.0 * y[2:-1:2].sum())


def simpson(f, a: float, b: float, panels: int = DEFAULT_PANELS) -> float:
    """Composite Simpson rule for a vectorised integrand."""
    if panels < 2 or panels % 2:
        raise ValueError(f"panels must be a positive even number (got {panels})")
    x = np.linspace(a, b, panels + 1)
    y = np.broadcast_to(np.asarray(f(x), dtype=float), x.shape)
    if not np.all(np.isfinite(y)):
        bad = x[~np.isfinite(y)][0]
        raise FloatingPointError(f"integrand is not finite at x={bad!r}")
    return float(_simpson_samples(y, (b - a) / panels))


def simpson_error(f, a: float, b: float, panels: int = DEFAULT_PANELS):
    """``(value, error)``: the doubled-resolution estimate and its Richardson error bound."""
    coarse = simpson(f, a, b, panels)
    fine = simpson(f, a, b, 2 * panels)
    return fine, abs(fine - coarse) / 15.0


def cumulative_simpson(y, h):
    """Running integral of uniform samples ``y`` (odd length) from ``y[0]``.

    Even nodes use Simpson pairs; odd nodes add a third-order half step.
    """
    y = np.asarray(y, dtype=float)
    n = len(y)
    if n % 2 == 0 or n < 3:
        raise ValueError("cumulative_simpson needs an odd number (>= 3) of samples")
    out = np.zeros(n)
    pairs = h / 3.0 * (y[0:-2:2] + 4.0 * y[1:-1:2] + y[2::2])
    out[2::2] = np.cumsum(pairs)
    out[1::2] = out[0:-2:2] + h / 12.0 * (5.0 * y[0:-2:2] + 8.0 * y[1:-1:2] - y[2::2])
    return out


def _piece_grids(knots, panels_total, span):
    """Uniform grids between consecutive knots, each with an even panel count."""
    grids = []
    for a, b in zip(knots[:-1], knots[1:]):
        if b - a <= 1e-14 * span:
            continue
        m = max(2, 2 * int(math.ceil(0.5 * panels_total * (b - a) / span)))
        grids.append(np.linspace(a, b, m + 1))
    return grids


# -- volumes along the protocol -------------------------------------------------

def _state(p: Protocol, t):
    r, w, h, dr, dw, dh = np.broadcast_arrays(*p.laws(np.asarray(t, dtype=float)))
    v_cap, v_stem, v_ell, v_cha = volume_arrays(r, w, h, p.tan_theta)
    nu = np.clip(w / r, 0.0, 1.0)
    dnu = (r * dw - w * dr) / r**2
    return dict(r=r, w=w, h=h, dr=dr, dw=dw, dh=dh, nu=nu, dnu=dnu,
                v_cap=v_cap, v_stem=v_stem, v_ell=v_ell, v_cha=v_cha)


def flux_rate(p: Protocol, t):
    """``V_cap/V_cha * d(delta)/dt``; positive while the island grows."""
    s = _state(p, t)
    return s["v_cap"] / s["v_cha"] * delta_prime(s["nu"]) * s["dnu"]


def chaotic_ratio(p: Protocol, t):
    """``V_cha / V_cap`` at time ``t``."""
    s = _state(p, t)
    return s["v_cha"] / s["v_cap"]


class FluxTable:
    """Cumulative flux ``Phi(t) = int_0^t rate`` over one period, extended periodically."""

    def __init__(self, p: Protocol, panels: int = DEFAULT_PANELS):
        self.protocol = p
        T = p.period
        knots = set(np.asarray(p.breakpoints(), dtype=float).tolist()) | {0.0, T}
        for a, b in p.capture_intervals():
            knots |= {a, b}
        knots = np.array(sorted(k for k in knots if 0.0 <= k <= T))
        nodes, cum, starts = [], [], []
        total = 0.0
        for g in _piece_grids(knots, 2 * panels, T):
            c = cumulative_simpson(flux_rate(p, g), g[1] - g[0]) + total
            nodes.append(g[:-1])
            cum.append(c[:-1])
            total = c[-1]
        nodes.append(np.array([T]))
        cum.append(np.array([total]))
        self.nodes = np.concatenate(nodes)
        self.cum = np.concatenate(cum)
        self.total = total

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        T = self.protocol.period
        cycles = np.floor(t / T)
        tau = t - cycles * T
        k = np.clip(np.searchsorted(self.nodes, tau, side="right") - 1, 0, len(self.nodes) - 1)
        t0 = self.nodes[k]
        mid = 0.5 * (t0 + tau)
        local = (tau - t0) / 6.0 * (flux_rate(self.protocol, t0) + 4.0 * flux_rate(self.protocol, mid)
                                    + flux_rate(self.protocol, tau))
        out = cycles * self.total + self.cum[k] + local
        return float(out) if out.ndim == 0 else out


def _capture_grid(p: Protocol, a: float, b: float, panels: int):
    knots = [a] + [k for k in np.asarray(p.breakpoints(), dtype=float) if a < k < b] + [b]
    return _piece_grids(np.array(knots), panels, b - a)


def _single_interval(p: Protocol):
    intervals = p.capture_intervals()
    if len(intervals) > 1:
        raise UnsupportedProtocolError(
            f"{len(intervals)} capture intervals per cycle; only one is supported here")
    return intervals[0] if intervals else None


def _interval_containing(p: Protocol, t: float):
    tau = t - math.floor(t / p.period) * p.period
    for a, b in p.capture_intervals():
        if a - 1e-12 <= tau <= b + 1e-12:
            return a + (t - tau), b + (t - tau)
    return None


# -- public quantities ----------------------------------------------------------

def capture_probability(p: Protocol, t, table: FluxTable | None = None):
    """Probability of still being in the chaotic zone at time ``t`` of a capture interval."""
    table = table or FluxTable(p)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.empty_like(t_arr)
    for i, ti in enumerate(t_arr):
        iv = _interval_containing(p, float(ti))
        if iv is None:
            raise ValueError(f"t={ti!r} is not inside a capture interval")
        out[i] = math.exp(-(table(float(ti)) - table(iv[0])))
    return float(out[0]) if np.ndim(t) == 0 else out


def compression_factor(p: Protocol, t):
    """``g(t)``: relative chaotic volume at capture over that at release."""
    t = np.asarray(t, dtype=float)
    out = chaotic_ratio(p, t) / chaotic_ratio(p, p.release_time(t))
    return float(out) if out.ndim == 0 else out


def energy_noncaptured(p: Protocol, table: FluxTable | None = None) -> float:
    """``ln(E1/E0)`` of a particle that stays chaotic over the whole cycle."""
    table = table or FluxTable(p)
    return -float(table.total)


def energy_captured(p: Protocol, t_in, table: FluxTable | None = None):
    """``ln(E1/E0)`` after one cycle for a particle captured at ``t_in``."""
    _single_interval(p)
    table = table or FluxTable(p)
    t_in = np.asarray(t_in, dtype=float)
    t_out = p.release_time(t_in)
    out = -np.log(compression_factor(p, t_in)) - (table(t_in + p.period) - table(t_out))
    return float(out) if np.ndim(out) == 0 else out


def growth_rate(p: Protocol, panels: int = DEFAULT_PANELS, table: FluxTable | None = None) -> float:
    """Expected ``ln(E1/E0)`` per cycle, summed over all capture intervals."""
    table = table or FluxTable(p, panels)
    m1 = 0.0
    for a, b in p.capture_intervals():
        phi_a = table(a)
        for g_t in _capture_grid(p, a, b, panels):
            g = compression_factor(p, g_t)
            integrand = (g - 1.0 - np.log(g)) * np.exp(-(table(g_t) - phi_a)) * flux_rate(p, g_t)
            m1 += _simpson_samples(integrand, g_t[1] - g_t[0])
    return float(m1)


def non_capture_probability(p: Protocol, table: FluxTable | None = None) -> float:
    table = table or FluxTable(p)
    return float(math.exp(-sum(table(b) - table(a) for a, b in p.capture_intervals())))


def _d_log_chaotic_ratio(p: Protocol, t):
    """Analytic time derivative of ``log(V_cha / V_cap)``."""
    s = _state(p, t)
    d_cap = 2.0 * math.pi**2 * s["r"] * s["dr"]
    d_stem = 2.0 * math.pi * (2.0 * (s["dw"] * s["h"] + s["w"] * s["dh"])
                              - 2.0 * s["h"] * s["dh"] * p.tan_theta)
    d_ell = delta_prime(s["nu"]) * s["dnu"] * s["v_cap"] + delta(s["nu"]) * d_cap
    d_cha = d_cap + d_stem - d_ell
    return d_cha / s["v_cha"] - d_cap / s["v_cap"]


def chaotic_probability_cycle(p: Protocol, t, table: FluxTable | None = None):
    """``p_cha`` at any time of a single-capture cycle.

    Outside the capture interval it depends on ``nu`` only: the value at the
    capture time with the same ``nu``.
    """
    iv = _single_interval(p)
    table = table or FluxTable(p)
    t = np.asarray(t, dtype=float)
    if iv is None:
        return np.ones_like(t)
    a, b = iv
    T = p.period
    tau = t - np.floor(t / T) * T
    nu = np.broadcast_to(p.nu(tau), tau.shape)
    inside = (tau >= a) & (tau <= b)
    nu_a, nu_b = float(p.nu(a)), float(p.nu(b))
    level = np.clip(np.where(inside, nu_a, nu), nu_b, nu_a)
    lo = np.full(tau.shape, a)
    hi = np.full(tau.shape, b)
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        above = np.broadcast_to(p.nu(mid), mid.shape) >= level
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    s = np.where(inside, tau, 0.5 * (lo + hi))
    s = np.where(~inside & (level >= nu_a), a, s)
    s = np.where(~inside & (level <= nu_b), b, s)
    return np.exp(-(table(s) - table(a)))


def cycle_integrals(p: Protocol, panels: int = DEFAULT_PANELS, table: FluxTable | None = None):
    """``(I1, I2)`` integrated over the whole period without pairing captures with releases.

    ``I1 = -int p_cha d log(V_cha/V_cap)`` and ``I2 = -int p_cha rate dt``;
    their sum is the expected ``ln(E1/E0)``.
    """
    table = table or FluxTable(p, panels)
    knots = set(np.asarray(p.breakpoints(), dtype=float).tolist()) | {0.0, p.period}
    for a, b in p.capture_intervals():
        t_r = float(p.release_time(0.5 * (a + b)))
        knots |= {a, b}
        # the release phase can start after a plateau; its end points are kinks of p_cha
        knots |= {float(p.release_time(a + 1e-9 * (b - a))), float(p.release_time(b - 1e-9 * (b - a))), t_r}
    knots = np.array(sorted(k for k in knots if 0.0 <= k <= p.period))
    i1 = i2 = 0.0
    for g in _piece_grids(knots, 2 * panels, p.period):
        pc = chaotic_probability_cycle(p, g, table)
        h = g[1] - g[0]
        i1 -= _simpson_samples(pc * _d_log_chaotic_ratio(p, g), h)
        i2 -= _simpson_samples(pc * flux_rate(p, g), h)
    return float(i1), float(i2)


def loop_triviality(p: Protocol, n_samples: int = 10_000) -> float:
    """Signed shoelace area of the closed curve ``(V_ell/V_cap, V_cap/V)`` over one period."""
    t = np.union1d(np.linspace(0.0, p.period, n_samples + 1), p.breakpoints())
    s = _state(p, t)
    x = s["v_ell"] / s["v_cap"]
    y = s["v_cap"] / (s["v_cap"] + s["v_stem"])
    return float(0.5 * np.sum(x[:-1] * y[1:] - x[1:] * y[:-1]))


@dataclass
class PredictedDistribution:
    """Law of ``ln(E1/E0)``: an atom at the non-captured value plus captured-cell masses."""

    atom_location: float
    atom_mass: float
    values: np.ndarray
    masses: np.ndarray
    histogram: Histogram

    @property
    def mean(self) -> float:
        return float(self.atom_mass * self.atom_location + np.dot(self.masses, self.values))

    @property
    def total_mass(self) -> float:
        return float(self.atom_mass + self.masses.sum())


def predicted_distribution(p: Protocol, bins=100, panels: int = DEFAULT_PANELS,
                           value_range=None, table: FluxTable | None = None) -> PredictedDistribution:
    """Histogram of ``ln(E1/E0)`` predicted by the theory.

    Each capture-grid cell deposits its probability ``-Delta p_cha`` at the
    energy of its midpoint, so non-monotone ``t_in -> ln E1`` needs no
    density change of variables.
    """
    iv = _single_interval(p)
    table = table or FluxTable(p, panels)
    ln_nc = energy_noncaptured(p, table)
    if iv is None:
        values = np.empty(0)
        masses = np.empty(0)
        p_nc = 1.0
    else:
        a, b = iv
        vals, ms = [], []
        phi_a = table(a)
        for g in _capture_grid(p, a, b, panels):
            pc = np.exp(-(table(g) - phi_a))
            vals.append(energy_captured(p, 0.5 * (g[1:] + g[:-1]), table))
            ms.append(pc[:-1] - pc[1:])
        values = np.concatenate(vals)
        masses = np.concatenate(ms)
        p_nc = float(math.exp(-(table(b) - phi_a)))
    if value_range is None:
        lo = min(ln_nc, values.min()) if values.size else ln_nc
        hi = max(ln_nc, values.max()) if values.size else ln_nc
        pad = 0.5 * (hi - lo) / max(np.size(bins) if np.ndim(bins) else bins, 1) or 0.5
        value_range = (lo - pad, hi + pad)
    edges = np.asarray(bins, dtype=float) if np.ndim(bins) else np.linspace(*value_range, int(bins) + 1)
    weights = np.histogram(values, bins=edges, weights=masses)[0]
    k = np.clip(np.searchsorted(edges, ln_nc, side="right") - 1, 0, len(edges) - 2)
    weights[k] += p_nc
    hist = Histogram(edges, weights / np.diff(edges) / weights.sum())
    return PredictedDistribution(ln_nc, p_nc, values, masses, hist)


@dataclass
class TheoryPrediction:
    m1: float
    p_nc: float
    ln_e_nc: float
    loop_area: float
    t: np.ndarray = field(repr=False)
    p_cha: np.ndarray = field(repr=False)
    g: np.ndarray = field(repr=False)
    ln_e1: np.ndarray = field(repr=False)
    distribution: PredictedDistribution | None = field(default=None, repr=False)
    protocol: dict = field(default_factory=dict)

    @property
    def p_ell(self) -> np.ndarray:
        return 1.0 - self.p_cha

    def summary(self) -> dict:
        return {"m1": self.m1, "p_nc": self.p_nc, "ln_e_nc": self.ln_e_nc,
                "loop_area": self.loop_area, "protocol": self.protocol}

    def write(self, directory, extra: dict | None = None) -> None:
        """``prediction.json`` plus the curve CSVs into ``directory``."""
        from pathlib import Path

        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        doc = dict(self.summary(), **(extra or {}))
        (out / "prediction.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        _write_columns(out / "p_cha.csv", ["t", "p_cha"], self.t, self.p_cha)
        _write_columns(out / "g.csv", ["t", "g"], self.t, self.g)
        _write_columns(out / "e1_of_tin.csv", ["t_in", "ln_e1_over_e0"], self.t, self.ln_e1)
        if self.distribution is not None:
            h = self.distribution.histogram
            _write_columns(out / "predicted_density.csv", ["bin_center", "density"], h.centers, h.density)


def _write_columns(path, header, *cols) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in zip(*cols):
            writer.writerow([repr(float(v)) for v in row])


def predict(p: Protocol, panels: int = DEFAULT_PANELS, bins=100) -> TheoryPrediction:
    """All theory outputs for one protocol.

    Curves and the distribution need a single capture interval; for other
    protocols they are left empty while the scalars are still computed.
    """
    table = FluxTable(p, panels)
    m1 = growth_rate(p, panels, table)
    p_nc = non_capture_probability(p, table)
    ln_nc = energy_noncaptured(p, table)
    area = loop_triviality(p)
    intervals = p.capture_intervals()
    empty = np.empty(0)
    t = pc = g = e1 = empty
    dist = None
    if len(intervals) == 1:
        a, b = intervals[0]
        t = np.linspace(a, b, panels + 1)
        pc = np.exp(-(table(t) - table(a)))
        g = compression_factor(p, t)
        e1 = energy_captured(p, t, table)
        dist = predicted_distribution(p, bins, panels, table=table)
    return TheoryPrediction(m1, p_nc, ln_nc, area, t, pc, g, e1, dist, p.to_dict())
