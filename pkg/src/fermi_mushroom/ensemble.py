"""Monte-Carlo ensembles of independent particles over one or many cycles."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import _kernel as K
from .dynamics import DEFAULT_TOL, STATUS_NAMES, Tolerances
from .geometry import MushroomShape, bounding_box, region_codes
from .histogram import Histogram
from .protocol import Protocol
from .theory import FluxTable, capture_probability

log = logging.getLogger(__name__)

MAX_ABORTED_FRACTION = 1e-3


class SimulationQualityError(RuntimeError):
    """Too many trajectories were aborted for the statistics to be trusted."""


@dataclass(frozen=True)
class EnsembleConfig:
    n_particles: int = 5000
    e0: float = 1e6
    n_cycles: int = 1
    seed: int = 0
    bins: int = 100

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError(f"N ≥ 1 violated (N={self.n_particles})")
        if not self.e0 > 0:
            raise ValueError(f"E0 > 0 violated (E0={self.e0})")
        if self.n_cycles < 1:
            raise ValueError(f"n ≥ 1 violated (n={self.n_cycles})")

    def to_dict(self) -> dict:
        return asdict(self)


def sample_initial(shape: MushroomShape, n: int, e0: float, seed: int, first_index: int = 0) -> np.ndarray:
    """``(n, 4)`` array of ``x, y, vx, vy``: uniform in the domain, isotropic, speed ``sqrt(2 e0)``.

    Particle ``i`` draws from its own stream seeded by ``(seed, i)``.
    """
    xmin, xmax, ymin, ymax = bounding_box(shape)
    speed = math.sqrt(2.0 * e0)
    out = np.empty((n, 4))
    for k in range(n):
        rng = np.random.default_rng([seed, first_index + k])
        while True:
            x = rng.uniform(xmin, xmax)
            y = rng.uniform(ymin, ymax)
            if region_codes(shape, x, y) >= 0:
                break
        angle = rng.uniform(0.0, 2.0 * math.pi)
        out[k] = x, y, speed * math.cos(angle), speed * math.sin(angle)
    return out


@dataclass
class EnsembleResult:
    """Raw per-particle output of :func:`simulate_ensemble`."""

    config: EnsembleConfig
    protocol: dict
    log_ratios: np.ndarray      # (N, n) ln(E_k / E0) at the end of cycle k
    first_capture: np.ndarray   # (N, n, 2) t_in, t_out of the first capture in each cycle (NaN if none)
    status: np.ndarray          # (N,) kernel status codes
    anomalies: int = 0          # extra captures within one cycle

    @property
    def ok(self) -> np.ndarray:
        return self.status == K.OK

    @property
    def n_aborted(self) -> int:
        return int(np.count_nonzero(~self.ok))

    def abort_reasons(self) -> dict:
        codes, counts = np.unique(self.status[~self.ok], return_counts=True)
        return {STATUS_NAMES[int(c)]: int(n) for c, n in zip(codes, counts)}


@dataclass
class EnsembleStats:
    m1_star: float
    sigma_n: float
    p_nc_star: float
    n_used: int
    n_aborted: int
    log_energy: Histogram
    capture_times: Histogram
    n_cycles: int = 1
    abort_reasons: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {"m1_star": self.m1_star, "sigma_N": self.sigma_n, "p_nc_star": self.p_nc_star,
                "n_used": self.n_used, "aborted": self.n_aborted, "abort_reasons": self.abort_reasons,
                "n_cycles": self.n_cycles}


def simulate_ensemble(protocol: Protocol, config: EnsembleConfig, tol: Tolerances = DEFAULT_TOL,
                      batch: int = 2000) -> EnsembleResult:
    """Run every particle for ``config.n_cycles`` periods starting at ``t = 0``."""
    spec = protocol.kernel_spec()
    shape = protocol.shape_at(0.0)
    n, ncyc = config.n_particles, config.n_cycles
    T = protocol.period
    stops = T * np.arange(1, ncyc + 1, dtype=float)
    tol_vec = tol.vector(spec.r_max)
    max_caps = 4 * ncyc + 8
    log_ratios = np.full((n, ncyc), np.nan)
    first = np.full((n, ncyc, 2), np.nan)
    status = np.empty(n, dtype=np.int64)
    anomalies = 0
    for start in range(0, n, batch):
        m = min(batch, n - start)
        init = sample_initial(shape, m, config.e0, config.seed, start)
        states = np.zeros((m, 12))
        states[:, :4] = init
        states[:, K.ST_LAST] = K.WALL_NONE
        states[:, K.ST_REGION] = np.where(region_codes(shape, init[:, 0], init[:, 1]) == 0, K.CAP, K.STEM)
        for i in range(m):
            if states[i, K.ST_REGION] == K.CAP:
                K.start_sojourn(spec.kind, spec.params, states[i])
        energies = np.full((m, ncyc), np.nan)
        caps = np.full((m, max_caps, 5), np.nan)
        ncaps = np.zeros(m, dtype=np.int64)
        st = np.zeros(m, dtype=np.int64)
        K.advance_many(spec.kind, spec.params, spec.tan_theta, spec.accel_bounds, spec.r_max,
                       states, stops, energies, caps, ncaps, st, tol_vec)
        status[start:start + m] = st
        log_ratios[start:start + m] = np.log(energies / config.e0)
        for i in range(m):
            if ncaps[i] > max_caps:
                log.warning("particle %d: %d captures, only %d kept", start + i, ncaps[i], max_caps)
            seen = set()
            for row in caps[i, :min(ncaps[i], max_caps)]:
                cycle = int(row[3] // T)
                if cycle >= ncyc:
                    continue
                if cycle in seen:
                    anomalies += 1
                    continue
                seen.add(cycle)
                first[start + i, cycle] = row[3], row[4]
    if anomalies:
        log.warning("%d extra captures within a single cycle ignored", anomalies)
    return EnsembleResult(config, protocol.to_dict(), log_ratios, first, status, anomalies)


def capture_statistics(first_capture: np.ndarray, period: float, bins: int = 100, value_range=None):
    """``(capture-time histogram, non-capture fraction)`` for cycle 1.

    ``first_capture`` holds ``t_in, t_out`` rows (NaN when not captured).
    Capture times are taken modulo the period.
    """
    t_in = np.asarray(first_capture, dtype=float)[..., 0].ravel()
    captured = np.isfinite(t_in)
    if t_in.size == 0:
        return Histogram.from_samples([], bins), float("nan")
    p_nc = 1.0 - captured.mean()
    times = np.mod(t_in[captured], period)
    return Histogram.from_samples(times, bins, value_range), float(p_nc)


def multi_cycle_normalized(log_ratios, n: int, bins: int = 100, value_range=None) -> Histogram:
    """Histogram of ``(1/n) ln(E_n/E0)``; ``log_ratios`` is ``(N, >= n)`` or the column for cycle ``n``."""
    arr = np.asarray(log_ratios, dtype=float)
    col = arr[:, n - 1] if arr.ndim == 2 else arr
    col = col[np.isfinite(col)]
    return Histogram.from_samples(col / n, bins, value_range)


def statistics(result: EnsembleResult, n: int | None = None, enforce: bool = True) -> EnsembleStats:
    """Summary statistics over the non-aborted particles after ``n`` cycles (default all)."""
    cfg = result.config
    n = n or cfg.n_cycles
    ok = result.ok
    n_used = int(ok.sum())
    if n_used == 0:
        raise SimulationQualityError("every trajectory was aborted")
    frac = result.n_aborted / len(ok)
    if enforce and frac > MAX_ABORTED_FRACTION:
        raise SimulationQualityError(
            f"aborted fraction {frac:.2e} exceeds {MAX_ABORTED_FRACTION:g}: {result.abort_reasons()}")
    gains = result.log_ratios[ok, n - 1] / n
    sigma = float(np.std(gains, ddof=1) / math.sqrt(n_used)) if n_used > 1 else float("nan")
    period = _period(result)
    cap_hist, p_nc = capture_statistics(result.first_capture[ok, 0], period, cfg.bins)
    return EnsembleStats(float(np.mean(gains)), sigma, p_nc, n_used, result.n_aborted,
                         Histogram.from_samples(gains, cfg.bins), cap_hist, n, result.abort_reasons())


def _period(result: EnsembleResult) -> float:
    from .protocol import protocol_from_dict

    return protocol_from_dict(result.protocol).period


def run(protocol: Protocol, config: EnsembleConfig, tol: Tolerances = DEFAULT_TOL) -> EnsembleStats:
    return statistics(simulate_ensemble(protocol, config, tol))


# -- comparisons with theory ------------------------------------------------------

def capture_time_chi_square(t_in, protocol: Protocol, bins: int = 20, min_expected: float = 5.0):
    """Chi-square test of first-capture times against ``-dp_cha/dt`` on the capture interval.

    Equal-width bins; neighbours are merged until every expected count is at
    least ``min_expected``.  Returns ``(statistic, dof, p_value)``.
    """
    intervals = protocol.capture_intervals()
    if len(intervals) != 1:
        raise ValueError("chi-square comparison needs exactly one capture interval")
    a, b = intervals[0]
    t_in = np.asarray(t_in, dtype=float)
    t_in = np.mod(t_in[np.isfinite(t_in)], protocol.period)
    edges = np.linspace(a, b, bins + 1)
    table = FluxTable(protocol)
    pc = capture_probability(protocol, edges, table)
    prob = (pc[:-1] - pc[1:]) / (pc[0] - pc[-1])
    observed = np.histogram(np.clip(t_in, a, b), bins=edges)[0].astype(float)
    expected = prob * observed.sum()
    obs_m, exp_m = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(observed, expected):
        o_acc += o
        e_acc += e
        if e_acc >= min_expected:
            obs_m.append(o_acc)
            exp_m.append(e_acc)
            o_acc = e_acc = 0.0
    if e_acc > 0 and exp_m:
        obs_m[-1] += o_acc
        exp_m[-1] += e_acc
    obs_m, exp_m = np.array(obs_m), np.array(exp_m)
    dof = len(obs_m) - 1
    if dof < 1:
        return float("nan"), dof, float("nan")
    chi2 = float(np.sum((obs_m - exp_m) ** 2 / exp_m))
    return chi2, dof, float(stats.chi2.sf(chi2, dof))


def binomial_sigma(p: float, n: int) -> float:
    return math.sqrt(p * (1.0 - p) / n)


# -- output -----------------------------------------------------------------------

def json_safe(obj):
    """JSON has no NaN: non-finite floats become null."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    return obj


def write_outputs(directory, result: EnsembleResult, st: EnsembleStats, echo: dict,
                  per_particle: bool = False, extra_cycles=()) -> dict:
    """Write ``summary.json`` and histogram CSVs; returns the summary document."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    doc = dict(st.summary(), config=echo, seed=result.config.seed, anomalies=result.anomalies)
    st.log_energy.to_csv(out / "log_energy_histogram.csv")
    st.capture_times.to_csv(out / "capture_time_histogram.csv")
    ok = result.ok
    multi = {}
    for n in extra_cycles:
        if n <= result.config.n_cycles:
            h = multi_cycle_normalized(result.log_ratios[ok], n, result.config.bins)
            h.to_csv(out / f"normalized_cycles_{n}.csv")
            gains = result.log_ratios[ok, n - 1] / n
            multi[str(n)] = {"mean": float(gains.mean()),
                             "sigma_N": float(gains.std(ddof=1) / math.sqrt(len(gains))),
                             "variance": float(gains.var(ddof=1)),
                             "excess_kurtosis": float(stats.kurtosis(gains))}
    if multi:
        doc["normalized_cycles"] = multi
    with open(out / "capture_times.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "t_in", "t_out"])
        for i in np.nonzero(ok)[0]:
            t_in, t_out = result.first_capture[i, 0]
            if np.isfinite(t_in):
                writer.writerow([int(i), repr(float(t_in)), repr(float(t_out))])
    if per_particle:
        with open(out / "particles.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "ln_en_over_e0", "t_in", "t_out", "status"])
            n = result.config.n_cycles
            for i in range(len(ok)):
                t_in, t_out = result.first_capture[i, 0]
                writer.writerow([i, repr(float(result.log_ratios[i, n - 1])), repr(float(t_in)),
                                 repr(float(t_out)), STATUS_NAMES[int(result.status[i])]])
    (out / "summary.json").write_text(json.dumps(json_safe(doc), indent=2, sort_keys=True) + "\n")
    return doc
