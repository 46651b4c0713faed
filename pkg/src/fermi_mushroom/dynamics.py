"""Event-driven motion of a point particle in the moving mushroom.

Most work happens in the compiled kernel (:mod:`fermi_mushroom._kernel`);
this module provides the per-trajectory API, the moving-wall reflection law,
the adiabatic angle and sojourn classification.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import _kernel as K
from .geometry import region_codes
from .protocol import Protocol

log = logging.getLogger(__name__)

WALL_NAMES = {
    K.WALL_ARC: "arc",
    K.WALL_CAP_LEFT: "cap-bottom-left",
    K.WALL_CAP_RIGHT: "cap-bottom-right",
    K.WALL_STEM_LEFT: "stem-left",
    K.WALL_STEM_RIGHT: "stem-right",
    K.WALL_STEM_BOTTOM: "stem-bottom",
    K.HOLE_UP: "hole-up",
    K.HOLE_DOWN: "hole-down",
}

STATUS_NAMES = {
    K.OK: "ok",
    K.MAX_EVENTS: "max-events",
    K.BUFFER_FULL: "buffer-full",
    K.CORNER: "corner hit",
    K.PENETRATION: "penetration",
    K.TANGENCY: "tangency",
    K.SOLVER: "solver failure",
}


class CollisionError(RuntimeError):
    """A trajectory had to be aborted (corner hit, tangency, penetration, solver failure)."""

    def __init__(self, reason: str, state: "ParticleState"):
        super().__init__(f"{reason} at t={state.t:.12g}, (x, y)=({state.x:.6g}, {state.y:.6g})")
        self.reason = reason
        self.state = state


@dataclass(frozen=True)
class Tolerances:
    hit: float = 1e-12        # times r
    corner: float = 1e-9      # times r
    graze: float = 1e-9       # relative to the speed
    penetration: float = 1e-8  # times r
    nu: float = 1e-9

    def vector(self, r_scale: float) -> np.ndarray:
        return np.array([self.hit * r_scale, self.corner * r_scale, self.graze,
                         self.penetration * r_scale, self.nu])


DEFAULT_TOL = Tolerances()


@dataclass
class ParticleState:
    x: float
    y: float
    px: float
    py: float
    t: float = 0.0

    @property
    def speed(self) -> float:
        return math.hypot(self.px, self.py)

    @property
    def energy(self) -> float:
        return 0.5 * (self.px**2 + self.py**2)

    @property
    def angular_momentum(self) -> float:
        return self.x * self.py - self.y * self.px


@dataclass(frozen=True)
class CollisionEvent:
    time: float
    wall: str
    point: tuple
    phi: float
    speed_before: float
    speed_after: float


@dataclass(frozen=True)
class CaptureEvent:
    t_enter: float
    t_exit: float
    sin_phi0: float
    t_in: float | None = None
    t_out: float | None = None

    @property
    def captured(self) -> bool:
        return self.t_in is not None


@dataclass
class SimulationResult:
    state: ParticleState
    collisions: list = field(default_factory=list)
    captures: list = field(default_factory=list)
    crossings: list = field(default_factory=list)
    n_collisions: int = 0
    status: str = "ok"

    @property
    def aborted(self) -> bool:
        return self.status not in ("ok", "max-events")


def reflect(v_par: float, v_perp: float, u: float, tol_graze: float = 1e-9):
    """Elastic reflection from a wall moving with normal speed ``u``.

    ``v_perp`` is the velocity component towards the wall and ``u`` the wall
    velocity along the outward normal.  Returns ``(v_par, 2u - v_perp)``.
    """
    rel = v_perp - u
    if abs(rel) < tol_graze * max(math.hypot(v_par, v_perp), 1e-300):
        raise CollisionError("tangency", ParticleState(math.nan, math.nan, v_par, v_perp))
    if rel < 0:
        raise ValueError("particle is not approaching the wall (v_perp - u <= 0)")
    return v_par, 2.0 * u - v_perp


def adiabatic_angle(state: ParticleState, r: float) -> float:
    """``sin(phi_hat) = -(x p_y - y p_x) / (sqrt(2E) r)``."""
    if r <= 0:
        raise ValueError("r must be positive")
    v = state.speed
    if v <= 0:
        raise ValueError("energy must be positive")
    return -(state.x * state.py - state.y * state.px) / (v * r)


class Trajectory:
    """Resumable single trajectory driven by the compiled kernel."""

    def __init__(self, state: ParticleState, protocol: Protocol, tol: Tolerances = DEFAULT_TOL):
        spec = protocol.kernel_spec()
        self.protocol = protocol
        self.spec = spec
        self.tol = tol.vector(spec.r_max)
        shape = protocol.shape_at(state.t)
        code = int(region_codes(shape, state.x, state.y))
        if code < 0 and state.speed > 0:
            # a point left on a wall by rounding is accepted if it is moving inwards
            step = tol.penetration * spec.r_max / state.speed
            code = int(region_codes(shape, state.x + step * state.px, state.y + step * state.py))
        if code < 0:
            raise ValueError(f"initial point ({state.x}, {state.y}) is outside the domain")
        if state.speed <= 0:
            raise ValueError("initial speed must be positive")
        st = np.zeros(12)
        st[K.ST_X], st[K.ST_Y], st[K.ST_VX], st[K.ST_VY], st[K.ST_T] = (
            state.x, state.y, state.px, state.py, state.t)
        st[K.ST_REGION] = code
        st[K.ST_LAST] = K.WALL_NONE
        if code == K.CAP:
            K.start_sojourn(spec.kind, spec.params, st)
        self.st = st

    @property
    def state(self) -> ParticleState:
        s = self.st
        return ParticleState(s[K.ST_X], s[K.ST_Y], s[K.ST_VX], s[K.ST_VY], s[K.ST_T])

    @property
    def n_collisions(self) -> int:
        return int(self.st[K.ST_NCOLL])

    def run(self, t_end: float, max_events: int = 1 << 62, record: int = 0, max_captures: int = 64):
        """Advance to ``t_end``; returns ``(status, captures, records)``."""
        spec = self.spec
        stops = np.array([float(t_end)])
        self.st[K.ST_STOP] = 0
        energies = np.zeros(1)
        caps = np.full((max_captures, 5), np.nan)
        rec = np.empty((record, 7))
        status, ncaps, nrec = K.advance(spec.kind, spec.params, spec.tan_theta, spec.accel_bounds,
                                        spec.r_max, self.st, stops, energies, caps, rec,
                                        max_events, self.tol)
        if ncaps > max_captures:
            log.warning("%d captures in one run, only %d stored", ncaps, max_captures)
        return int(status), caps[:min(ncaps, max_captures)], rec[:nrec]


def _event_from_row(row) -> CollisionEvent:
    return CollisionEvent(float(row[0]), WALL_NAMES[int(row[1])], (float(row[2]), float(row[3])),
                          float(row[4]), float(row[5]), float(row[6]))


def next_collision(state: ParticleState, protocol: Protocol, tol: Tolerances = DEFAULT_TOL,
                   t_max: float | None = None):
    """Earliest wall reflection after ``state``.

    Hole crossings on the way are followed.  Returns ``(event, new_state)``;
    raises :class:`CollisionError` on corner hits, tangencies or solver
    failures.
    """
    traj = Trajectory(state, protocol, tol)
    horizon = state.t + (t_max if t_max is not None else 1e3 * protocol.period)
    while True:
        status, _, rec = traj.run(horizon, max_events=1, record=1)
        if status >= K.CORNER:
            raise CollisionError(STATUS_NAMES[status], traj.state)
        if status == K.OK:
            raise CollisionError("no collision before the time horizon", traj.state)
        ev = _event_from_row(rec[0])
        if ev.wall not in ("hole-up", "hole-down"):
            return ev, traj.state


def simulate(state0: ParticleState, protocol: Protocol, t_end: float, *, record_events: bool = True,
             max_collisions: int | None = None, tol: Tolerances = DEFAULT_TOL,
             chunk: int = 100_000) -> SimulationResult:
    """Follow one trajectory up to ``t_end`` (or ``max_collisions`` events).

    Aborted trajectories are returned with ``status`` naming the reason and
    the state at the failure; nothing is silently dropped.
    """
    traj = Trajectory(state0, protocol, tol)
    result = SimulationResult(state=state0)
    limit = max_collisions if max_collisions is not None else 1 << 62
    while True:
        # hole crossings count as kernel events but not as collisions
        remaining = limit - traj.n_collisions
        status, caps, rec = traj.run(t_end, max_events=remaining, record=chunk if record_events else 0)
        for row in rec:
            ev = _event_from_row(row)
            if ev.wall.startswith("hole"):
                result.crossings.append(ev)
            else:
                result.collisions.append(ev)
        for c in caps:
            result.captures.append(_capture_from_row(c))
        if status in (K.BUFFER_FULL, K.MAX_EVENTS) and traj.n_collisions < limit:
            continue
        result.status = STATUS_NAMES[status]
        break
    if result.aborted:
        log.warning("trajectory aborted: %s at t=%.9g", result.status, traj.state.t)
    result.state = traj.state
    result.n_collisions = traj.n_collisions
    return result


def _capture_from_row(c) -> CaptureEvent:
    t_exit = None if math.isnan(c[1]) else float(c[1])
    t_out = None if math.isnan(c[4]) else float(c[4])
    return CaptureEvent(float(c[0]), t_exit, float(c[2]), float(c[3]), t_out)


def classify_sojourn(t_enter: float, t_exit: float, sin_phi0: float, protocol: Protocol,
                     tol_nu: float = 1e-9, n_scan: int = 2048) -> CaptureEvent:
    """Decide whether a completed cap sojourn was a capture.

    Capture iff ``nu`` drops below the entry invariant during the sojourn;
    then ``t_in`` is the first time ``nu`` reaches ``sin_phi0`` and
    ``t_out = t_exit``.
    """
    grid = np.linspace(t_enter, t_exit, n_scan + 1)
    grid = np.union1d(grid, [b + k * protocol.period
                             for k in range(int(t_enter // protocol.period), int(t_exit // protocol.period) + 1)
                             for b in protocol.breakpoints() if t_enter < b + k * protocol.period < t_exit])
    nu = np.broadcast_to(protocol.nu(grid), grid.shape)
    below = np.nonzero(nu < sin_phi0 - tol_nu)[0]
    if below.size == 0:
        return CaptureEvent(t_enter, t_exit, sin_phi0)
    k = below[0]
    f = lambda s: float(protocol.nu(s)) - sin_phi0
    t_in = brentq(f, grid[k - 1], grid[k], xtol=1e-14) if k > 0 else grid[0]
    return CaptureEvent(t_enter, t_exit, sin_phi0, float(t_in), t_exit)


def write_event_log(path, events) -> None:
    """CSV event log: time, wall id, impact angle, speed after the event."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "wall", "phi", "speed"])
        for ev in events:
            writer.writerow([repr(ev.time), ev.wall, repr(ev.phi), repr(ev.speed_after)])
