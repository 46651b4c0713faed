"""Compiled event-driven dynamics in the moving mushroom.

The particle flies on straight lines.  While in the cap it is confined by the
arc ``|p| <= r(t)`` and the static line ``y >= 0``; while in the stem by the
half-planes of the two slanted walls, the bottom ``y >= -h(t)`` and the line
``y <= 0``.  Both regions are convex, so the next event is the earliest
violation among their constraints.

* Arc: ``F(s) = |p + v s|^2 - r(t+s)^2`` is strictly convex in ``s`` whenever
  ``|v|^2`` exceeds the curvature of ``r^2``, so the exit root is unique and is
  found by bracketed Newton iteration.
* Moving straight walls: the signed distance ``f(s)`` has ``|f''| <= K``
  (wall acceleration bound), so ``f(s + d) >= f + f' d - K d^2 / 2``.  Steps of
  the largest safe ``d`` never jump over a root.

State vector layout (float64[12]):
``x, y, vx, vy, t, region, last_wall, t_enter, sin_phi0, stop_index,
n_collisions, n_events``.
"""
import math
import warnings

import numpy as np
from numba import njit, prange

# an outdated system TBB only disables that backend; numba falls back to OpenMP
warnings.filterwarnings("ignore", message="The TBB threading layer requires")

KIND_STATIC = 0
KIND_RECTANGLE = 1
KIND_SINUSOIDAL = 2

CAP = 0
STEM = 1

WALL_NONE = -1
WALL_ARC = 0
WALL_CAP_LEFT = 1
WALL_CAP_RIGHT = 2
WALL_STEM_LEFT = 3
WALL_STEM_RIGHT = 4
WALL_STEM_BOTTOM = 5
HOLE_UP = 6
HOLE_DOWN = 7
CAP_BOTTOM = 8  # internal: y = 0 line seen from the cap

OK = 0
MAX_EVENTS = 1
BUFFER_FULL = 2
CORNER = 10
PENETRATION = 11
TANGENCY = 12
SOLVER = 13

# tolerance vector layout
TOL_HIT = 0        # distance accepted as contact (length)
TOL_CORNER = 1     # distance to a junction that counts as a corner hit (length)
TOL_GRAZE = 2      # relative normal speed / |v| below which a hit is tangential
TOL_PEN = 3        # allowed constraint violation after an event (length)
TOL_NU = 4         # capture classification margin on nu

ST_X, ST_Y, ST_VX, ST_VY, ST_T, ST_REGION, ST_LAST, ST_TENTER, ST_SINPHI, ST_STOP, ST_NCOLL, ST_NEV = range(12)


@njit(cache=True)
def _bang(x):
    if x < 0.0:
        x = 0.0
    elif x > 1.0:
        x = 1.0
    if x < 0.5:
        return 2.0 * x * x, 4.0 * x
    y = 1.0 - x
    return 1.0 - 2.0 * y * y, 4.0 * y


@njit(cache=True)
def laws(kind, P, t):
    """Return r, w, h, dr, dw, dh at time t."""
    if kind == KIND_STATIC:
        return P[0], P[0] * P[4], P[2], 0.0, 0.0, 0.0
    if kind == KIND_RECTANGLE:
        r = P[0]
        w0 = P[1]
        w1 = P[2]
        h0 = P[3]
        h1 = P[4]
        T = P[5]
        L = 0.25 * T
        tau = t - T * math.floor(t / T)
        leg = int(tau / L)
        if leg > 3:
            leg = 3
        ph, dph = _bang((tau - leg * L) / L)
        dph /= L
        if P[6] > 0:
            if leg == 0:
                return r, w1 - (w1 - w0) * ph, h1, 0.0, -(w1 - w0) * dph, 0.0
            if leg == 1:
                return r, w0, h1 - (h1 - h0) * ph, 0.0, 0.0, -(h1 - h0) * dph
            if leg == 2:
                return r, w0 + (w1 - w0) * ph, h0, 0.0, (w1 - w0) * dph, 0.0
            return r, w1, h0 + (h1 - h0) * ph, 0.0, 0.0, (h1 - h0) * dph
        if leg == 0:
            return r, w1, h1 - (h1 - h0) * ph, 0.0, 0.0, -(h1 - h0) * dph
        if leg == 1:
            return r, w1 - (w1 - w0) * ph, h0, 0.0, -(w1 - w0) * dph, 0.0
        if leg == 2:
            return r, w0, h0 + (h1 - h0) * ph, 0.0, 0.0, (h1 - h0) * dph
        return r, w0 + (w1 - w0) * ph, h1, 0.0, (w1 - w0) * dph, 0.0
    # sinusoidal: r0, a, h0, b, nu0, c, s, k
    s = P[6]
    k = P[7]
    tau = t / s
    S = math.sin(tau)
    C = math.cos(tau)
    r = P[0] + P[1] * S
    dr = P[1] * C / s
    h = P[2] + P[3] * S
    dh = P[3] * C / s
    sk = math.sin(k * tau)
    nu = P[4] - P[5] * sk * sk
    dnu = -P[5] * k * math.sin(2.0 * k * tau) / s
    return r, r * nu, h, dr, dr * nu + r * dnu, dh


@njit(cache=True)
def nu_at(kind, P, t):
    r, w, h, dr, dw, dh = laws(kind, P, t)
    return w / r


@njit(cache=True)
def nu_min(kind, P, ta, tb):
    """Exact minimum of nu over [ta, tb] using the critical times of each law."""
    m = min(nu_at(kind, P, ta), nu_at(kind, P, tb))
    if kind == KIND_STATIC:
        return m
    if kind == KIND_RECTANGLE:
        # w is monotone between leg boundaries; r is fixed
        L = 0.25 * P[5]
        j = math.floor(ta / L) + 1.0
        while j * L < tb:
            v = nu_at(kind, P, j * L)
            if v < m:
                m = v
            j += 1.0
        return m
    s = P[6]
    k = P[7]
    if P[5] == 0.0:
        return m
    # minima of nu where k*t/s = pi/2 + j*pi
    period = math.pi * s / k
    j = math.floor((ta / s * k - 0.5 * math.pi) / math.pi) + 1.0
    while True:
        tc = (0.5 * math.pi + j * math.pi) * s / k
        if tc >= tb:
            break
        if tc > ta:
            v = nu_at(kind, P, tc)
            if v < m:
                m = v
        j += 1.0
        if period <= 0:
            break
    return m


@njit(cache=True)
def first_below(kind, P, ta, tb, level):
    """First time in [ta, tb] at which nu falls to ``level`` (nu(ta) >= level)."""
    n = 512
    dt = (tb - ta) / n
    lo = ta
    hi = tb
    for i in range(1, n + 1):
        ti = ta + i * dt
        if nu_at(kind, P, ti) < level:
            hi = ti
            lo = ti - dt
            break
        if i == n:
            # minimum falls between grid points
            return tb
    for it in range(80):
        mid = 0.5 * (lo + hi)
        if nu_at(kind, P, mid) < level:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-14 * max(1.0, abs(hi)):
            break
    return 0.5 * (lo + hi)


@njit(cache=True)
def _line(j, kind, P, tan_t, cos_t, x, y, vx, vy, t, s):
    """Signed distance of the flying particle to stem wall j and its rate."""
    r, w, h, dr, dw, dh = laws(kind, P, t + s)
    X = x + vx * s
    Y = y + vy * s
    if j == WALL_STEM_RIGHT:
        return (w - X + Y * tan_t) * cos_t, (dw - vx + vy * tan_t) * cos_t
    if j == WALL_STEM_LEFT:
        return (w + X + Y * tan_t) * cos_t, (dw + vx + vy * tan_t) * cos_t
    return Y + h, vy + dh


@njit(cache=True)
def _line_time(j, kind, P, tan_t, cos_t, K, x, y, vx, vy, t, s_best, tol_hit):
    """Earliest s < s_best where wall j is hit; inf if none; -1 on failure."""
    s = 0.0
    for it in range(400):
        f, fp = _line(j, kind, P, tan_t, cos_t, x, y, vx, vy, t, s)
        if f <= tol_hit and fp < 0.0:
            return s
        if f < 0.0:
            f = 0.0
        if K > 0.0:
            disc = math.sqrt(fp * fp + 2.0 * K * f)
            if fp < 0.0:
                step = 2.0 * f / (disc - fp)
            else:
                step = (fp + disc) / K
        else:
            if fp < 0.0:
                step = f / (-fp)
            else:
                return np.inf
        if step <= 0.0:
            # touching with zero relative speed
            return s
        s += step
        if s >= s_best:
            return np.inf
    return -1.0


@njit(cache=True)
def _arc_F(kind, P, x, y, vx, vy, t, s):
    r, w, h, dr, dw, dh = laws(kind, P, t + s)
    X = x + vx * s
    Y = y + vy * s
    F = X * X + Y * Y - r * r
    Fp = 2.0 * (X * vx + Y * vy) - 2.0 * r * dr
    return F, Fp


@njit(cache=True)
def _arc_time(kind, P, r_max, x, y, vx, vy, t, just_hit, tol_hit):
    """Exit time through the arc; -1 on tangency, -2 if outside on entry."""
    vv = vx * vx + vy * vy
    pv = x * vx + y * vy
    pp = x * x + y * y
    s_lo = 0.0
    if just_hit:
        # minimiser of the convex F; F'' is 2|v|^2 up to a tiny correction
        s_lo = max(-pv / vv, 0.0)
        for it in range(3):
            F, Fp = _arc_F(kind, P, x, y, vx, vy, t, s_lo)
            s_lo = max(s_lo - Fp / (2.0 * vv), 0.0)
    F_lo, Fp_lo = _arc_F(kind, P, x, y, vx, vy, t, s_lo)
    if F_lo >= 0.0:
        if just_hit:
            return -1.0
        if F_lo > 2.0 * tol_hit * r_max:
            return -2.0
        if Fp_lo >= 0.0:
            return 0.0
    s_hi = (math.sqrt(pp) + r_max) / math.sqrt(vv) * (1.0 + 1e-12) + 1e-300
    r0, w, h, dr, dw, dh = laws(kind, P, t)
    disc = pv * pv - vv * (pp - r0 * r0)
    s = (-pv + math.sqrt(max(disc, 0.0))) / vv
    if not (s_lo < s < s_hi):
        s = 0.5 * (s_lo + s_hi)
    tol_F = 2.0 * tol_hit * r_max * 1e-3
    for it in range(200):
        F, Fp = _arc_F(kind, P, x, y, vx, vy, t, s)
        if F > 0.0:
            s_hi = s
        else:
            s_lo = s
        if abs(F) <= tol_F:
            return s
        s_new = s - F / Fp if Fp != 0.0 else 0.5 * (s_lo + s_hi)
        if not (s_lo < s_new < s_hi):
            s_new = 0.5 * (s_lo + s_hi)
        if s_hi - s_lo <= 4e-16 * s_hi:
            return s_lo
        s = s_new
    return s_lo


@njit(cache=True)
def _reflect(vx, vy, nx, ny, u):
    # dividing by |n|^2 keeps a static mirror unbiased when n is a rounded unit vector
    vn = vx * nx + vy * ny
    rel = vn - u
    k = 2.0 * rel / (nx * nx + ny * ny)
    return vx - k * nx, vy - k * ny, rel


@njit(cache=True)
def _impact_angle(vx, vy, nx, ny):
    return math.atan2(nx * vy - ny * vx, nx * vx + ny * vy)


@njit(cache=True)
def _close_sojourn(kind, P, st, t_exit, caps, ncaps, tol_nu):
    """Classify the cap sojourn that ends at t_exit; store it if it is a capture."""
    ta = st[ST_TENTER]
    sp = st[ST_SINPHI]
    if nu_min(kind, P, ta, t_exit) < sp - tol_nu:
        t_in = first_below(kind, P, ta, t_exit, sp)
        if ncaps < caps.shape[0]:
            caps[ncaps, 0] = ta
            caps[ncaps, 1] = t_exit
            caps[ncaps, 2] = sp
            caps[ncaps, 3] = t_in
            caps[ncaps, 4] = t_exit
        return ncaps + 1
    return ncaps


@njit(cache=True)
def _record(rec, nrec, t, wall, x, y, phi, v_pre, v_post):
    rec[nrec, 0] = t
    rec[nrec, 1] = wall
    rec[nrec, 2] = x
    rec[nrec, 3] = y
    rec[nrec, 4] = phi
    rec[nrec, 5] = v_pre
    rec[nrec, 6] = v_post
    return nrec + 1


@njit(cache=True)
def start_sojourn(kind, P, st):
    """Initialise the sojourn fields for a particle currently in the cap."""
    r, w, h, dr, dw, dh = laws(kind, P, st[ST_T])
    v = math.sqrt(st[ST_VX] ** 2 + st[ST_VY] ** 2)
    st[ST_TENTER] = st[ST_T]
    st[ST_SINPHI] = abs(st[ST_X] * st[ST_VY] - st[ST_Y] * st[ST_VX]) / (v * r)


@njit(cache=True)
def advance(kind, P, tan_t, K, r_max, st, t_stops, energies, caps, rec, max_events, tol):
    """Run one trajectory in place until ``t_stops[-1]`` or another stop condition.

    Returns ``(status, n_captures, n_recorded)``.  ``energies[i]`` receives the
    energy at ``t_stops[i]``; ``rec`` (may have zero rows) receives one row per
    event: time, wall id, x, y, impact angle, speed before, speed after.
    """
    cos_t = 1.0 / math.sqrt(1.0 + tan_t * tan_t)
    K_side = K[1] * cos_t
    K_bot = K[2]
    tol_hit = tol[TOL_HIT]
    tol_c = tol[TOL_CORNER]
    tol_g = tol[TOL_GRAZE]
    tol_pen = tol[TOL_PEN]
    tol_nu = tol[TOL_NU]
    nrec_max = rec.shape[0]
    ncaps = 0
    nrec = 0
    n_here = 0
    x = st[ST_X]
    y = st[ST_Y]
    vx = st[ST_VX]
    vy = st[ST_VY]
    t = st[ST_T]
    region = int(st[ST_REGION])
    last = int(st[ST_LAST])
    status = OK
    while True:
        # --- next event ---
        if region == CAP:
            s_ev = _arc_time(kind, P, r_max, x, y, vx, vy, t, last == WALL_ARC, tol_hit)
            ev = WALL_ARC
            if s_ev == -1.0:
                status = TANGENCY
                break
            if s_ev == -2.0:
                status = PENETRATION
                break
            if vy < 0.0:
                s_b = -y / vy
                if s_b < s_ev:
                    s_ev = s_b
                    ev = CAP_BOTTOM
        else:
            # no wall can be further than a few stem diagonals away while the
            # walls move much slower than the particle
            r, w, h, dr, dw, dh = laws(kind, P, t)
            s_ev = 8.0 * (2.0 * r_max + h) / math.sqrt(vx * vx + vy * vy)
            s_geo = s_ev
            ev = HOLE_UP
            if vy > 0.0 and -y / vy < s_ev:
                s_ev = -y / vy
            for j in (WALL_STEM_RIGHT, WALL_STEM_LEFT, WALL_STEM_BOTTOM):
                Kj = K_bot if j == WALL_STEM_BOTTOM else K_side
                s_j = _line_time(j, kind, P, tan_t, cos_t, Kj, x, y, vx, vy, t, s_ev, tol_hit)
                if s_j < 0.0:
                    status = SOLVER
                    break
                if s_j < s_ev:
                    s_ev = s_j
                    ev = j
            if status != OK:
                break
            if s_ev >= s_geo:
                status = SOLVER
                break
        # --- cycle boundaries crossed during the free flight ---
        k = int(st[ST_STOP])
        finished = False
        while k < t_stops.shape[0] and t_stops[k] <= t + s_ev:
            ds = t_stops[k] - t
            if ds < 0.0:
                ds = 0.0
            energies[k] = 0.5 * (vx * vx + vy * vy)
            k += 1
            if k == t_stops.shape[0]:
                x += vx * ds
                y += vy * ds
                t = t_stops[k - 1]
                finished = True
        st[ST_STOP] = k
        if finished:
            if region == CAP:
                ncaps_new = _close_sojourn(kind, P, st, t, caps, ncaps, tol_nu)
                if ncaps_new > ncaps and ncaps < caps.shape[0]:
                    # still trapped: release time unknown
                    caps[ncaps, 1] = np.nan
                    caps[ncaps, 4] = np.nan
                ncaps = ncaps_new
            status = OK
            break
        # --- move to the event ---
        x += vx * s_ev
        y += vy * s_ev
        t += s_ev
        v_pre = math.sqrt(vx * vx + vy * vy)
        r, w, h, dr, dw, dh = laws(kind, P, t)
        phi = np.nan
        wall = ev
        if ev == WALL_ARC:
            if y < tol_c:
                status = CORNER
                break
            rho = math.sqrt(x * x + y * y)
            nx = x / rho
            ny = y / rho
            phi = _impact_angle(vx, vy, nx, ny)
            vx, vy, rel = _reflect(vx, vy, nx, ny, dr)
            if rel <= tol_g * v_pre:
                status = TANGENCY
                break
            st[ST_NCOLL] += 1
        elif ev == CAP_BOTTOM:
            y = 0.0
            ax = abs(x)
            if ax > w + tol_c:
                phi = _impact_angle(vx, vy, 0.0, -1.0)
                vy = -vy
                wall = WALL_CAP_RIGHT if x > 0 else WALL_CAP_LEFT
                st[ST_NCOLL] += 1
            elif ax < w - tol_c:
                wall = HOLE_DOWN
                st[ST_T] = t
                ncaps = _close_sojourn(kind, P, st, t, caps, ncaps, tol_nu)
                region = STEM
            else:
                status = CORNER
                break
        elif ev == HOLE_UP:
            y = 0.0
            if abs(x) > w - tol_c:
                status = CORNER
                break
            region = CAP
            st[ST_X] = x
            st[ST_Y] = y
            st[ST_VX] = vx
            st[ST_VY] = vy
            st[ST_T] = t
            start_sojourn(kind, P, st)
        else:
            if ev == WALL_STEM_BOTTOM:
                if abs(x) > w - h * tan_t - tol_c:
                    status = CORNER
                    break
                nx = 0.0
                ny = -1.0
                u = dh
            else:
                if y > -tol_c or y < -h + tol_c:
                    status = CORNER
                    break
                nx = cos_t if ev == WALL_STEM_RIGHT else -cos_t
                ny = -tan_t * cos_t
                u = dw * cos_t
            phi = _impact_angle(vx, vy, nx, ny)
            vx, vy, rel = _reflect(vx, vy, nx, ny, u)
            if rel <= tol_g * v_pre:
                status = TANGENCY
                break
            st[ST_NCOLL] += 1
        # --- sanity: still inside the region ---
        if region == CAP:
            if x * x + y * y > (r + tol_pen) ** 2 or y < -tol_pen:
                status = PENETRATION
                break
        else:
            if (abs(x) - w - y * tan_t) * cos_t > tol_pen or y < -h - tol_pen or y > tol_pen:
                status = PENETRATION
                break
        last = wall if wall != HOLE_UP and wall != HOLE_DOWN else WALL_NONE
        if wall == WALL_CAP_LEFT or wall == WALL_CAP_RIGHT:
            last = CAP_BOTTOM
        st[ST_NEV] += 1
        n_here += 1
        if nrec_max > 0:
            nrec = _record(rec, nrec, t, wall, x, y, phi, v_pre, math.sqrt(vx * vx + vy * vy))
        if n_here >= max_events:
            status = MAX_EVENTS
            break
        if nrec_max > 0 and nrec >= nrec_max:
            status = BUFFER_FULL
            break
    st[ST_X] = x
    st[ST_Y] = y
    st[ST_VX] = vx
    st[ST_VY] = vy
    st[ST_T] = t
    st[ST_REGION] = region
    st[ST_LAST] = last
    return status, ncaps, nrec


@njit(cache=True, parallel=True)
def advance_many(kind, P, tan_t, K, r_max, states, t_stops, energies, caps, ncaps, status, tol):
    """Independent trajectories, one per row of ``states``."""
    n = states.shape[0]
    rec = np.empty((0, 7))
    for i in prange(n):
        st_i, nc, _ = advance(kind, P, tan_t, K, r_max, states[i], t_stops, energies[i],
                              caps[i], rec, 1 << 62, tol)
        status[i] = st_i
        ncaps[i] = nc
