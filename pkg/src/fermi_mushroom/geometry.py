"""Frozen tilted-mushroom geometry.

The domain is the union of a half-disk cap ``x**2 + y**2 <= r**2, y >= 0``
and a trapezoidal stem ``|x| <= w + y*tan_theta, -h <= y <= 0``.  Phase-space
volumes are taken on the energy level ``E = 1/2`` (unit speed), where the
volume over a region of the plane is ``2*pi`` times its area.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np


class ShapeError(ValueError):
    """Raised when mushroom parameters violate the admissible region."""


class Region(str, Enum):
    CAP = "cap"
    STEM = "stem"
    OUTSIDE = "outside"


@dataclass(frozen=True)
class MushroomShape:
    """Cap radius ``r``, hole half-width ``w``, stem length ``h`` and stem wall slope."""

    r: float
    w: float
    h: float
    tan_theta: float = 0.0

    def __post_init__(self):
        check_shape(self.r, self.w, self.h, self.tan_theta)

    @property
    def nu(self) -> float:
        return self.w / self.r

    @property
    def foot_half_width(self) -> float:
        """Half-width of the stem at its bottom ``y = -h``."""
        return self.w - self.h * self.tan_theta

    def to_dict(self) -> dict:
        return {"r": self.r, "w": self.w, "h": self.h, "tan_theta": self.tan_theta}


@dataclass(frozen=True)
class PhaseVolumes:
    v_cap: float
    v_stem: float
    v_ell: float
    v_cha: float

    @property
    def total(self) -> float:
        return self.v_cap + self.v_stem

    def to_dict(self) -> dict:
        return {"v_cap": self.v_cap, "v_stem": self.v_stem,
                "v_ell": self.v_ell, "v_cha": self.v_cha}


def check_shape(r, w, h, tan_theta, rtol=1e-12):
    """Raise :class:`ShapeError` naming the first violated invariant."""
    if not all(math.isfinite(v) for v in (r, w, h, tan_theta)):
        raise ShapeError("parameters must be finite")
    if r <= 0:
        raise ShapeError(f"r > 0 violated (r={r})")
    if h < 0:
        raise ShapeError(f"h ≥ 0 violated (h={h})")
    if w < 0:
        raise ShapeError(f"w ≥ 0 violated (w={w})")
    if w > r * (1 + rtol):
        raise ShapeError(f"w ≤ r violated (w={w}, r={r})")
    # a stem that pinches to a point above y = -h is not supported
    if tan_theta > 0 and w < h * tan_theta * (1 - rtol):
        raise ShapeError(f"w ≥ h·tanθ violated (w={w}, h·tanθ={h * tan_theta})")


def delta(nu):
    """Fraction of the cap phase volume occupied by the elliptic island.

    ``delta(nu) = (2/pi) * (arccos(nu) - nu*sqrt(1 - nu**2))`` for ``0 <= nu <= 1``.
    Accepts scalars or arrays.
    """
    nu_arr = np.asarray(nu, dtype=float)
    if np.any((nu_arr < 0) | (nu_arr > 1)) or np.any(np.isnan(nu_arr)):
        raise ValueError("delta: nu must lie in [0, 1]")
    out = (2.0 / np.pi) * (np.arccos(nu_arr) - nu_arr * np.sqrt(1.0 - nu_arr**2))
    return float(out) if out.ndim == 0 else out


def delta_prime(nu):
    """Derivative ``d delta / d nu = -(4/pi) sqrt(1 - nu**2)``."""
    nu_arr = np.asarray(nu, dtype=float)
    if np.any((nu_arr < 0) | (nu_arr > 1)) or np.any(np.isnan(nu_arr)):
        raise ValueError("delta_prime: nu must lie in [0, 1]")
    out = -(4.0 / np.pi) * np.sqrt(1.0 - nu_arr**2)
    return float(out) if out.ndim == 0 else out


def volume_arrays(r, w, h, tan_theta):
    """Vectorised ``(v_cap, v_stem, v_ell, v_cha)`` for parameter arrays.

    No shape validation is done here; callers pass protocol samples that were
    validated when the protocol was built.
    """
    r = np.asarray(r, dtype=float)
    w = np.asarray(w, dtype=float)
    h = np.asarray(h, dtype=float)
    v_cap = np.pi**2 * r**2
    v_stem = 2.0 * np.pi * (2.0 * w * h - h**2 * tan_theta)
    nu = np.clip(w / r, 0.0, 1.0)
    v_ell = delta(nu) * v_cap
    return v_cap, v_stem, v_ell, v_cap + v_stem - v_ell


def volumes(shape: MushroomShape) -> PhaseVolumes:
    v_cap, v_stem, v_ell, v_cha = volume_arrays(shape.r, shape.w, shape.h, shape.tan_theta)
    return PhaseVolumes(float(v_cap), float(v_stem), float(v_ell), float(v_cha))


def area(shape: MushroomShape) -> float:
    return math.pi * shape.r**2 / 2 + 2 * shape.w * shape.h - shape.h**2 * shape.tan_theta


def region_codes(shape: MushroomShape, x, y):
    """Vectorised membership: 0 = cap, 1 = stem, -1 = outside.

    Boundary points count as inside; the shared segment ``y = 0, |x| <= w``
    belongs to the cap.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    in_cap = (x * x + y * y <= shape.r**2) & (y >= 0)
    in_stem = (np.abs(x) <= shape.w + y * shape.tan_theta) & (y >= -shape.h) & (y <= 0)
    return np.where(in_cap, 0, np.where(in_stem, 1, -1))


def contains(shape: MushroomShape, point) -> Region:
    code = int(region_codes(shape, point[0], point[1]))
    return {0: Region.CAP, 1: Region.STEM, -1: Region.OUTSIDE}[code]


def bounding_box(shape: MushroomShape):
    """``(xmin, xmax, ymin, ymax)`` enclosing the domain."""
    half = max(shape.r, shape.w, shape.foot_half_width)
    return -half, half, -shape.h, shape.r
