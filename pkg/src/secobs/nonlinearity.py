"""Sector-bounded scalar nonlinearity families.

Nonlinearities are closed-form parameterised descriptors rather than opaque
callables so that sector bounds can be extracted for synthesis and checked
numerically. Three families are provided: the saturated dead-zone used by
inverter droop controllers, plain affine maps, and tabulated interpolants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DeadZoneParams",
    "DeadZone",
    "Affine",
    "Tabulated",
    "dead_zone_phi",
    "saturation_limit",
    "sector_check",
]


class ParameterError(ValueError):
    """Raised when a nonlinearity descriptor violates its parameter ordering."""


@dataclass(frozen=True)
class DeadZoneParams:
    """Parameters of a saturated dead-zone: ramps between +-q_bar outside a flat band.

    Breakpoints must satisfy w_min <= w_m <= w_n <= w_max. A ramp may be
    degenerate (zero width); the saturation branch then takes over directly.
    """

    q_bar: float
    w_min: float
    w_m: float
    w_n: float
    w_max: float

    def __post_init__(self):
        if not self.q_bar > 0:
            raise ParameterError(f"q_bar must be positive, got {self.q_bar}")
        if not (self.w_min <= self.w_m <= self.w_n <= self.w_max):
            raise ParameterError(
                f"breakpoints must be ordered w_min <= w_m <= w_n <= w_max, "
                f"got ({self.w_min}, {self.w_m}, {self.w_n}, {self.w_max})"
            )
        if self.w_min == self.w_m and self.w_n == self.w_max:
            raise ParameterError("both ramps degenerate: output would be discontinuous")

    @property
    def lipschitz(self) -> float:
        """Largest ramp slope (global Lipschitz constant)."""
        slopes = []
        if self.w_m > self.w_min:
            slopes.append(self.q_bar / (self.w_m - self.w_min))
        if self.w_max > self.w_n:
            slopes.append(self.q_bar / (self.w_max - self.w_n))
        return max(slopes)


def dead_zone_phi(w, p: DeadZoneParams):
    """Evaluate the five-branch saturated dead-zone at w (scalar or array).

    Saturates at -q_bar below w_min and +q_bar above w_max, is zero on
    (w_m, w_n], and ramps linearly in between. Monotone nondecreasing.
    """
    w = np.asarray(w, dtype=float)
    out = np.zeros_like(w)

    out = np.where(w <= p.w_min, -p.q_bar, out)
    if p.w_m > p.w_min:
        ramp = -(1.0 - (w - p.w_min) / (p.w_m - p.w_min)) * p.q_bar
        out = np.where((w > p.w_min) & (w <= p.w_m), ramp, out)
    if p.w_max > p.w_n:
        ramp = (w - p.w_n) / (p.w_max - p.w_n) * p.q_bar
        out = np.where((w > p.w_n) & (w <= p.w_max), ramp, out)
    out = np.where(w > p.w_max, p.q_bar, out)
    if out.ndim == 0:
        return float(out)
    return out


def saturation_limit(s_bar: float, rho_g: float) -> float:
    """Reactive-power saturation limit sqrt(s_bar^2 - rho_g^2) of an inverter."""
    if s_bar < abs(rho_g):
        raise ValueError(
            f"apparent power {s_bar} below active power magnitude {abs(rho_g)}: "
            f"saturation limit would be imaginary"
        )
    return math.sqrt(s_bar * s_bar - rho_g * rho_g)


@dataclass(frozen=True)
class DeadZone:
    """Componentwise saturated dead-zone nonlinearity.

    Accepts arrays of shape (..., n); the last axis indexes components.
    """

    params: tuple[DeadZoneParams, ...]

    def __call__(self, m):
        m = np.asarray(m, dtype=float)
        out = np.empty_like(m)
        for i, p in enumerate(self.params):
            out[..., i] = dead_zone_phi(m[..., i], p)
        return out

    def component(self, i: int):
        p = self.params[i]
        return lambda w: dead_zone_phi(w, p)

    @property
    def n(self) -> int:
        return len(self.params)

    def slope_bounds(self) -> np.ndarray:
        """Per-component Lipschitz constants (tightest valid sector upper bounds)."""
        return np.array([p.lipschitz for p in self.params])


@dataclass(frozen=True)
class Affine:
    """Componentwise affine nonlinearity phi_i(w) = slope_i * w + offset_i."""

    slope: tuple[float, ...]
    offset: tuple[float, ...]

    def __post_init__(self):
        if len(self.slope) != len(self.offset):
            raise ParameterError("slope and offset lengths differ")
        if any(s < 0 for s in self.slope):
            raise ParameterError("negative slope violates the sector lower bound 0")

    def __call__(self, m):
        m = np.asarray(m, dtype=float)
        return np.asarray(self.slope) * m + np.asarray(self.offset)

    def component(self, i: int):
        s, o = self.slope[i], self.offset[i]
        return lambda w: s * w + o

    @property
    def n(self) -> int:
        return len(self.slope)

    def slope_bounds(self) -> np.ndarray:
        return np.asarray(self.slope, dtype=float)


@dataclass(frozen=True)
class Tabulated:
    """Componentwise piecewise-linear nonlinearity from breakpoint tables.

    Each component is (w_knots, values) with strictly increasing knots;
    evaluation clamps outside the table (constant extrapolation).
    """

    tables: tuple[tuple[tuple[float, ...], tuple[float, ...]], ...]

    def __post_init__(self):
        for knots, vals in self.tables:
            if len(knots) != len(vals) or len(knots) < 2:
                raise ParameterError("each table needs matching knots/values, length >= 2")
            if any(b <= a for a, b in zip(knots, knots[1:])):
                raise ParameterError("table knots must be strictly increasing")

    def __call__(self, m):
        m = np.asarray(m, dtype=float)
        out = np.empty_like(m)
        for i, (knots, vals) in enumerate(self.tables):
            out[..., i] = np.interp(m[..., i], knots, vals)
        return out

    def component(self, i: int):
        knots, vals = self.tables[i]
        return lambda w: float(np.interp(w, knots, vals))

    @property
    def n(self) -> int:
        return len(self.tables)

    def slope_bounds(self) -> np.ndarray:
        out = []
        for knots, vals in self.tables:
            k = np.asarray(knots)
            v = np.asarray(vals)
            out.append(np.max(np.abs(np.diff(v) / np.diff(k))))
        return np.array(out)


def sector_check(phi, zeta, n_pairs: int, rng_range=(-1e5, 1e5), seed: int = 0) -> bool:
    """Randomised incremental-sector test: slopes of phi_i between sampled pairs in [0, zeta_i].

    Deterministic for a fixed seed. Returns False on the first violating pair.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    zeta = np.atleast_1d(np.asarray(zeta, dtype=float))
    rng = np.random.default_rng(seed)
    lo, hi = rng_range
    tol = 1e-9
    for i in range(phi.n):
        f = phi.component(i)
        for _ in range(n_pairs):
            a, b = rng.uniform(lo, hi, size=2)
            if a == b:
                continue
            slope = (f(a) - f(b)) / (a - b)
            if slope < -tol or slope > zeta[i] * (1 + 1e-12) + tol:
                return False
    return True
