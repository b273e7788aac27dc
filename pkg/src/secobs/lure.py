"""Sector-bounded Lur'e plant model and the radial distribution-grid instance.

The plant is x' = A x + B phi(m), m = C x + u + d, with phi componentwise and
incrementally sector-bounded in [0, zeta_i]. The grid builder maps physical
line/service impedances and inverter droop parameters onto (A, B, C, phi)
using the linearised DistFlow relations, with squared customer voltages as
the measured quantity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nonlinearity import Affine, DeadZone, DeadZoneParams, Tabulated, saturation_limit
from .signals import Signal, constant_signal

__all__ = [
    "LureSystem",
    "GridTopology",
    "build_lure_from_grid",
    "disturbance_o",
    "plant_derivative",
    "voltage_from_state",
]


@dataclass(frozen=True)
class LureSystem:
    """The (A, B, C, zeta, phi) data of a sector-bounded Lur'e plant."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    zeta: np.ndarray
    phi: DeadZone | Affine | Tabulated

    def __post_init__(self):
        n = self.A.shape[0]
        for name in ("A", "B", "C"):
            M = getattr(self, name)
            if M.shape != (n, n):
                raise ValueError(f"{name} must be {n}x{n}, got {M.shape}")
        if self.zeta.shape != (n,):
            raise ValueError(f"zeta must have length {n}, got {self.zeta.shape}")
        if np.any(self.zeta <= 0):
            raise ValueError("all sector bounds zeta_i must be positive")
        if self.phi.n != n:
            raise ValueError(f"phi has {self.phi.n} components, expected {n}")

    @property
    def n_states(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class GridTopology:
    """Physical parameters of a radial low-voltage feeder with droop inverters.

    Impedances in ohm, powers in W / VAr / VA, voltages in V. Vectors are
    indexed by customer 1..n_customers. v0 is the substation voltage signal.
    """

    n_customers: int
    line_R: np.ndarray
    line_X: np.ndarray
    service_R: np.ndarray
    service_X: np.ndarray
    a_g: np.ndarray
    s_bar: np.ndarray
    rho_g: np.ndarray
    rho_c: np.ndarray
    q_c: np.ndarray
    v_bar: float
    v0: Signal = field(default_factory=lambda: constant_signal(230.0))
    dead_zone_half_width: float = 14899.4  # V^2, w_max = -w_min for every inverter

    def __post_init__(self):
        n = self.n_customers
        if n < 1:
            raise ValueError("n_customers must be positive")
        for name in ("line_R", "line_X", "service_R", "service_X", "a_g", "s_bar", "rho_g", "rho_c", "q_c"):
            v = getattr(self, name)
            if v.shape != (n,):
                raise ValueError(f"{name} must have length {n}, got {v.shape}")
        for name in ("line_R", "line_X", "service_R", "service_X"):
            if np.any(getattr(self, name) < 0):
                raise ValueError(f"{name} must be nonnegative")
        if np.any(self.a_g <= 0):
            raise ValueError("inverter characteristics a_g must be positive")
        if np.any(self.s_bar < np.abs(self.rho_g)):
            raise ValueError("s_bar_i >= |rho_g_i| required for a real saturation limit")

    def q_bar(self) -> np.ndarray:
        """Per-inverter reactive saturation limits derived from apparent power."""
        return np.array([saturation_limit(s, r) for s, r in zip(self.s_bar, self.rho_g)])

    def net_power(self, convention: str = "net") -> np.ndarray:
        """Active power vector used in the line-disturbance sums.

        'net' uses generation minus consumption; 'consumption' uses -rho_c.
        """
        if convention == "net":
            return self.rho_g - self.rho_c
        if convention == "consumption":
            return -self.rho_c
        raise ValueError(f"unknown power convention {convention!r}")


def build_lure_from_grid(g: GridTopology) -> LureSystem:
    """Construct the Lur'e plant of the feeder: A = diag(-a_g), B = -A, C from reactances.

    C has entry (i, j) = -2 * sum_{k<=min(i,j)} X_k minus -2 X'_i on the
    diagonal; it is symmetric and negative definite for positive reactances.
    The state is the vector of generated reactive powers, phi is the per
    inverter saturated dead-zone, and every sector bound is 1.
    """
    n = g.n_customers
    A = np.diag(-g.a_g)
    B = -A

    cum = np.cumsum(g.line_X)
    idx = np.minimum.outer(np.arange(n), np.arange(n))
    C = -2.0 * cum[idx] - 2.0 * np.diag(g.service_X)

    q_bar = g.q_bar()
    w = g.dead_zone_half_width
    phi = DeadZone(
        tuple(DeadZoneParams(q_bar=q, w_min=-w, w_m=0.0, w_n=0.0, w_max=w) for q in q_bar)
    )
    return LureSystem(A=A, B=B, C=C, zeta=np.ones(n), phi=phi)


def _beta_prime(g: GridTopology, j: int, rho_val: float, q_c_val: float) -> float:
    """Service-connection voltage drop term; index convention: 0 for j = -1."""
    if j == -1:
        return 0.0
    return g.service_R[j - 1] * rho_val + g.service_X[j - 1] * q_c_val


def disturbance_o(g: GridTopology, rho: np.ndarray, q_c: np.ndarray, i: int) -> float:
    """Aggregate downstream-load disturbance o_i at customer i (V^2).

    o_i = sum_{j<=i} obar_j + sum_{j<i} beta'_j(rho_j, q_c_j), where obar_j
    collects line drops caused by customers beyond j and vanishes when its
    inner sum over k = j+1..n is empty (j = n).
    """
    n = g.n_customers
    if not 1 <= i <= n:
        raise IndexError(f"customer index {i} outside 1..{n}")
    rho = np.asarray(rho, dtype=float)
    q_c = np.asarray(q_c, dtype=float)

    total = 0.0
    for j in range(1, i + 1):
        if j < n:
            acc = 0.0
            for k in range(j + 1, n + 1):
                acc += g.line_X[j - 1] * q_c[k - 1] - g.line_R[j - 1] * rho[k - 1]
            total += 2.0 * acc - 2.0 * _beta_prime(g, j, rho[j], q_c[j])
        # j = n: empty inner sum, the whole obar_j term vanishes
    for j in range(1, i):
        total += _beta_prime(g, j, rho[j - 1], q_c[j - 1])
    return total


def disturbance_o_vector(g: GridTopology, rho: np.ndarray, q_c: np.ndarray) -> np.ndarray:
    """All o_i stacked, i = 1..n_customers."""
    return np.array([disturbance_o(g, rho, q_c, i) for i in range(1, g.n_customers + 1)])


def droop_steady_state(sys: LureSystem, u0: np.ndarray, iters: int = 400) -> np.ndarray:
    """Equilibrium of x' = A x + B phi(C x + u0) with B = -A (droop form).

    At equilibrium x = phi(C x + u0); the map is a contraction whenever the
    composite slope bound stays below one, which holds for the shipped grids.
    """
    x = np.zeros(sys.n_states)
    for _ in range(iters):
        x_new = sys.phi(sys.C @ x + u0)
        if np.max(np.abs(x_new - x)) < 1e-13:
            return x_new
        x = x_new
    return x


def plant_derivative(sys: LureSystem, x: np.ndarray, u: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Right-hand side A x + B phi(C x + u + d)."""
    n = sys.n_states
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    d = np.asarray(d, dtype=float)
    if x.shape != (n,) or u.shape != (n,) or d.shape != (n,):
        raise ValueError(f"x, u, d must all have shape ({n},)")
    m = sys.C @ x + u + d
    return sys.A @ x + sys.B @ sys.phi(m)


def voltage_from_state(
    g: GridTopology,
    C: np.ndarray,
    x: np.ndarray,
    rho: np.ndarray,
    q_c: np.ndarray,
    v0: float,
):
    """Squared customer voltages v_i^2 = C_i x - o_i + v0^2 for a state or estimate.

    Returns (v_squared, n_negative): entries below zero indicate operation
    outside the linearised model's regime and are counted, not raised.
    """
    if v0 <= 0:
        raise ValueError("substation voltage must be positive")
    o = disturbance_o_vector(g, rho, q_c)
    v_sq = C @ np.asarray(x, dtype=float) - o + v0 * v0
    return v_sq, int(np.sum(v_sq < 0))
