"""Bank of super- and sub-observers with zero-order-hold innovations.

Each observer integrates a copy of the plant driven by an innovation term
that is frozen at the latest sample: for sensor subset S,

    xhat' = A xhat + B phi(C xhat + u + K_S @ inn) + L_S @ inn,
    inn   = C_S xhat(t_k) + u_S(t_k) - y_S(t_k)   (held between samples).

Super-observers use n_c - n_a sensors, sub-observers n_c - 2 n_a; the final
estimate is the super-observer most consistent with its sub-observers.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .channel import MeasurementPacket
from .lure import LureSystem

__all__ = [
    "SensorSubset",
    "ObserverBank",
    "ObserverRuntime",
    "enumerate_subsets",
    "restrict_rows",
    "restrict_vec",
    "observer_derivative",
    "on_packet",
    "consistency_measures",
    "select_estimate",
]


@dataclass(frozen=True)
class SensorSubset:
    """Ordered set of 1-based sensor indices used by one observer."""

    indices: tuple[int, ...]
    kind: str  # "super" | "sub"

    def __post_init__(self):
        if self.kind not in ("super", "sub"):
            raise ValueError(f"kind must be super or sub, got {self.kind!r}")
        if any(i < 1 for i in self.indices):
            raise ValueError("sensor indices are 1-based")
        if list(self.indices) != sorted(set(self.indices)):
            raise ValueError("indices must be strictly increasing")

    @property
    def rows(self) -> np.ndarray:
        """Zero-based row selector."""
        return np.asarray(self.indices, dtype=int) - 1

    def __len__(self):
        return len(self.indices)


def enumerate_subsets(n_c: int, n_a: int):
    """All sensor subsets of sizes n_c - n_a (supers) and n_c - 2 n_a (subs).

    Returns (supers, subs, sub_of) with subsets in lexicographic order and
    sub_of mapping 1-based super index -> 1-based sub indices contained in it.
    """
    if 2 * n_a >= n_c:
        raise ValueError(f"need 2*n_a < n_c for resilience, got n_a={n_a}, n_c={n_c}")
    sensors = range(1, n_c + 1)
    supers = [SensorSubset(s, "super") for s in itertools.combinations(sensors, n_c - n_a)]
    subs = [SensorSubset(s, "sub") for s in itertools.combinations(sensors, n_c - 2 * n_a)]
    sub_of = {
        i + 1: [j + 1 for j, sub in enumerate(subs) if set(sub.indices) <= set(sup.indices)]
        for i, sup in enumerate(supers)
    }
    return supers, subs, sub_of


def restrict_rows(M: np.ndarray, S: SensorSubset) -> np.ndarray:
    """Rows of M indexed by the subset, stacked in subset order."""
    if np.max(S.rows) >= M.shape[0]:
        raise IndexError(f"subset {S.indices} exceeds {M.shape[0]} rows")
    return M[S.rows, :]


def restrict_vec(v: np.ndarray, S: SensorSubset) -> np.ndarray:
    v = np.asarray(v)
    if np.max(S.rows) >= v.shape[0]:
        raise IndexError(f"subset {S.indices} exceeds vector length {v.shape[0]}")
    return v[S.rows]


@dataclass(frozen=True)
class ObserverBank:
    """All observers (supers first, then subs) with their designed gains."""

    subsets: tuple[SensorSubset, ...]
    K: tuple[np.ndarray, ...]  # per observer, n_c x |S|
    L: tuple[np.ndarray, ...]
    sub_of: dict[int, list[int]]  # 1-based super index -> 1-based sub indices
    n_c: int
    n_a: int

    def __post_init__(self):
        n_super = self.n_super
        expected = {"super": self.n_c - self.n_a, "sub": self.n_c - 2 * self.n_a}
        for pos, s in enumerate(self.subsets):
            want_kind = "super" if pos < n_super else "sub"
            if s.kind != want_kind or len(s) != expected[s.kind]:
                raise ValueError(f"subset {pos} has wrong kind/size for this bank")
        for name, gains in (("K", self.K), ("L", self.L)):
            if len(gains) != len(self.subsets):
                raise ValueError(f"{name} has {len(gains)} blocks for {len(self.subsets)} observers")
            for g, s in zip(gains, self.subsets):
                if g.shape != (self.n_c, len(s)):
                    raise ValueError(f"{name} block shape {g.shape} != ({self.n_c}, {len(s)})")

    @property
    def n_super(self) -> int:
        return sum(1 for s in self.subsets if s.kind == "super")

    @property
    def n_obs(self) -> int:
        return len(self.subsets)

    @staticmethod
    def with_gains(n_c, n_a, K_list, L_list) -> "ObserverBank":
        supers, subs, sub_of = enumerate_subsets(n_c, n_a)
        return ObserverBank(
            subsets=tuple(supers + subs),
            K=tuple(np.asarray(k, dtype=float) for k in K_list),
            L=tuple(np.asarray(l, dtype=float) for l in L_list),
            sub_of=sub_of,
            n_c=n_c,
            n_a=n_a,
        )

    @staticmethod
    def zero_gains(n_c, n_a) -> "ObserverBank":
        supers, subs, _ = enumerate_subsets(n_c, n_a)
        K = [np.zeros((n_c, len(s))) for s in supers + subs]
        return ObserverBank.with_gains(n_c, n_a, K, [k.copy() for k in K])


class ObserverRuntime:
    """Mutable per-run state: current estimates plus innovations held since t_k.

    Held data changes only in on_packet; between samples it is bitwise
    constant, so derivative evaluations may run concurrently per observer.
    """

    def __init__(self, bank: ObserverBank, x_hat0: np.ndarray):
        x_hat0 = np.asarray(x_hat0, dtype=float)
        if x_hat0.shape == (bank.n_c,):
            x_hat0 = np.tile(x_hat0, (bank.n_obs, 1))
        if x_hat0.shape != (bank.n_obs, bank.n_c):
            raise ValueError(f"x_hat0 must be ({bank.n_obs}, {bank.n_c}) or ({bank.n_c},)")
        self.bank = bank
        self.x_hat = x_hat0.copy()
        self.innovation = tuple(np.zeros(len(s)) for s in bank.subsets)
        # Precomposed hold vectors L_S @ inn and K_S @ inn, one row per observer.
        self.l_hold = np.zeros((bank.n_obs, bank.n_c))
        self.k_hold = np.zeros((bank.n_obs, bank.n_c))
        self.last_k = -1
        self.last_t = -np.inf


def on_packet(rt: ObserverRuntime, packet: MeasurementPacket, u_tk: np.ndarray, C: np.ndarray):
    """Refresh every observer's held innovation from a newly received packet.

    Estimates themselves are continuous across samples. Packets must arrive
    in sample order.
    """
    if packet.k <= rt.last_k or packet.t_k < rt.last_t:
        raise ValueError(
            f"out-of-order packet: k={packet.k} at t={packet.t_k} after "
            f"k={rt.last_k} at t={rt.last_t}"
        )
    bank = rt.bank
    innovations = []
    for pos, S in enumerate(bank.subsets):
        rows = S.rows
        inn = C[rows, :] @ rt.x_hat[pos] + u_tk[rows] - packet.y[rows]
        innovations.append(inn)
        rt.l_hold[pos] = bank.L[pos] @ inn
        rt.k_hold[pos] = bank.K[pos] @ inn
    rt.innovation = tuple(innovations)
    rt.last_k = packet.k
    rt.last_t = packet.t_k
    return rt


def observer_derivative(
    sys: LureSystem,
    S: SensorSubset,
    K: np.ndarray,
    L: np.ndarray,
    x_hat: np.ndarray,
    innovation: np.ndarray,
    u: np.ndarray,
) -> np.ndarray:
    """Single-observer right-hand side with a held innovation vector.

    innovation is C_S xhat(t_k) + u_S(t_k) - y_S(t_k) from the latest packet
    (zeros before the first packet).
    """
    m_hat = sys.C @ x_hat + u + K @ innovation
    return sys.A @ x_hat + sys.B @ sys.phi(m_hat) + L @ innovation


def bank_derivative(
    sys: LureSystem, x_hat: np.ndarray, k_hold: np.ndarray, l_hold: np.ndarray, u: np.ndarray
) -> np.ndarray:
    """All observer derivatives at once, one row per observer.

    k_hold and l_hold are the precomposed K_S @ inn and L_S @ inn rows held
    since the last packet; pure in all arguments.
    """
    m_hat = x_hat @ sys.C.T + u + k_hold
    return x_hat @ sys.A.T + sys.phi(m_hat) @ sys.B.T + l_hold


def consistency_measures(estimates: np.ndarray, sub_of: dict[int, list[int]], n_super: int) -> np.ndarray:
    """Per super-observer: the largest distance to any of its sub-observers.

    estimates stacks all observer estimates (supers first) as rows.
    """
    pi = np.empty(n_super)
    for i in range(1, n_super + 1):
        sup = estimates[i - 1]
        subs = sub_of[i]
        pi[i - 1] = max(np.linalg.norm(sup - estimates[n_super + j - 1]) for j in subs)
    return pi


def select_estimate(pi: np.ndarray, super_estimates: np.ndarray):
    """Estimate of the most consistent super-observer; ties go to the lowest index.

    Returns (x_hat, sigma) with sigma the 1-based winning super index.
    """
    if len(pi) == 0:
        raise ValueError("empty consistency vector")
    sigma = int(np.argmin(pi))  # argmin returns the first minimiser
    return super_estimates[sigma].copy(), sigma + 1
