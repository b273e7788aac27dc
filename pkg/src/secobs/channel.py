"""Sampling schedules, sensor-attack scenarios and measurement packets.

Measurements leave the plant continuously but reach the estimator only at
sample times t_k, where the channel may add a per-sensor attack signal and
noise: y(t_k) = m(t_k) + a(t_k) + eta(t_k).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .signals import Signal

__all__ = [
    "ScheduleError",
    "SamplingSchedule",
    "AttackScenario",
    "AttackViolation",
    "MeasurementPacket",
    "sample_times",
    "attack_value",
    "attack_vector",
    "emit_packet",
    "validate_attack",
]

# Round-off slack when validating generated inter-sample gaps.
_GAP_SLACK = 1e-9


class ScheduleError(ValueError):
    """Raised when a sampling pattern violates its inter-sample bounds."""


@dataclass(frozen=True)
class SamplingSchedule:
    """Inter-sample time pattern with bounds [T_lower, T_upper]; t_0 = 0.

    mode 'repeat_pattern' cycles the pattern indefinitely; 'explicit_list'
    uses it once (the horizon must fit within the listed gaps).
    """

    pattern: tuple[float, ...]
    T_lower: float
    T_upper: float
    mode: str = "repeat_pattern"

    def __post_init__(self):
        if not (0 < self.T_lower < self.T_upper):
            raise ScheduleError(f"need 0 < T_lower < T_upper, got ({self.T_lower}, {self.T_upper})")
        if len(self.pattern) == 0:
            raise ScheduleError("empty sampling pattern")
        if self.mode not in ("repeat_pattern", "explicit_list"):
            raise ScheduleError(f"unknown schedule mode {self.mode!r}")
        for g in self.pattern:
            if g < self.T_lower - _GAP_SLACK or g > self.T_upper + _GAP_SLACK:
                raise ScheduleError(
                    f"pattern element {g} outside [{self.T_lower}, {self.T_upper}]"
                )


def sample_times(s: SamplingSchedule, horizon: float) -> np.ndarray:
    """Sample instants t_0 = 0 < t_1 < ... covering [0, horizon].

    Prefix sums are accumulated in extended precision so the returned doubles
    are correctly rounded partial sums of the pattern.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if s.mode == "repeat_pattern":
        n_rep = int(np.ceil(horizon / (s.T_lower * len(s.pattern)))) + 1
        gaps = np.tile(np.asarray(s.pattern, dtype=np.longdouble), n_rep)
    else:
        gaps = np.asarray(s.pattern, dtype=np.longdouble)
        if float(np.sum(gaps)) < horizon:
            raise ScheduleError("explicit gap list does not cover the horizon")
    t = np.concatenate(([np.longdouble(0.0)], np.cumsum(gaps)))
    t64 = t.astype(np.float64)
    keep = t64 <= horizon + _GAP_SLACK
    return t64[keep]


@dataclass(frozen=True)
class AttackScenario:
    """A constant set of attacked sensors with per-sensor attack signals.

    n_attacked_max is the declared bound N_a; resilience requires
    2 * N_a < n_sensors, checked by validate_attack.
    """

    attacked: frozenset[int]
    signals: dict[int, Signal] = field(default_factory=dict)
    n_attacked_max: int = 0

    def __post_init__(self):
        extra = set(self.signals) - set(self.attacked)
        if extra:
            raise ValueError(f"signals given for non-attacked sensors {sorted(extra)}")

    def scaled(self, factor: float) -> "AttackScenario":
        return AttackScenario(
            attacked=self.attacked,
            signals={i: sig.scaled(factor) for i, sig in self.signals.items()},
            n_attacked_max=self.n_attacked_max,
        )

    @staticmethod
    def none() -> "AttackScenario":
        return AttackScenario(attacked=frozenset(), signals={}, n_attacked_max=0)


@dataclass(frozen=True)
class AttackViolation:
    """Structured report of which resilience clause an attack scenario breaks."""

    ok: bool
    clauses: tuple[str, ...] = ()

    def __bool__(self):
        return self.ok


def validate_attack(sc: AttackScenario, n_c: int) -> AttackViolation:
    """Check |attacked| <= N_a and 2 N_a < n_c; report every failed clause."""
    clauses = []
    if len(sc.attacked) > sc.n_attacked_max:
        clauses.append(
            f"{len(sc.attacked)} sensors attacked but only N_a={sc.n_attacked_max} declared"
        )
    if 2 * sc.n_attacked_max >= n_c:
        clauses.append(
            f"2*N_a = {2 * sc.n_attacked_max} >= n_sensors = {n_c}: majority selection impossible"
        )
    bad = [i for i in sc.attacked if not 1 <= i <= n_c]
    if bad:
        clauses.append(f"attacked sensor indices {sorted(bad)} outside 1..{n_c}")
    return AttackViolation(ok=not clauses, clauses=tuple(clauses))


def attack_value(sc: AttackScenario, i: int, t: float) -> float:
    """Attack signal on sensor i at time t; zero for non-attacked sensors."""
    if i < 1:
        raise IndexError(f"sensor index {i} must be >= 1")
    if i not in sc.attacked:
        return 0.0
    sig = sc.signals.get(i)
    return 0.0 if sig is None else float(sig(t))


def attack_vector(sc: AttackScenario, n_c: int, t: float) -> np.ndarray:
    return np.array([attack_value(sc, i, t) for i in range(1, n_c + 1)])


@dataclass(frozen=True)
class MeasurementPacket:
    """One synchronous transmission: y = m + a(t_k) + eta at sample index k."""

    t_k: float
    y: np.ndarray
    k: int


def emit_packet(
    m: np.ndarray, sc: AttackScenario, noise: np.ndarray, t_k: float, k: int
) -> MeasurementPacket:
    """Form the received packet from the true output, attack and noise."""
    m = np.asarray(m, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if m.shape != noise.shape:
        raise ValueError(f"output shape {m.shape} and noise shape {noise.shape} differ")
    y = m + attack_vector(sc, m.shape[0], t_k) + noise
    return MeasurementPacket(t_k=float(t_k), y=y, k=int(k))
