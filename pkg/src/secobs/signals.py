"""Parameterised time signals used for substation voltage, attacks and disturbances.

Kinds: constant, sine, cos, square (sign of a sine, with sign(0) = 0), and
table (zoh or linear interpolation). Signals are plain data so scenario
configs can round-trip them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Signal", "constant_signal", "signal_from_dict", "signal_to_dict"]

_KINDS = ("constant", "sine", "cos", "square", "table")


@dataclass(frozen=True)
class Signal:
    kind: str
    value: float = 0.0
    amplitude: float = 0.0
    omega: float = 0.0
    phase: float = 0.0
    offset: float = 0.0
    times: tuple[float, ...] = ()
    values: tuple[float, ...] = ()
    interp: str = "zoh"

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown signal kind {self.kind!r}; expected one of {_KINDS}")
        if self.kind == "table":
            if len(self.times) != len(self.values) or len(self.times) < 1:
                raise ValueError("table signal needs matching, nonempty times/values")
            if any(b <= a for a, b in zip(self.times, self.times[1:])):
                raise ValueError("table times must be strictly increasing")
            if self.interp not in ("zoh", "linear"):
                raise ValueError(f"table interp must be zoh or linear, got {self.interp!r}")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            out = np.full_like(t, self.value)
        elif self.kind == "sine":
            out = self.offset + self.amplitude * np.sin(self.omega * t + self.phase)
        elif self.kind == "cos":
            out = self.offset + self.amplitude * np.cos(self.omega * t + self.phase)
        elif self.kind == "square":
            out = self.offset + self.amplitude * np.sign(np.sin(self.omega * t + self.phase))
        else:  # table
            times = np.asarray(self.times)
            values = np.asarray(self.values)
            if self.interp == "linear":
                out = np.interp(t, times, values)
            else:
                idx = np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 1)
                out = values[idx]
        if out.ndim == 0:
            return float(out)
        return out

    def scaled(self, factor: float) -> "Signal":
        """Signal with amplitude-like fields multiplied by factor (attack scaling)."""
        if self.kind == "constant":
            return Signal(kind="constant", value=self.value * factor)
        if self.kind == "table":
            return Signal(
                kind="table",
                times=self.times,
                values=tuple(v * factor for v in self.values),
                interp=self.interp,
            )
        return Signal(
            kind=self.kind,
            amplitude=self.amplitude * factor,
            omega=self.omega,
            phase=self.phase,
            offset=self.offset * factor,
        )


def constant_signal(value: float) -> Signal:
    return Signal(kind="constant", value=value)


def signal_from_dict(d: dict) -> Signal:
    d = dict(d)
    kind = d.pop("kind")
    if kind == "table":
        d["times"] = tuple(d.get("times", ()))
        d["values"] = tuple(d.get("values", ()))
    return Signal(kind=kind, **d)


def signal_to_dict(s: Signal) -> dict:
    if s.kind == "constant":
        return {"kind": s.kind, "value": s.value}
    if s.kind == "table":
        return {"kind": s.kind, "times": list(s.times), "values": list(s.values), "interp": s.interp}
    return {
        "kind": s.kind,
        "amplitude": s.amplitude,
        "omega": s.omega,
        "phase": s.phase,
        "offset": s.offset,
    }
