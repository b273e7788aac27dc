"""Config parsing, design-file round-trip and trajectory export.

Scenario configs are YAML with unit-suffixed keys; the design file is JSON
with matrices stored row-major alongside their dimensions, and is the
contract between the design and simulate commands.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .bank import ObserverBank, SensorSubset
from .channel import AttackScenario, SamplingSchedule
from .lure import GridTopology, LureSystem, build_lure_from_grid
from .signals import Signal, signal_from_dict
from .sim import ScenarioConfig, Trajectory
from .synthesis import CertificateStage1, CertificateStage2, GainDesign, SynthesisOptions

__all__ = [
    "ConfigError",
    "ScenarioBundle",
    "load_scenario",
    "apply_overrides",
    "save_design",
    "load_design",
    "write_trajectory_csv",
    "write_trajectory_npz",
    "load_trajectory_npz",
    "write_metrics",
    "write_figure_data",
]

_GRID_KEYS = {
    "n_customers",
    "line_R",
    "line_X",
    "service_R",
    "service_X",
    "a_g",
    "s_bar",
    "rho_g",
    "rho_c",
    "q_c",
    "v_bar",
    "v0",
}


class ConfigError(ValueError):
    """Malformed scenario config; message carries location diagnostics."""


@dataclass
class ScenarioBundle:
    """Parsed scenario: plant, channel, run settings and synthesis settings."""

    grid: GridTopology | None
    system: LureSystem
    schedule: SamplingSchedule
    attack: AttackScenario
    n_attacked_max: int
    T_bar: float
    horizon: float
    step: float
    seed: int
    noise_amplitude: float
    x0: np.ndarray | str | None
    xhat0: float | np.ndarray
    rho_convention: str
    disturbance: Signal
    synthesis: SynthesisOptions

    def resolve_x0(self) -> np.ndarray | None:
        """Initial plant state; 'steady' solves the droop equilibrium at t = 0."""
        if isinstance(self.x0, str):
            if self.x0 != "steady":
                raise ConfigError(f"x0 must be a list or 'steady', got {self.x0!r}")
            from .lure import disturbance_o_vector, droop_steady_state

            g = self.grid
            o = disturbance_o_vector(g, g.net_power(self.rho_convention), g.q_c)
            u0 = g.v_bar**2 - float(g.v0(0.0)) ** 2 + o
            return droop_steady_state(self.system, u0)
        return None if self.x0 is None else self.x0.copy()

    def scenario_config(self, attack_scale: float = 1.0, seed: int | None = None, noise_amplitude: float | None = None) -> ScenarioConfig:
        return ScenarioConfig(
            system=self.system,
            schedule=self.schedule,
            attack=self.attack,
            horizon=self.horizon,
            h=self.step,
            grid=self.grid,
            noise_amplitude=self.noise_amplitude if noise_amplitude is None else noise_amplitude,
            disturbance=self.disturbance,
            x0=self.resolve_x0(),
            xhat0=self.xhat0,
            seed=self.seed if seed is None else seed,
            attack_scale=attack_scale,
            rho_convention=self.rho_convention,
        )


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"missing key {key!r} in section {where!r}")
    return d[key]


def _vector(d: dict, key: str, n: int, where: str) -> np.ndarray:
    v = np.asarray(_require(d, key, where), dtype=float)
    if v.shape != (n,):
        raise ConfigError(f"{where}.{key} must list {n} values, got shape {v.shape}")
    return v


def grid_from_dict(d: dict) -> GridTopology:
    unknown = set(d) - _GRID_KEYS - {"dead_zone_half_width_V2"}
    if unknown:
        raise ConfigError(f"unknown grid keys {sorted(unknown)}")
    n = int(_require(d, "n_customers", "grid"))
    kwargs = {}
    if "dead_zone_half_width_V2" in d:
        kwargs["dead_zone_half_width"] = float(d["dead_zone_half_width_V2"])
    return GridTopology(
        n_customers=n,
        line_R=_vector(d, "line_R", n, "grid"),
        line_X=_vector(d, "line_X", n, "grid"),
        service_R=_vector(d, "service_R", n, "grid"),
        service_X=_vector(d, "service_X", n, "grid"),
        a_g=_vector(d, "a_g", n, "grid"),
        s_bar=_vector(d, "s_bar", n, "grid"),
        rho_g=_vector(d, "rho_g", n, "grid"),
        rho_c=_vector(d, "rho_c", n, "grid"),
        q_c=_vector(d, "q_c", n, "grid"),
        v_bar=float(_require(d, "v_bar", "grid")),
        v0=signal_from_dict(_require(d, "v0", "grid")),
        **kwargs,
    )


def load_scenario(path) -> ScenarioBundle:
    """Parse a scenario YAML file into typed objects."""
    text = Path(path).read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"invalid YAML in {path}{loc}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return scenario_from_dict(raw)


def scenario_from_dict(raw: dict) -> ScenarioBundle:
    grid = grid_from_dict(_require(raw, "grid", "config")) if "grid" in raw else None
    if grid is None:
        raise ConfigError("config must define a grid section")
    system = build_lure_from_grid(grid)

    s = _require(raw, "sampling", "config")
    schedule = SamplingSchedule(
        pattern=tuple(float(x) for x in _require(s, "pattern_s", "sampling")),
        T_lower=float(_require(s, "T_lower_s", "sampling")),
        T_upper=float(_require(s, "T_bar_s", "sampling")),
        mode=s.get("mode", "repeat_pattern"),
    )

    a = raw.get("attack", {})
    attacked = frozenset(int(i) for i in a.get("attacked", []))
    signals = {int(k): signal_from_dict(v) for k, v in a.get("signals", {}).items()}
    attack = AttackScenario(attacked=attacked, signals=signals, n_attacked_max=int(a.get("n_attacked_max", 0)))

    sim = raw.get("simulation", {})
    x0 = sim.get("x0")
    if isinstance(x0, list):
        x0 = np.asarray(x0, dtype=float)
    design = raw.get("design", {})
    syn = SynthesisOptions(
        eps_feas=float(design.get("eps_feas", 1e-6)),
        margin_request=float(design.get("margin_request", 1e-2)),
        gain_headroom=float(design.get("gain_headroom", 1e-3)),
        gain_target=float(design.get("gain_target", 1e-2)),
        k_ridge=float(design.get("k_ridge", 0.1)),
    )
    return ScenarioBundle(
        grid=grid,
        system=system,
        schedule=schedule,
        attack=attack,
        n_attacked_max=int(design.get("n_attacked_max", attack.n_attacked_max)),
        T_bar=float(design.get("T_bar_s", schedule.T_upper)),
        horizon=float(sim.get("horizon_s", 20.0)),
        step=float(sim.get("step_s", 1e-3)),
        seed=int(sim.get("seed", 0)),
        noise_amplitude=float(sim.get("noise_amplitude_V2", 0.0)),
        x0=x0,
        xhat0=np.asarray(sim["xhat0"], dtype=float) if isinstance(sim.get("xhat0"), list) else float(sim.get("xhat0", 0.0)),
        rho_convention=sim.get("rho_convention", "net"),
        disturbance=signal_from_dict(sim["disturbance"]) if "disturbance" in sim else Signal(kind="constant", value=0.0),
        synthesis=syn,
    )


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply --set dotted.path=value pairs onto declared config keys only."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        path, value = item.split("=", 1)
        node = raw
        parts = path.split(".")
        for p in parts[:-1]:
            if not isinstance(node, dict) or p not in node:
                raise ConfigError(f"override path {path!r} does not exist in the config")
            node = node[p]
        if not isinstance(node, dict) or parts[-1] not in node:
            raise ConfigError(f"override path {path!r} does not exist in the config")
        node[parts[-1]] = yaml.safe_load(value)
    return raw


def _mat(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def _unmat(d: dict) -> np.ndarray:
    return np.asarray(d["data"], dtype=float).reshape(d["shape"])


def save_design(
    path,
    n_c: int,
    n_a: int,
    gains: GainDesign,
    c1: CertificateStage1,
    c2: CertificateStage2,
    report: dict,
):
    """Write the design file: subsets, gains, certificates and solver margins."""
    doc = {
        "tool": "secobs",
        "version": __version__,
        "n_c": n_c,
        "n_a": n_a,
        "subsets": [{"indices": list(s.indices), "kind": s.kind} for s in gains.subsets],
        "gains": {
            "K": [_mat(k) for k in gains.K],
            "L": [_mat(l) for l in gains.L],
        },
        "stage1": {
            "P1": _mat(c1.P1),
            "U": list(map(float, c1.U)),
            "nu": c1.nu,
            "mu_d": c1.mu_d,
            "mu_w": c1.mu_w,
            "mu_e": c1.mu_e,
            "margin": c1.margin,
            "scale": c1.scale,
        },
        "stage2": {
            "P2": _mat(c2.P2),
            "P3": _mat(c2.P3),
            "N": [_mat(Ni) for Ni in c2.N],
            "T_bar": c2.T_bar,
            "margin8": c2.margin8,
            "margin9": c2.margin9,
            "nu_shift": c2.nu_shift,
        },
        "margins": {k: v for k, v in report.items() if isinstance(v, (int, float, bool))},
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_design(path):
    """Read a design file back into (n_c, n_a, bank, gains, c1, c2)."""
    doc = json.loads(Path(path).read_text())
    subsets = tuple(SensorSubset(tuple(s["indices"]), s["kind"]) for s in doc["subsets"])
    gains = GainDesign(
        K=tuple(_unmat(m) for m in doc["gains"]["K"]),
        L=tuple(_unmat(m) for m in doc["gains"]["L"]),
        subsets=subsets,
    )
    s1 = doc["stage1"]
    c1 = CertificateStage1(
        P1=_unmat(s1["P1"]),
        U=np.asarray(s1["U"], dtype=float),
        nu=s1["nu"],
        mu_d=s1["mu_d"],
        mu_w=s1["mu_w"],
        mu_e=s1["mu_e"],
        margin=s1["margin"],
        scale=s1.get("scale", 1.0),
    )
    s2 = doc["stage2"]
    c2 = CertificateStage2(
        P2=_unmat(s2["P2"]),
        P3=_unmat(s2["P3"]),
        N=tuple(_unmat(m) for m in s2["N"]),
        T_bar=s2["T_bar"],
        margin8=s2["margin8"],
        margin9=s2["margin9"],
        nu_shift=s2.get("nu_shift", 0.0),
    )
    bank = ObserverBank.with_gains(doc["n_c"], doc["n_a"], list(gains.K), list(gains.L))
    return doc["n_c"], doc["n_a"], bank, gains, c1, c2


def write_trajectory_csv(path, traj: Trajectory, decimate: int = 1):
    """Flat CSV export with the documented column order."""
    n_c = traj.x.shape[1]
    n_super = traj.pi.shape[1]
    cols = (
        ["t"]
        + [f"x_{i}" for i in range(1, n_c + 1)]
        + [f"xhat_{i}" for i in range(1, n_c + 1)]
        + ["sigma"]
        + [f"pi_{i}" for i in range(1, n_super + 1)]
        + [f"v_{i}" for i in range(1, n_c + 1)]
        + [f"vhat_{i}" for i in range(1, n_c + 1)]
        + ["sample_flag"]
    )
    keep = np.zeros(traj.t.shape[0], dtype=bool)
    keep[::decimate] = True
    keep |= traj.sample_flag
    body = np.column_stack(
        [
            traj.t,
            traj.x,
            traj.xhat,
            traj.sigma.astype(float),
            traj.pi,
            traj.v,
            traj.vhat,
            traj.sample_flag.astype(float),
        ]
    )[keep]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        np.savetxt(fh, body, fmt="%.12g", delimiter=",")


def write_trajectory_npz(path, traj: Trajectory):
    """Full-resolution record (all observers, derivatives) for verification."""
    np.savez_compressed(
        path,
        t=traj.t,
        x=traj.x,
        xhat_all=traj.xhat_all,
        pi=traj.pi,
        sigma=traj.sigma,
        xhat=traj.xhat,
        zdot=traj.zdot,
        zdot_pre=traj.zdot_pre,
        sample_flag=traj.sample_flag,
        sample_grid_idx=np.asarray(traj.sample_grid_idx, dtype=int),
        sample_times=traj.sample_times,
        attack_at_samples=traj.attack_at_samples,
        v=traj.v,
        vhat=traj.vhat,
        regime_violations=traj.regime_violations,
    )


def load_trajectory_npz(path) -> Trajectory:
    z = np.load(path)
    return Trajectory(
        t=z["t"],
        x=z["x"],
        xhat_all=z["xhat_all"],
        pi=z["pi"],
        sigma=z["sigma"],
        xhat=z["xhat"],
        zdot=z["zdot"],
        zdot_pre=z["zdot_pre"],
        sample_flag=z["sample_flag"].astype(bool),
        sample_grid_idx=list(z["sample_grid_idx"]),
        sample_times=z["sample_times"],
        attack_at_samples=z["attack_at_samples"],
        v=z["v"],
        vhat=z["vhat"],
        regime_violations=int(z["regime_violations"]),
        meta={},
    )


def write_metrics(path, metrics: dict):
    with open(path, "w") as fh:
        for k, v in metrics.items():
            fh.write(f"{k}={v}\n")


def write_figure_data(outdir, traj: Trajectory):
    """Per-customer error traces plus the sample-time marks, two columns each."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    err = traj.x - traj.xhat
    for i in range(err.shape[1]):
        np.savetxt(
            outdir / f"error_customer_{i + 1}.dat",
            np.column_stack([traj.t, err[:, i]]),
            fmt="%.12g",
        )
    np.savetxt(
        outdir / "sample_times.dat",
        np.column_stack([traj.sample_times, np.zeros_like(traj.sample_times)]),
        fmt="%.12g",
    )
    return sorted(p.name for p in outdir.glob("*.dat"))
