"""Command-line front end: design, simulate, verify, reproduce, sweep.

Exit codes are part of the contract: 0 success, 2 synthesis infeasible,
3 config/design mismatch, 4 verification failure, 64 usage or config error.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .bank import enumerate_subsets
from .certify import (
    assemble_q_family,
    check_jump_condition,
    check_sandwich,
    flow_bound_gap,
    iss_constants,
    qbar_negative_on_grid,
)
from .io import (
    ConfigError,
    apply_overrides,
    load_design,
    load_trajectory_npz,
    save_design,
    scenario_from_dict,
    write_figure_data,
    write_metrics,
    write_trajectory_csv,
    write_trajectory_npz,
)
from .sim import integrate, rms_voltage_error, sup_error_after
from .synthesis import InfeasibleError, build_block_matrices, solve_stage1, solve_stage2, verify_certificates

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_MISMATCH = 3
EXIT_VERIFY = 4
EXIT_USAGE = 64

REFERENCE_RMS_V = 0.0234  # published benchmark value for the five-customer case study


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _load_raw_config(path, overrides):
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist")
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"invalid YAML in {path}{loc}")
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    if overrides:
        apply_overrides(raw, overrides)
    return raw


def _bundle(path, overrides):
    return scenario_from_dict(_load_raw_config(path, overrides))


def _design_pipeline(bundle, out_dir: Path):
    """Run both synthesis stages and write the design file; returns its path."""
    supers, subs, _ = enumerate_subsets(bundle.system.n_states, bundle.n_attacked_max)
    bm = build_block_matrices(bundle.system, supers + subs)
    c1, gains = solve_stage1(bm, bundle.synthesis)
    c2 = solve_stage2(bm, gains, bundle.T_bar, c1.nu, bundle.synthesis)
    report = verify_certificates(bm, gains, c1, c2, bundle.synthesis.eps_feas)
    out_dir.mkdir(parents=True, exist_ok=True)
    design_path = out_dir / "design.json"
    save_design(design_path, bundle.system.n_states, bundle.n_attacked_max, gains, c1, c2, report)
    print(f"nu={c1.nu:.6g} mu_d={c1.mu_d:.6g} mu_w={c1.mu_w:.6g} mu_e={c1.mu_e:.6g}")
    print(f"stage1_margin={report['stage1_margin']:.6g}")
    print(f"stage2_margin8={report['stage2_margin8']:.6g} stage2_margin9={report['stage2_margin9']:.6g}")
    print(f"design written to {design_path}")
    return design_path, bm, gains, c1, c2, report


def cmd_design(args) -> int:
    bundle = _bundle(args.config, args.set)
    try:
        _design_pipeline(bundle, Path(args.out))
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def _simulate_once(bundle, bank, out_dir: Path, tag: str, attack_scale: float, seed=None):
    cfg = bundle.scenario_config(attack_scale=attack_scale, seed=seed)
    traj = integrate(cfg, bank)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(out_dir / f"trajectory{tag}.csv", traj)
    write_trajectory_npz(out_dir / f"trajectory{tag}.npz", traj)
    metrics = {
        "rms_voltage_error": rms_voltage_error(traj),
        "sup_error_after_5s": sup_error_after(traj, min(5.0, cfg.horizon / 2)),
        "sigma_switch_count": int(np.sum(np.diff(traj.sigma) != 0)),
        "regime_violations": traj.regime_violations,
        "attack_scale": attack_scale,
        "seed": cfg.seed,
    }
    write_metrics(out_dir / f"metrics{tag}.txt", metrics)
    return traj, metrics


def cmd_simulate(args) -> int:
    bundle = _bundle(args.config, args.set)
    n_c, n_a, bank, gains, c1, c2 = load_design(args.design)
    if n_c != bundle.system.n_states:
        print(
            f"design is for {n_c} sensors but the scenario has {bundle.system.n_states}",
            file=sys.stderr,
        )
        return EXIT_MISMATCH
    traj, metrics = _simulate_once(
        bundle, bank, Path(args.out), "", args.attack_scale, seed=args.seed
    )
    for k, v in metrics.items():
        print(f"{k}={v}")
    return EXIT_OK


def cmd_verify(args) -> int:
    bundle = _bundle(args.config, args.set)
    n_c, n_a, bank, gains, c1, c2 = load_design(args.design)
    if n_c != bundle.system.n_states:
        print("design/config dimension mismatch", file=sys.stderr)
        return EXIT_MISMATCH
    supers, subs, _ = enumerate_subsets(n_c, n_a)
    bm = build_block_matrices(bundle.system, supers + subs)
    report = verify_certificates(bm, gains, c1, c2, bundle.synthesis.eps_feas)
    qf = assemble_q_family(bm, gains, c1, c2)
    qrep = qbar_negative_on_grid(qf)
    gap = flow_bound_gap(bm, gains, c1.P1, c1.U, c1.nu, c1.mu_d, c1.mu_w)
    failures = []
    for key in ("stage1_margin_ok", "stage2_margin_ok", "positivity_ok", "gain_shapes_ok"):
        print(f"{key}={report[key]}")
        if not report[key]:
            failures.append(key)
    print(f"stage1_margin={report['stage1_margin']:.6g}")
    print(f"stage2_margin8={report['stage2_margin8']:.6g} stage2_margin9={report['stage2_margin9']:.6g}")
    print(f"qbar_worst_margin={qrep.worst_margin:.6g} kappa={qrep.kappa:.6g}")
    print(f"flow_bound_gap={gap:.6g}")
    if not qrep.all_negative:
        failures.append("qbar_negative")
    if gap > 1e-8:
        failures.append("flow_bound_gap")
    try:
        bounds = iss_constants(bm, gains, c1, c2, qrep.kappa)
        print(
            f"Pi=[{bounds.Pi_at_zero:.6g}, {bounds.Pi_at_full:.6g}] "
            f"Theta=[{bounds.Theta_at_zero:.6g}, {bounds.Theta_at_full:.6g}]"
        )
    except ValueError as exc:
        failures.append(f"iss_constants: {exc}")
    if args.traj:
        traj = load_trajectory_npz(args.traj)
        jump = check_jump_condition(traj, c1, c2)
        sand = check_sandwich(traj, c1, c2)
        print(f"jump_checks={jump['n_samples_checked']} jump_violations={jump['n_violations']}")
        print(f"sandwich_checks={sand['n_checked']} sandwich_violations={sand['n_violations']}")
        if not jump["ok"]:
            failures.append("jump_condition")
        if not sand["ok"]:
            failures.append("sandwich")
    if failures:
        print("FAILED: " + ", ".join(failures), file=sys.stderr)
        return EXIT_VERIFY
    print("all certificate checks passed")
    return EXIT_OK


def _bundled_config(full_bank: bool) -> Path:
    name = "grid5.yaml" if full_bank else "grid3.yaml"
    return Path(str(resources.files("secobs").joinpath("data", name)))


def cmd_reproduce(args) -> int:
    config = _bundled_config(args.full_bank)
    out = Path(args.out)
    bundle = _bundle(config, args.set)
    try:
        design_path, bm, gains, c1, c2, report = _design_pipeline(bundle, out)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    n_c, n_a, bank, *_ = load_design(design_path)

    traj, metrics = _simulate_once(bundle, bank, out, "", args.attack_scale, seed=args.seed)
    baseline = None
    if args.attack_scale != 0.0:
        _, baseline = _simulate_once(bundle, bank, out, "_attack_free", 0.0, seed=args.seed)

    qf = assemble_q_family(bm, gains, c1, c2)
    qrep = qbar_negative_on_grid(qf)
    panels = write_figure_data(out / "figures", traj)

    rms = metrics["rms_voltage_error"]
    lines = [
        f"bank: {bank.n_obs} observers ({bank.n_super} super, {bank.n_obs - bank.n_super} sub), n_a={n_a}",
        f"stage1_margin: {report['stage1_margin']:.6g} (ok={report['stage1_margin_ok']})",
        f"stage2_margins: {report['stage2_margin8']:.6g}, {report['stage2_margin9']:.6g} (ok={report['stage2_margin_ok']})",
        f"qbar_negative: {qrep.all_negative} (kappa={qrep.kappa:.6g})",
        f"rms_voltage_error_V: {rms:.6g} (reference {REFERENCE_RMS_V})",
        f"sup_error_after_5s: {metrics['sup_error_after_5s']:.6g}",
        f"sigma_switches: {metrics['sigma_switch_count']}",
        f"figure_panels: {', '.join(panels)}",
    ]
    if baseline is not None:
        lines.append(f"attack_free_rms_voltage_error_V: {baseline['rms_voltage_error']:.6g}")
    summary = "\n".join(lines)
    (out / "summary.txt").write_text(summary + "\n")
    print(summary)
    return EXIT_OK


def _sweep_worker(payload):
    bundle, bank, out, scale, seed = payload
    _, metrics = _simulate_once(bundle, bank, out, f"_scale_{scale:g}", scale, seed=seed)
    return metrics


def cmd_sweep(args) -> int:
    bundle = _bundle(args.config, args.set)
    n_c, n_a, bank, *_ = load_design(args.design)
    if n_c != bundle.system.n_states:
        print("design/config dimension mismatch", file=sys.stderr)
        return EXIT_MISMATCH
    scales = [float(s) for s in args.scales.split(",")]
    out = Path(args.out)
    payloads = [(bundle, bank, out, s, args.seed) for s in scales]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_worker, payloads))
    else:
        rows = [_sweep_worker(p) for p in payloads]
    out.mkdir(parents=True, exist_ok=True)
    keys = list(rows[0])
    with open(out / "sweep.csv", "w") as fh:
        fh.write(",".join(keys) + "\n")
        for row in rows:
            fh.write(",".join(str(row[k]) for k in keys) + "\n")
    for row in rows:
        print(" ".join(f"{k}={v}" for k, v in row.items()))
    return EXIT_OK


def _add_common(p):
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a declared config key")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")


def build_parser() -> _Parser:
    parser = _Parser(prog="secobs", description=__doc__)
    parser.add_argument("--version", action="version", version=f"secobs {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("design", help="solve both synthesis stages and write the design file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="out")
    _add_common(p)
    p.set_defaults(fn=cmd_design)

    p = sub.add_parser("simulate", help="integrate a scenario under a design")
    p.add_argument("--config", required=True)
    p.add_argument("--design", required=True)
    p.add_argument("--out", default="out")
    p.add_argument("--attack-scale", type=float, default=1.0)
    _add_common(p)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("verify", help="re-check certificates (and optionally a trajectory)")
    p.add_argument("--config", required=True)
    p.add_argument("--design", required=True)
    p.add_argument("--traj", default=None, help="trajectory .npz from simulate")
    _add_common(p)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("reproduce", help="run the bundled case study end to end")
    p.add_argument("--out", default="out")
    p.add_argument("--full-bank", action="store_true", help="use all five customers (slower)")
    p.add_argument("--attack-scale", type=float, default=1.0)
    _add_common(p)
    p.set_defaults(fn=cmd_reproduce)

    p = sub.add_parser("sweep", help="simulate a list of attack scales")
    p.add_argument("--config", required=True)
    p.add_argument("--design", required=True)
    p.add_argument("--out", default="out")
    p.add_argument("--scales", default="0,1,10")
    p.add_argument("--jobs", type=int, default=1)
    _add_common(p)
    p.set_defaults(fn=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
