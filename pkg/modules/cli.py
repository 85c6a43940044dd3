# ============================================================
# cli.py
# Command-line entry point.
#
#   balance      d-PB on the mean (or one hour of day)
#   robust       r-PB on the historical box of one hour of day
#   lookahead    one r-LAPB plan from a forecast
#   simulate     rolling-horizon runs (sweep over --s), optional
#                static d-PB / r-PB baselines
#   export-mps   write a d-PB / r-PB / r-LAPB instance as MPS
#   report       summary tables from metrics CSV files
#
# Settings precedence: defaults < --config file < flags.
# Exit codes: 0 ok, 1 domain error, 2 usage error.
# ============================================================

import argparse
import logging
import os
import platform
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
import scipy

from modules.dataset_loader import (
    HOURS_PER_DAY,
    checksum,
    estimate_box,
    forecast_box,
    random_scale,
    read_csv,
    read_phase_widths,
    table_rho_schedule,
    write_metadata,
)
from modules.errors import DataError, PhaseBalancingError
from modules.formulation import (
    ImbalanceObjective,
    build_deterministic,
    build_lookahead,
    build_robust,
    solve_deterministic,
    solve_lookahead,
    solve_robust,
)
from modules.milp_instance import SolverConfig
from modules.model import LookAheadConfig, PhaseAssignment
from modules.mps_io import write_mps
from modules.report_generator import (
    render_table,
    summarize,
    write_profile_stats,
    write_run_outputs,
    write_sorted_curves,
    write_summary_csv,
    write_summary_json,
    write_timings_csv,
)
from modules.rolling_simulator import (
    FORECASTERS,
    ImbalanceMetrics,
    SimulationConfig,
    evaluate_assignment,
    run_static,
    run_sweep,
)
from modules.utils import configure_logging, ensure_directory, get_config_float, get_config_int, read_json, write_json

logger = logging.getLogger(__name__)

SUBCOMMANDS = ("balance", "robust", "lookahead", "simulate", "export-mps", "report")
PROBLEMS = ("d-PB", "r-PB", "r-LAPB")

DEFAULTS = {
    "input": None,
    "layout": "wide",
    "widths": None,
    "objective": "single-phase",
    "t1": 24,
    "t2": 48,
    "lambda": 1.0 / 3.0,
    "s": [1],
    "rho1": 0.10,
    "rho2": 0.30,
    "gap": 1e-3,
    "time_limit": None,
    "node_limit": None,
    "backend": "builtin",
    "seed": 0,
    "scale": False,
    "out": "output",
    "jobs": 1,
    "hour": None,
    "epochs": None,
    "stride": None,
    "start": HOURS_PER_DAY,
    "forecaster": "persistence",
    "initial": "round-robin",
    "anchor": False,
    "problem": "d-PB",
    "label": None,
    "baselines": False,
}
FLOAT_KEYS = ("lambda", "rho1", "rho2", "gap", "time_limit")
INT_KEYS = ("t1", "t2", "seed", "jobs", "hour", "epochs", "stride", "start", "node_limit")
BOOL_KEYS = ("scale", "anchor", "baselines")


# ============================================================
# 1. Arguments and configuration
# ============================================================

def _parse_s(value) -> List[int]:
    if isinstance(value, (list, tuple)):
        items = list(value)
    else:
        items = [x for x in str(value).split(",") if x.strip()]
    try:
        out = [int(str(x).strip()) for x in items]
    except ValueError:
        raise DataError(f"swap budget must be an integer or a comma list of integers, got '{value}'.")
    if not out or any(x < 0 for x in out):
        raise DataError(f"swap budgets must be >= 0, got '{value}'.")
    return out


def _bool(value) -> bool:
    if isinstance(value, str):
        return value.strip().lower() in ("1", "true", "yes", "on")
    return bool(value)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", help="load CSV (report: comma list of metrics CSVs)")
    common.add_argument("--layout", choices=("wide", "long"))
    common.add_argument("--widths", help="CSV load_id,width for multi-phase loads")
    common.add_argument("--objective", choices=[o.value for o in ImbalanceObjective])
    common.add_argument("--t1", type=int)
    common.add_argument("--t2", type=int)
    common.add_argument("--lambda", dest="lambda_", type=float)
    common.add_argument("--s", help="swap budget, or a comma list for simulate sweeps")
    common.add_argument("--rho1", type=float)
    common.add_argument("--rho2", type=float)
    common.add_argument("--gap", type=float, help="relative optimality gap")
    common.add_argument("--time-limit", type=float)
    common.add_argument("--node-limit", type=int)
    common.add_argument("--backend", choices=("builtin", "highs"))
    common.add_argument("--seed", type=int)
    common.add_argument("--scale", action="store_const", const=True, help="random per-load scaling with --seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--config", help="TOML file or run-manifest.json")
    common.add_argument("--jobs", type=int)
    common.add_argument("--hour", type=int, help="hour of day 0..23")
    common.add_argument("--epochs", type=int)
    common.add_argument("--stride", type=int)
    common.add_argument("--start", type=int, help="first planned snapshot")
    common.add_argument("--forecaster", choices=sorted(FORECASTERS))
    common.add_argument("--initial", choices=("round-robin", "balanced"))
    common.add_argument("--anchor", action="store_const", const=True, help="pin load 0 to phase A")
    common.add_argument("--problem", choices=PROBLEMS)
    common.add_argument("--label", help="report: comma list of method labels")
    common.add_argument("--baselines", action="store_const", const=True, help="simulate: add d-PB and r-PB")

    parser = argparse.ArgumentParser(prog="phasebal", description="Robust look-ahead phase balancing")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def _load_config_file(path: str) -> Dict:
    if not os.path.exists(path):
        raise DataError(f"config file not found: {path}")
    try:
        if path.endswith(".json"):
            data = read_json(path)
            data = data.get("config", data)
        else:
            with open(path, "rb") as f:
                data = tomllib.load(f)
    except (ValueError, tomllib.TOMLDecodeError) as e:
        raise DataError(f"{path}: cannot parse config ({e}).")
    return {str(k).replace("-", "_"): v for k, v in data.items()}


def resolve_config(args: argparse.Namespace) -> Dict:
    """defaults < --config < explicit flags, with types coerced."""
    cfg = dict(DEFAULTS)
    if args.config:
        loaded = _load_config_file(args.config)
        unknown = sorted(set(loaded) - set(DEFAULTS))
        if unknown:
            logger.warning("[CLI] ignoring unknown config keys: %s", unknown)
        cfg.update({k: v for k, v in loaded.items() if k in DEFAULTS})
    flags = vars(args)
    for key in DEFAULTS:
        value = flags.get("lambda_" if key == "lambda" else key)
        if value is not None:
            cfg[key] = value

    for key in FLOAT_KEYS:
        cfg[key] = get_config_float(cfg, key, DEFAULTS[key])
    for key in INT_KEYS:
        cfg[key] = get_config_int(cfg, key, DEFAULTS[key])
    for key in BOOL_KEYS:
        cfg[key] = _bool(cfg[key])
    cfg["s"] = _parse_s(cfg["s"])
    if cfg["hour"] is not None and not 0 <= cfg["hour"] < HOURS_PER_DAY:
        raise DataError(f"--hour must be in 0..{HOURS_PER_DAY - 1}, got {cfg['hour']}.")
    return cfg


def _solver(cfg) -> SolverConfig:
    try:
        return SolverConfig(
            gap_tol=cfg["gap"],
            node_limit=cfg["node_limit"],
            time_limit=cfg["time_limit"],
            backend=cfg["backend"],
        )
    except ValueError as e:
        raise DataError(str(e))


def _load_dataset(cfg):
    if not cfg["input"]:
        raise DataError("--input is required for this subcommand.")
    widths = read_phase_widths(cfg["widths"]) if cfg["widths"] else None
    dataset = read_csv(cfg["input"], cfg["layout"], widths)
    if cfg["scale"]:
        dataset = random_scale(dataset, cfg["seed"])
    return dataset


def _initial_assignment(cfg, dataset) -> PhaseAssignment:
    profile = dataset.profile
    if cfg["initial"] == "balanced":
        history = profile.demand[:, : max(cfg["start"], 1)]
        return solve_deterministic(profile, history.mean(axis=1), solver=_solver(cfg)).assignment
    return PhaseAssignment.round_robin(profile.n_loads, profile.phase_width)


def _lookahead_config(cfg, s, initial) -> LookAheadConfig:
    return LookAheadConfig(cfg["t1"], cfg["t2"], cfg["lambda"], s, initial)


def _manifest(command, cfg, dataset=None) -> Dict:
    return {
        "subcommand": command,
        "config": {k: v for k, v in cfg.items() if k != "out"},
        "seed": cfg["seed"],
        "tolerances": {"gap": cfg["gap"], "feasibility": 1e-8, "integrality": 1e-6},
        "input_checksum": checksum(dataset) if dataset is not None else None,
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "pandas": pd.__version__,
            "scipy": scipy.__version__,
        },
    }


def _write_assignment(path, dataset, assignment):
    pd.DataFrame({"load_id": dataset.load_ids, "phase": assignment.labels()}).to_csv(
        path, index=False, lineterminator="\n"
    )


# ============================================================
# 2. Subcommands
# ============================================================

def _cmd_balance(cfg, out):
    dataset = _load_dataset(cfg)
    if cfg["hour"] is not None:
        demand = dataset.hour_slice(cfg["hour"]).mean(axis=1)
    else:
        demand = dataset.profile.demand.mean(axis=1)
    res = solve_deterministic(dataset.profile, demand, cfg["objective"], _solver(cfg), cfg["anchor"])
    metrics = evaluate_assignment(res.assignment, demand)
    _write_assignment(os.path.join(out, "assignment.csv"), dataset, res.assignment)
    write_json(
        {
            "objective_kind": cfg["objective"],
            "u": res.objective,
            "status": res.solution.status.value,
            "gap": res.solution.gap,
            "omega": metrics.omega,
            "nu": metrics.nu,
        },
        os.path.join(out, "balance.json"),
    )
    write_profile_stats(dataset, out)
    print(f"u = {res.objective:.6g} kW ({res.solution.status.value}, gap {res.solution.gap:.2e})")
    return dataset


def _cmd_robust(cfg, out):
    dataset = _load_dataset(cfg)
    hour = cfg["hour"] if cfg["hour"] is not None else 0
    box = estimate_box(dataset, hour)
    res = solve_robust(dataset.profile, box, _solver(cfg), cfg["anchor"])
    _write_assignment(os.path.join(out, "assignment.csv"), dataset, res.assignment)
    write_json(
        {"hour": hour, "u": res.objective, "status": res.solution.status.value, "gap": res.solution.gap},
        os.path.join(out, "robust.json"),
    )
    print(f"u = {res.objective:.6g} kW worst case at hour {hour:02d} ({res.solution.status.value})")
    return dataset


def _lookahead_inputs(cfg, dataset, s):
    forecaster = FORECASTERS[cfg["forecaster"]](dataset)
    forecast = forecaster(cfg["start"], cfg["t2"])
    sets = forecast_box(forecast, table_rho_schedule(cfg["t1"], cfg["t2"], cfg["rho1"], cfg["rho2"]))
    return sets, _lookahead_config(cfg, s, _initial_assignment(cfg, dataset))


def _cmd_lookahead(cfg, out):
    dataset = _load_dataset(cfg)
    s = cfg["s"][0]
    sets, la = _lookahead_inputs(cfg, dataset, s)
    plan = solve_lookahead(dataset.profile, sets, la, _solver(cfg))
    rows = []
    for t, a in enumerate(plan.assignments, start=1):
        rows += [{"t": t, "load_id": lid, "phase": p} for lid, p in zip(dataset.load_ids, a.labels())]
    pd.DataFrame(rows).to_csv(os.path.join(out, "plan_assignments.csv"), index=False, lineterminator="\n")
    write_json(
        {
            "u": plan.u,
            "v": plan.v,
            "objective": plan.objective,
            "gap": plan.gap,
            "status": plan.status,
            "swap_budget": plan.swap_budget,
            "initial_assignment": list(la.initial_assignment.labels()),
            "advisory_assignment": list(plan.advisory_assignment.labels()),
            "swap_events": [
                {"snapshot": e.snapshot, "load_id": e.load_id, "from": e.from_phase, "to": e.to_phase}
                for e in plan.swap_events
            ],
        },
        os.path.join(out, "plan.json"),
    )
    print(f"u = {plan.u:.6g} kW, v = {plan.v:.6g} kW, {len(plan.swap_events)} swap(s) ({plan.status})")
    return dataset


def _cmd_simulate(cfg, out):
    dataset = _load_dataset(cfg)
    write_profile_stats(dataset, out)
    solver = _solver(cfg)
    initial = _initial_assignment(cfg, dataset)
    configs = [
        SimulationConfig(
            lookahead=_lookahead_config(cfg, s, initial),
            rho1=cfg["rho1"],
            rho2=cfg["rho2"],
            solver=solver,
            start_snapshot=cfg["start"],
            stride=cfg["stride"],
            epochs=cfg["epochs"],
        )
        for s in cfg["s"]
    ]
    forecaster = FORECASTERS[cfg["forecaster"]](dataset)
    runs = run_sweep(dataset, forecaster, configs, cfg["jobs"])

    summaries, curves = [], {}
    if cfg["baselines"]:
        for method in ("d-PB", "r-PB"):
            static = run_static(dataset, method, solver)
            static.metrics_frame().to_csv(os.path.join(out, f"{method}_metrics.csv"), index=False, lineterminator="\n")
            summaries.append(summarize(static.snapshot_metrics, static.runtimes, method))
            curves[method] = [m.omega for m in static.snapshot_metrics]
    for run in runs:
        tag = f"s{run.config.lookahead.swap_budget}"
        write_run_outputs(run, out, tag)
        if run.halted_reason:
            print(f"{run.label}: halted ({run.halted_reason})", file=sys.stderr)
        if run.epochs:
            summaries.append(summarize(run.snapshot_metrics, run.runtimes, run.label))
            curves[run.label] = [m.omega for m in run.snapshot_metrics]
    if summaries:
        write_summary_csv(summaries, os.path.join(out, "summary.csv"))
        write_summary_json(summaries, os.path.join(out, "summary.json"))
        write_timings_csv(summaries, os.path.join(out, "timings_summary.csv"))
        write_sorted_curves(curves, os.path.join(out, "sorted_omega.csv"))
        print(render_table(summaries))
    if any(r.halted_reason for r in runs):
        write_json(_manifest("simulate", cfg, dataset), os.path.join(out, "run-manifest.json"))
        raise PhaseBalancingError("one or more runs halted before their last epoch; partial results written.")
    return dataset


def _cmd_export(cfg, out):
    dataset = _load_dataset(cfg)
    problem = cfg["problem"]
    if problem == "d-PB":
        demand = dataset.hour_slice(cfg["hour"]).mean(axis=1) if cfg["hour"] is not None else None
        instance = build_deterministic(dataset.profile, demand, cfg["objective"], cfg["anchor"])
    elif problem == "r-PB":
        instance = build_robust(dataset.profile, estimate_box(dataset, cfg["hour"] or 0), cfg["anchor"])
    else:
        sets, la = _lookahead_inputs(cfg, dataset, cfg["s"][0])
        instance = build_lookahead(dataset.profile, sets, la)
    path, sidecar = write_mps(instance, os.path.join(out, f"{problem}.mps"))
    print(f"wrote {path} ({instance.n_rows} rows, {instance.n_vars} columns) and {os.path.basename(sidecar)}")
    return dataset


def _metrics_from_csv(path) -> List[ImbalanceMetrics]:
    if not os.path.exists(path):
        raise DataError(f"metrics file not found: {path}")
    df = pd.read_csv(path, comment="#")
    missing = [c for c in ("phase_a", "phase_b", "phase_c", "omega", "nu", "upsilon") if c not in df.columns]
    if missing:
        raise DataError(f"{path}: missing metric columns {missing}.")
    out = []
    for row in df.itertuples(index=False):
        ups = None if pd.isna(row.upsilon) else float(row.upsilon)
        out.append(ImbalanceMetrics((row.phase_a, row.phase_b, row.phase_c), float(row.omega), float(row.nu), ups))
    return out


def _cmd_report(cfg, out):
    if not cfg["input"]:
        raise DataError("report needs --input with one or more metrics CSV files.")
    paths = [p.strip() for p in str(cfg["input"]).split(",") if p.strip()]
    labels = [x.strip() for x in str(cfg["label"]).split(",")] if cfg["label"] else []
    if labels and len(labels) != len(paths):
        raise DataError(f"{len(labels)} labels for {len(paths)} metrics files.")
    if not labels:
        labels = [os.path.splitext(os.path.basename(p))[0] for p in paths]
    summaries, curves = [], {}
    for label, path in zip(labels, paths):
        metrics = _metrics_from_csv(path)
        summaries.append(summarize(metrics, method=label))
        curves[label] = [m.omega for m in metrics]
    write_summary_csv(summaries, os.path.join(out, "summary.csv"))
    write_summary_json(summaries, os.path.join(out, "summary.json"))
    write_sorted_curves(curves, os.path.join(out, "sorted_omega.csv"))
    print(render_table(summaries))
    return None


COMMANDS = {
    "balance": _cmd_balance,
    "robust": _cmd_robust,
    "lookahead": _cmd_lookahead,
    "simulate": _cmd_simulate,
    "export-mps": _cmd_export,
    "report": _cmd_report,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    configure_logging()
    try:
        cfg = resolve_config(args)
        out = cfg["out"]
        ensure_directory(out)
        dataset = COMMANDS[args.command](cfg, out)
        if dataset is not None and dataset.seed is not None:
            write_metadata(dataset, os.path.join(out, "dataset.json"))
        write_json(_manifest(args.command, cfg, dataset), os.path.join(out, "run-manifest.json"))
    except PhaseBalancingError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0
