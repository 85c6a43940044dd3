# ============================================================
# rolling_simulator.py
# Imbalance metrics and the operation loops:
#   - run_static: one d-PB / r-PB assignment per hour of day,
#     evaluated on every day of the dataset
#   - run_rolling: look-ahead planning epoch by epoch, period-1
#     decisions applied to realized demand
#   - run_sweep: independent rolling runs in a process pool
#
# Key assumptions:
# - Epoch e plans snapshots start + e*stride + (0..t2-1) and
#   implements the first `stride` assignments (stride <= t1).
# - A failed solve halts the run; epochs already done are kept.
# - Wall-clock times only appear in timings_frame().
# ============================================================

import logging
import time
from dataclasses import dataclass, field
from multiprocessing import Pool
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from modules.dataset_loader import HOURS_PER_DAY, LoadDataset, estimate_box, forecast_box, table_rho_schedule
from modules.errors import DataError, FormulationError, PhaseBalancingError
from modules.formulation import ImbalanceObjective, solve_deterministic, solve_lookahead, solve_robust
from modules.milp_instance import SolverConfig
from modules.model import BalancePlan, LookAheadConfig, PhaseAssignment, count_swaps

logger = logging.getLogger(__name__)

CONTAINMENT_TOL = 1e-9
STATIC_METHODS = ("d-PB", "r-PB")


# ============================================================
# 1. Metrics
# ============================================================

@dataclass(frozen=True)
class ImbalanceMetrics:
    """omega, nu in kW; upsilon as a fraction (None when total demand is 0)."""

    phase_sums: Tuple[float, float, float]
    omega: float
    nu: float
    upsilon: Optional[float]

    @property
    def upsilon_defined(self) -> bool:
        return self.upsilon is not None

    def as_row(self) -> dict:
        a, b, c = self.phase_sums
        return {
            "phase_a": a,
            "phase_b": b,
            "phase_c": c,
            "omega": self.omega,
            "nu": self.nu,
            "upsilon": np.nan if self.upsilon is None else self.upsilon,
        }


def evaluate_assignment(assignment: PhaseAssignment, demand) -> ImbalanceMetrics:
    d = np.asarray(demand, dtype=float)
    if d.shape != (assignment.n_loads,):
        raise FormulationError(f"demand vector has shape {d.shape}, assignment covers {assignment.n_loads} loads.")
    sums = assignment.phase_sums(d)
    total = float(sums.sum())
    omega = float(sums.max() - sums.min())
    nu = float(np.abs(sums - total / 3.0).max())
    upsilon = float(np.abs(1.0 - 3.0 * sums / total).max()) if total > 0 else None
    return ImbalanceMetrics(tuple(float(s) for s in sums), omega, nu, upsilon)


# ============================================================
# 2. Forecasters
# ============================================================

class PersistenceForecaster:
    """Same hour of the previous realized day, repeated over the horizon."""

    def __init__(self, dataset: LoadDataset):
        self.dataset = dataset

    def __call__(self, start: int, horizon: int) -> np.ndarray:
        if start < HOURS_PER_DAY:
            raise DataError(f"persistence forecast at snapshot {start} needs a full previous day.")
        idx = start - HOURS_PER_DAY + (np.arange(horizon) % HOURS_PER_DAY)
        return self.dataset.demand[:, idx]


class OracleForecaster:
    """Perfect forecast: the realized demand itself."""

    def __init__(self, dataset: LoadDataset):
        self.dataset = dataset

    def __call__(self, start: int, horizon: int) -> np.ndarray:
        stop = start + horizon
        if stop > self.dataset.profile.n_snapshots:
            raise DataError(f"oracle forecast runs past the dataset end ({stop} > {self.dataset.profile.n_snapshots}).")
        return self.dataset.demand[:, start:stop]


FORECASTERS = {"persistence": PersistenceForecaster, "oracle": OracleForecaster}


# ============================================================
# 3. Rolling look-ahead
# ============================================================

@dataclass(frozen=True)
class SimulationConfig:
    lookahead: LookAheadConfig = field(default_factory=LookAheadConfig)
    rho1: float = 0.10
    rho2: float = 0.30
    solver: SolverConfig = field(default_factory=SolverConfig)
    start_snapshot: int = HOURS_PER_DAY
    stride: Optional[int] = None
    epochs: Optional[int] = None
    clamp: bool = True

    def __post_init__(self):
        if self.stride is not None and not 1 <= self.stride <= self.lookahead.t1:
            raise FormulationError(f"stride must be in 1..t1={self.lookahead.t1}, got {self.stride}.")
        if self.start_snapshot < 0:
            raise FormulationError("start snapshot must be >= 0.")
        if self.epochs is not None and self.epochs < 1:
            raise FormulationError("epochs must be >= 1.")

    @property
    def effective_stride(self) -> int:
        return self.stride or self.lookahead.t1

    def rho_schedule(self) -> np.ndarray:
        return table_rho_schedule(self.lookahead.t1, self.lookahead.t2, self.rho1, self.rho2)

    def to_dict(self) -> dict:
        la = self.lookahead
        return {
            "t1": la.t1,
            "t2": la.t2,
            "lambda": la.lam,
            "s": la.swap_budget,
            "rho1": self.rho1,
            "rho2": self.rho2,
            "start_snapshot": self.start_snapshot,
            "stride": self.effective_stride,
            "epochs": self.epochs,
            "clamp": self.clamp,
            "gap_tol": self.solver.gap_tol,
            "node_limit": self.solver.node_limit,
            "time_limit": self.solver.time_limit,
            "backend": self.solver.backend,
            "initial_assignment": list(la.initial_assignment.labels()) if la.initial_assignment else None,
        }


@dataclass(frozen=True)
class EpochRecord:
    epoch_index: int
    start_snapshot: int
    initial_assignment: PhaseAssignment
    plan: BalancePlan
    implemented: Tuple[PhaseAssignment, ...]
    realized_demand: np.ndarray
    metrics: Tuple[ImbalanceMetrics, ...]
    contained: Tuple[bool, ...]
    swaps: int
    wall_seconds: float = field(default=0.0, compare=False)

    @property
    def terminal_assignment(self) -> PhaseAssignment:
        return self.implemented[-1]

    @property
    def snapshots(self) -> List[int]:
        return [self.start_snapshot + k for k in range(len(self.implemented))]


@dataclass
class SimulationRun:
    config: SimulationConfig
    epochs: List[EpochRecord] = field(default_factory=list)
    load_ids: Tuple[str, ...] = ()
    label: str = ""
    halted_reason: Optional[str] = None

    @property
    def total_swaps(self) -> int:
        return sum(e.swaps for e in self.epochs)

    @property
    def snapshot_metrics(self) -> List[ImbalanceMetrics]:
        return [m for e in self.epochs for m in e.metrics]

    @property
    def runtimes(self) -> List[float]:
        return [e.plan.solve_seconds for e in self.epochs]

    def swap_events(self):
        """Implemented swap events as (global snapshot, event)."""
        out = []
        for e in self.epochs:
            for ev in e.plan.swap_events:
                if ev.snapshot <= len(e.implemented):
                    out.append((e.start_snapshot + ev.snapshot - 1, ev))
        return out

    def metrics_frame(self) -> pd.DataFrame:
        rows = []
        for e in self.epochs:
            for snap, m, inside in zip(e.snapshots, e.metrics, e.contained):
                rows.append(
                    {
                        "snapshot": snap,
                        "epoch": e.epoch_index,
                        **m.as_row(),
                        "contained": inside,
                        "certified_u": e.plan.u,
                    }
                )
        cols = ["snapshot", "epoch", "phase_a", "phase_b", "phase_c", "omega", "nu", "upsilon", "contained", "certified_u"]
        return pd.DataFrame(rows, columns=cols)

    def timings_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {
                    "epoch": e.epoch_index,
                    "wall_seconds": e.wall_seconds,
                    "solve_seconds": e.plan.solve_seconds,
                    "status": e.plan.status,
                    "gap": e.plan.gap,
                }
                for e in self.epochs
            ],
            columns=["epoch", "wall_seconds", "solve_seconds", "status", "gap"],
        )

    def to_dict(self) -> dict:
        """Run record without wall-clock values."""
        ids = self.load_ids
        epochs = []
        for e in self.epochs:
            epochs.append(
                {
                    "epoch_index": e.epoch_index,
                    "start_snapshot": e.start_snapshot,
                    "initial_assignment": list(e.initial_assignment.labels()),
                    "implemented": [list(a.labels()) for a in e.implemented],
                    "advisory_assignment": list(e.plan.advisory_assignment.labels()),
                    "u": e.plan.u,
                    "v": e.plan.v,
                    "objective": e.plan.objective,
                    "gap": e.plan.gap,
                    "status": e.plan.status,
                    "swaps": e.swaps,
                    "swap_events": [
                        {"snapshot": ev.snapshot, "load_id": ev.load_id, "from": ev.from_phase, "to": ev.to_phase}
                        for ev in e.plan.swap_events
                    ],
                    "realized_demand": e.realized_demand.tolist(),
                    "contained": list(e.contained),
                }
            )
        return {
            "label": self.label,
            "load_ids": list(ids),
            "config": self.config.to_dict(),
            "total_swaps": self.total_swaps,
            "halted_reason": self.halted_reason,
            "epochs": epochs,
        }


def max_epochs(n_snapshots: int, start: int, stride: int, t2: int) -> int:
    return (n_snapshots - start - t2) // stride + 1


def run_rolling(
    dataset: LoadDataset,
    forecaster: Callable[[int, int], np.ndarray],
    config: SimulationConfig,
    epochs: Optional[int] = None,
    label: str = "",
) -> SimulationRun:
    """
    Rolling-horizon loop: forecast -> boxes -> r-LAPB -> implement period 1.

    Stops early (keeping finished epochs) when a solve fails.
    """
    la = config.lookahead
    if la.initial_assignment is None:
        raise FormulationError("simulation needs an initial assignment.")
    n_snap = dataset.profile.n_snapshots
    stride = config.effective_stride
    start = config.start_snapshot
    limit = max_epochs(n_snap, start, stride, la.t2)
    n_epochs = epochs if epochs is not None else config.epochs
    if n_epochs is None:
        n_epochs = limit
    if n_epochs < 1 or n_epochs > limit:
        raise DataError(
            f"{n_epochs} epochs need {start + n_epochs * stride + la.t2 - stride} snapshots, dataset has {n_snap}."
        )
    rho = config.rho_schedule()
    run = SimulationRun(config, [], dataset.load_ids, label)
    current = la.initial_assignment
    logger.info("[Rolling] %s: %d epochs, stride %d, s=%d", label or "run", n_epochs, stride, la.swap_budget)

    for e in range(n_epochs):
        t0 = time.perf_counter()
        epoch_start = start + e * stride
        forecast = np.asarray(forecaster(epoch_start, la.t2), dtype=float)
        if forecast.shape != (dataset.profile.n_loads, la.t2):
            raise DataError(f"forecast for epoch {e} has shape {forecast.shape}, expected {(dataset.profile.n_loads, la.t2)}.")
        sets = forecast_box(forecast, rho, config.clamp)
        window = dataset.profile.window(epoch_start, epoch_start + la.t2)
        try:
            plan = solve_lookahead(window, sets, la.with_initial(current), config.solver)
        except PhaseBalancingError as exc:
            run.halted_reason = f"epoch {e}: {exc}"
            logger.warning("[Rolling] halted at epoch %d: %s", e, exc)
            break

        implemented = plan.assignments[:stride]
        realized = dataset.demand[:, epoch_start:epoch_start + stride]
        metrics = tuple(evaluate_assignment(a, realized[:, k]) for k, a in enumerate(implemented))
        contained = tuple(sets[k].contains(realized[:, k], CONTAINMENT_TOL) for k in range(stride))
        swaps = sum(count_swaps(p, q) for p, q in zip((current,) + implemented[:-1], implemented))
        run.epochs.append(
            EpochRecord(
                epoch_index=e,
                start_snapshot=epoch_start,
                initial_assignment=current,
                plan=plan,
                implemented=tuple(implemented),
                realized_demand=realized.copy(),
                metrics=metrics,
                contained=contained,
                swaps=swaps,
                wall_seconds=time.perf_counter() - t0,
            )
        )
        busts = len(contained) - sum(contained)
        if busts:
            logger.info("[Rolling] epoch %d: %d snapshots outside their uncertainty set", e, busts)
        current = implemented[-1]
    return run


def _sweep_task(args):
    dataset, forecaster, config, label = args
    return run_rolling(dataset, forecaster, config, label=label)


def run_sweep(
    dataset: LoadDataset,
    forecaster,
    configs: Sequence[SimulationConfig],
    jobs: int = 1,
    labels: Optional[Sequence[str]] = None,
) -> List[SimulationRun]:
    """Independent rolling runs; results come back in `configs` order."""
    labels = list(labels) if labels is not None else [f"r-LAPB(s={c.lookahead.swap_budget})" for c in configs]
    tasks = [(dataset, forecaster, c, lab) for c, lab in zip(configs, labels)]
    if jobs <= 1 or len(tasks) <= 1:
        return [_sweep_task(t) for t in tasks]
    with Pool(min(jobs, len(tasks))) as pool:
        return pool.map(_sweep_task, tasks)


# ============================================================
# 4. Static per-hour comparison
# ============================================================

@dataclass
class StaticRun:
    method: str
    assignments: dict
    records: List[Tuple[int, int, ImbalanceMetrics]] = field(default_factory=list)
    runtimes: List[float] = field(default_factory=list)

    @property
    def snapshot_metrics(self) -> List[ImbalanceMetrics]:
        return [m for _, _, m in self.records]

    def metrics_frame(self) -> pd.DataFrame:
        rows = [{"day": d, "hour": h, **m.as_row()} for d, h, m in self.records]
        return pd.DataFrame(rows, columns=["day", "hour", "phase_a", "phase_b", "phase_c", "omega", "nu", "upsilon"])


def run_static(
    dataset: LoadDataset,
    method: str = "d-PB",
    solver: Optional[SolverConfig] = None,
    hours: Optional[Sequence[int]] = None,
    objective=ImbalanceObjective.SINGLE_PHASE,
) -> StaticRun:
    """
    One assignment per hour of day: d-PB on the mean over days, or r-PB on
    the historical box. Each assignment is scored on every day at its hour.
    """
    if method not in STATIC_METHODS:
        raise FormulationError(f"unknown static method '{method}', expected one of {STATIC_METHODS}.")
    hours = list(range(HOURS_PER_DAY)) if hours is None else list(hours)
    result = StaticRun(method, {})
    for h in hours:
        obs = dataset.hour_slice(h)
        if method == "d-PB":
            res = solve_deterministic(dataset.profile, obs.mean(axis=1), objective, solver)
        else:
            res = solve_robust(dataset.profile, estimate_box(dataset, h), solver)
        result.assignments[h] = res.assignment
        result.runtimes.append(res.solution.solve_seconds)
        for day in range(obs.shape[1]):
            result.records.append((day, h, evaluate_assignment(res.assignment, obs[:, day])))
        logger.info("[Static] %s hour %02d: objective %.4f kW", method, h, res.objective)
    result.records.sort(key=lambda r: (r[0], r[1]))
    return result
