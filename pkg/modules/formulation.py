# ============================================================
# formulation.py
# Builds the phase-balancing MILPs:
#   - d-PB: deterministic, single-phase or pairwise objective
#   - r-PB: robust over a box or polyhedral demand set
#   - r-LAPB: robust two-period look-ahead with a swap budget
# plus the generic dualizer that turns
#   max_{d in {H d <= h}} d^T x <= bound
# into the certificate rows  h^T p <= bound,  H^T p = x,  p >= 0.
#
# Key assumptions:
# - A load of width w is balanced at w/3 on every phase, so
#   the deviation of phase x is d^T (x - w/3).
# - Variables are named "a[load=i]" (static) or "a[t=k][load=i]"
#   (look-ahead, k = 1..t1); a[t=0] is the initial assignment and
#   enters the rows as a constant.
# - Period 2 reuses a[t=t1] (no decision variables after t1).
# ============================================================

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Union

import numpy as np

from modules.branch_and_bound import solve_milp
from modules.errors import FormulationError, SolverError, UncertaintySetError
from modules.milp_instance import (
    BINARY,
    CONTINUOUS,
    INTEGRALITY_TOL,
    MilpBuilder,
    MilpInstance,
    MilpSolution,
    SolverConfig,
)
from modules.model import (
    BalancePlan,
    BoxUncertaintySet,
    LoadProfile,
    LookAheadConfig,
    PhaseAssignment,
    PolyhedralSet,
    SwapEvent,
    box_to_polyhedron,
)
from modules.simplex_solver import solve_lp

logger = logging.getLogger(__name__)

PHASE_VARS = ("a", "b", "c")
PHASE_PAIRS = (("a", "b"), ("b", "c"), ("a", "c"))
# dual prefixes for the +x and -x families
DUAL_PREFIX = {1.0: "p", -1.0: "q"}

UncertaintySet = Union[BoxUncertaintySet, PolyhedralSet]


class ImbalanceObjective(str, Enum):
    SINGLE_PHASE = "single-phase"
    PAIRWISE = "pairwise"

    @classmethod
    def _missing_(cls, value):
        aliases = {"max-single-phase": cls.SINGLE_PHASE, "max-pairwise": cls.PAIRWISE}
        return aliases.get(str(value).lower())


class RowSpec(NamedTuple):
    terms: Dict[str, float]
    sense: str
    rhs: float
    name: str


@dataclass(frozen=True)
class BalanceResult:
    assignment: PhaseAssignment
    objective: float
    solution: MilpSolution


def assignment_var(phase: str, load: int, t: Optional[int] = None) -> str:
    if t is None:
        return f"{phase}[load={load}]"
    return f"{phase}[t={t}][load={load}]"


def _as_polyhedron(uncertainty: UncertaintySet) -> PolyhedralSet:
    if isinstance(uncertainty, BoxUncertaintySet):
        return box_to_polyhedron(uncertainty)
    if isinstance(uncertainty, PolyhedralSet):
        return uncertainty
    raise FormulationError(f"unsupported uncertainty set type {type(uncertainty).__name__}.")


# ============================================================
# 1. Dualizer
# ============================================================

def dualize_row(
    builder: MilpBuilder,
    direction: Sequence[Mapping[str, float]],
    pset: PolyhedralSet,
    bound_var: str,
    prefix: str,
    offset=None,
) -> List[str]:
    """
    Emit rows certifying  max_{d in pset} d^T x <= bound_var.

    x_i is the affine expression  sum(coef * var for var, coef in direction[i]) + offset[i].
    Registers k nonnegative variables "<prefix>[row=r]" tagged "dual:..." and
    returns their names.
    """
    n, k = pset.n, pset.k
    if len(direction) != n:
        raise FormulationError(f"direction has {len(direction)} entries, uncertainty set has {n} loads.")
    offset = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    if offset.shape != (n,):
        raise FormulationError("offset length does not match the uncertainty set.")
    # a load absent from every row of H is free in the set
    empty_cols = np.flatnonzero(~np.any(pset.H != 0.0, axis=0))
    if empty_cols.size:
        raise UncertaintySetError(f"uncertainty set is unbounded along loads {empty_cols.tolist()}.")
    if not builder.has_variable(bound_var):
        raise FormulationError(f"bound variable '{bound_var}' is not registered.")

    duals = []
    for r in range(k):
        name = f"{prefix}[row={r}]"
        builder.add_variable(name, CONTINUOUS, tag=f"dual:{name}")
        duals.append(name)

    cap = {p: hr for p, hr in zip(duals, pset.h)}
    cap[bound_var] = -1.0
    builder.add_row(cap, "L", 0.0, name=f"{prefix}:cap")

    for i in range(n):
        terms: Dict[str, float] = {duals[r]: pset.H[r, i] for r in range(k) if pset.H[r, i] != 0.0}
        for var, coef in direction[i].items():
            terms[var] = terms.get(var, 0.0) - coef
        builder.add_row(terms, "E", offset[i], name=f"{prefix}:load={i}")
    return duals


def _phase_direction(phase, sign, widths, t=None):
    """Terms and offset of sign * (x - w/3) for phase variable family `phase`."""
    direction = [{assignment_var(phase, i, t): sign} for i in range(widths.size)]
    return direction, -sign * widths / 3.0


# ============================================================
# 2. Shared row families
# ============================================================

def build_multiphase_constraints(profile: LoadProfile, t: Optional[int] = None) -> List[RowSpec]:
    """One occupancy row a_i + b_i + c_i = w_i per load."""
    rows = []
    for i, w in enumerate(profile.phase_width):
        if int(w) not in (1, 2, 3):
            raise FormulationError(f"load {i} has phase width {w}; expected 1, 2 or 3.")
        terms = {assignment_var(p, i, t): 1.0 for p in PHASE_VARS}
        tag = f"occupancy[load={i}]" if t is None else f"occupancy[t={t}][load={i}]"
        rows.append(RowSpec(terms, "E", float(w), tag))
    return rows


def _add_assignment_block(builder, profile, t=None):
    for i in range(profile.n_loads):
        for p in PHASE_VARS:
            name = assignment_var(p, i, t)
            builder.add_variable(name, BINARY, tag=f"assignment:{name}")
    for row in build_multiphase_constraints(profile, t):
        builder.add_row(row.terms, row.sense, row.rhs, row.name)


def _add_anchor(builder):
    # the three phases are interchangeable; pin load 0 to A
    builder.add_row({assignment_var("a", 0): 1.0}, "E", 1.0, name="anchor")


def _check_demand(profile, demand):
    if profile.n_loads == 0:
        raise FormulationError("no loads to balance.")
    if demand is None:
        demand = profile.demand.mean(axis=1)
    d = np.asarray(demand, dtype=float)
    if d.shape != (profile.n_loads,):
        raise FormulationError(f"demand vector has shape {d.shape}, expected ({profile.n_loads},).")
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise FormulationError("demand vector must be finite and >= 0.")
    return d


# ============================================================
# 3. Deterministic and robust static problems
# ============================================================

def build_deterministic(
    profile: LoadProfile,
    demand=None,
    objective: Union[str, ImbalanceObjective] = ImbalanceObjective.SINGLE_PHASE,
    anchor: bool = False,
) -> MilpInstance:
    """
    d-PB for one demand vector (defaults to the profile mean).

    single-phase:  -u <= d^T (x - w/3) <= u   for x in a, b, c
    pairwise:      -u <= d^T (x - y) <= u     for the three phase pairs
    """
    kind = ImbalanceObjective(objective)
    d = _check_demand(profile, demand)
    widths = profile.phase_width.astype(float)

    builder = MilpBuilder("d-PB" if kind == ImbalanceObjective.SINGLE_PHASE else "d-PBpair")
    _add_assignment_block(builder, profile)
    builder.add_variable("u", CONTINUOUS, objective=1.0, tag="objective:u")
    if anchor:
        _add_anchor(builder)

    n = profile.n_loads
    if kind == ImbalanceObjective.SINGLE_PHASE:
        reference = float(d @ widths) / 3.0
        for p in PHASE_VARS:
            terms = {assignment_var(p, i): d[i] for i in range(n)}
            builder.add_row({**terms, "u": -1.0}, "L", reference, name=f"dev+[{p}]")
            builder.add_row({**terms, "u": 1.0}, "G", reference, name=f"dev-[{p}]")
    else:
        for x, y in PHASE_PAIRS:
            terms: Dict[str, float] = {}
            for i in range(n):
                terms[assignment_var(x, i)] = d[i]
                terms[assignment_var(y, i)] = -d[i]
            builder.add_row({**terms, "u": -1.0}, "L", 0.0, name=f"diff+[{x}{y}]")
            builder.add_row({**terms, "u": 1.0}, "G", 0.0, name=f"diff-[{x}{y}]")
    return builder.build()


def build_robust(profile: LoadProfile, uncertainty: UncertaintySet, anchor: bool = False) -> MilpInstance:
    """r-PB: six dualized families (+/- for each phase) bounded by one u."""
    pset = _as_polyhedron(uncertainty)
    if pset.n != profile.n_loads:
        raise FormulationError(f"uncertainty set covers {pset.n} loads, profile has {profile.n_loads}.")
    widths = profile.phase_width.astype(float)

    builder = MilpBuilder("r-PB")
    _add_assignment_block(builder, profile)
    builder.add_variable("u", CONTINUOUS, objective=1.0, tag="objective:u")
    if anchor:
        _add_anchor(builder)
    for p in PHASE_VARS:
        for sign, tag in DUAL_PREFIX.items():
            direction, offset = _phase_direction(p, sign, widths)
            dualize_row(builder, direction, pset, "u", f"{tag}_{p}", offset)
    return builder.build()


def _support(pset: PolyhedralSet, c) -> float:
    """max_{d in pset} c^T d, by LP over d = d+ - d-."""
    builder = MilpBuilder("support")
    for i in range(pset.n):
        builder.add_variable(f"dp{i}", objective=-c[i])
        builder.add_variable(f"dm{i}", objective=c[i])
    for r in range(pset.k):
        terms = {}
        for i in np.flatnonzero(pset.H[r]):
            terms[f"dp{i}"] = pset.H[r, i]
            terms[f"dm{i}"] = -pset.H[r, i]
        builder.add_row(terms, "L", pset.h[r], name=f"H{r}")
    res = solve_lp(builder.build())
    if not res.is_optimal:
        raise UncertaintySetError(f"support LP ended with status {res.status.value}.")
    return -res.objective


def evaluate_robust(assignment: PhaseAssignment, uncertainty: UncertaintySet) -> float:
    """Worst single-phase deviation of a fixed assignment over the set."""
    widths = assignment.phase_width.astype(float)
    worst = 0.0
    for x in assignment.matrix().astype(float):
        for sign in (1.0, -1.0):
            c = sign * (x - widths / 3.0)
            if isinstance(uncertainty, BoxUncertaintySet):
                value = float(np.maximum(c * uncertainty.lower, c * uncertainty.upper).sum())
            else:
                value = _support(_as_polyhedron(uncertainty), c)
            worst = max(worst, value)
    return worst


# ============================================================
# 4. Robust look-ahead
# ============================================================

def build_lookahead(
    profile: LoadProfile,
    sets: Sequence[UncertaintySet],
    config: LookAheadConfig,
) -> MilpInstance:
    """
    r-LAPB over snapshots 1..t2 with decisions for 1..t1.

    Objective u + lam * v. Swap rows  -w[t] <= x[t] - x[t-1] <= w[t]
    with x[0] the initial assignment, and  sum(w) <= 2 s.
    """
    if len(sets) != config.t2:
        raise FormulationError(f"look-ahead needs {config.t2} uncertainty sets, got {len(sets)}.")
    initial = config.initial_assignment
    if initial is None:
        raise FormulationError("look-ahead configuration has no initial assignment.")
    if initial.n_loads != profile.n_loads:
        raise FormulationError("initial assignment and profile disagree on the number of loads.")
    if not np.array_equal(initial.phase_width, profile.phase_width):
        raise FormulationError("initial assignment phase widths differ from the profile.")
    polys = [_as_polyhedron(s) for s in sets]
    for t, pset in enumerate(polys, start=1):
        if pset.n != profile.n_loads:
            raise FormulationError(f"uncertainty set for snapshot {t} covers {pset.n} loads.")

    n, t1 = profile.n_loads, config.t1
    widths = profile.phase_width.astype(float)
    builder = MilpBuilder("r-LAPB")
    builder.add_variable("u", CONTINUOUS, objective=1.0, tag="objective:u")
    builder.add_variable("v", CONTINUOUS, objective=config.lam, tag="objective:v")
    for t in range(1, t1 + 1):
        _add_assignment_block(builder, profile, t)

    for t, pset in enumerate(polys, start=1):
        decision_t = min(t, t1)
        bound = "u" if t <= t1 else "v"
        for p in PHASE_VARS:
            for sign, tag in DUAL_PREFIX.items():
                direction, offset = _phase_direction(p, sign, widths, decision_t)
                dualize_row(builder, direction, pset, bound, f"{tag}_{p}[t={t}]", offset)

    init = dict(zip(PHASE_VARS, initial.matrix().astype(float)))
    budget: Dict[str, float] = {}
    for t in range(1, t1 + 1):
        for p in PHASE_VARS:
            for i in range(n):
                w = f"w_{p}[t={t}][load={i}]"
                builder.add_variable(w, CONTINUOUS, tag=f"swap:{w}")
                budget[w] = 1.0
                cur = assignment_var(p, i, t)
                if t == 1:
                    x0 = init[p][i]
                    builder.add_row({cur: 1.0, w: -1.0}, "L", x0, name=f"swap+[{w}]")
                    builder.add_row({cur: -1.0, w: -1.0}, "L", -x0, name=f"swap-[{w}]")
                else:
                    prev = assignment_var(p, i, t - 1)
                    builder.add_row({cur: 1.0, prev: -1.0, w: -1.0}, "L", 0.0, name=f"swap+[{w}]")
                    builder.add_row({cur: -1.0, prev: 1.0, w: -1.0}, "L", 0.0, name=f"swap-[{w}]")
    builder.add_row(budget, "L", 2.0 * config.swap_budget, name="swap_budget")

    instance = builder.build()
    logger.debug(
        "[Formulation] r-LAPB n=%d t1=%d t2=%d: %d variables, %d rows",
        n, t1, config.t2, instance.n_vars, instance.n_rows,
    )
    return instance


def _decode_assignment(values, n, widths, t=None) -> PhaseAssignment:
    vecs = []
    for p in PHASE_VARS:
        raw = np.array([values[assignment_var(p, i, t)] for i in range(n)], dtype=float)
        rounded = np.round(raw)
        if np.any(np.abs(raw - rounded) > INTEGRALITY_TOL):
            bad = int(np.argmax(np.abs(raw - rounded)))
            raise FormulationError(
                f"binary {assignment_var(p, bad, t)} = {raw[bad]:.6g} is fractional; check the solver tolerances."
            )
        vecs.append(rounded.astype(np.int8))
    return PhaseAssignment(vecs[0], vecs[1], vecs[2], widths)


def extract_plan(
    instance: MilpInstance,
    solution: MilpSolution,
    config: LookAheadConfig,
    load_ids: Optional[Sequence[str]] = None,
) -> BalancePlan:
    """Decode a solved r-LAPB instance into a BalancePlan."""
    if not solution.has_incumbent:
        raise SolverError(f"{instance.name}: no incumbent to decode (status {solution.status.value}).")
    initial = config.initial_assignment
    if initial is None:
        raise FormulationError("look-ahead configuration has no initial assignment.")
    n = initial.n_loads
    ids = tuple(load_ids) if load_ids is not None else tuple(str(i) for i in range(n))
    if len(ids) != n:
        raise FormulationError("load_ids length does not match the assignment.")

    assignments = [_decode_assignment(solution.values, n, initial.phase_width, t) for t in range(1, config.t1 + 1)]
    events = []
    prev = initial
    for t, cur in enumerate(assignments, start=1):
        before, after = prev.labels(), cur.labels()
        for i in np.flatnonzero(np.any(prev.matrix() != cur.matrix(), axis=0)):
            events.append(SwapEvent(t, ids[i], before[i], after[i]))
        prev = cur

    return BalancePlan(
        assignments=tuple(assignments),
        u=solution.value("u"),
        v=solution.value("v"),
        advisory_assignment=assignments[-1],
        swap_events=tuple(events),
        gap=solution.gap,
        swap_budget=config.swap_budget,
        objective=solution.objective,
        status=solution.status.value,
        solve_seconds=solution.solve_seconds,
    )


# ============================================================
# 5. Solve wrappers
# ============================================================

def _solve(instance, solver):
    solution = solve_milp(instance, solver)
    if not solution.has_incumbent:
        raise SolverError(f"{instance.name}: solver stopped with status {solution.status.value} and no incumbent.")
    return solution


def solve_deterministic(
    profile: LoadProfile,
    demand=None,
    objective: Union[str, ImbalanceObjective] = ImbalanceObjective.SINGLE_PHASE,
    solver: Optional[SolverConfig] = None,
    anchor: bool = False,
) -> BalanceResult:
    instance = build_deterministic(profile, demand, objective, anchor)
    solution = _solve(instance, solver)
    assignment = _decode_assignment(solution.values, profile.n_loads, profile.phase_width)
    return BalanceResult(assignment, solution.objective, solution)


def solve_robust(
    profile: LoadProfile,
    uncertainty: UncertaintySet,
    solver: Optional[SolverConfig] = None,
    anchor: bool = False,
) -> BalanceResult:
    instance = build_robust(profile, uncertainty, anchor)
    solution = _solve(instance, solver)
    assignment = _decode_assignment(solution.values, profile.n_loads, profile.phase_width)
    return BalanceResult(assignment, solution.objective, solution)


def solve_lookahead(
    profile: LoadProfile,
    sets: Sequence[UncertaintySet],
    config: LookAheadConfig,
    solver: Optional[SolverConfig] = None,
) -> BalancePlan:
    instance = build_lookahead(profile, sets, config)
    solution = _solve(instance, solver)
    return extract_plan(instance, solution, config, profile.load_ids)
