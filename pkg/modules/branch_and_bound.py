# ============================================================
# branch_and_bound.py
# Best-first branch and bound over binary variables.
#
# - Node LPs are solved by simplex_solver.solve_lp with the
#   branching decisions passed as fixings.
# - Branching: most fractional binary, lowest index on ties.
# - Termination: tree exhausted, relative gap <= gap_tol,
#   node limit or time limit.
# - A node LP that fails even under Bland's rule leaves its
#   subtree open: its parent bound stays in the global bound and
#   the run ends as "lp-failure" instead of optimal.
# - backend="highs" hands the same instance to scipy's HiGHS.
# ============================================================

import heapq
import logging
import time
from typing import Dict, Optional

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

from modules.milp_instance import (
    BINARY,
    LpStatus,
    MilpInstance,
    MilpSolution,
    SolveStatus,
    SolverConfig,
    relative_gap,
    solution_from_vector,
)
from modules.simplex_solver import solve_lp

logger = logging.getLogger(__name__)

PRUNE_TOL = 1e-9


def _most_fractional(x, binary_idx, tol):
    """Index of the binary closest to 0.5, or None when all are integral."""
    vals = x[binary_idx]
    frac = np.abs(vals - np.round(vals))
    fractional = frac > tol
    if not fractional.any():
        return None
    dist = np.where(fractional, np.abs(vals - 0.5), np.inf)
    # argmin returns the first (lowest index) on ties
    return int(binary_idx[int(np.argmin(dist))])


def _node_lp(instance, fixings, cfg):
    """Node relaxation; a run that neither proves optimality nor infeasibility is retried under Bland's rule."""
    lp = solve_lp(instance, fixings, cfg)
    if lp.status in (LpStatus.ITERATION_LIMIT, LpStatus.NUMERICAL):
        logger.debug("[B&B] LP ended with status %s, retrying with Bland's rule", lp.status.value)
        lp = solve_lp(instance, fixings, cfg, bland_only=True)
    return lp


def solve_milp(instance: MilpInstance, config: Optional[SolverConfig] = None) -> MilpSolution:
    """Solve `instance` to within `config.gap_tol` relative gap."""
    cfg = config or SolverConfig()
    if cfg.backend == "highs":
        return _solve_highs(instance, cfg)
    return _solve_builtin(instance, cfg)


def _solve_builtin(instance: MilpInstance, cfg: SolverConfig) -> MilpSolution:
    start = time.perf_counter()
    binary_idx = np.flatnonzero(instance.binary_mask)

    def elapsed():
        return time.perf_counter() - start

    def finish(status, inc_x, inc_obj, bound, nodes, bounds, incs):
        values = solution_from_vector(instance, inc_x, cfg.integrality_tol) if inc_x is not None else None
        if bound is None and inc_obj is not None:
            bound = inc_obj
        gap = relative_gap(inc_obj, bound)
        sol = MilpSolution(
            status=status,
            objective=inc_obj,
            values=values,
            gap=gap,
            best_bound=bound,
            node_count=nodes,
            solve_seconds=elapsed(),
            bound_trace=tuple(bounds),
            incumbent_trace=tuple(incs),
        )
        logger.info(
            "[B&B] %s: status=%s objective=%s gap=%.3g nodes=%d",
            instance.name, status.value, inc_obj, gap if np.isfinite(gap) else -1, nodes,
        )
        return sol

    root = _node_lp(instance, {}, cfg)
    nodes = 1
    if root.status == LpStatus.INFEASIBLE:
        return finish(SolveStatus.INFEASIBLE, None, None, None, nodes, [], [])
    if root.status == LpStatus.UNBOUNDED:
        return finish(SolveStatus.UNBOUNDED, None, None, None, nodes, [], [])
    if not root.is_optimal:
        logger.warning("[B&B] root LP ended with status %s", root.status.value)
        return finish(SolveStatus.LP_FAILURE, None, None, None, nodes, [], [])

    inc_x, inc_obj = None, None
    bound_trace, incumbent_trace = [], []
    # parent bounds of subtrees whose LP could not be solved
    unresolved = []

    def consider(lp):
        """Returns the branching index, or None after recording an integral point."""
        nonlocal inc_x, inc_obj
        j = _most_fractional(lp.values, binary_idx, cfg.integrality_tol)
        if j is None:
            if inc_obj is None or lp.objective < inc_obj - PRUNE_TOL:
                inc_x, inc_obj = lp.values.copy(), lp.objective
                logger.info("[B&B] new incumbent %.10g after %d nodes", inc_obj, nodes)
        return j

    def open_unresolved():
        return [b for b in unresolved if inc_obj is None or b < inc_obj - PRUNE_TOL]

    counter = 0
    heap = []
    j = consider(root)
    if j is not None:
        heap.append((root.objective, counter, {}, root, j))

    global_bound = root.objective
    status = SolveStatus.OPTIMAL
    while heap:
        global_bound = min([heap[0][0]] + open_unresolved())
        bound_trace.append(global_bound)
        incumbent_trace.append(inc_obj if inc_obj is not None else float("inf"))

        if inc_obj is not None:
            if global_bound >= inc_obj - PRUNE_TOL:
                heap = []
                break
            if relative_gap(inc_obj, global_bound) <= cfg.gap_tol:
                status = SolveStatus.GAP_LIMIT
                break
        if cfg.node_limit is not None and nodes >= cfg.node_limit:
            status = SolveStatus.NODE_LIMIT
            break
        if cfg.time_limit is not None and elapsed() >= cfg.time_limit:
            status = SolveStatus.TIME_LIMIT
            break

        bound, _, fixings, lp, j = heapq.heappop(heap)
        if inc_obj is not None and bound >= inc_obj - PRUNE_TOL:
            continue
        logger.debug("[B&B] node bound=%.10g depth=%d branch x%d=%.4f", bound, len(fixings), j, lp.values[j])

        for value in (0.0, 1.0):
            child_fix: Dict[int, float] = dict(fixings)
            child_fix[j] = value
            child = _node_lp(instance, child_fix, cfg)
            nodes += 1
            if child.status == LpStatus.INFEASIBLE:
                continue
            if not child.is_optimal:
                logger.warning("[B&B] node LP ended with status %s, subtree left open at bound %.10g",
                               child.status.value, bound)
                unresolved.append(bound)
                continue
            if inc_obj is not None and child.objective >= inc_obj - PRUNE_TOL:
                continue
            cj = consider(child)
            if cj is not None:
                counter += 1
                heapq.heappush(heap, (max(child.objective, bound), counter, child_fix, child, cj))

    still_open = open_unresolved()
    if not heap and status == SolveStatus.OPTIMAL:
        global_bound = inc_obj if inc_obj is not None else global_bound
    if still_open:
        global_bound = min([global_bound] + still_open)
        if status in (SolveStatus.OPTIMAL, SolveStatus.GAP_LIMIT):
            status = SolveStatus.LP_FAILURE
    if inc_obj is None and status == SolveStatus.OPTIMAL:
        status = SolveStatus.INFEASIBLE
    if inc_obj is not None:
        global_bound = min(global_bound, inc_obj)
    return finish(status, inc_x, inc_obj, global_bound, nodes, bound_trace, incumbent_trace)


def _solve_highs(instance: MilpInstance, cfg: SolverConfig) -> MilpSolution:
    start = time.perf_counter()
    senses = np.array(instance.senses)
    lb = np.where(senses == "L", -np.inf, instance.rhs)
    ub = np.where(senses == "G", np.inf, instance.rhs)
    binaries = instance.binary_mask
    upper = np.where(binaries, 1.0, np.inf)
    options = {"mip_rel_gap": cfg.gap_tol, "disp": False}
    if cfg.time_limit is not None:
        options["time_limit"] = cfg.time_limit
    if cfg.node_limit is not None:
        options["node_limit"] = cfg.node_limit

    constraints = [LinearConstraint(instance.A, lb, ub)] if instance.n_rows else []
    res = milp(
        c=np.asarray(instance.objective, dtype=float),
        constraints=constraints,
        integrality=binaries.astype(int),
        bounds=Bounds(np.zeros(instance.n_vars), upper),
        options=options,
    )
    seconds = time.perf_counter() - start
    nodes = int(getattr(res, "mip_node_count", 0) or 0)
    bound = getattr(res, "mip_dual_bound", None)

    if res.status == 2:
        return MilpSolution(SolveStatus.INFEASIBLE, None, None, float("inf"), None, nodes, seconds)
    if res.status == 3:
        return MilpSolution(SolveStatus.UNBOUNDED, None, None, float("inf"), None, nodes, seconds)

    if res.x is None:
        status = SolveStatus.TIME_LIMIT if cfg.time_limit is not None else SolveStatus.NODE_LIMIT
        return MilpSolution(status, None, None, float("inf"), bound, nodes, seconds)

    objective = float(res.fun)
    if bound is None or not np.isfinite(bound):
        bound = objective
    gap = relative_gap(objective, float(bound))
    if res.status == 0:
        status = SolveStatus.OPTIMAL
    elif cfg.time_limit is not None and seconds >= cfg.time_limit:
        status = SolveStatus.TIME_LIMIT
    else:
        status = SolveStatus.NODE_LIMIT
    logger.info("[HiGHS] %s: status=%s objective=%.10g gap=%.3g", instance.name, status.value, objective, gap)
    return MilpSolution(
        status=status,
        objective=objective,
        values=solution_from_vector(instance, res.x, cfg.integrality_tol),
        gap=gap,
        best_bound=float(bound),
        node_count=nodes,
        solve_seconds=seconds,
    )
