# ============================================================
# simplex_solver.py
# Dense two-phase primal simplex on a full tableau.
#
# - Dantzig pricing (most negative reduced cost).
# - Bland's rule after 50 consecutive pivots without objective
#   improvement; back to Dantzig once the objective moves again.
# - Binaries are relaxed to 0 <= x <= 1 (explicit <= 1 rows).
# - Fixed variables (branch-and-bound fixings) are substituted out.
# ============================================================

import logging
from typing import Dict, Optional

import numpy as np

from modules.milp_instance import (
    BINARY,
    LpResult,
    LpStatus,
    MilpInstance,
    SolverConfig,
)

logger = logging.getLogger(__name__)

PIVOT_TOL = 1e-9
DEGENERACY_STREAK = 50


class _Tableau:
    """Tableau in the usual layout: rows 0..m-1 constraints, last row reduced costs."""

    def __init__(self, A, b, n_art):
        m, n = A.shape
        self.T = np.zeros((m + 1, n + 1))
        self.T[:m, :n] = A
        self.T[:m, -1] = b
        self.n_art = n_art
        self.basis = []

    @property
    def m(self):
        return self.T.shape[0] - 1

    @property
    def n(self):
        return self.T.shape[1] - 1

    def pivot(self, r, j):
        T = self.T
        prow = T[r] / T[r, j]
        T -= np.outer(T[:, j], prow)
        T[r] = prow
        rhs = T[:-1, -1]
        rhs[np.abs(rhs) < 1e-12] = 0.0
        self.basis[r] = j

    def set_costs(self, c):
        """Reduced-cost row for cost vector c given the current basis."""
        cb = c[self.basis]
        self.T[-1, :-1] = c - cb @ self.T[:-1, :-1]
        self.T[-1, -1] = -(cb @ self.T[:-1, -1])

    def objective(self):
        return -self.T[-1, -1]


def _run_simplex(tab: _Tableau, n_cols, cfg: SolverConfig, bland_only=False):
    """Pivot until optimal; returns (status, iterations)."""
    tol = cfg.feasibility_tol
    streak = 0
    bland = bland_only
    last_obj = tab.objective()

    for it in range(cfg.max_lp_iterations):
        rc = tab.T[-1, :n_cols]
        if bland:
            candidates = np.flatnonzero(rc < -tol)
            if candidates.size == 0:
                return LpStatus.OPTIMAL, it
            j = int(candidates[0])
        else:
            j = int(np.argmin(rc))
            if rc[j] >= -tol:
                return LpStatus.OPTIMAL, it

        col = tab.T[:-1, j]
        rows = np.flatnonzero(col > PIVOT_TOL)
        if rows.size == 0:
            return LpStatus.UNBOUNDED, it

        ratios = tab.T[rows, -1] / col[rows]
        best = ratios.min()
        ties = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
        # lowest basic index among ties keeps runs reproducible
        r = int(min(ties, key=lambda i: tab.basis[i]))
        tab.pivot(r, j)

        obj = tab.objective()
        if obj < last_obj - tol * max(1.0, abs(last_obj)):
            streak = 0
            if bland and not bland_only:
                bland = False
        else:
            streak += 1
            if streak >= DEGENERACY_STREAK and not bland:
                logger.debug("[Simplex] %d degenerate pivots, switching to Bland's rule", streak)
                bland = True
        last_obj = obj

    return LpStatus.ITERATION_LIMIT, cfg.max_lp_iterations


def _standardize(instance: MilpInstance, fixings: Dict[int, float]):
    """Dense rows over free variables, plus x <= 1 rows for free binaries."""
    n = instance.n_vars
    free = np.array([j for j in range(n) if j not in fixings], dtype=np.int64)
    fixed = np.array(sorted(fixings), dtype=np.int64)
    fixed_vals = np.array([fixings[j] for j in fixed], dtype=float)

    A_full = instance.A.toarray()
    b = instance.rhs.astype(float).copy()
    if fixed.size:
        b -= A_full[:, fixed] @ fixed_vals
    A = A_full[:, free]
    senses = list(instance.senses)
    origin = list(range(instance.n_rows))

    kinds = instance.var_kinds
    ub_rows = [k for k, j in enumerate(free) if kinds[j] == BINARY]
    if ub_rows:
        extra = np.zeros((len(ub_rows), free.size))
        extra[np.arange(len(ub_rows)), ub_rows] = 1.0
        A = np.vstack([A, extra])
        b = np.concatenate([b, np.ones(len(ub_rows))])
        senses += ["L"] * len(ub_rows)
        origin += [-1] * len(ub_rows)

    return A, b, senses, origin, free, fixed, fixed_vals


def solve_lp(
    instance: MilpInstance,
    fixings: Optional[Dict[int, float]] = None,
    config: Optional[SolverConfig] = None,
    bland_only: bool = False,
) -> LpResult:
    """
    Solve the LP relaxation of `instance` with some variables fixed.

    `fixings` maps variable index to its fixed value. `duals` in the result
    are multipliers of the instance rows in minimization form, so that
    rhs @ duals equals the optimum when nothing is fixed.
    """
    cfg = config or SolverConfig()
    fixings = dict(fixings or {})
    tol = cfg.feasibility_tol

    A, b, senses, origin, free, fixed, fixed_vals = _standardize(instance, fixings)
    c_full = instance.objective.astype(float)
    c_free = c_full[free]

    # rows emptied by fixings are checked directly and dropped
    keep = []
    for i in range(A.shape[0]):
        if np.any(np.abs(A[i]) > 0.0):
            keep.append(i)
            continue
        s, bi = senses[i], b[i]
        if (s == "L" and bi < -tol) or (s == "G" and bi > tol) or (s == "E" and abs(bi) > tol):
            return LpResult(LpStatus.INFEASIBLE, None, None, None, 0)
    A = A[keep]
    b = b[keep]
    senses = [senses[i] for i in keep]
    origin = [origin[i] for i in keep]
    m, nf = A.shape

    sign = np.where(b < 0, -1.0, 1.0)
    A = A * sign[:, None]
    b = b * sign
    flipped = []
    for s, sg in zip(senses, sign):
        if sg < 0 and s != "E":
            s = "G" if s == "L" else "L"
        flipped.append(s)

    n_slack = sum(1 for s in flipped if s != "E")
    art_rows = [i for i, s in enumerate(flipped) if s != "L"]
    n_art = len(art_rows)
    N = nf + n_slack + n_art

    A_std = np.zeros((m, N))
    A_std[:, :nf] = A
    basis = [0] * m
    k = nf
    for i, s in enumerate(flipped):
        if s == "L":
            A_std[i, k] = 1.0
            basis[i] = k
            k += 1
        elif s == "G":
            A_std[i, k] = -1.0
            k += 1
    for a, i in enumerate(art_rows):
        A_std[i, nf + n_slack + a] = 1.0
        basis[i] = nf + n_slack + a

    tab = _Tableau(A_std, b, n_art)
    tab.basis = basis
    iterations = 0
    row_ids = list(range(m))

    if n_art:
        c1 = np.zeros(N)
        c1[nf + n_slack:] = 1.0
        tab.set_costs(c1)
        status, it = _run_simplex(tab, N, cfg, bland_only)
        iterations += it
        if status == LpStatus.ITERATION_LIMIT:
            return LpResult(status, None, None, None, iterations)
        if tab.objective() > tol * max(1.0, float(np.abs(b).max(initial=0.0))):
            return LpResult(LpStatus.INFEASIBLE, None, None, None, iterations)

        # drive zero-level artificials out of the basis; drop redundant rows
        first_art = nf + n_slack
        r = 0
        while r < tab.m:
            if tab.basis[r] >= first_art:
                cand = np.flatnonzero(np.abs(tab.T[r, :first_art]) > PIVOT_TOL)
                if cand.size:
                    tab.pivot(r, int(cand[0]))
                else:
                    tab.T = np.delete(tab.T, r, axis=0)
                    del tab.basis[r]
                    del row_ids[r]
                    continue
            r += 1
        tab.T = np.delete(tab.T, np.s_[first_art:N], axis=1)
        N = first_art

    c2 = np.zeros(N)
    c2[:nf] = c_free
    tab.set_costs(c2)
    status, it = _run_simplex(tab, N, cfg, bland_only)
    iterations += it
    if status != LpStatus.OPTIMAL:
        return LpResult(status, None, None, None, iterations)

    x_std = np.zeros(N)
    x_std[tab.basis] = tab.T[:-1, -1]
    x = np.zeros(instance.n_vars)
    x[free] = np.maximum(x_std[:nf], 0.0)
    if fixed.size:
        x[fixed] = fixed_vals

    violation = instance.max_violation(x)
    scale = max(1.0, float(np.abs(instance.rhs).max(initial=0.0)))
    if violation > 10 * tol * scale:
        if not bland_only:
            logger.warning(
                "[Simplex] numerically unstable basis (violation %.2e); retrying with Bland's rule",
                violation,
            )
            return solve_lp(instance, fixings, cfg, bland_only=True)
        return LpResult(LpStatus.NUMERICAL, None, None, None, iterations)

    duals = np.zeros(instance.n_rows)
    if tab.m:
        B = A_std[np.ix_(row_ids, tab.basis)]
        cb = c2[tab.basis]
        try:
            y = np.linalg.solve(B.T, cb)
        except np.linalg.LinAlgError:
            y = np.linalg.lstsq(B.T, cb, rcond=None)[0]
        for local, std_row in enumerate(row_ids):
            src = origin[std_row]
            if src >= 0:
                duals[src] = y[local] * sign[std_row]

    objective = float(c_full @ x)
    return LpResult(LpStatus.OPTIMAL, objective, x, duals, iterations)
