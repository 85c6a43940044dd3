# ============================================================
# milp_instance.py
# Standard-form MILP container shared by the LP kernel, the
# branch-and-bound driver, the MPS writer and the builders.
#
# Conventions:
# - Objective is always minimized.
# - Continuous variables are >= 0, binaries live in {0, 1}.
# - Row senses: "L" (<=), "E" (=), "G" (>=).
# ============================================================

from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse

from modules.errors import FormulationError

FEASIBILITY_TOL = 1e-8
INTEGRALITY_TOL = 1e-6
DEFAULT_GAP_TOL = 1e-3

CONTINUOUS = "continuous"
BINARY = "binary"
SENSES = ("L", "E", "G")


class SolveStatus(str, Enum):
    OPTIMAL = "optimal-within-gap"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    GAP_LIMIT = "gap-limit"
    NODE_LIMIT = "node-limit"
    TIME_LIMIT = "time-limit"
    LP_FAILURE = "lp-failure"


class LpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration-limit"
    NUMERICAL = "numerical"


@dataclass(frozen=True)
class SolverConfig:
    gap_tol: float = DEFAULT_GAP_TOL
    node_limit: Optional[int] = None
    time_limit: Optional[float] = None
    branching: str = "most-fractional"
    backend: str = "builtin"
    feasibility_tol: float = FEASIBILITY_TOL
    integrality_tol: float = INTEGRALITY_TOL
    max_lp_iterations: int = 100_000

    def __post_init__(self):
        if self.gap_tol < 0:
            raise ValueError("gap_tol must be >= 0")
        if self.branching != "most-fractional":
            raise ValueError(f"Unsupported branching rule: {self.branching}")
        if self.backend not in ("builtin", "highs"):
            raise ValueError(f"Unknown solver backend: {self.backend}")
        if self.node_limit is not None and self.node_limit < 1:
            raise ValueError("node_limit must be >= 1")
        if self.time_limit is not None and self.time_limit <= 0:
            raise ValueError("time_limit must be > 0")


@dataclass(frozen=True)
class MilpInstance:
    """
    Immutable minimization MILP.

    `A` is CSR (rows x variables); `metadata` maps variable name to a
    semantic tag such as "assignment:a[t=3][load=17]".
    """

    name: str
    var_names: Tuple[str, ...]
    var_kinds: Tuple[str, ...]
    objective: np.ndarray
    A: scipy.sparse.csr_matrix
    senses: Tuple[str, ...]
    rhs: np.ndarray
    row_names: Tuple[str, ...]
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.var_names)
        if n == 0:
            raise FormulationError("MILP instance has no variables.")
        if len(self.var_kinds) != n or self.objective.shape != (n,):
            raise FormulationError("Variable registry and objective length disagree.")
        if len(set(self.var_names)) != n:
            raise FormulationError("Duplicate variable names in MILP instance.")
        if self.A.shape != (len(self.senses), n) or self.rhs.shape != (len(self.senses),):
            raise FormulationError(
                f"Constraint matrix shape {self.A.shape} does not match "
                f"{len(self.senses)} rows x {n} variables."
            )
        bad = [s for s in self.senses if s not in SENSES]
        if bad:
            raise FormulationError(f"Unknown row senses: {sorted(set(bad))}")
        for arr in (self.objective, self.rhs):
            arr.setflags(write=False)
        object.__setattr__(self, "metadata", MappingProxyType(dict(self.metadata)))
        object.__setattr__(self, "_index", {v: i for i, v in enumerate(self.var_names)})

    @property
    def n_vars(self) -> int:
        return len(self.var_names)

    @property
    def n_rows(self) -> int:
        return len(self.senses)

    @property
    def binary_mask(self) -> np.ndarray:
        return np.array([k == BINARY for k in self.var_kinds], dtype=bool)

    def index(self, name: str) -> int:
        return self._index[name]

    def row_activity(self, x: np.ndarray) -> np.ndarray:
        return self.A @ np.asarray(x, dtype=float)

    def max_violation(self, x: np.ndarray) -> float:
        """Largest constraint violation of x (0.0 when feasible)."""
        x = np.asarray(x, dtype=float)
        worst = float(max(0.0, -x.min())) if x.size else 0.0
        if self.n_rows:
            act = self.row_activity(x)
            senses = np.array(self.senses)
            viol = np.zeros(self.n_rows)
            le = senses == "L"
            ge = senses == "G"
            eq = senses == "E"
            viol[le] = act[le] - self.rhs[le]
            viol[ge] = self.rhs[ge] - act[ge]
            viol[eq] = np.abs(act[eq] - self.rhs[eq])
            worst = max(worst, float(viol.max()))
        binaries = self.binary_mask
        if binaries.any():
            worst = max(worst, float((x[binaries] - 1.0).max()))
        return worst

    def same_as(self, other: "MilpInstance") -> bool:
        """Structural equality (names, kinds, coefficients, senses, rhs, tags)."""
        if not isinstance(other, MilpInstance):
            return False
        if (
            self.name != other.name
            or self.var_names != other.var_names
            or self.var_kinds != other.var_kinds
            or self.senses != other.senses
            or self.row_names != other.row_names
            or dict(self.metadata) != dict(other.metadata)
        ):
            return False
        if not np.array_equal(self.objective, other.objective):
            return False
        if not np.array_equal(self.rhs, other.rhs):
            return False
        diff = (self.A - other.A).tocsr()
        diff.eliminate_zeros()
        return diff.nnz == 0


class MilpBuilder:
    """Mutable accumulator used by the formulation module."""

    def __init__(self, name="phase_balancing"):
        self.name = name
        self._names: List[str] = []
        self._kinds: List[str] = []
        self._obj: List[float] = []
        self._index: Dict[str, int] = {}
        self._rows: List[Dict[int, float]] = []
        self._senses: List[str] = []
        self._rhs: List[float] = []
        self._row_names: List[str] = []
        self._metadata: Dict[str, str] = {}

    def add_variable(self, name, kind=CONTINUOUS, objective=0.0, tag=None):
        if name in self._index:
            raise FormulationError(f"Variable '{name}' already registered.")
        if kind not in (CONTINUOUS, BINARY):
            raise FormulationError(f"Unknown variable kind '{kind}'.")
        self._index[name] = len(self._names)
        self._names.append(name)
        self._kinds.append(kind)
        self._obj.append(float(objective))
        if tag:
            self._metadata[name] = tag
        return name

    def has_variable(self, name) -> bool:
        return name in self._index

    def set_objective(self, name, coefficient):
        self._obj[self._index[name]] = float(coefficient)

    def add_row(self, terms: Mapping[str, float], sense, rhs, name=None):
        if sense not in SENSES:
            raise FormulationError(f"Unknown row sense '{sense}'.")
        row: Dict[int, float] = {}
        for var, coef in terms.items():
            if var not in self._index:
                raise FormulationError(f"Row references unknown variable '{var}'.")
            coef = float(coef)
            if coef == 0.0:
                continue
            j = self._index[var]
            row[j] = row.get(j, 0.0) + coef
        row_name = name or f"r{len(self._rows)}"
        self._rows.append(row)
        self._senses.append(sense)
        self._rhs.append(float(rhs))
        self._row_names.append(row_name)
        return row_name

    @property
    def n_rows(self):
        return len(self._rows)

    def build(self) -> MilpInstance:
        n = len(self._names)
        data, indices, indptr = [], [], [0]
        for row in self._rows:
            for j in sorted(row):
                if row[j] != 0.0:
                    indices.append(j)
                    data.append(row[j])
            indptr.append(len(indices))
        A = scipy.sparse.csr_matrix(
            (np.array(data, dtype=float), np.array(indices, dtype=np.int64), np.array(indptr)),
            shape=(len(self._rows), n),
        )
        return MilpInstance(
            name=self.name,
            var_names=tuple(self._names),
            var_kinds=tuple(self._kinds),
            objective=np.array(self._obj, dtype=float),
            A=A,
            senses=tuple(self._senses),
            rhs=np.array(self._rhs, dtype=float),
            row_names=tuple(self._row_names),
            metadata=dict(self._metadata),
        )


@dataclass(frozen=True)
class LpResult:
    status: LpStatus
    objective: Optional[float]
    values: Optional[np.ndarray]
    duals: Optional[np.ndarray]
    iterations: int = 0

    @property
    def is_optimal(self) -> bool:
        return self.status == LpStatus.OPTIMAL


@dataclass(frozen=True)
class MilpSolution:
    """Outcome of solve_milp. `values` is None when no incumbent exists."""

    status: SolveStatus
    objective: Optional[float]
    values: Optional[Mapping[str, float]]
    gap: float
    best_bound: Optional[float]
    node_count: int
    solve_seconds: float
    bound_trace: Tuple[float, ...] = ()
    incumbent_trace: Tuple[float, ...] = ()

    @property
    def has_incumbent(self) -> bool:
        return self.values is not None

    @property
    def within_gap(self) -> bool:
        return self.status in (SolveStatus.OPTIMAL, SolveStatus.GAP_LIMIT)

    def value(self, name: str) -> float:
        if self.values is None:
            raise KeyError(name)
        return self.values[name]

    def vector(self, instance: MilpInstance) -> np.ndarray:
        return np.array([self.values[v] for v in instance.var_names], dtype=float)


def relative_gap(incumbent: Optional[float], bound: Optional[float], eps: float = 1e-9) -> float:
    """(best_incumbent - best_bound) / max(|best_incumbent|, eps); inf without incumbent."""
    if incumbent is None or bound is None:
        return float("inf")
    return max(0.0, incumbent - bound) / max(abs(incumbent), eps)


def solution_from_vector(
    instance: MilpInstance, x: Sequence[float], integrality_tol: float = INTEGRALITY_TOL
) -> Dict[str, float]:
    """Map a raw vector to {name: value}, rounding binaries that sit within tolerance."""
    values = {}
    for name, kind, val in zip(instance.var_names, instance.var_kinds, x):
        val = float(val)
        if kind == BINARY:
            r = float(round(val))
            if abs(val - r) <= integrality_tol:
                val = r
        elif -FEASIBILITY_TOL < val < 0.0:
            val = 0.0
        values[name] = val
    return values
