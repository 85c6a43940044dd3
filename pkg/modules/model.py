# ============================================================
# model.py
# Domain types shared by every module: load profiles, phase
# assignments, uncertainty sets, look-ahead configuration and
# the balance plan decoded from a solved look-ahead instance.
#
# Conventions:
# - Demand in kW, matrix indexed (load, snapshot).
# - Phases ordered A, B, C; an assignment is three parallel
#   binary vectors a, b, c.
# - A load of width w occupies exactly w phases and counts its
#   full demand on each of them.
# ============================================================

import dataclasses
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from modules.errors import DataError, FormulationError, UncertaintySetError

PHASES = ("A", "B", "C")


def _frozen_array(values, dtype=float):
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _whole_number(value, name: str) -> int:
    if isinstance(value, (bool, np.bool_)):
        raise FormulationError(f"{name} must be an integer, got {value!r}.")
    try:
        as_float = float(value)
    except (TypeError, ValueError):
        raise FormulationError(f"{name} must be an integer, got {value!r}.")
    if not np.isfinite(as_float) or not as_float.is_integer():
        raise FormulationError(f"{name} must be an integer, got {value!r}.")
    return int(as_float)


# ============================================================
# 1. Loads
# ============================================================

@dataclass(frozen=True)
class LoadProfile:
    load_ids: Tuple[str, ...]
    demand: np.ndarray
    phase_width: Optional[np.ndarray] = None

    def __post_init__(self):
        ids = tuple(str(x) for x in self.load_ids)
        demand = np.array(self.demand, dtype=float, copy=True)
        if demand.ndim == 1:
            demand = demand[:, None]
        if demand.ndim != 2:
            raise DataError("demand must be a (load, snapshot) matrix.")
        n, t = demand.shape
        if n == 0 or t == 0:
            raise DataError("LoadProfile needs at least one load and one snapshot.")
        if len(ids) != n:
            raise DataError(f"{len(ids)} load ids for a demand matrix with {n} rows.")
        if len(set(ids)) != n:
            dupes = sorted({x for x in ids if ids.count(x) > 1})
            raise DataError(f"Duplicate load ids: {dupes}")
        if not np.all(np.isfinite(demand)):
            raise DataError("demand contains missing or non-finite values.")
        if np.any(demand < 0):
            raise DataError("demand values must be >= 0 kW.")
        width = np.ones(n, dtype=np.int64) if self.phase_width is None else np.array(self.phase_width, dtype=np.int64)
        if width.shape != (n,):
            raise DataError("phase_width must have one entry per load.")
        if np.any((width < 1) | (width > 3)):
            raise DataError("phase_width entries must be 1, 2 or 3.")
        object.__setattr__(self, "load_ids", ids)
        object.__setattr__(self, "demand", _frozen_array(demand))
        object.__setattr__(self, "phase_width", _frozen_array(width, dtype=np.int64))

    @property
    def n_loads(self) -> int:
        return self.demand.shape[0]

    @property
    def n_snapshots(self) -> int:
        return self.demand.shape[1]

    def snapshot(self, t: int) -> np.ndarray:
        return self.demand[:, t]

    def window(self, start: int, stop: int) -> "LoadProfile":
        return LoadProfile(self.load_ids, self.demand[:, start:stop], self.phase_width)

    def with_demand(self, demand) -> "LoadProfile":
        return LoadProfile(self.load_ids, demand, self.phase_width)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.demand, index=pd.Index(self.load_ids, name="load_id"))


# ============================================================
# 2. Phase assignments
# ============================================================

@dataclass(frozen=True)
class PhaseAssignment:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    phase_width: Optional[np.ndarray] = None

    def __post_init__(self):
        vecs = []
        for name in ("a", "b", "c"):
            v = np.asarray(getattr(self, name))
            if v.ndim != 1:
                raise FormulationError(f"assignment vector {name} must be 1-D.")
            if not np.all((v == 0) | (v == 1)):
                raise FormulationError(f"assignment vector {name} must contain only 0/1 entries.")
            vecs.append(v.astype(np.int8))
        n = vecs[0].size
        if any(v.size != n for v in vecs):
            raise FormulationError("assignment vectors a, b, c differ in length.")
        width = np.ones(n, dtype=np.int64) if self.phase_width is None else np.asarray(self.phase_width, dtype=np.int64)
        if width.shape != (n,):
            raise FormulationError("phase_width length does not match the assignment.")
        occupied = vecs[0].astype(np.int64) + vecs[1] + vecs[2]
        bad = np.flatnonzero(occupied != width)
        if bad.size:
            raise FormulationError(
                f"loads {bad[:5].tolist()} occupy {occupied[bad[:5]].tolist()} phases, "
                f"expected {width[bad[:5]].tolist()}."
            )
        for name, v in zip(("a", "b", "c"), vecs):
            object.__setattr__(self, name, _frozen_array(v, dtype=np.int8))
        object.__setattr__(self, "phase_width", _frozen_array(width, dtype=np.int64))

    @property
    def n_loads(self) -> int:
        return self.a.size

    def matrix(self) -> np.ndarray:
        """(3, n) matrix with rows a, b, c."""
        return np.vstack([self.a, self.b, self.c])

    def labels(self) -> Tuple[str, ...]:
        m = self.matrix()
        return tuple("".join(p for p, row in zip(PHASES, m) if row[i]) for i in range(self.n_loads))

    def phase_sums(self, demand) -> np.ndarray:
        return self.matrix().astype(float) @ np.asarray(demand, dtype=float)

    @classmethod
    def from_labels(cls, labels: Sequence[str], phase_width=None) -> "PhaseAssignment":
        rows = np.zeros((3, len(labels)), dtype=np.int8)
        for i, label in enumerate(labels):
            label = str(label).upper()
            if not label or any(ch not in PHASES for ch in label) or len(set(label)) != len(label):
                raise FormulationError(f"invalid phase label '{label}' for load {i}.")
            for ch in label:
                rows[PHASES.index(ch), i] = 1
        width = phase_width if phase_width is not None else rows.sum(axis=0)
        return cls(rows[0], rows[1], rows[2], width)

    @classmethod
    def round_robin(cls, n_loads: int, phase_width=None) -> "PhaseAssignment":
        """Load i starts on phase i mod 3 (and the next width-1 phases)."""
        width = np.ones(n_loads, dtype=np.int64) if phase_width is None else np.asarray(phase_width)
        labels = []
        for i in range(n_loads):
            labels.append("".join(sorted(PHASES[(i + k) % 3] for k in range(int(width[i])))))
        return cls.from_labels(labels, width)

    def __eq__(self, other):
        if not isinstance(other, PhaseAssignment):
            return NotImplemented
        return (
            np.array_equal(self.a, other.a)
            and np.array_equal(self.b, other.b)
            and np.array_equal(self.c, other.c)
            and np.array_equal(self.phase_width, other.phase_width)
        )

    def __hash__(self):
        return hash((self.a.tobytes(), self.b.tobytes(), self.c.tobytes()))


def count_swaps(prev: PhaseAssignment, next: PhaseAssignment) -> int:
    """Number of loads whose set of occupied phases changes between two assignments."""
    if prev.n_loads != next.n_loads:
        raise FormulationError(f"cannot compare assignments of {prev.n_loads} and {next.n_loads} loads.")
    changed = np.any(prev.matrix() != next.matrix(), axis=0)
    return int(changed.sum())


# ============================================================
# 3. Uncertainty sets
# ============================================================

@dataclass(frozen=True)
class BoxUncertaintySet:
    """
    Box {d : center - half_width <= d <= center + half_width}.

    The lower bound is clamped at 0 unless clamp=False.
    """

    center: np.ndarray
    half_width: np.ndarray
    clamp: bool = True

    def __post_init__(self):
        center = np.atleast_1d(np.array(self.center, dtype=float))
        half = np.atleast_1d(np.array(self.half_width, dtype=float))
        if half.shape == (1,) and center.size > 1:
            half = np.full(center.shape, half[0])
        if center.ndim != 1 or half.shape != center.shape:
            raise UncertaintySetError("center and half_width must be vectors of equal length.")
        if not (np.all(np.isfinite(center)) and np.all(np.isfinite(half))):
            raise UncertaintySetError("box bounds must be finite.")
        if np.any(half < 0):
            raise UncertaintySetError("half_width must be >= 0 componentwise.")
        if self.clamp and np.any(center + half < 0):
            bad = int(np.flatnonzero(center + half < 0)[0])
            raise UncertaintySetError(f"empty set: upper bound of component {bad} is below the clamped lower bound 0.")
        object.__setattr__(self, "center", _frozen_array(center))
        object.__setattr__(self, "half_width", _frozen_array(half))

    @classmethod
    def relative(cls, center, rho: float, clamp: bool = True) -> "BoxUncertaintySet":
        """Box (1 - rho) * center <= d <= (1 + rho) * center."""
        if not 0.0 <= rho < 1.0:
            raise UncertaintySetError(f"rho must lie in [0, 1), got {rho}.")
        center = np.asarray(center, dtype=float)
        return cls(center, rho * np.abs(center), clamp)

    @property
    def n(self) -> int:
        return self.center.size

    @property
    def lower(self) -> np.ndarray:
        lo = self.center - self.half_width
        return np.maximum(lo, 0.0) if self.clamp else lo

    @property
    def upper(self) -> np.ndarray:
        return self.center + self.half_width

    def contains(self, d, tol: float = 1e-9) -> bool:
        d = np.asarray(d, dtype=float)
        return bool(np.all(d >= self.lower - tol) and np.all(d <= self.upper + tol))

    def scaled(self, factor: float) -> "BoxUncertaintySet":
        return BoxUncertaintySet(self.center, self.half_width * factor, self.clamp)


@dataclass(frozen=True)
class PolyhedralSet:
    """Polyhedron {d : H d <= h}; nonempty and bounded when validate=True."""

    H: np.ndarray
    h: np.ndarray
    validate: bool = field(default=True, compare=False)

    def __post_init__(self):
        H = np.atleast_2d(np.array(self.H, dtype=float))
        h = np.atleast_1d(np.array(self.h, dtype=float))
        if H.shape[0] < 1:
            raise UncertaintySetError("a polyhedral set needs at least one row.")
        if h.shape != (H.shape[0],):
            raise UncertaintySetError(f"h has shape {h.shape}, expected ({H.shape[0]},).")
        if not (np.all(np.isfinite(H)) and np.all(np.isfinite(h))):
            raise UncertaintySetError("H and h must be finite.")
        object.__setattr__(self, "H", _frozen_array(H))
        object.__setattr__(self, "h", _frozen_array(h))
        if self.validate:
            self.bounds()

    @property
    def n(self) -> int:
        return self.H.shape[1]

    @property
    def k(self) -> int:
        return self.H.shape[0]

    def contains(self, d, tol: float = 1e-9) -> bool:
        return bool(np.all(self.H @ np.asarray(d, dtype=float) <= self.h + tol))

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        """Componentwise (min, max) over the set, by 2n LPs."""
        cached = self.__dict__.get("_bounds")
        if cached is not None:
            return cached

        # local import: the LP kernel is only needed for validation
        from modules.milp_instance import LpStatus, MilpBuilder
        from modules.simplex_solver import solve_lp

        builder = MilpBuilder("polyhedron_bounds")
        for i in range(self.n):
            builder.add_variable(f"dp{i}")
            builder.add_variable(f"dm{i}")
        for r in range(self.k):
            terms = {}
            for i in range(self.n):
                if self.H[r, i] != 0.0:
                    terms[f"dp{i}"] = self.H[r, i]
                    terms[f"dm{i}"] = -self.H[r, i]
            builder.add_row(terms, "L", self.h[r], name=f"H{r}")
        base = builder.build()

        lo = np.zeros(self.n)
        hi = np.zeros(self.n)
        for i in range(self.n):
            for sign, out in ((1.0, lo), (-1.0, hi)):
                obj = np.zeros(base.n_vars)
                obj[2 * i] = sign
                obj[2 * i + 1] = -sign
                res = solve_lp(dataclasses.replace(base, objective=obj))
                if res.status == LpStatus.INFEASIBLE:
                    raise UncertaintySetError("polyhedral uncertainty set is empty.")
                if res.status == LpStatus.UNBOUNDED:
                    raise UncertaintySetError(f"polyhedral uncertainty set is unbounded along load {i}.")
                if not res.is_optimal:
                    raise UncertaintySetError(f"bounding LP for load {i} ended with {res.status.value}.")
                out[i] = sign * res.objective
        result = (_frozen_array(lo), _frozen_array(hi))
        object.__setattr__(self, "_bounds", result)
        return result


def box_to_polyhedron(box: BoxUncertaintySet) -> PolyhedralSet:
    """H = [I; -I], h = [upper; -lower]."""
    eye = np.eye(box.n)
    H = np.vstack([eye, -eye])
    h = np.concatenate([box.upper, -box.lower])
    return PolyhedralSet(H, h, validate=False)


# ============================================================
# 4. Look-ahead configuration and plans
# ============================================================

@dataclass(frozen=True)
class LookAheadConfig:
    t1: int = 24
    t2: int = 48
    lam: float = 1.0 / 3.0
    swap_budget: int = 1
    initial_assignment: Optional[PhaseAssignment] = None

    def __post_init__(self):
        for name in ("t1", "t2", "swap_budget"):
            object.__setattr__(self, name, _whole_number(getattr(self, name), name))
        if not (self.t1 >= 1 and self.t2 > self.t1):
            raise FormulationError(f"need t2 > t1 >= 1, got t1={self.t1}, t2={self.t2}.")
        if self.lam < 0:
            raise FormulationError("lambda must be >= 0.")
        if self.swap_budget < 0:
            raise FormulationError("swap budget must be >= 0.")

    def with_initial(self, assignment: PhaseAssignment) -> "LookAheadConfig":
        return dataclasses.replace(self, initial_assignment=assignment)


@dataclass(frozen=True)
class SwapEvent:
    snapshot: int
    load_id: str
    from_phase: str
    to_phase: str


@dataclass(frozen=True)
class BalancePlan:
    assignments: Tuple[PhaseAssignment, ...]
    u: float
    v: float
    advisory_assignment: PhaseAssignment
    swap_events: Tuple[SwapEvent, ...]
    gap: float
    swap_budget: int
    objective: float = float("nan")
    status: str = ""
    solve_seconds: float = 0.0

    def __post_init__(self):
        if len(self.swap_events) > self.swap_budget:
            raise FormulationError(
                f"plan has {len(self.swap_events)} swaps for a budget of {self.swap_budget}."
            )
        if self.u < -1e-6 or self.v < -1e-6:
            raise FormulationError("plan imbalances u, v must be >= 0.")
        object.__setattr__(self, "u", max(0.0, float(self.u)))
        object.__setattr__(self, "v", max(0.0, float(self.v)))
        object.__setattr__(self, "assignments", tuple(self.assignments))
        object.__setattr__(self, "swap_events", tuple(self.swap_events))

    @property
    def terminal_assignment(self) -> PhaseAssignment:
        return self.assignments[-1]
