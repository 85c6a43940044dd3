# ============================================================
# dataset_loader.py
# Hourly load data: CSV ingestion, random scaling, box
# uncertainty sets from history or forecasts, descriptive
# statistics and a synthetic feeder generator.
#
# Key assumptions:
# - One row per hour, first timestamp at hour 0, no gaps, whole
#   days only (n_snapshots = 24 * n_days).
# - Demand in kW, >= 0, no missing cells.
# - Wide layout: "timestamp" column + one column per load.
#   Long layout: "load_id", "timestamp", "kW" rows.
# ============================================================

import logging
import os
from dataclasses import dataclass, field, replace
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from modules.errors import DataError
from modules.model import BoxUncertaintySet, LoadProfile
from modules.utils import ensure_directory, sha256_checksum, write_json

logger = logging.getLogger(__name__)

HOURS_PER_DAY = 24
LAYOUTS = ("wide", "long")
DEFAULT_SCALE_RANGE = (0.8, 1.2)
# header is line 1, so data row k sits on line k + 2
FIRST_DATA_LINE = 2


@dataclass(frozen=True)
class LoadDataset:
    profile: LoadProfile
    timestamps: pd.DatetimeIndex
    source_note: str = ""
    seed: Optional[int] = None
    scale_range: Optional[Tuple[float, float]] = None
    scale_factors: Optional[Tuple[float, ...]] = field(default=None, compare=False)

    def __post_init__(self):
        n_snap = self.profile.n_snapshots
        if len(self.timestamps) != n_snap:
            raise DataError(f"{len(self.timestamps)} timestamps for {n_snap} snapshots.")
        if n_snap % HOURS_PER_DAY:
            raise DataError(f"{n_snap} hourly snapshots is not a whole number of days.")

    @property
    def n_days(self) -> int:
        return self.profile.n_snapshots // HOURS_PER_DAY

    @property
    def day_boundaries(self) -> List[int]:
        return list(range(0, self.profile.n_snapshots, HOURS_PER_DAY))

    @property
    def load_ids(self) -> Tuple[str, ...]:
        return self.profile.load_ids

    @property
    def demand(self) -> np.ndarray:
        return self.profile.demand

    def hour_slice(self, hour: int) -> np.ndarray:
        """(n_loads, n_days) matrix of observations at one hour of day."""
        return self.profile.demand[:, hour::HOURS_PER_DAY]

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.profile.demand.T, columns=list(self.profile.load_ids))
        df.insert(0, "timestamp", self.timestamps)
        return df


# ============================================================
# 1. CSV reading
# ============================================================

def _numeric_column(series: pd.Series, label: str) -> np.ndarray:
    arr = pd.to_numeric(series, errors="coerce").to_numpy(dtype=float, na_value=np.nan)
    bad = np.flatnonzero(~np.isfinite(arr))
    if bad.size:
        row = int(bad[0])
        raw = series.iloc[row]
        what = "missing value" if raw is None or str(raw).strip() == "" else f"non-numeric value '{raw}'"
        raise DataError(f"line {row + FIRST_DATA_LINE}: {what} in column '{label}'")
    neg = np.flatnonzero(arr < 0)
    if neg.size:
        row = int(neg[0])
        raise DataError(f"line {row + FIRST_DATA_LINE}: negative demand {arr[row]} kW in column '{label}'")
    return arr


def _parse_timestamps(series: pd.Series) -> pd.DatetimeIndex:
    ts = pd.to_datetime(series, errors="coerce")
    if ts.isna().any():
        row = int(np.flatnonzero(ts.isna().to_numpy())[0])
        raise DataError(f"line {row + FIRST_DATA_LINE}: cannot parse timestamp '{series.iloc[row]}'")
    return pd.DatetimeIndex(ts)


def _check_hourly(ts: pd.DatetimeIndex, line_of) -> None:
    if len(ts) == 0:
        raise DataError("no data rows.")
    if ts[0].hour != 0 or ts[0].minute != 0 or ts[0].second != 0:
        raise DataError(f"line {line_of(0)}: first timestamp {ts[0]} is not at hour 0.")
    steps = np.diff(ts.asi8)
    hour_ns = pd.Timedelta(hours=1).value
    bad = np.flatnonzero(steps != hour_ns)
    if bad.size:
        k = int(bad[0]) + 1
        raise DataError(f"line {line_of(k)}: timestamp {ts[k]} breaks the hourly sequence after {ts[k - 1]}.")
    if len(ts) % HOURS_PER_DAY:
        raise DataError(f"{len(ts)} hourly rows is not a whole number of days.")


def _read_frame(path: str) -> pd.DataFrame:
    if not os.path.exists(path):
        raise DataError(f"input file not found: {path}")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
        # pandas renames repeated headers (L1 -> L1.1); take the names from the raw first line
        header = pd.read_csv(path, header=None, nrows=1, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise DataError(f"{path}: file is empty.")
    except pd.errors.ParserError as e:
        # pandas reports "Expected N fields in line L, saw M"
        raise DataError(f"{path}: ragged row ({e}).")
    names = [str(c).strip() for c in header.iloc[0]]
    repeated = sorted({c for c in names if names.count(c) > 1})
    if repeated:
        raise DataError(f"line 1: duplicate column names {repeated}.")
    if len(names) != df.shape[1]:
        raise DataError(f"line {FIRST_DATA_LINE}: ragged row, expected {len(names)} fields.")
    df.columns = names
    return df


def _widths_for(load_ids, phase_widths):
    if not phase_widths:
        return None
    unknown = sorted(set(phase_widths) - set(load_ids))
    if unknown:
        raise DataError(f"phase widths given for unknown loads: {unknown}")
    return np.array([int(phase_widths.get(lid, 1)) for lid in load_ids], dtype=np.int64)


def read_csv(
    path: str,
    layout: str = "wide",
    phase_widths: Optional[Mapping[str, int]] = None,
    source_note: Optional[str] = None,
) -> LoadDataset:
    """
    Load an hourly demand CSV into a LoadDataset.

    Every rejection names the 1-based file line it refers to.
    """
    if layout not in LAYOUTS:
        raise DataError(f"unknown CSV layout '{layout}', expected one of {LAYOUTS}.")
    df = _read_frame(path)
    # pandas pads short rows with NaN even with dtype=str
    short = df.isna().any(axis=1).to_numpy()
    if short.any():
        row = int(np.flatnonzero(short)[0])
        raise DataError(f"line {row + FIRST_DATA_LINE}: ragged row, expected {df.shape[1]} fields.")

    if layout == "wide":
        if "timestamp" not in df.columns:
            raise DataError(f"{path}: wide layout needs a 'timestamp' column.")
        load_cols = [c for c in df.columns if c != "timestamp"]
        if not load_cols:
            raise DataError(f"{path}: no load columns.")
        ts = _parse_timestamps(df["timestamp"])
        _check_hourly(ts, lambda k: k + FIRST_DATA_LINE)
        demand = np.vstack([_numeric_column(df[c], c) for c in load_cols])
        load_ids = tuple(load_cols)
    else:
        lower = {c.lower(): c for c in df.columns}
        missing = [c for c in ("load_id", "timestamp", "kw") if c not in lower]
        if missing:
            raise DataError(f"{path}: long layout is missing columns {missing}.")
        ids = df[lower["load_id"]].astype(str)
        ts_all = _parse_timestamps(df[lower["timestamp"]])
        kw = _numeric_column(df[lower["kw"]], lower["kw"])
        long = pd.DataFrame({"load_id": ids.to_numpy(), "timestamp": ts_all, "kw": kw, "line": np.arange(len(df)) + FIRST_DATA_LINE})
        dupes = long.duplicated(["load_id", "timestamp"])
        if dupes.any():
            line = int(long.loc[dupes, "line"].iloc[0])
            raise DataError(f"line {line}: duplicate (load_id, timestamp) entry.")
        load_ids = tuple(pd.unique(long["load_id"]))
        wide = long.pivot(index="timestamp", columns="load_id", values="kw").sort_index()
        wide = wide[list(load_ids)]
        if wide.isna().any().any():
            lid = wide.columns[wide.isna().any()].tolist()[0]
            stamp = wide.index[wide[lid].isna()][0]
            raise DataError(f"{path}: load '{lid}' has no value at {stamp}.")
        ts = pd.DatetimeIndex(wide.index)
        first_line = long.groupby("timestamp")["line"].min()
        _check_hourly(ts, lambda k: int(first_line.loc[ts[k]]))
        demand = wide.to_numpy(dtype=float).T

    profile = LoadProfile(load_ids, demand, _widths_for(load_ids, phase_widths))
    note = source_note if source_note is not None else os.path.basename(path)
    dataset = LoadDataset(profile, ts, note)
    logger.info("[Ingest] %s: %d loads x %d days (%s layout)", path, profile.n_loads, dataset.n_days, layout)
    return dataset


def read_phase_widths(path: str) -> dict:
    """Two-column CSV load_id,width."""
    df = _read_frame(path)
    lower = {str(c).strip().lower(): c for c in df.columns}
    if "load_id" not in lower or "width" not in lower:
        raise DataError(f"{path}: phase width file needs 'load_id' and 'width' columns.")
    widths = _numeric_column(df[lower["width"]], "width")
    return {str(lid).strip(): int(w) for lid, w in zip(df[lower["load_id"]], widths)}


def write_csv(dataset: LoadDataset, path: str, layout: str = "wide") -> str:
    """Write the dataset so read_csv(path, layout) returns the same values."""
    if layout not in LAYOUTS:
        raise DataError(f"unknown CSV layout '{layout}', expected one of {LAYOUTS}.")
    folder = os.path.dirname(path)
    if folder:
        ensure_directory(folder)
    wide = dataset.to_frame()
    if layout == "wide":
        out = wide
    else:
        out = wide.melt(id_vars="timestamp", var_name="load_id", value_name="kW")
        out = out[["load_id", "timestamp", "kW"]]
    # default float formatting is the shortest round-trip repr
    out.to_csv(path, index=False, date_format="%Y-%m-%dT%H:%M:%S", lineterminator="\n")
    return path


# ============================================================
# 2. Scaling and uncertainty sets
# ============================================================

def random_scale(
    dataset: LoadDataset,
    seed: int,
    scale_range: Sequence[float] = DEFAULT_SCALE_RANGE,
) -> LoadDataset:
    """Multiply each load by its own factor drawn uniformly from scale_range."""
    lo, hi = (float(x) for x in scale_range)
    if lo <= 0 or hi < lo:
        raise DataError(f"scale range must satisfy 0 < lo <= hi, got [{lo}, {hi}].")
    rng = np.random.default_rng(seed)
    factors = rng.uniform(lo, hi, dataset.profile.n_loads)
    demand = dataset.profile.demand * factors[:, None]
    logger.info("[Ingest] random scaling with seed %s, factors in [%g, %g]", seed, lo, hi)
    return replace(
        dataset,
        profile=dataset.profile.with_demand(demand),
        seed=seed,
        scale_range=(lo, hi),
        scale_factors=tuple(float(f) for f in factors),
    )


def estimate_box(dataset: LoadDataset, hour_of_day: int, clamp: bool = True) -> BoxUncertaintySet:
    """Center = mean over days at that hour, half width = largest deviation from it."""
    if not 0 <= int(hour_of_day) < HOURS_PER_DAY:
        raise DataError(f"hour of day must be in 0..23, got {hour_of_day}.")
    obs = dataset.hour_slice(int(hour_of_day))
    if obs.shape[1] < 2:
        raise DataError(f"estimating a box needs at least 2 days, dataset has {obs.shape[1]}.")
    center = obs.mean(axis=1)
    half = np.abs(obs - center[:, None]).max(axis=1)
    return BoxUncertaintySet(center, half, clamp)


def table_rho_schedule(t1: int = 24, t2: int = 48, rho1: float = 0.10, rho2: float = 0.30) -> np.ndarray:
    """rho1 for snapshots 1..t1, rho2 for t1+1..t2."""
    if not t2 > t1 >= 1:
        raise DataError(f"need t2 > t1 >= 1, got t1={t1}, t2={t2}.")
    return np.concatenate([np.full(t1, float(rho1)), np.full(t2 - t1, float(rho2))])


def forecast_box(forecast, rho_schedule, clamp: bool = True) -> List[BoxUncertaintySet]:
    """One relative box per forecast column: (1 - rho_t) f_t <= d_t <= (1 + rho_t) f_t."""
    f = np.asarray(forecast, dtype=float)
    if f.ndim == 1:
        f = f[:, None]
    rho = np.atleast_1d(np.asarray(rho_schedule, dtype=float))
    if rho.size != f.shape[1]:
        raise DataError(f"rho schedule has {rho.size} entries for {f.shape[1]} forecast snapshots.")
    if np.any(f < 0) or not np.all(np.isfinite(f)):
        raise DataError("forecast entries must be finite and >= 0.")
    return [BoxUncertaintySet.relative(f[:, t], rho[t], clamp) for t in range(f.shape[1])]


# ============================================================
# 3. Metadata and statistics
# ============================================================

def checksum(dataset: LoadDataset) -> str:
    return sha256_checksum("\n".join(dataset.load_ids), dataset.profile.demand)


def dataset_metadata(dataset: LoadDataset) -> dict:
    return {
        "seed": dataset.seed,
        "scale_range": list(dataset.scale_range) if dataset.scale_range else None,
        "source_note": dataset.source_note,
        "checksum": checksum(dataset),
        "n_loads": dataset.profile.n_loads,
        "n_days": dataset.n_days,
    }


def write_metadata(dataset: LoadDataset, path: str) -> str:
    return write_json(dataset_metadata(dataset), path)


def describe_dataset(dataset: LoadDataset) -> pd.DataFrame:
    """Per-load descriptive statistics of hourly demand (kW)."""
    rows = []
    for lid, series in zip(dataset.load_ids, dataset.profile.demand):
        desc = pd.Series(series).describe(percentiles=[0.05, 0.25, 0.5, 0.75, 0.95])
        rows.append(
            {
                "load_id": lid,
                "count": desc["count"],
                "mean": desc["mean"],
                "std": desc["std"],
                "min": desc["min"],
                "p05": desc["5%"],
                "p25": desc["25%"],
                "p50": desc["50%"],
                "p75": desc["75%"],
                "p95": desc["95%"],
                "max": desc["max"],
            }
        )
    return pd.DataFrame(rows).set_index("load_id")


def daily_profile_stats(dataset: LoadDataset) -> pd.DataFrame:
    """Mean and std of each load at each hour of day, long format."""
    n, days = dataset.profile.n_loads, dataset.n_days
    cube = dataset.profile.demand.reshape(n, days, HOURS_PER_DAY)
    mean = cube.mean(axis=1)
    std = cube.std(axis=1)
    return pd.DataFrame(
        {
            "load_id": np.repeat(dataset.load_ids, HOURS_PER_DAY),
            "hour": np.tile(np.arange(HOURS_PER_DAY), n),
            "mean_kw": mean.ravel(),
            "std_kw": std.ravel(),
        }
    )


# ============================================================
# 4. Synthetic feeder
# ============================================================

_RESIDENTIAL = np.array(
    [0.45, 0.40, 0.38, 0.37, 0.38, 0.45, 0.65, 0.85, 0.80, 0.65, 0.58, 0.55,
     0.55, 0.52, 0.50, 0.55, 0.65, 0.85, 1.00, 0.98, 0.90, 0.78, 0.65, 0.52]
)
_COMMERCIAL = np.array(
    [0.30, 0.28, 0.28, 0.28, 0.30, 0.35, 0.50, 0.75, 0.92, 1.00, 1.00, 0.98,
     0.95, 0.98, 1.00, 0.97, 0.90, 0.75, 0.55, 0.45, 0.40, 0.36, 0.33, 0.31]
)


def synthetic_dataset(
    n_loads: int = 20,
    n_days: int = 30,
    seed: int = 0,
    commercial_share: float = 0.3,
    start: str = "2024-01-01",
) -> LoadDataset:
    """
    Hourly feeder with residential and commercial daily shapes.

    Each load gets a base kW, a per-day level drawn around 1 and hourly
    noise, so days differ the way metered data does.
    """
    if n_loads < 1 or n_days < 1:
        raise DataError("synthetic dataset needs at least one load and one day.")
    rng = np.random.default_rng(seed)
    commercial = rng.random(n_loads) < commercial_share
    base = rng.uniform(5.0, 60.0, n_loads)
    shift = rng.integers(-1, 2, n_loads)
    demand = np.empty((n_loads, n_days * HOURS_PER_DAY))
    for i in range(n_loads):
        shape = np.roll(_COMMERCIAL if commercial[i] else _RESIDENTIAL, int(shift[i]))
        level = rng.normal(1.0, 0.12, n_days).clip(0.5, 1.5)
        noise = rng.normal(1.0, 0.08, (n_days, HOURS_PER_DAY)).clip(0.6, 1.4)
        demand[i] = (base[i] * shape[None, :] * level[:, None] * noise).ravel()
    ids = tuple(f"L{i + 1:03d}" for i in range(n_loads))
    ts = pd.date_range(start, periods=n_days * HOURS_PER_DAY, freq=pd.Timedelta(hours=1))
    return LoadDataset(LoadProfile(ids, np.round(demand, 3)), ts, f"synthetic feeder (seed {seed})", seed=seed)
