import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from modules.dataset_loader import daily_profile_stats, describe_dataset
from modules.errors import DataError
from modules.utils import ensure_directory, write_json

# name in the files -> (attribute, scale)
METRICS = {
    "omega_kw": ("omega", 1.0),
    "nu_kw": ("nu", 1.0),
    "upsilon_pct": ("upsilon", 100.0),
}
SUMMARY_COLUMNS = ["method", "metric", "max", "avg", "std"]
STD_HEADER = "# std: population (denominator N)\n"


# -------------------------------------------------------------------
# Aggregation
# -------------------------------------------------------------------

def _stats(values) -> Tuple[float, float, float]:
    arr = np.asarray(list(values), dtype=float)
    if arr.size == 0:
        return (float("nan"),) * 3
    return float(arr.max()), float(arr.mean()), float(arr.std(ddof=0))


@dataclass(frozen=True)
class MethodSummary:
    """Per-metric (max, avg, std); upsilon in percent."""

    method: str
    count: int
    metrics: Dict[str, Tuple[float, float, float]]
    runtime: Tuple[float, float, float] = field(default=(float("nan"),) * 3, compare=False)

    def get(self, metric: str, stat: str = "avg") -> float:
        return self.metrics[metric][("max", "avg", "std").index(stat)]


def summarize(snapshot_metrics: Sequence, runtimes: Iterable[float] = (), method: str = "") -> MethodSummary:
    """
    Max / mean / population std of each metric over all snapshots.

    Snapshots with zero total demand have no upsilon and are left out of
    that metric only.
    """
    if len(snapshot_metrics) == 0:
        raise DataError(f"no snapshot metrics to summarize for '{method}'.")
    out = {}
    for name, (attr, scale) in METRICS.items():
        vals = [getattr(m, attr) * scale for m in snapshot_metrics if getattr(m, attr) is not None]
        out[name] = _stats(vals)
    return MethodSummary(method, len(snapshot_metrics), out, _stats(runtimes))


def summary_frame(summaries: Sequence[MethodSummary]) -> pd.DataFrame:
    rows = []
    for s in summaries:
        for name in METRICS:
            mx, avg, std = s.metrics[name]
            rows.append({"method": s.method, "metric": name, "max": mx, "avg": avg, "std": std})
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


def timing_frame(summaries: Sequence[MethodSummary]) -> pd.DataFrame:
    rows = [
        {"method": s.method, "metric": "runtime_s", "max": s.runtime[0], "avg": s.runtime[1], "std": s.runtime[2]}
        for s in summaries
    ]
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


def _write_csv(df: pd.DataFrame, path: str, header: str = "") -> str:
    folder = os.path.dirname(path)
    if folder:
        ensure_directory(folder)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(header)
        df.to_csv(f, index=False, lineterminator="\n")
    return path


def write_summary_csv(summaries: Sequence[MethodSummary], path: str) -> str:
    return _write_csv(summary_frame(summaries), path, STD_HEADER)


def read_summary_csv(path: str) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def write_timings_csv(summaries: Sequence[MethodSummary], path: str) -> str:
    return _write_csv(timing_frame(summaries), path, STD_HEADER)


def write_summary_json(summaries: Sequence[MethodSummary], path: str) -> str:
    data = {
        "std": "population",
        "methods": [
            {
                "method": s.method,
                "count": s.count,
                "metrics": {k: {"max": v[0], "avg": v[1], "std": v[2]} for k, v in s.metrics.items()},
            }
            for s in summaries
        ],
    }
    return write_json(data, path)


def render_table(summaries: Sequence[MethodSummary]) -> str:
    """Plain-text table, two decimals, one line per method."""
    header = f"{'method':<16}" + "".join(f"{m + ' max/avg/std':>30}" for m in METRICS)
    lines = [header]
    for s in summaries:
        cells = "".join(f"{'%.2f / %.2f / %.2f' % s.metrics[m]:>30}" for m in METRICS)
        lines.append(f"{s.method:<16}{cells}")
    return "\n".join(lines)


# -------------------------------------------------------------------
# Curves and timelines
# -------------------------------------------------------------------

def sorted_curve(values: Iterable[float]) -> pd.DataFrame:
    """(rank, kw) with values sorted descending; rank starts at 1."""
    ordered = sorted((float(v) for v in values), reverse=True)
    return pd.DataFrame({"rank": np.arange(1, len(ordered) + 1), "kw": ordered})


def write_sorted_curves(curves: Mapping[str, Iterable[float]], path: str) -> str:
    frames = []
    for method, values in curves.items():
        df = sorted_curve(values)
        df.insert(0, "method", method)
        frames.append(df)
    out = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=["method", "rank", "kw"])
    return _write_csv(out, path)


def swap_histogram(run) -> pd.DataFrame:
    """Implemented swaps per load, every load listed."""
    counts = {lid: 0 for lid in run.load_ids}
    for _, ev in run.swap_events():
        counts[ev.load_id] = counts.get(ev.load_id, 0) + 1
    return pd.DataFrame({"load_id": list(counts), "swaps": list(counts.values())})


def assignment_timeline(run) -> pd.DataFrame:
    """(snapshot, load_id, phase) for every implemented snapshot."""
    rows = []
    for e in run.epochs:
        for snap, assignment in zip(e.snapshots, e.implemented):
            for lid, label in zip(run.load_ids, assignment.labels()):
                rows.append({"snapshot": snap, "load_id": lid, "phase": label})
    return pd.DataFrame(rows, columns=["snapshot", "load_id", "phase"])


def write_run_outputs(run, folder: str, prefix: Optional[str] = None) -> List[str]:
    """Metrics, timeline, histogram, run record and timings of one rolling run."""
    ensure_directory(folder)
    tag = f"{prefix}_" if prefix else ""
    paths = [
        _write_csv(run.metrics_frame(), os.path.join(folder, f"{tag}metrics.csv")),
        _write_csv(assignment_timeline(run), os.path.join(folder, f"{tag}timeline.csv")),
        _write_csv(swap_histogram(run), os.path.join(folder, f"{tag}swaps.csv")),
        write_json(run.to_dict(), os.path.join(folder, f"{tag}run.json")),
        _write_csv(run.timings_frame(), os.path.join(folder, f"timings_{tag}epochs.csv")),
    ]
    return paths


def write_profile_stats(dataset, folder: str) -> List[str]:
    """Per-load statistics and the average daily profile (mean/std per hour) of the input data."""
    ensure_directory(folder)
    return [
        _write_csv(describe_dataset(dataset).reset_index(), os.path.join(folder, "load_stats.csv")),
        _write_csv(daily_profile_stats(dataset), os.path.join(folder, "profile_stats.csv")),
    ]
