import math
import os
import tempfile
import unittest
from types import SimpleNamespace

import numpy as np
import numpy.testing as npt
import pandas as pd

from modules.dataset_loader import synthetic_dataset
from modules.errors import DataError
from modules.report_generator import (
    STD_HEADER,
    read_summary_csv,
    render_table,
    sorted_curve,
    summarize,
    summary_frame,
    swap_histogram,
    write_profile_stats,
    write_sorted_curves,
    write_summary_csv,
    write_summary_json,
)
from modules.utils import read_json


def metric(omega, nu, upsilon):
    return SimpleNamespace(omega=omega, nu=nu, upsilon=upsilon)


def naive_stats(values):
    n = len(values)
    mean = sum(values) / n
    return max(values), mean, math.sqrt(sum((v - mean) ** 2 for v in values) / n)


class TestSummarize(unittest.TestCase):
    def test_small_example(self):
        s = summarize([metric(8.0, 4.0, 4.0 / 7.0), metric(2.0, 1.0, None)], runtimes=[0.5, 1.5], method="d-PB")
        self.assertEqual(s.count, 2)
        self.assertEqual(s.metrics["omega_kw"], (8.0, 5.0, 3.0))
        self.assertEqual(s.metrics["nu_kw"], (4.0, 2.5, 1.5))
        # the snapshot without upsilon only drops out of that metric
        self.assertAlmostEqual(s.get("upsilon_pct", "max"), 400.0 / 7.0)
        self.assertEqual(s.get("upsilon_pct", "std"), 0.0)
        self.assertEqual(s.runtime, (1.5, 1.0, 0.5))

    def test_matches_naive_formulas(self):
        rng = np.random.default_rng(2)
        ms = [metric(*rng.uniform(0, 10, 2), rng.uniform(0, 1)) for _ in range(37)]
        s = summarize(ms)
        for name, attr, scale in (("omega_kw", "omega", 1.0), ("nu_kw", "nu", 1.0), ("upsilon_pct", "upsilon", 100.0)):
            expected = naive_stats([getattr(m, attr) * scale for m in ms])
            npt.assert_allclose(s.metrics[name], expected, rtol=1e-12)

    def test_concatenated_runs(self):
        rng = np.random.default_rng(3)
        a = [metric(*rng.uniform(0, 5, 2), 0.1) for _ in range(5)]
        b = [metric(*rng.uniform(5, 9, 2), 0.2) for _ in range(7)]
        both = summarize(a + b)
        self.assertEqual(both.count, 12)
        self.assertEqual(both.get("omega_kw", "max"), max(m.omega for m in a + b))
        npt.assert_allclose(both.get("nu_kw"), np.mean([m.nu for m in a + b]))

    def test_empty_input(self):
        with self.assertRaises(DataError):
            summarize([], method="r-PB")


class TestOutputs(unittest.TestCase):
    def setUp(self):
        self.summaries = [
            summarize([metric(8.0, 4.0, 0.5), metric(2.0, 1.0, 0.25)], method="d-PB"),
            summarize([metric(3.0, 2.0, 0.1)], method="r-LAPB(s=1)"),
        ]

    def test_summary_csv_round_trip(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_summary_csv(self.summaries, os.path.join(tmp, "out", "summary.csv"))
            with open(path) as f:
                self.assertEqual(f.readline(), STD_HEADER)
            back = read_summary_csv(path)
            expected = summary_frame(self.summaries)
            self.assertEqual(list(back.columns), ["method", "metric", "max", "avg", "std"])
            self.assertEqual(list(back["method"]), list(expected["method"]))
            npt.assert_allclose(back[["max", "avg", "std"]].to_numpy(), expected[["max", "avg", "std"]].to_numpy())

    def test_summary_json(self):
        with tempfile.TemporaryDirectory() as tmp:
            data = read_json(write_summary_json(self.summaries, os.path.join(tmp, "summary.json")))
        self.assertEqual(data["std"], "population")
        self.assertEqual(data["methods"][0]["metrics"]["omega_kw"], {"max": 8.0, "avg": 5.0, "std": 3.0})

    def test_render_table(self):
        text = render_table(self.summaries)
        self.assertEqual(len(text.splitlines()), 3)
        self.assertIn("8.00 / 5.00 / 3.00", text)
        self.assertIn("r-LAPB(s=1)", text)

    def test_sorted_curve(self):
        curve = sorted_curve([3.0, 1.0, 2.0])
        self.assertEqual(list(curve["rank"]), [1, 2, 3])
        self.assertEqual(list(curve["kw"]), [3.0, 2.0, 1.0])
        with tempfile.TemporaryDirectory() as tmp:
            path = write_sorted_curves({"d-PB": [1.0, 4.0], "r-PB": [2.0]}, os.path.join(tmp, "sorted.csv"))
            with open(path) as f:
                self.assertEqual(f.read().splitlines(), ["method,rank,kw", "d-PB,1,4.0", "d-PB,2,1.0", "r-PB,1,2.0"])

    def test_swap_histogram_lists_every_load(self):
        event = SimpleNamespace(load_id="L2")
        run = SimpleNamespace(load_ids=("L1", "L2", "L3"), swap_events=lambda: [(25, event), (31, event)])
        hist = swap_histogram(run)
        self.assertEqual(list(hist["load_id"]), ["L1", "L2", "L3"])
        self.assertEqual(list(hist["swaps"]), [0, 2, 0])

    def test_profile_stats_files(self):
        ds = synthetic_dataset(n_loads=2, n_days=3, seed=4)
        with tempfile.TemporaryDirectory() as tmp:
            loads, profile = write_profile_stats(ds, os.path.join(tmp, "stats"))
            self.assertEqual(os.path.basename(loads), "load_stats.csv")
            per_load = pd.read_csv(loads)
            per_hour = pd.read_csv(profile)
        self.assertEqual(list(per_load["load_id"]), ["L001", "L002"])
        npt.assert_allclose(per_load["mean"], ds.demand.mean(axis=1))
        self.assertEqual(list(per_hour.columns), ["load_id", "hour", "mean_kw", "std_kw"])
        self.assertEqual(len(per_hour), 48)
        npt.assert_allclose(per_hour["mean_kw"].iloc[18], ds.hour_slice(18)[0].mean())


if __name__ == '__main__':
    unittest.main()
