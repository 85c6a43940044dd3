import contextlib
import io
import os
import tempfile
import unittest

import pandas as pd

from modules.branch_and_bound import solve_milp
from modules.cli import DEFAULTS, build_parser, main, resolve_config
from modules.dataset_loader import synthetic_dataset, write_csv
from modules.milp_instance import SolverConfig
from modules.mps_io import read_mps
from modules.utils import read_json


# key -> (TOML value, flags, value from the file, value from the flags)
PRECEDENCE_SAMPLES = {
    "input": ('"a.csv"', ["--input", "b.csv"], "a.csv", "b.csv"),
    "layout": ('"long"', ["--layout", "wide"], "long", "wide"),
    "widths": ('"w1.csv"', ["--widths", "w2.csv"], "w1.csv", "w2.csv"),
    "objective": ('"pairwise"', ["--objective", "single-phase"], "pairwise", "single-phase"),
    "t1": ("3", ["--t1", "5"], 3, 5),
    "t2": ("30", ["--t2", "36"], 30, 36),
    "lambda": ("0.5", ["--lambda", "0.25"], 0.5, 0.25),
    "s": ('"0,2"', ["--s", "3"], [0, 2], [3]),
    "rho1": ("0.2", ["--rho1", "0.05"], 0.2, 0.05),
    "rho2": ("0.4", ["--rho2", "0.35"], 0.4, 0.35),
    "gap": ("0.01", ["--gap", "0"], 0.01, 0.0),
    "time_limit": ("60", ["--time-limit", "5"], 60.0, 5.0),
    "node_limit": ("100", ["--node-limit", "7"], 100, 7),
    "backend": ('"highs"', ["--backend", "builtin"], "highs", "builtin"),
    "seed": ("4", ["--seed", "9"], 4, 9),
    "scale": ("false", ["--scale"], False, True),
    "out": ('"o1"', ["--out", "o2"], "o1", "o2"),
    "jobs": ("2", ["--jobs", "3"], 2, 3),
    "hour": ("5", ["--hour", "7"], 5, 7),
    "epochs": ("2", ["--epochs", "4"], 2, 4),
    "stride": ("2", ["--stride", "1"], 2, 1),
    "start": ("48", ["--start", "30"], 48, 30),
    "forecaster": ('"oracle"', ["--forecaster", "persistence"], "oracle", "persistence"),
    "initial": ('"balanced"', ["--initial", "round-robin"], "balanced", "round-robin"),
    "anchor": ("false", ["--anchor"], False, True),
    "problem": ('"r-PB"', ["--problem", "r-LAPB"], "r-PB", "r-LAPB"),
    "label": ('"x,y"', ["--label", "z"], "x,y", "z"),
    "baselines": ("false", ["--baselines"], False, True),
}


def run_cli(*argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(list(argv))
    return code, out.getvalue(), err.getvalue()


class CliTestCase(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = self._tmp.name
        stamps = pd.date_range("2024-01-01", periods=24, freq=pd.Timedelta(hours=1))
        lines = ["timestamp,L1,L2,L3"] + [f"{ts:%Y-%m-%dT%H:%M:%S},1.0,1.0,1.0" for ts in stamps]
        self.flat = os.path.join(self.tmp, "flat.csv")
        with open(self.flat, "w") as f:
            f.write("\n".join(lines) + "\n")

    def tearDown(self):
        self._tmp.cleanup()

    def path(self, *parts):
        return os.path.join(self.tmp, *parts)


class TestSubcommands(CliTestCase):
    def test_balance_equal_loads(self):
        code, stdout, _ = run_cli("balance", "--input", self.flat, "--out", self.path("bal"), "--gap", "0")
        self.assertEqual(code, 0)
        self.assertTrue(stdout.startswith("u = "))
        result = read_json(self.path("bal", "balance.json"))
        self.assertLessEqual(abs(result["u"]), 1e-9)
        assignment = pd.read_csv(self.path("bal", "assignment.csv"))
        self.assertEqual(sorted(assignment["phase"]), ["A", "B", "C"])
        manifest = read_json(self.path("bal", "run-manifest.json"))
        self.assertEqual(manifest["subcommand"], "balance")
        self.assertEqual(len(manifest["input_checksum"]), 64)
        stats = pd.read_csv(self.path("bal", "profile_stats.csv"))
        self.assertEqual(len(stats), 3 * 24)
        self.assertTrue(os.path.exists(self.path("bal", "load_stats.csv")))

    def test_lookahead_without_budget(self):
        code, _, _ = run_cli(
            "lookahead", "--input", self.flat, "--out", self.path("la"),
            "--s", "0", "--t1", "2", "--t2", "4", "--backend", "highs",
        )
        self.assertEqual(code, 0)
        plan = read_json(self.path("la", "plan.json"))
        self.assertEqual(plan["swap_events"], [])
        self.assertEqual(plan["advisory_assignment"], plan["initial_assignment"])
        self.assertEqual(len(pd.read_csv(self.path("la", "plan_assignments.csv"))), 2 * 3)

    def test_exported_instance_solves_to_the_same_objective(self):
        run_cli("balance", "--input", self.flat, "--out", self.path("bal"), "--gap", "0")
        code, _, _ = run_cli("export-mps", "--input", self.flat, "--out", self.path("mps"), "--problem", "d-PB")
        self.assertEqual(code, 0)
        self.assertTrue(os.path.exists(self.path("mps", "d-PB.mps.names.json")))
        instance = read_mps(self.path("mps", "d-PB.mps"))
        solution = solve_milp(instance, SolverConfig(gap_tol=0.0))
        self.assertAlmostEqual(solution.objective, read_json(self.path("bal", "balance.json"))["u"], delta=1e-9)

    def test_robust_and_lookahead_exports(self):
        code, _, _ = run_cli("export-mps", "--input", self.flat, "--out", self.path("mps"), "--problem", "r-LAPB",
                             "--t1", "2", "--t2", "3")
        self.assertEqual(code, 0)
        self.assertEqual(read_mps(self.path("mps", "r-LAPB.mps")).name, "r-LAPB")

    def test_simulate_and_report(self):
        two_days = write_csv(synthetic_dataset(n_loads=4, n_days=2, seed=3), self.path("feeder.csv"))
        code, stdout, _ = run_cli(
            "simulate", "--input", two_days, "--out", self.path("sim"), "--s", "0,1",
            "--t1", "2", "--t2", "4", "--epochs", "2", "--backend", "highs", "--baselines",
        )
        self.assertEqual(code, 0)
        for name in ("summary.csv", "summary.json", "timings_summary.csv", "sorted_omega.csv",
                     "s0_metrics.csv", "s1_run.json", "timings_s1_epochs.csv", "d-PB_metrics.csv",
                     "profile_stats.csv", "load_stats.csv"):
            self.assertTrue(os.path.exists(self.path("sim", name)), name)
        summary = pd.read_csv(self.path("sim", "summary.csv"), comment="#")
        self.assertEqual(sorted(set(summary["method"])), ["d-PB", "r-LAPB(s=0)", "r-LAPB(s=1)", "r-PB"])
        self.assertNotIn("runtime_s", set(summary["metric"]))
        self.assertIn("r-LAPB(s=1)", stdout)

        code, _, _ = run_cli(
            "report", "--input", ",".join([self.path("sim", "s0_metrics.csv"), self.path("sim", "s1_metrics.csv")]),
            "--label", "s=0,s=1", "--out", self.path("rep"),
        )
        self.assertEqual(code, 0)
        report = pd.read_csv(self.path("rep", "summary.csv"), comment="#")
        self.assertEqual(list(report["method"].unique()), ["s=0", "s=1"])


class TestConfigAndExitCodes(CliTestCase):
    def test_usage_errors_exit_2(self):
        self.assertEqual(run_cli()[0], 2)
        self.assertEqual(run_cli("balance", "--layout", "tall")[0], 2)
        self.assertEqual(run_cli("solve")[0], 2)

    def test_domain_errors_exit_1(self):
        code, _, err = run_cli("balance", "--input", self.path("missing.csv"), "--out", self.path("x"))
        self.assertEqual(code, 1)
        self.assertIn("error:", err)
        self.assertEqual(run_cli("robust", "--input", self.flat, "--out", self.path("x"))[0], 1)
        self.assertEqual(run_cli("lookahead", "--input", self.flat, "--out", self.path("x"), "--s", "-1")[0], 1)

    def test_precedence(self):
        toml = self.path("run.toml")
        with open(toml, "w") as f:
            f.write('t1 = 3\nrho1 = 0.2\ns = "0,2"\n')
        parser = build_parser()
        from_file = resolve_config(parser.parse_args(["lookahead", "--config", toml]))
        self.assertEqual((from_file["t1"], from_file["rho1"], from_file["s"]), (3, 0.2, [0, 2]))
        self.assertEqual(from_file["t2"], 48)
        flagged = resolve_config(parser.parse_args(["lookahead", "--config", toml, "--t1", "5"]))
        self.assertEqual(flagged["t1"], 5)
        self.assertEqual(resolve_config(parser.parse_args(["lookahead"]))["t1"], 24)

    def test_precedence_for_every_setting(self):
        self.assertEqual(set(PRECEDENCE_SAMPLES), set(DEFAULTS))
        parser = build_parser()
        defaults = resolve_config(parser.parse_args(["lookahead"]))
        for key, (toml_value, flags, from_file, from_flags) in PRECEDENCE_SAMPLES.items():
            toml = self.path(f"{key}.toml")
            with open(toml, "w") as f:
                f.write(f"{key} = {toml_value}\n")
            expected_default = [1] if key == "s" else DEFAULTS[key]
            self.assertEqual(defaults[key], expected_default, key)
            self.assertEqual(resolve_config(parser.parse_args(["lookahead", "--config", toml]))[key], from_file, key)
            flagged = resolve_config(parser.parse_args(["lookahead", "--config", toml] + flags))
            self.assertEqual(flagged[key], from_flags, key)
        for key in ("scale", "anchor", "baselines"):
            toml = self.path(f"{key}_on.toml")
            with open(toml, "w") as f:
                f.write(f"{key} = true\n")
            self.assertIs(resolve_config(parser.parse_args(["lookahead", "--config", toml]))[key], True, key)

    def test_hour_out_of_range(self):
        for hour in ("-1", "24", "30"):
            code, _, err = run_cli("balance", "--input", self.flat, "--out", self.path("h"), "--hour", hour)
            self.assertEqual(code, 1, hour)
            self.assertIn("--hour must be in 0..23", err)
        code, _, _ = run_cli("export-mps", "--input", self.flat, "--out", self.path("h"), "--hour", "30")
        self.assertEqual(code, 1)
        self.assertEqual(run_cli("balance", "--input", self.flat, "--out", self.path("h"), "--hour", "23")[0], 0)

    def test_manifest_reruns_identically(self):
        run_cli("balance", "--input", self.flat, "--out", self.path("first"), "--objective", "pairwise")
        manifest = self.path("first", "run-manifest.json")
        code, _, _ = run_cli("balance", "--config", manifest, "--out", self.path("second"))
        self.assertEqual(code, 0)
        for name in ("run-manifest.json", "assignment.csv", "balance.json"):
            with open(self.path("first", name), "rb") as a, open(self.path("second", name), "rb") as b:
                self.assertEqual(a.read(), b.read(), name)


if __name__ == '__main__':
    unittest.main()
