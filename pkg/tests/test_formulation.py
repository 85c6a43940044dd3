import itertools
import unittest

import numpy as np

from modules.errors import FormulationError, SolverError, UncertaintySetError
from modules.formulation import (
    ImbalanceObjective,
    assignment_var,
    build_deterministic,
    build_lookahead,
    build_multiphase_constraints,
    build_robust,
    dualize_row,
    evaluate_robust,
    extract_plan,
    solve_deterministic,
    solve_lookahead,
    solve_robust,
)
from modules.milp_instance import MilpBuilder, MilpSolution, SolveStatus, SolverConfig
from modules.model import (
    BoxUncertaintySet,
    LoadProfile,
    LookAheadConfig,
    PhaseAssignment,
    PolyhedralSet,
    box_to_polyhedron,
    count_swaps,
)
from modules.simplex_solver import solve_lp
from tests.oracles import (
    box_vertices,
    brute_force_deterministic,
    brute_force_lookahead,
    brute_force_robust,
    pairwise_value,
    single_phase_value,
    worst_over_vertices,
)

EXACT = SolverConfig(gap_tol=0.0)
HIGHS = SolverConfig(gap_tol=0.0, backend="highs")


def profile_of(d, widths=None):
    d = np.asarray(d, dtype=float)
    return LoadProfile([f"L{i}" for i in range(d.size)], d[:, None], widths)


def support_via_dualizer(pset, x):
    """min u subject to the dual certificate of max_{d in pset} d^T x <= u."""
    builder = MilpBuilder("support")
    builder.add_variable("u", objective=1.0)
    dualize_row(builder, [{}] * pset.n, pset, "u", "p", offset=x)
    return solve_lp(builder.build()).objective


class TestDeterministic(unittest.TestCase):
    def test_equal_loads_balance_perfectly(self):
        res = solve_deterministic(profile_of([1, 1, 1]), solver=EXACT)
        self.assertAlmostEqual(res.objective, 0.0, places=9)
        self.assertEqual(sorted(res.assignment.labels()), ["A", "B", "C"])

    def test_small_examples(self):
        for d, single, pair in (([3, 7, 11], 4.0, 8.0), ([2, 9, 10], 5.0, 8.0)):
            self.assertAlmostEqual(solve_deterministic(profile_of(d), solver=EXACT).objective, single, places=9)
            res = solve_deterministic(profile_of(d), objective="max-pairwise", solver=EXACT)
            self.assertAlmostEqual(res.objective, pair, places=9)
            self.assertAlmostEqual(pairwise_value(res.assignment, d), pair, places=9)

    def test_objective_aliases(self):
        self.assertIs(ImbalanceObjective("max-single-phase"), ImbalanceObjective.SINGLE_PHASE)
        self.assertIs(ImbalanceObjective("pairwise"), ImbalanceObjective.PAIRWISE)
        with self.assertRaises(ValueError):
            ImbalanceObjective("l2")

    def test_matches_brute_force(self):
        rng = np.random.default_rng(12)
        for n in range(2, 9):
            d = rng.integers(1, 20, n).astype(float)
            solver = EXACT if n <= 5 else HIGHS
            res = solve_deterministic(profile_of(d), solver=solver, anchor=True)
            expected = brute_force_deterministic(d)
            self.assertAlmostEqual(res.objective, expected, delta=1e-6)
            self.assertAlmostEqual(single_phase_value(res.assignment, d), expected, delta=1e-6)

    def test_pairwise_matches_brute_force(self):
        rng = np.random.default_rng(13)
        for n in (3, 4, 5):
            d = rng.uniform(0.5, 10.0, n)
            res = solve_deterministic(profile_of(d), objective="pairwise", solver=EXACT)
            self.assertAlmostEqual(res.objective, brute_force_deterministic(d, objective="pairwise"), delta=1e-8)

    def test_multiphase_loads(self):
        d = [4.0, 6.0, 2.0, 5.0]
        widths = [2, 1, 1, 3]
        res = solve_deterministic(profile_of(d, widths), solver=EXACT)
        self.assertAlmostEqual(res.objective, brute_force_deterministic(d, widths), places=8)
        np.testing.assert_array_equal(res.assignment.phase_width, widths)
        self.assertEqual(res.assignment.labels()[3], "ABC")

    def test_multiphase_rows_admit_exactly_the_valid_patterns(self):
        rows = build_multiphase_constraints(profile_of([1.0, 1.0, 1.0], [1, 2, 3]))
        self.assertEqual([r.rhs for r in rows], [1.0, 2.0, 3.0])
        names = [assignment_var(p, i) for i in range(3) for p in "abc"]
        feasible = 0
        for bits in itertools.product((0, 1), repeat=9):
            x = dict(zip(names, bits))
            if all(sum(x[v] * c for v, c in r.terms.items()) == r.rhs for r in rows):
                feasible += 1
        self.assertEqual(feasible, 3 * 3 * 1)

    def test_anchor_keeps_the_optimum(self):
        d = [5.0, 3.0, 4.0, 6.0]
        free = solve_deterministic(profile_of(d), solver=EXACT)
        pinned = solve_deterministic(profile_of(d), solver=EXACT, anchor=True)
        self.assertAlmostEqual(free.objective, pinned.objective, places=9)
        self.assertEqual(pinned.assignment.labels()[0], "A")

    def test_dimension_errors(self):
        with self.assertRaises(FormulationError):
            build_deterministic(profile_of([1.0, 2.0]), demand=[1.0])
        with self.assertRaises(FormulationError):
            build_deterministic(profile_of([1.0, 2.0]), demand=[1.0, -2.0])
        with self.assertRaises(FormulationError):
            build_robust(profile_of([1.0, 2.0]), BoxUncertaintySet([1.0], [0.1]))


class TestDualizer(unittest.TestCase):
    def test_zero_direction(self):
        pset = box_to_polyhedron(BoxUncertaintySet([2.0, 3.0], [1.0, 1.0]))
        self.assertAlmostEqual(support_via_dualizer(pset, [0.0, 0.0]), 0.0, places=12)

    def test_box_example(self):
        pset = box_to_polyhedron(BoxUncertaintySet([1.5, 2.0], [0.5, 1.0]))
        self.assertAlmostEqual(support_via_dualizer(pset, [2.0 / 3.0, -1.0 / 3.0]), 1.0, places=10)

    def test_singleton_set(self):
        pset = box_to_polyhedron(BoxUncertaintySet([4.0, 8.0], [0.0, 0.0]))
        self.assertAlmostEqual(support_via_dualizer(pset, [0.5, 0.25]), 4.0, places=10)

    def test_random_boxes_match_vertex_enumeration(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            n = int(rng.integers(1, 5))
            box = BoxUncertaintySet(rng.uniform(1, 5, n), rng.uniform(0, 1, n))
            x = rng.uniform(-1, 1, n)
            expected = max(0.0, float((box_vertices(box.lower, box.upper) @ x).max()))
            self.assertAlmostEqual(support_via_dualizer(box_to_polyhedron(box), x), expected, delta=1e-9)

    def test_rows_and_names(self):
        pset = box_to_polyhedron(BoxUncertaintySet([1.0, 1.0], [0.5, 0.5]))
        builder = MilpBuilder()
        builder.add_variable("u")
        duals = dualize_row(builder, [{}, {}], pset, "u", "q_b")
        inst = builder.build()
        self.assertEqual(duals, [f"q_b[row={r}]" for r in range(4)])
        self.assertEqual(inst.row_names, ("q_b:cap", "q_b:load=0", "q_b:load=1"))
        self.assertEqual(inst.metadata["q_b[row=0]"], "dual:q_b[row=0]")

    def test_rejections(self):
        pset = PolyhedralSet([[1.0, 0.0], [-1.0, 0.0]], [1.0, 0.0], validate=False)
        builder = MilpBuilder()
        builder.add_variable("u")
        with self.assertRaises(UncertaintySetError):
            dualize_row(builder, [{}, {}], pset, "u", "p")
        with self.assertRaises(FormulationError):
            dualize_row(builder, [{}], box_to_polyhedron(BoxUncertaintySet([1.0, 1.0], [0.1, 0.1])), "u", "p")
        with self.assertRaises(FormulationError):
            dualize_row(builder, [{}], box_to_polyhedron(BoxUncertaintySet([1.0], [0.1])), "missing", "p")


class TestRobust(unittest.TestCase):
    def test_zero_width_box_equals_deterministic(self):
        rng = np.random.default_rng(5)
        for _ in range(4):
            d = rng.uniform(1.0, 10.0, 4)
            det = solve_deterministic(profile_of(d), solver=EXACT).objective
            rob = solve_robust(profile_of(d), BoxUncertaintySet(d, np.zeros(4)), solver=EXACT).objective
            self.assertAlmostEqual(det, rob, delta=1e-9)

    def test_larger_box_never_helps(self):
        rng = np.random.default_rng(6)
        d = rng.uniform(2.0, 8.0, 4)
        box = BoxUncertaintySet.relative(d, 0.1)
        small = solve_robust(profile_of(d), box, solver=EXACT).objective
        large = solve_robust(profile_of(d), box.scaled(2.0), solver=EXACT).objective
        self.assertGreaterEqual(large, small - 1e-9)

    def test_matches_vertex_brute_force(self):
        rng = np.random.default_rng(7)
        for n in (2, 3, 4, 5):
            box = BoxUncertaintySet(rng.uniform(1, 6, n), rng.uniform(0, 1.5, n))
            solver = EXACT if n <= 4 else HIGHS
            res = solve_robust(profile_of(box.center), box, solver=solver)
            expected = brute_force_robust(box)
            self.assertAlmostEqual(res.objective, expected, delta=1e-6)
            verts = box_vertices(box.lower, box.upper)
            self.assertAlmostEqual(worst_over_vertices(res.assignment, verts), expected, delta=1e-6)
            self.assertAlmostEqual(evaluate_robust(res.assignment, box), expected, delta=1e-6)

    def test_polyhedral_set_agrees_with_its_box(self):
        box = BoxUncertaintySet([3.0, 5.0, 4.0], [0.5, 1.0, 0.2])
        poly = box_to_polyhedron(box)
        as_box = solve_robust(profile_of(box.center), box, solver=EXACT).objective
        as_poly = solve_robust(profile_of(box.center), PolyhedralSet(poly.H, poly.h), solver=EXACT).objective
        self.assertAlmostEqual(as_box, as_poly, delta=1e-9)

    def test_empty_sets_are_rejected(self):
        with self.assertRaisesRegex(UncertaintySetError, "empty set"):
            build_robust(profile_of([1.0, 2.0, 3.0]), BoxUncertaintySet([-5.0, 2.0, 3.0], [1.0, 1.0, 1.0]))
        with self.assertRaises(UncertaintySetError):
            build_robust(profile_of([1.0]), PolyhedralSet([[1.0], [-1.0]], [1.0, -2.0]))

    def test_evaluate_robust_polyhedron_matches_box(self):
        box = BoxUncertaintySet([3.0, 5.0, 4.0], [0.5, 1.0, 0.2])
        a = PhaseAssignment.from_labels("ABA")
        self.assertAlmostEqual(evaluate_robust(a, box), evaluate_robust(a, box_to_polyhedron(box)), delta=1e-9)


def random_boxes(rng, n, count):
    return [BoxUncertaintySet(rng.uniform(1, 5, n), rng.uniform(0, 1, n)) for _ in range(count)]


class TestLookAhead(unittest.TestCase):
    def test_zero_budget_keeps_the_initial_assignment(self):
        initial = PhaseAssignment.from_labels("AAB")
        box = BoxUncertaintySet([2.0, 3.0, 4.0], [0.5, 0.5, 0.5])
        config = LookAheadConfig(t1=2, t2=4, lam=0.5, swap_budget=0, initial_assignment=initial)
        plan = solve_lookahead(profile_of(box.center), [box] * 4, config, HIGHS)
        self.assertEqual(plan.swap_events, ())
        self.assertTrue(all(a == initial for a in plan.assignments))
        worst = evaluate_robust(initial, box)
        self.assertAlmostEqual(plan.u, worst, delta=1e-6)
        self.assertAlmostEqual(plan.objective, 1.5 * worst, delta=1e-6)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(40)
        initial = PhaseAssignment.from_labels("AABB")
        for s, lam in ((0, 1.0 / 3.0), (1, 1.0 / 3.0), (2, 0.5), (1, 0.0)):
            boxes = random_boxes(rng, 4, 4)
            config = LookAheadConfig(t1=2, t2=4, lam=lam, swap_budget=s, initial_assignment=initial)
            plan = solve_lookahead(profile_of(boxes[0].center), boxes, config, HIGHS)
            expected = brute_force_lookahead(initial, boxes, 2, s, lam)
            self.assertAlmostEqual(plan.objective, expected, delta=1e-5)
            self.assertLessEqual(len(plan.swap_events), s)
            total = count_swaps(initial, plan.assignments[0]) + count_swaps(plan.assignments[0], plan.assignments[1])
            self.assertLessEqual(total, s)

    def test_builtin_solver_on_a_small_instance(self):
        rng = np.random.default_rng(41)
        initial = PhaseAssignment.from_labels("AAA")
        boxes = random_boxes(rng, 3, 3)
        config = LookAheadConfig(t1=2, t2=3, lam=1.0 / 3.0, swap_budget=2, initial_assignment=initial)
        plan = solve_lookahead(profile_of(boxes[0].center), boxes, config, EXACT)
        self.assertAlmostEqual(plan.objective, brute_force_lookahead(initial, boxes, 2, 2, 1.0 / 3.0), delta=1e-6)

    def test_more_budget_never_hurts(self):
        rng = np.random.default_rng(42)
        initial = PhaseAssignment.from_labels("AAAB")
        boxes = random_boxes(rng, 4, 4)
        values = []
        for s in (0, 1, 2, 3):
            config = LookAheadConfig(t1=2, t2=4, swap_budget=s, initial_assignment=initial)
            values.append(solve_lookahead(profile_of(boxes[0].center), boxes, config, HIGHS).objective)
        self.assertTrue(all(b <= a + 1e-6 for a, b in zip(values, values[1:])))

    def test_instance_structure(self):
        initial = PhaseAssignment.from_labels("AB")
        config = LookAheadConfig(t1=2, t2=3, lam=0.25, swap_budget=1, initial_assignment=initial)
        box = BoxUncertaintySet([1.0, 2.0], [0.1, 0.1])
        inst = build_lookahead(profile_of([1.0, 2.0]), [box] * 3, config)
        self.assertEqual(inst.name, "r-LAPB")
        self.assertEqual(inst.objective[inst.index("v")], 0.25)
        self.assertIn("a[t=2][load=1]", inst.var_names)
        self.assertNotIn("a[t=3][load=1]", inst.var_names)
        self.assertIn("p_a[t=3]:cap", inst.row_names)
        self.assertEqual(inst.rhs[inst.row_names.index("swap_budget")], 2.0)

    def test_rejections(self):
        initial = PhaseAssignment.from_labels("AB")
        box = BoxUncertaintySet([1.0, 2.0], [0.1, 0.1])
        config = LookAheadConfig(t1=1, t2=2, initial_assignment=initial)
        with self.assertRaises(FormulationError):
            build_lookahead(profile_of([1.0, 2.0]), [box], config)
        with self.assertRaises(FormulationError):
            build_lookahead(profile_of([1.0, 2.0]), [box] * 2, LookAheadConfig(t1=1, t2=2))
        with self.assertRaises(FormulationError):
            build_lookahead(profile_of([1.0, 2.0, 3.0]), [BoxUncertaintySet([1.0] * 3, 0.1)] * 2, config)


class TestExtractPlan(unittest.TestCase):
    def setUp(self):
        self.initial = PhaseAssignment.from_labels("AB")
        self.config = LookAheadConfig(t1=2, t2=3, swap_budget=1, initial_assignment=self.initial)
        box = BoxUncertaintySet([1.0, 2.0], [0.1, 0.1])
        self.instance = build_lookahead(profile_of([1.0, 2.0]), [box] * 3, self.config)

    def _solution(self, labels_by_t, overrides=None):
        values = {name: 0.0 for name in self.instance.var_names}
        for t, labels in enumerate(labels_by_t, start=1):
            for i, label in enumerate(labels):
                for phase in label:
                    values[assignment_var(phase.lower(), i, t)] = 1.0
        values.update({"u": 1.5, "v": 2.0})
        values.update(overrides or {})
        return MilpSolution(SolveStatus.OPTIMAL, 1.5 + 2.0 / 3.0, values, 0.0, 2.0, 1, 0.0)

    def test_one_flip_gives_one_event(self):
        plan = extract_plan(self.instance, self._solution(["AB", "BB"]), self.config, ["x", "y"])
        self.assertEqual(len(plan.swap_events), 1)
        event = plan.swap_events[0]
        self.assertEqual((event.snapshot, event.load_id, event.from_phase, event.to_phase), (2, "x", "A", "B"))
        self.assertEqual(plan.advisory_assignment.labels(), ("B", "B"))
        self.assertEqual((plan.u, plan.v), (1.5, 2.0))

    def test_fractional_binary_is_rejected(self):
        solution = self._solution(["AB", "AB"], {"a[t=1][load=0]": 0.5, "b[t=1][load=0]": 0.5})
        with self.assertRaises(FormulationError):
            extract_plan(self.instance, solution, self.config)

    def test_missing_incumbent(self):
        empty = MilpSolution(SolveStatus.NODE_LIMIT, None, None, float("inf"), None, 1, 0.0)
        with self.assertRaises(SolverError):
            extract_plan(self.instance, empty, self.config)


if __name__ == '__main__':
    unittest.main()
