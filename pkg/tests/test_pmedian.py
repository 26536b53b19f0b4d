import itertools

import numpy as np
import pytest

from conftest import random_instance
from cdrsite.pmedian import (
    EXACT,
    BudgetExceeded,
    PMedianError,
    PMedianInstance,
    SolveOptions,
    evaluate_fixed,
    greedy,
    read_instance,
    solve,
    solve_exact_bruteforce,
    solve_heuristic,
    vertex_substitution,
    write_instance,
)


def _enumerate(inst):
    """Plain-loop oracle independent of the vectorised brute force."""
    best = None
    for s in itertools.combinations(range(inst.n), inst.m):
        obj = sum(inst.weights[i] * min(inst.costs[i, j] for j in s) for i in range(inst.n))
        if best is None or obj < best[0] - 1e-12:
            best = (obj, s)
    return best


class TestInstance:
    def test_nonzero_diagonal_rejected(self):
        with pytest.raises(PMedianError):
            PMedianInstance([1, 1], [[1, 2], [2, 0]], 1)

    def test_m_bounds(self):
        with pytest.raises(PMedianError):
            PMedianInstance([1, 1], [[0, 2], [2, 0]], 3)

    def test_negative_costs_rejected(self):
        with pytest.raises(PMedianError):
            PMedianInstance([1, 1], [[0, -2], [2, 0]], 1)

    def test_csv_round_trip(self, rng, tmp_path):
        inst = random_instance(rng, 7, 2)
        write_instance(inst, tmp_path / "i.csv")
        back = read_instance(tmp_path / "i.csv", 2)
        assert np.array_equal(back.costs, inst.costs) and np.array_equal(back.weights, inst.weights)


class TestBruteForce:
    def test_m_equals_n(self):
        sol = solve_exact_bruteforce(PMedianInstance([1, 2, 3], np.ones((3, 3)) - np.eye(3), 3))
        assert sol.objective == 0 and list(sol.assignment) == [0, 1, 2]

    def test_weighted_majority_pull(self):
        c = 4.0
        sol = solve_exact_bruteforce(PMedianInstance([1, 9], [[0, c], [c, 0]], 1))
        assert sol.open_set == (1,) and sol.objective == 1 * c

    def test_agrees_with_loop_oracle(self, rng):
        for _ in range(20):
            inst = random_instance(rng, int(rng.integers(3, 8)), int(rng.integers(1, 4)))
            sol = solve_exact_bruteforce(inst)
            obj, s = _enumerate(inst)
            assert sol.objective == pytest.approx(obj, rel=1e-12)
            assert sol.open_set == s

    def test_budget(self, rng):
        with pytest.raises(BudgetExceeded):
            solve_exact_bruteforce(random_instance(rng, 30, 10), budget=1000)

    def test_zero_weight_point_does_not_matter(self, rng):
        inst = random_instance(rng, 8, 3)
        w = inst.weights.copy()
        w[2] = 0
        c = inst.costs.copy()
        c[2, :] *= 50
        a = solve_exact_bruteforce(PMedianInstance(w, inst.costs, 3))
        b = solve_exact_bruteforce(PMedianInstance(w, c, 3))
        assert a.objective == pytest.approx(b.objective)


class TestHeuristics:
    def test_m1_greedy_is_exact(self, rng):
        for _ in range(10):
            inst = random_instance(rng, 9, 1)
            assert evaluate_fixed(inst, greedy(inst)).objective == pytest.approx(
                solve_exact_bruteforce(inst).objective)

    def test_m_equals_n(self, rng):
        inst = random_instance(rng, 6, 6)
        assert solve_heuristic(inst).objective == 0

    def test_swap_never_worsens(self, rng):
        for _ in range(10):
            inst = random_instance(rng, 15, 4)
            start = list(rng.choice(15, size=4, replace=False))
            improved = vertex_substitution(inst, start)
            assert evaluate_fixed(inst, improved).objective <= evaluate_fixed(inst, start).objective + 1e-9

    def test_swap_result_is_locally_optimal(self, rng):
        inst = random_instance(rng, 12, 3)
        s = vertex_substitution(inst, greedy(inst))
        base = evaluate_fixed(inst, s).objective
        for out in s:
            for into in set(range(12)) - set(s):
                trial = [j for j in s if j != out] + [into]
                assert evaluate_fixed(inst, trial).objective >= base - 1e-9


class TestSolve:
    def test_uniform_costs_closed_form(self):
        n, m, a, c = 9, 3, 2.0, 5.0
        inst = PMedianInstance(np.full(n, a), c * (np.ones((n, n)) - np.eye(n)), m)
        sol = solve(inst)
        assert sol.objective == pytest.approx((n - m) * a * c)
        assert sol.proof == EXACT

    def test_bound_never_exceeds_incumbent(self, rng):
        for _ in range(10):
            inst = random_instance(rng, 25, 5)
            sol = solve(inst, SolveOptions(trace=True))
            for bound, local, ub in sol.stats["node_trace"]:
                assert bound <= ub + 1e-9 * max(1.0, ub)
                assert bound <= local + 1e-9 * max(1.0, local)
            assert sol.lower_bound <= sol.objective + 1e-9 * sol.objective

    def test_monotone_in_m(self, rng):
        inst = random_instance(rng, 20, 1)
        objs = [solve(inst.with_m(m)).objective for m in range(1, 8)]
        assert all(b <= a + 1e-9 for a, b in zip(objs, objs[1:]))

    def test_scale_equivariance(self, rng):
        inst = random_instance(rng, 15, 4)
        base = solve(inst)
        scaled = solve(PMedianInstance(inst.weights, inst.costs * 7.5, 4))
        assert scaled.objective == pytest.approx(7.5 * base.objective, rel=1e-9)
        assert evaluate_fixed(inst, scaled.open_set).objective == pytest.approx(base.objective, rel=1e-9)

    def test_assignment_consistency(self, rng):
        inst = random_instance(rng, 30, 6)
        sol = solve(inst)
        open_idx = sorted(sol.open_set)
        for i, j in enumerate(sol.assignment):
            costs = inst.costs[i, open_idx]
            assert j == open_idx[int(np.argmin(costs))]
        x = sol.assignment_matrix()
        assert np.all(x.sum(axis=1) == 1)
        assert np.all(np.diag(x)[open_idx] == 1)

    def test_evaluate_fixed_dominance(self, rng):
        inst = random_instance(rng, 14, 3)
        sol = solve(inst)
        assert evaluate_fixed(inst, sol.open_set).objective == pytest.approx(sol.objective)
        for s in itertools.combinations(range(14), 3):
            assert evaluate_fixed(inst, s).objective >= sol.objective * (1 - 1e-9)
        assert evaluate_fixed(inst, range(14)).objective == 0

    def test_empty_open_set_rejected(self, rng):
        with pytest.raises(PMedianError):
            evaluate_fixed(random_instance(rng, 4, 1), [])

    def test_deterministic_ties(self):
        # every single-site choice costs the same; lowest index wins
        inst = PMedianInstance(np.ones(4), np.ones((4, 4)) - np.eye(4), 1)
        assert solve(inst).open_set == (0,)
        assert solve_exact_bruteforce(inst).open_set == (0,)


def test_branching_instances_match_oracle():
    """A starved subgradient forces real branching; the answer must still be optimal."""
    rng = np.random.default_rng(99)
    for iters in (3, 5, 10):
        for _ in range(3):
            inst = random_instance(rng, 22, 5)
            sol = solve(inst, SolveOptions(max_subgradient_iters=iters, child_subgradient_iters=iters))
            assert sol.stats["nodes"] > 1
            assert sol.proof == EXACT
            assert sol.objective == pytest.approx(solve_exact_bruteforce(inst).objective, rel=1e-9)


def test_bound_holds_at_every_branched_node(rng):
    inst = random_instance(rng, 20, 4)
    sol = solve(inst, SolveOptions(max_subgradient_iters=3, child_subgradient_iters=3, trace=True))
    assert len(sol.stats["node_trace"]) > 1
    for bound, local, ub in sol.stats["node_trace"]:
        assert bound <= ub + 1e-9 * ub
