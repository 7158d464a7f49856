import numpy as np
import pytest

import transient_impact as ti
from transient_impact.errors import InfeasibleInit, InstanceTooLarge

from conftest import market_for_tree, random_tree


def binary_instance():
    market = ti.MarketSpec.build([0.0, 1.0], 10.0, 0.0)
    tree = ti.ScenarioTree(
        times=[0.0, 1.0],
        parent=[-1, 0, 0],
        p_transition=[1.0, 0.5, 0.5],
        P=[100.0, 110.0, 90.0],
        delta=np.full(3, 10.0),
        r=np.zeros(3),
    )
    return tree, market, np.array([10.0, 0.0])


def single_scenario(P_values, delta=10.0, r=0.5):
    times = np.linspace(0.0, 1.0, len(P_values))
    market = ti.MarketSpec.build(times, delta, r)
    tree = ti.ScenarioTree.single_path(market, np.asarray(P_values, dtype=float))
    return tree, market


class TestPrimalSolve:
    def test_zero_payoff_needs_no_cash(self):
        tree, market = single_scenario([100.0, 100.0, 100.0])
        report = ti.primal_solve(tree, market, np.zeros(1))
        assert report.primal_value == pytest.approx(0.0, abs=1e-9)
        assert np.all(report.strategy.gross() <= 1e-6)

    def test_constant_payoff_costs_itself(self):
        tree, market = single_scenario([100.0, 100.0])
        report = ti.primal_solve(tree, market, np.ones(1))
        assert report.primal_value == pytest.approx(1.0, abs=1e-8)
        oracle = ti.brute_force_oracle(tree, market, np.ones(1), np.linspace(-1, 1, 41))
        assert report.primal_value <= oracle + 1e-9

    def test_binary_reference_instance(self):
        tree, market, H = binary_instance()
        report = ti.primal_solve(tree, market, H)
        assert report.primal_value == pytest.approx(5.05, abs=1e-4)
        assert report.primal_converged
        # optimizer buys half a unit up front and closes at the leaves
        assert report.strategy.buys[0] == pytest.approx(0.5, abs=1e-3)
        np.testing.assert_allclose(report.strategy.sells[1:], 0.5, atol=1e-3)

    def test_monotone_in_payoff(self, rng):
        tree = random_tree(rng, depth=2)
        market = market_for_tree(rng, tree, x0=0.0)
        H = rng.uniform(0.0, 3.0, tree.leaves.size)
        bigger = H + rng.uniform(0.0, 2.0, tree.leaves.size)
        v0 = ti.primal_solve(tree, market, H).primal_value
        v1 = ti.primal_solve(tree, market, bigger).primal_value
        assert v1 >= v0 - 1e-6

    def test_constant_shift_moves_value_by_itself(self, rng):
        tree = random_tree(rng, depth=2)
        market = market_for_tree(rng, tree)
        H = rng.uniform(0.0, 3.0, tree.leaves.size)
        c = 2.5
        v0 = ti.primal_solve(tree, market, H).primal_value
        v1 = ti.primal_solve(tree, market, H + c).primal_value
        assert v1 - v0 == pytest.approx(c, abs=1e-6)

    def test_value_is_sufficient_cash(self, rng):
        # the reported value funds the reported schedule on every leaf
        for _ in range(10):
            tree = random_tree(rng, depth=2)
            market = market_for_tree(rng, tree)
            H = rng.uniform(0.0, 4.0, tree.leaves.size)
            report = ti.primal_solve(tree, market, H)
            from dataclasses import replace

            tw = ti.tree_wealth(tree, report.strategy, replace(market.impact, xi0=report.primal_value))
            assert np.min(tw.xi_T - H) >= -1e-8 * (1.0 + abs(report.primal_value))

    def test_deterministic(self):
        tree, market, H = binary_instance()
        r1 = ti.primal_solve(tree, market, H)
        r2 = ti.primal_solve(tree, market, H)
        assert r1.primal_value == r2.primal_value
        np.testing.assert_array_equal(r1.strategy.buys, r2.strategy.buys)


class TestBruteForceOracle:
    def test_binary_reference_instance(self):
        tree, market, H = binary_instance()
        value = ti.brute_force_oracle(tree, market, H, np.arange(0.0, 1.0001, 0.01))
        assert value == pytest.approx(5.05, abs=0.005)

    def test_zero_payoff(self):
        tree, market = single_scenario([100.0, 100.0])
        assert ti.brute_force_oracle(tree, market, np.zeros(1), np.linspace(-1, 1, 21)) == pytest.approx(0.0, abs=1e-12)

    def test_constant_payoff(self):
        tree, market = single_scenario([100.0, 100.0])
        value = ti.brute_force_oracle(tree, market, np.ones(1), np.linspace(-1, 1, 21))
        assert value == pytest.approx(1.0, abs=1e-12)

    def test_size_guards(self, rng):
        tree = random_tree(rng, depth=4, max_branch=2)
        market = market_for_tree(rng, tree)
        with pytest.raises(InstanceTooLarge):
            ti.brute_force_oracle(tree, market, np.zeros(tree.leaves.size), np.linspace(-1, 1, 5))
        small = random_tree(rng, depth=2, max_branch=2)
        with pytest.raises(InstanceTooLarge):
            ti.brute_force_oracle(small, market_for_tree(rng, small), np.zeros(small.leaves.size), np.linspace(-1, 1, 1001))

    def test_primal_close_to_oracle_on_random_instances(self, rng):
        # martingale prices keep the optimal trades hedge-sized, so a modest
        # lattice brackets the optimum
        for _ in range(4):
            tree = random_tree(rng, depth=2, max_branch=2, vol=2.0, martingale=True)
            market = market_for_tree(rng, tree, x0=0.0, zeta0=0.05)
            H = np.maximum(tree.P[tree.leaves] - 100.0, 0.0)
            step = 0.02
            grid = np.arange(-2.0, 2.0001, step)
            oracle = ti.brute_force_oracle(tree, market, H, grid)
            primal = ti.primal_solve(tree, market, H).primal_value
            scale = 1.0 + abs(oracle)
            assert primal <= oracle + 5e-3 * scale  # solver not worse than the lattice
            assert abs(primal - oracle) <= 2e-2 * scale  # lattice resolution slack


class TestDualAscent:
    def test_binary_instance_improves_from_plain_expectation(self):
        tree, market, H = binary_instance()
        init = ti.DualCertificate(
            ti.NodeMeasure.for_tree(tree, [1.0, 0.5, 0.5]), tree.P.copy(), np.zeros(3)
        )
        report = ti.dual_ascent(tree, market, H, init)
        assert report.dual_value >= 5.0
        assert ti.check_feasibility(tree, report.certificate, market).feasible

    def test_zero_payoff_zero_position_caps_at_zero(self, rng):
        tree = random_tree(rng, depth=2, martingale=True)
        market = market_for_tree(rng, tree, x0=0.0, zeta0=0.2)
        init = ti.default_certificate(tree, market)
        report = ti.dual_ascent(tree, market, np.zeros(tree.leaves.size), init)
        assert report.dual_value == pytest.approx(0.0, abs=1e-10)

    def test_fixed_spread_instance_monotone_from_init(self, rng):
        # zero resilience, non-increasing depth, price already a martingale
        times = [0.0, 0.5, 1.0]
        nodes = [dict(parent=-1, p_transition=1.0, P=100.0)]
        for par, probs in ((0, (0.5, 0.5)),):
            nodes.append(dict(parent=par, p_transition=0.5, P=104.0))
            nodes.append(dict(parent=par, p_transition=0.5, P=96.0))
        nodes.append(dict(parent=1, p_transition=0.5, P=108.0))
        nodes.append(dict(parent=1, p_transition=0.5, P=100.0))
        nodes.append(dict(parent=2, p_transition=0.5, P=100.0))
        nodes.append(dict(parent=2, p_transition=0.5, P=92.0))
        tree = ti.ScenarioTree.from_node_dicts(times, nodes, default_delta=[10.0, 8.0, 6.0], default_r=0.0)
        lam = 0.25
        market = ti.MarketSpec.build(times, [10.0, 8.0, 6.0], 0.0, zeta0=lam, x0=0.0)
        H = np.abs(tree.P[tree.leaves] - 100.0)
        init = ti.DualCertificate(ti.NodeMeasure.reference(tree), tree.P.copy(), np.full(tree.n_nodes, lam))
        init_value = ti.dual_objective(tree, init, market, H)
        assert init_value == pytest.approx(float(np.dot([0.25, 0.25, 0.25, 0.25], H)))
        report = ti.dual_ascent(tree, market, H, init)
        assert report.dual_value >= init_value - 1e-12

    def test_infeasible_init_rejected(self):
        tree, market, H = binary_instance()
        bad = ti.DualCertificate(ti.NodeMeasure.for_tree(tree, [1.0, 0.5, 0.5]), np.zeros(3), np.zeros(3))
        with pytest.raises(InfeasibleInit):
            ti.dual_ascent(tree, market, H, bad)

    def test_deterministic(self):
        tree, market, H = binary_instance()
        init = ti.default_certificate(tree, market)
        r1 = ti.dual_ascent(tree, market, H, init)
        r2 = ti.dual_ascent(tree, market, H, init)
        assert r1.dual_value == r2.dual_value


class TestGapReport:
    def test_binary_reference_instance(self):
        tree, market, H = binary_instance()
        report = ti.gap_report(tree, market, H)
        assert report.primal_value == pytest.approx(5.05, abs=1e-4)
        assert report.dual_value >= 5.0
        assert -1e-9 <= report.gap <= 0.05

    def test_trivial_instance_has_no_gap(self, rng):
        tree = random_tree(rng, depth=2, martingale=True)
        market = market_for_tree(rng, tree, x0=0.0, zeta0=0.0)
        report = ti.gap_report(tree, market, np.zeros(tree.leaves.size))
        assert abs(report.primal_value) <= 1e-4
        assert abs(report.dual_value) <= 1e-10
        assert -1e-10 <= report.gap <= 1e-4

    def test_refined_binomial_call_gap_under_five_percent(self):
        times = np.linspace(0.0, 1.0, 5)
        nodes = [dict(parent=-1, p_transition=1.0, P=100.0)]
        level = [0]
        for _ in range(4):
            new = []
            for par in level:
                for move in (5.0, -5.0):
                    nodes.append(dict(parent=par, p_transition=0.5, P=nodes[par]["P"] + move))
                    new.append(len(nodes) - 1)
            level = new
        tree = ti.ScenarioTree.from_node_dicts(times, nodes, default_delta=10.0, default_r=0.0)
        market = ti.MarketSpec.build(times, 10.0, 0.0)
        H = np.maximum(tree.P[tree.leaves] - 100.0, 0.0)
        report = ti.gap_report(tree, market, H)
        assert report.gap >= -1e-9
        assert report.gap <= 0.05 * report.primal_value

    def test_every_instance_is_bounded_below(self, rng):
        # strong drift and zero payoff: the price admits no martingale measure,
        # yet the certificate lower bound keeps the value finite
        tree = random_tree(rng, depth=2, vol=0.1)
        drifted = ti.ScenarioTree(
            tree.times, tree.parent, tree.p_transition,
            tree.P + 10.0 * tree.t_index, tree.delta, tree.r,
        )
        market = market_for_tree(rng, drifted, x0=0.0)
        report = ti.gap_report(drifted, market, np.zeros(drifted.leaves.size))
        assert np.isfinite(report.primal_value) and np.isfinite(report.dual_value)
        assert report.primal_value >= report.dual_value - 1e-9

    def test_solver_outputs_satisfy_weak_duality(self, rng):
        for _ in range(5):
            tree = random_tree(rng, depth=2)
            market = market_for_tree(rng, tree)
            H = rng.uniform(0.0, 3.0, tree.leaves.size)
            report = ti.gap_report(tree, market, H)
            check = ti.weak_duality_check(tree, market, report.strategy, report.primal_value, report.certificate, H)
            scale = 1.0 + abs(report.primal_value) + abs(report.dual_value)
            assert check.margin >= -1e-9 * scale
