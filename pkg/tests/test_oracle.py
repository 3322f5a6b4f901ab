import numpy as np
import pytest

import pompg
from pompg import oracle

import reference as ref
from conftest import fully_observable_game, single_agent_bandit


class TestChainConstruction:
    def test_reactive_mabc_state_count(self, mabc, mabc_spaces):
        assert mabc_spaces[0].n_states == 16     # |X| * |Y1| * |Y2|

    def test_deterministic_self_loop(self):
        m = single_agent_bandit([1.0])
        spec = pompg.make_window_spec(m, 0)
        pol = pompg.init_policy(spec, m)
        chain = pompg.build_chain(m, spec, pol)
        assert chain.n_states == 1
        assert chain.P.toarray().tolist() == [[1.0]]

    def test_rows_stochastic_matiger(self, matiger, rng):
        spec = pompg.make_window_spec(matiger, 1)
        pol = pompg.random_policy(spec, matiger, rng)
        chain = pompg.build_chain(matiger, spec, pol)
        resid = np.abs(np.asarray(chain.P.sum(axis=1)).ravel() - 1.0).max()
        assert resid < 1e-10

    def test_cap_raises(self, mabc):
        spec = pompg.make_window_spec(mabc, 1)
        with pytest.raises(pompg.SizeError):
            oracle.enumerate_chain_space(mabc, spec, cap=10)

    def test_enumeration_policy_independent(self, mabc, rng):
        spec = pompg.make_window_spec(mabc, 1)
        s1 = oracle.enumerate_chain_space(mabc, spec)
        s2 = oracle.enumerate_chain_space(mabc, spec)
        assert np.array_equal(s1.states, s2.states)


class TestValues:
    def test_geometric_series(self):
        m = single_agent_bandit([1.0], beta=0.5)
        spec = pompg.make_window_spec(m, 0)
        pol = pompg.init_policy(spec, m)
        chain = pompg.build_chain(m, spec, pol)
        vals = pompg.solve_values(chain, "all")
        assert vals.v_potential[0] == pytest.approx(2.0, abs=1e-12)

    def test_zero_reward(self):
        m = single_agent_bandit([0.0, 0.0], beta=0.9)
        spec = pompg.make_window_spec(m, 0)
        pol = pompg.init_policy(spec, m)
        chain = pompg.build_chain(m, spec, pol)
        vals = pompg.solve_values(chain, "all")
        assert np.abs(vals.v_potential).max() == 0.0
        assert np.abs(vals.q_potential).max() == 0.0

    def test_matches_backward_induction_h40(self, mabc, mabc_spaces, rng):
        spec = pompg.make_window_spec(mabc, 1)
        pol = pompg.random_policy(spec, mabc, rng, scale=0.7)
        chain = pompg.build_chain(mabc, spec, pol, space=mabc_spaces[1])
        vals = pompg.solve_values(chain, "all")
        _, phi = pompg.exact_objective(chain, vals)
        _, phi_ref = ref.finite_horizon_values(mabc, pol, 1, horizon=40)
        tol = mabc.discount ** 40 / (1 - mabc.discount)
        assert abs(phi - phi_ref) < tol
        # and the linear solve's own 40-step truncation matches the reference
        # to machine precision (same dynamics, independent recursions)
        mu = chain.space.initial.copy()
        phi40 = 0.0
        for k in range(40):
            phi40 += mabc.discount ** k * float(mu @ chain.phi_pi)
            mu = chain.P.T @ mu
        assert abs(phi40 - phi_ref) < 1e-10

    def test_matches_literal_tree_small_horizon(self, mabc, mabc_spaces, rng):
        spec = pompg.make_window_spec(mabc, 1)
        pol = pompg.random_policy(spec, mabc, rng, scale=0.9)
        j_tree, phi_tree = ref.tree_values(mabc, pol, 1, horizon=3)
        j_dp, phi_dp = ref.finite_horizon_values(mabc, pol, 1, horizon=3)
        assert phi_tree == pytest.approx(phi_dp, abs=1e-12)
        chain = pompg.build_chain(mabc, spec, pol, space=mabc_spaces[1])
        vals = pompg.solve_values(chain, "all")
        j, phi = pompg.exact_objective(chain, vals)
        tol = mabc.discount ** 3 / (1 - mabc.discount)
        assert abs(phi - phi_tree) < tol
        assert abs(j[0] - j_tree[0]) < tol

    def test_value_bound_respected(self, matiger, rng):
        spec = pompg.make_window_spec(matiger, 0)
        for _ in range(5):
            pol = pompg.random_policy(spec, matiger, rng)
            chain = pompg.build_chain(matiger, spec, pol)
            vals = pompg.solve_values(chain, "all")
            bound = matiger.phi_max / (1 - matiger.discount)
            lo = matiger.phi_min / (1 - matiger.discount)
            assert vals.v_potential.max() <= bound + 1e-9
            assert vals.v_potential.min() >= lo - 1e-9


class TestOccupancy:
    def test_absorbing_single_state(self):
        m = single_agent_bandit([1.0])
        spec = pompg.make_window_spec(m, 0)
        pol = pompg.init_policy(spec, m)
        chain = pompg.build_chain(m, spec, pol)
        occ = pompg.compute_occupancy(chain)
        assert occ.dist[0] == pytest.approx(1.0, abs=1e-12)

    def test_small_beta_two_term_expansion(self, mabc):
        beta = 0.01
        spec = pompg.make_window_spec(mabc, 0)
        pol = pompg.init_policy(spec, mabc)
        chain = pompg.build_chain(mabc, spec, pol)
        occ = pompg.compute_occupancy(chain, beta=beta)
        mu0 = chain.space.initial
        mu1 = chain.P.T @ mu0
        approx = (1 - beta) * mu0 + beta * mu1
        assert np.abs(occ.dist - approx).max() < 1e-3

    def test_marginals_sum_to_one(self, matiger, rng):
        spec = pompg.make_window_spec(matiger, 1)
        pol = pompg.random_policy(spec, matiger, rng)
        chain = pompg.build_chain(matiger, spec, pol)
        occ = pompg.compute_occupancy(chain)
        for i in range(2):
            assert occ.marginals[i].sum() == pytest.approx(1.0, abs=1e-10)
        assert occ.mass_residual < 1e-10


class TestMarginalAdvantage:
    def test_rows_zero_mean(self, mabc, mabc_spaces, rng):
        spec = pompg.make_window_spec(mabc, 1)
        pol = pompg.random_policy(spec, mabc, rng)
        chain = pompg.build_chain(mabc, spec, pol, space=mabc_spaces[1])
        vals = pompg.solve_values(chain, "all")
        occ = pompg.compute_occupancy(chain)
        for i in range(2):
            adv = pompg.marginal_advantage(chain, vals, occ, i)
            pi = pol.tables[i].probabilities()
            resid = np.abs((pi * adv.a).sum(axis=1)[adv.visited]).max()
            assert resid < 1e-9

    def test_fully_observable_single_agent_matches_mdp(self, rng):
        trans = rng.dirichlet(np.ones(3), size=(3, 2))
        rewards = rng.random((3, 2))
        obs = np.zeros((3, 2, 3))
        for x in range(3):
            obs[x, :, x] = 1.0
        m = pompg.make_pomg(
            ["x0", "x1", "x2"], [["x0", "x1", "x2"]], [["a0", "a1"]],
            trans, [obs], rewards[None], rewards, 0.8,
            np.array([0.5, 0.25, 0.25]))
        spec = pompg.make_window_spec(m, 0)
        pol = pompg.random_policy(spec, m, rng)
        chain = pompg.build_chain(m, spec, pol)
        vals = pompg.solve_values(chain, "all")
        occ = pompg.compute_occupancy(chain)
        adv = pompg.marginal_advantage(chain, vals, occ, 0)
        # chain states are (x, y=x); policy row y=x maps to env state x
        pi_states = pol.tables[0].probabilities()
        _, _, a_ref = ref.mdp_policy_advantage(m, pi_states)
        assert np.abs(adv.a - a_ref).max() < 1e-8

    def test_bounded_by_value_range(self, mabc, mabc_spaces, rng):
        spec = pompg.make_window_spec(mabc, 0)
        bound = 2 * mabc.phi_max / (1 - mabc.discount)
        for _ in range(10):
            pol = pompg.random_policy(spec, mabc, rng)
            chain = pompg.build_chain(mabc, spec, pol, space=mabc_spaces[0])
            vals = pompg.solve_values(chain, "all")
            occ = pompg.compute_occupancy(chain)
            for i in range(2):
                adv = pompg.marginal_advantage(chain, vals, occ, i)
                assert np.abs(adv.a).max() <= bound

    def test_stale_tables_rejected(self, mabc, mabc_spaces, rng):
        spec = pompg.make_window_spec(mabc, 0)
        pol_a = pompg.random_policy(spec, mabc, rng)
        pol_b = pompg.random_policy(spec, mabc, rng)
        chain_a = pompg.build_chain(mabc, spec, pol_a, space=mabc_spaces[0])
        chain_b = pompg.build_chain(mabc, spec, pol_b, space=mabc_spaces[0])
        vals_b = pompg.solve_values(chain_b, "all")
        occ_a = pompg.compute_occupancy(chain_a)
        with pytest.raises(pompg.ContractError):
            pompg.marginal_advantage(chain_a, vals_b, occ_a, 0)


class TestObjective:
    def test_common_reward_objectives_agree(self, matiger, rng):
        spec = pompg.make_window_spec(matiger, 0)
        pol = pompg.random_policy(spec, matiger, rng)
        chain = pompg.build_chain(matiger, spec, pol)
        vals = pompg.solve_values(chain, "all")
        j, phi = pompg.exact_objective(chain, vals)
        assert j[0] == pytest.approx(j[1], abs=1e-10)
        assert j[0] == pytest.approx(phi, abs=1e-10)

    def test_zero_reward_objective(self):
        m = single_agent_bandit([0.0])
        spec = pompg.make_window_spec(m, 0)
        pol = pompg.init_policy(spec, m)
        chain = pompg.build_chain(m, spec, pol)
        j, phi = pompg.exact_objective(chain, pompg.solve_values(chain, "all"))
        assert phi == 0.0 and j[0] == 0.0


class TestPerformanceDifference:
    def test_fully_observable_identity(self, rng):
        """Exact performance-difference equality when nothing is hidden."""
        m = fully_observable_game(rng, n_states=2, n_actions=2, beta=0.6)
        spec = pompg.make_window_spec(m, 0)
        space = oracle.enumerate_chain_space(m, spec)
        beta = m.discount
        for _ in range(10):
            pol_p = pompg.random_policy(spec, m, rng)
            pol_b = pompg.random_policy(spec, m, rng)
            chain_p = pompg.build_chain(m, spec, pol_p, space=space)
            chain_b = pompg.build_chain(m, spec, pol_b, space=space)
            vals_p = pompg.solve_values(chain_p, "potential")
            vals_b = pompg.solve_values(chain_b, "potential")
            occ_p = pompg.compute_occupancy(chain_p)
            _, phi_p = pompg.exact_objective(chain_p, vals_p)
            _, phi_b = pompg.exact_objective(chain_b, vals_b)
            a_joint = vals_b.q_potential - vals_b.v_potential[:, None]
            term = np.einsum("n,nu,nu->", occ_p.dist, chain_p.weights,
                             a_joint) / (1 - beta)
            assert abs((phi_p - phi_b) - term) < 1e-8
