import dataclasses
import json

import numpy as np
import pytest

import pompg
from pompg.model import joint_action_index

from conftest import single_agent_bandit


def act(model, names):
    return joint_action_index(model.action_counts,
                              tuple(model.actions[i].index(n)
                                    for i, n in enumerate(names)))


class TestMatiger:
    def test_listen_listen_team_reward(self, matiger):
        u = act(matiger, ("listen", "listen"))
        assert matiger.potential[0, u] == -2.0
        assert matiger.potential[1, u] == -2.0

    def test_treasure_door_contribution(self, matiger):
        # tiger left: open-right is the treasure door (+10), paired with listen (-1)
        u = act(matiger, ("open-right", "listen"))
        assert matiger.potential[0, u] == 9.0
        u_both = act(matiger, ("open-right", "open-right"))
        assert matiger.potential[0, u_both] == 20.0
        assert matiger.potential[1, u_both] == -200.0

    def test_noiseless_listening(self):
        m = pompg.build_matiger(pompg.EnvParams(listen_accuracy=1.0))
        u = act(m, ("listen", "listen"))
        for x in range(2):
            cols, vals = m.obs_row(0, x, u)
            assert cols.tolist() == [x] and vals.tolist() == [1.0]

    def test_door_opening_resets_tiger(self, matiger):
        u = act(matiger, ("open-left", "listen"))
        cols, vals = matiger.trans_row(0, u)
        assert np.allclose(vals, [0.5, 0.5])
        u_listen = act(matiger, ("listen", "listen"))
        cols, vals = matiger.trans_row(1, u_listen)
        assert cols.tolist() == [1] and vals.tolist() == [1.0]

    def test_invalid_accuracy(self):
        with pytest.raises(pompg.ParameterError):
            pompg.build_matiger(pompg.EnvParams(listen_accuracy=0.5))
        with pytest.raises(pompg.ParameterError):
            pompg.build_matiger(pompg.EnvParams(listen_accuracy=1.2))


class TestMabc:
    def test_both_transmit_no_reward(self, mabc):
        full_full = mabc.states.index("f|f")
        u = act(mabc, ("transmit", "transmit"))
        assert mabc.potential[full_full, u] == 0.0

    def test_single_full_transmit_rewarded(self, mabc):
        full_full = mabc.states.index("f|f")
        u = act(mabc, ("transmit", "idle"))
        assert mabc.potential[full_full, u] == 1.0
        empty_full = mabc.states.index("e|f")
        assert mabc.potential[empty_full, u] == 0.0

    def test_degenerate_arrivals_fill_buffers(self):
        m = pompg.build_mabc(pompg.EnvParams(env_id="mabc",
                                             arrival_probs=(1.0, 1.0)))
        full_full = m.states.index("f|f")
        for x in range(m.n_states):
            for u in range(m.n_joint_actions):
                cols, vals = m.trans_row(x, u)
                assert cols.tolist() == [full_full]
                assert vals.tolist() == [1.0]

    def test_probability_range_checked(self):
        with pytest.raises(pompg.ParameterError):
            pompg.build_mabc(pompg.EnvParams(env_id="mabc",
                                             arrival_probs=(1.5, 0.1)))


@pytest.fixture(scope="module")
def lbf():
    return pompg.build_lbf(pompg.EnvParams(env_id="lbf", grid_width=3,
                                           grid_height=3))


class TestLbf:
    def test_done_state_is_absorbing(self, lbf):
        done = lbf.states.index("done")
        for u in range(lbf.n_joint_actions):
            cols, vals = lbf.trans_row(done, u)
            assert cols.tolist() == [done] and vals.tolist() == [1.0]
            assert lbf.potential[done, u] == 0.0

    def test_adjacent_lift_collects(self, lbf):
        # agent 1 at cell 0, food at cell 1 (Manhattan-adjacent), agent 2 far
        k = lbf.states.index("a1@(0, 0)|a2@(2, 2)|food@(0, 1)")
        u = act(lbf, ("lift", "noop"))
        done = lbf.states.index("done")
        cols, vals = lbf.trans_row(k, u)
        assert cols.tolist() == [done]
        assert lbf.potential[k, u] == 1.0

    def test_cooperative_lift_needs_both(self):
        m = pompg.build_lbf(pompg.EnvParams(env_id="lbf", grid_width=3,
                                            grid_height=3, cooperative_lift=True))
        k = m.states.index("a1@(0, 0)|a2@(2, 2)|food@(0, 1)")
        u = act(m, ("lift", "noop"))
        assert m.potential[k, u] == 0.0

    def test_sight_zero_signals(self):
        m = pompg.build_lbf(pompg.EnvParams(env_id="lbf", grid_width=2,
                                            grid_height=2, sight_range=0))
        # cells are pairwise distinct, so with sight 0 every signal is "none"
        for i in range(2):
            for x in range(m.n_states - 1):
                for u in (0,):
                    cols, _ = m.obs_row(i, x, u)
                    name = m.observations[i][cols[0]]
                    assert name.endswith("food-none|other-none")

    def test_state_cap(self):
        with pytest.raises(pompg.ParameterError):
            pompg.build_lbf(pompg.EnvParams(env_id="lbf", grid_width=4,
                                            grid_height=4, state_cap=100))


class TestValidation:
    def test_built_models_clean(self, matiger, mabc):
        for m in (matiger, mabc):
            rep = pompg.validate_model(m)
            assert rep.transition_residual < 1e-12
            assert max(rep.observation_residuals) < 1e-12
            assert rep.common_reward
            assert rep.potential_in_bounds

    def test_perturbed_row_reported(self, mabc):
        bad = [m.copy() for m in mabc.transition]
        bad[0].data[0] += 1e-2
        model = dataclasses.replace(mabc, transition=tuple(bad))
        rep = pompg.validate_model(model)
        assert rep.transition_residual == pytest.approx(1e-2)

    def test_non_common_reward_flag(self):
        m = single_agent_bandit([1.0, 0.0])
        reward = m.reward.copy()
        reward = reward + 0.5
        model = dataclasses.replace(m, reward=reward)
        rep = pompg.validate_model(model)
        assert not rep.common_reward


class TestSerialization:
    def test_round_trip_bit_identical(self, mabc, tmp_path):
        p1, p2 = tmp_path / "m1.json", tmp_path / "m2.json"
        pompg.save_model(mabc, p1)
        loaded = pompg.load_model(p1)
        pompg.save_model(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert loaded.states == mabc.states
        assert np.array_equal(loaded.reward, mabc.reward)

    def test_bad_row_rejected_with_index(self, mabc, tmp_path):
        path = tmp_path / "m.json"
        pompg.save_model(mabc, path)
        doc = json.loads(path.read_text())
        doc["transition"][2][1][0] -= 0.02
        path.write_text(json.dumps(doc))
        with pytest.raises(pompg.ModelLoadError, match="row 9"):
            pompg.load_model(path)

    def test_missing_field_named(self, mabc, tmp_path):
        path = tmp_path / "m.json"
        pompg.save_model(mabc, path)
        doc = json.loads(path.read_text())
        del doc["potential"]
        path.write_text(json.dumps(doc))
        with pytest.raises(pompg.ModelLoadError, match="potential"):
            pompg.load_model(path)

    def test_degenerate_single_everything(self, tmp_path):
        doc = {
            "n_agents": 1, "states": ["s"], "observations": [["o"]],
            "actions": [["a"]], "transition": [[[1.0]]],
            "observation_kernel": [[[[1.0]]]], "reward": [[[1.0]]],
            "potential": [[1.0]], "discount": 0.9,
            "initial_state_dist": [1.0],
        }
        path = tmp_path / "m.json"
        path.write_text(json.dumps(doc))
        m = pompg.load_model(path)
        assert m.n_states == 1 and m.n_agents == 1


class TestPotentialResidual:
    def test_unilateral_deviation_mabc(self, mabc, rng):
        spec = pompg.make_window_spec(mabc, 0)
        base = pompg.random_policy(spec, mabc, rng, scale=0.8)
        for agent in (0, 1):
            dev = pompg.random_policy(spec, mabc, rng, scale=0.8)
            pol_b = base.replace_table(agent, dev.tables[agent])
            res = pompg.potential_residual(mabc, spec, base, pol_b, agent)
            assert res < 1e-8

    def test_identical_policies(self, mabc):
        spec = pompg.make_window_spec(mabc, 0)
        pol = pompg.init_policy(spec, mabc)
        assert pompg.potential_residual(mabc, spec, pol, pol, 0) == 0.0

    def test_matiger_sweep(self, matiger, rng):
        spec = pompg.make_window_spec(matiger, 0)
        worst = 0.0
        for _ in range(20):
            base = pompg.random_policy(spec, matiger, rng)
            agent = int(rng.integers(2))
            dev = pompg.random_policy(spec, matiger, rng)
            pol_b = base.replace_table(agent, dev.tables[agent])
            worst = max(worst, pompg.potential_residual(
                matiger, spec, base, pol_b, agent))
        assert worst < 1e-8

    def test_multi_agent_deviation_rejected(self, mabc, rng):
        spec = pompg.make_window_spec(mabc, 0)
        a = pompg.random_policy(spec, mabc, rng)
        b = pompg.random_policy(spec, mabc, rng)
        with pytest.raises(pompg.ContractError):
            pompg.potential_residual(mabc, spec, a, b, 0)
