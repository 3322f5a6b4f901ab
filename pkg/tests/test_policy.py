import math

import numpy as np
import pytest

import pompg
from pompg.policy import kl_rows, softmax_rows


@pytest.fixture()
def mabc_spec(mabc):
    return pompg.make_window_spec(mabc, 0)


class TestInit:
    def test_uniform_rows(self, mabc, mabc_spec):
        pol = pompg.init_policy(mabc_spec, mabc)
        for tab in pol.tables:
            assert np.allclose(tab.probabilities(), 0.5)
            assert np.allclose(tab.probabilities().sum(axis=1), 1.0, atol=1e-12)

    def test_uniform_three_actions(self, matiger):
        spec = pompg.make_window_spec(matiger, 0)
        pol = pompg.init_policy(spec, matiger)
        assert np.allclose(pol.tables[0].probabilities(), 1 / 3)

    def test_given_table_reproduced(self, mabc, mabc_spec):
        rows = np.array([[0.9, 0.1], [0.25, 0.75]])
        pol = pompg.init_policy(mabc_spec, mabc, mode="given-table",
                                tables=[rows, rows])
        assert np.abs(pol.tables[0].probabilities() - rows).max() < 1e-12

    def test_given_table_validated(self, mabc, mabc_spec):
        bad = np.array([[1.0, 0.0], [0.5, 0.5]])
        with pytest.raises(pompg.ParameterError):
            pompg.init_policy(mabc_spec, mabc, mode="given-table",
                              tables=[bad, bad])
        with pytest.raises(pompg.ParameterError):
            pompg.init_policy(mabc_spec, mabc, mode="nope")


class TestActionProbabilities:
    def test_uniform_row(self, mabc, mabc_spec):
        pol = pompg.init_policy(mabc_spec, mabc)
        assert np.allclose(pompg.action_probabilities(pol.tables[0], 0),
                           [0.5, 0.5])

    def test_large_logits_stable(self):
        p = softmax_rows(np.array([[1000.0, 0.0]]))
        assert np.isfinite(p).all()
        assert p[0, 0] == pytest.approx(1.0)

    def test_shift_invariance(self):
        for c in (-311.0, 0.0, 42.5):
            p = softmax_rows(np.array([[c, c + math.log(3.0)]]))
            assert np.allclose(p, [[0.25, 0.75]], atol=1e-12)


class TestNpgStep:
    def test_zero_advantage_fixpoint(self, mabc, mabc_spec):
        pol = pompg.init_policy(mabc_spec, mabc)
        adv = [np.zeros_like(t.theta) for t in pol.tables]
        nxt, g = pompg.npg_step(pol, adv, eta=0.1, beta=0.5)
        for t0, t1 in zip(pol.tables, nxt.tables):
            assert np.array_equal(t0.probabilities(), t1.probabilities())
        assert all(np.allclose(gi, 1.0) for gi in g)
        assert nxt.t == pol.t + 1 and nxt.parent_stamp == pol.stamp

    def test_two_action_arithmetic(self, mabc, mabc_spec):
        # uniform row, A = (+1, -1), eta/(1-beta) = 1
        pol = pompg.init_policy(mabc_spec, mabc)
        adv = [np.tile([1.0, -1.0], (2, 1)) for _ in range(2)]
        nxt, g = pompg.npg_step(pol, adv, eta=0.5, beta=0.5)
        p = nxt.tables[0].probabilities()[0]
        assert p[0] == pytest.approx(0.88080, abs=5e-6)
        assert p[1] == pytest.approx(0.11920, abs=5e-6)
        assert g[0][0] == pytest.approx((math.e + 1 / math.e) / 2, abs=1e-9)
        assert g[0][0] == pytest.approx(1.54308, abs=5e-6)

    def test_row_shift_invariance(self, mabc, mabc_spec):
        pol = pompg.init_policy(mabc_spec, mabc)
        base = [np.tile([1.0, -1.0], (2, 1)), np.tile([0.3, -0.7], (2, 1))]
        shifted = [a.copy() for a in base]
        shifted[0] = shifted[0] + 2.5
        nxt_a, g_a = pompg.npg_step(pol, base, eta=0.2, beta=0.6)
        nxt_b, g_b = pompg.npg_step(pol, shifted, eta=0.2, beta=0.6)
        assert np.abs(nxt_a.tables[0].probabilities()
                      - nxt_b.tables[0].probabilities()).max() < 1e-12
        assert np.allclose(g_b[0], g_a[0] * math.exp(0.2 * 2.5 / 0.4))

    def test_forms_agree_on_random_rows(self, mabc, mabc_spec, rng):
        for _ in range(50):
            pol = pompg.random_policy(mabc_spec, mabc, rng, scale=2.0)
            adv = [rng.normal(scale=3.0, size=t.theta.shape)
                   for t in pol.tables]
            adv = [a - (pol.tables[i].probabilities() * a).sum(1, keepdims=True)
                   for i, a in enumerate(adv)]
            pompg.npg_step(pol, adv, eta=0.3, beta=0.7)  # internal 1e-10 check

    def test_tilt_toward_better_action(self, mabc, mabc_spec, rng):
        pol = pompg.random_policy(mabc_spec, mabc, rng)
        adv = [rng.normal(size=t.theta.shape) for t in pol.tables]
        nxt, _ = pompg.npg_step(pol, adv, eta=0.4, beta=0.5)
        for i, tab in enumerate(pol.tables):
            p0, p1 = tab.probabilities(), nxt.tables[i].probabilities()
            ratio = p1 / p0
            better = adv[i][:, 0] > adv[i][:, 1]
            assert np.all(ratio[better, 0] > ratio[better, 1])
            assert np.all(ratio[~better, 0] <= ratio[~better, 1])

    def test_non_finite_advantage_rejected(self, mabc, mabc_spec):
        pol = pompg.init_policy(mabc_spec, mabc)
        adv = [np.zeros_like(t.theta) for t in pol.tables]
        adv[0][0, 0] = np.nan
        with pytest.raises(pompg.ContractError):
            pompg.npg_step(pol, adv, eta=0.1, beta=0.5)

    def test_stale_stamp_rejected(self, mabc, mabc_spec):
        pol = pompg.init_policy(mabc_spec, mabc)
        chain = pompg.build_chain(mabc, mabc_spec, pol)
        values = pompg.solve_values(chain, "all")
        occ = pompg.compute_occupancy(chain)
        advs = [pompg.marginal_advantage(chain, values, occ, i)
                for i in range(2)]
        nxt, _ = pompg.npg_step(pol, advs, eta=0.1, beta=0.5)
        with pytest.raises(pompg.ContractError):
            pompg.npg_step(nxt, advs, eta=0.1, beta=0.5)


class TestKl:
    def test_identical_rows(self, mabc, mabc_spec):
        pol = pompg.init_policy(mabc_spec, mabc)
        assert pompg.policy_kl(pol.tables[0], pol.tables[0], 0) == 0.0

    def test_half_vs_quarter(self, mabc, mabc_spec):
        p = pompg.init_policy(mabc_spec, mabc)
        rows = np.array([[0.25, 0.75], [0.25, 0.75]])
        q = pompg.init_policy(mabc_spec, mabc, mode="given-table",
                              tables=[rows, rows])
        expect = 0.5 * math.log(2.0) + 0.5 * math.log(2.0 / 3.0)
        assert pompg.policy_kl(p.tables[0], q.tables[0], 1) == \
            pytest.approx(expect, abs=1e-9)
        assert expect == pytest.approx(0.14384, abs=5e-6)

    def test_pinsker_on_random_rows(self, mabc, mabc_spec, rng):
        for _ in range(1000):
            a = pompg.random_policy(mabc_spec, mabc, rng, scale=2.0)
            b = pompg.random_policy(mabc_spec, mabc, rng, scale=2.0)
            kl = kl_rows(a.tables[0], b.tables[0])
            l1 = np.abs(a.tables[0].probabilities()
                        - b.tables[0].probabilities()).sum(axis=1)
            assert np.all(kl >= 0.5 * l1 ** 2 - 1e-12)


class TestSerialization:
    def test_round_trip_bit_exact(self, mabc, tmp_path, rng):
        spec = pompg.make_window_spec(mabc, 1)
        pol = pompg.random_policy(spec, mabc, rng)
        path = tmp_path / "policy.json"
        pompg.save_policy(pol, spec, mabc, path)
        loaded = pompg.load_policy(path, spec, mabc)
        for a, b in zip(pol.tables, loaded.tables):
            assert np.array_equal(a.theta, b.theta)

    def test_window_mismatch_rejected(self, mabc, tmp_path):
        spec1 = pompg.make_window_spec(mabc, 1)
        pol = pompg.init_policy(spec1, mabc)
        path = tmp_path / "policy.json"
        pompg.save_policy(pol, spec1, mabc, path)
        spec0 = pompg.make_window_spec(mabc, 0)
        with pytest.raises(pompg.ParameterError, match="t_w"):
            pompg.load_policy(path, spec0, mabc)
