import numpy as np
import pytest

import pompg
from pompg import internal_state as ist

import reference as ref


class TestSizes:
    def test_reactive_is_singleton(self, mabc):
        spec = pompg.make_window_spec(mabc, 0)
        assert spec.n_shared == 1
        assert spec.n_local == (1, 1)

    def test_mabc_window_one_local_count(self, mabc):
        spec = pompg.make_window_spec(mabc, 1)
        assert spec.n_local == (5, 5)          # 4 (y,u) pairs + padding
        assert spec.n_shared == 9              # (2+1)^1 per agent

    def test_window_two_matches_counting(self, mabc):
        spec = pompg.make_window_spec(mabc, 2)
        assert spec.n_local == (25, 25)
        assert spec.n_shared == 81
        assert ist.info_point_count(spec, 0) == 81 * 25 * 2

    def test_cap_enforced(self, mabc):
        with pytest.raises(pompg.SizeError) as err:
            pompg.make_window_spec(mabc, 3, cap=100)
        assert err.value.required > 100


class TestUpdates:
    def test_reactive_updates_are_constant(self, mabc):
        spec = pompg.make_window_spec(mabc, 0)
        assert pompg.update_shared(spec, 0, (1, 0), (1, 1)) == 0
        assert pompg.update_local(spec, 0, 0, 1, 0, 1) == 0

    def test_window_one_shared_is_message(self, mabc):
        spec = pompg.make_window_spec(mabc, 1)
        for za in range(2):
            for zb in range(2):
                w = pompg.update_shared(spec, ist.initial_shared(spec),
                                        (za, zb), (0, 0))
                expect = ref.shared_encode(mabc, 1, ((za,), (zb,)))
                assert w == expect

    def test_window_one_local_is_pair(self, mabc):
        spec = pompg.make_window_spec(mabc, 1)
        l0 = ist.initial_local(spec, 0)
        for y in range(2):
            for u in range(2):
                nxt = pompg.update_local(spec, 0, l0, y, u, y)
                assert nxt == ref.local_encode(mabc, 0, 1, ((y, u),))

    def test_fifo_eviction(self, mabc):
        spec = pompg.make_window_spec(mabc, 2)
        w = ist.initial_shared(spec)
        w = pompg.update_shared(spec, w, (0, 1), (0, 0))
        assert w == ref.shared_encode(mabc, 2, ((None, 0), (None, 1)))
        w = pompg.update_shared(spec, w, (1, 0), (1, 1))
        assert w == ref.shared_encode(mabc, 2, ((0, 1), (1, 0)))
        w = pompg.update_shared(spec, w, (1, 1), (0, 0))
        assert w == ref.shared_encode(mabc, 2, ((1, 1), (0, 1)))

    def test_local_padding_clears_oldest_first(self, mabc):
        spec = pompg.make_window_spec(mabc, 2)
        l = ist.initial_local(spec, 1)
        l = pompg.update_local(spec, 1, l, 1, 0, 1)
        assert l == ref.local_encode(mabc, 1, 2, (None, (1, 0)))

    def test_determinism(self, mabc):
        spec = pompg.make_window_spec(mabc, 2)
        args = (3, (1, 0), (0, 1))
        assert pompg.update_shared(spec, *args) == pompg.update_shared(spec, *args)

    def test_out_of_range_rejected(self, mabc):
        spec = pompg.make_window_spec(mabc, 1)
        with pytest.raises(pompg.ContractError):
            pompg.update_shared(spec, spec.n_shared, (0, 0), (0, 0))
        with pytest.raises(pompg.ContractError):
            pompg.update_local(spec, 0, 0, 5, 0, 0)

    def test_vectorized_matches_scalar(self, mabc, rng):
        spec = pompg.make_window_spec(mabc, 2)
        ws = rng.integers(0, spec.n_shared, size=50)
        zs = [rng.integers(0, 2, size=50) for _ in range(2)]
        us = [rng.integers(0, 2, size=50) for _ in range(2)]
        vec = ist.update_shared_vec(spec, ws, zs, us)
        for k in range(50):
            scalar = pompg.update_shared(spec, int(ws[k]),
                                         (int(zs[0][k]), int(zs[1][k])),
                                         (int(us[0][k]), int(us[1][k])))
            assert vec[k] == scalar
        ls = rng.integers(0, spec.n_local[0], size=50)
        vec_l = ist.update_local_vec(spec, 0, ls, zs[0], us[0])
        for k in range(50):
            assert vec_l[k] == pompg.update_local(
                spec, 0, int(ls[k]), int(zs[0][k]), int(us[0][k]), int(zs[0][k]))


class TestWindowReplay:
    def test_window_reproduces_raw_history(self, mabc, rng):
        """Composed updates equal the literal last-t_w history, any start point."""
        t_w = 2
        spec = pompg.make_window_spec(mabc, t_w)
        for _ in range(30):
            steps = int(rng.integers(1, 7))
            ys = [(int(rng.integers(2)), int(rng.integers(2)))
                  for _ in range(steps)]
            us = [(int(rng.integers(2)), int(rng.integers(2)))
                  for _ in range(steps)]
            w = ist.initial_shared(spec)
            ls = [ist.initial_local(spec, i) for i in range(2)]
            for y, u in zip(ys, us):
                w = pompg.update_shared(spec, w, y, u)
                ls = [pompg.update_local(spec, i, ls[i], y[i], u[i], y[i])
                      for i in range(2)]
            raw = [tuple(None if k < 0 else ys[k][i]
                         for k in range(steps - t_w, steps))
                   for i in range(2)]
            assert w == ref.shared_encode(mabc, t_w, tuple(raw))
            for i in range(2):
                raw_l = tuple(None if k < 0 else (ys[k][i], us[k][i])
                              for k in range(steps - t_w, steps))
                assert ls[i] == ref.local_encode(mabc, i, t_w, raw_l)


class TestInfoPoints:
    def test_reactive_mabc_counts(self, mabc):
        spec = pompg.make_window_spec(mabc, 0)
        points = pompg.enumerate_info_points(spec, 0)
        assert len(points) == 2

    def test_product_rule(self, matiger):
        spec = pompg.make_window_spec(matiger, 1)
        points = pompg.enumerate_info_points(spec, 1)
        assert len(points) == spec.n_shared * spec.n_local[1] * 2

    def test_enumeration_stable_and_bijective(self, mabc):
        spec = pompg.make_window_spec(mabc, 1)
        points_a = pompg.enumerate_info_points(spec, 0)
        points_b = pompg.enumerate_info_points(spec, 0)
        assert points_a == points_b
        for p in points_a:
            assert ist.info_flat(spec, 0, p.w, p.l, p.y) == p.flat
            assert ist.info_unflat(spec, 0, p.flat) == (p.w, p.l, p.y)

    def test_labels_readable(self, mabc):
        spec = pompg.make_window_spec(mabc, 1)
        p = pompg.enumerate_info_points(spec, 0)[-1]
        label = pompg.info_label(spec, mabc, p)
        assert "y=" in label and "|" in label


class TestTableSpec:
    def test_custom_tables_round(self, mabc):
        # two shared states flipping on every update; locals constant
        shared = np.zeros((2, 4, 4), dtype=np.int64)
        shared[0, :, :] = 1
        shared[1, :, :] = 0
        locals_ = [np.zeros((1, 2, 2, 2), dtype=np.int64) for _ in range(2)]
        spec = pompg.make_table_spec(mabc, shared, locals_)
        assert not spec.is_window
        assert pompg.update_shared(spec, 0, (1, 1), (0, 0)) == 1
        assert pompg.update_shared(spec, 1, (0, 0), (1, 1)) == 0

    def test_bad_table_rejected(self, mabc):
        shared = np.full((2, 4, 4), 7, dtype=np.int64)
        with pytest.raises(pompg.ContractError):
            pompg.make_table_spec(mabc, shared,
                                  [np.zeros((1, 2, 2, 2), dtype=np.int64)] * 2)
