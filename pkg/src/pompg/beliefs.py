"""Exact beliefs over common-information histories and their compression gap.

A common-information history c of length k is the sequence of joint broadcasts
(= joint observations, since every agent broadcasts its current observation)
and joint actions through step k-1. The filter tracks the exact posterior over
(x^k, y^k) given c; the joint memories (l^k and the shared w^k) are determined
by c, so the full posterior over (x, y, m) is that array tensored with a point
mass on m(c). The compressed belief b(.|w) is the discounted-occupancy-weighted
mixture of b(.|c) over the histories that compress to w.

The reported total-variation distances compare the (x, y) marginals. The
memory point-mass component is excluded: it is common-information bookkeeping,
and its mixture mismatch under w grows with the window length, which would
invert the compression-quality ordering the distance is meant to measure.

Histories are enumerated breadth-first; the per-level expansion is vectorized
over histories for each (broadcast, action) pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import internal_state as ist
from .errors import ContractError, SizeError
from .model import INITIAL_ACTION, TabularPomg, joint_action_tuple

DEFAULT_HISTORY_CAP = 2_000_000
DENSE_FACTOR_CAP = 20_000_000


def joint_obs_index(obs_counts, ys) -> int:
    out = 0
    for c, y in zip(obs_counts, ys):
        out = out * c + y
    return out


def joint_obs_tuple(obs_counts, index) -> tuple[int, ...]:
    out = []
    for c in reversed(obs_counts):
        index, y = divmod(index, c)
        out.append(y)
    return tuple(reversed(out))


@dataclass(eq=False)
class BeliefTable:
    """Per-history posteriors, compressed per-w posteriors, and TV distances."""

    model: TabularPomg
    spec: ist.InternalStateSpec
    policy_stamp: int
    horizon: int
    beta: float
    level: np.ndarray          # [M]
    prob: np.ndarray           # [M] Pr^pi(c)
    w: np.ndarray              # [M]
    locals_: tuple             # per agent [M]
    parent: np.ndarray         # [M], -1 at the root
    edge_z: np.ndarray         # [M] joint observation broadcast on the edge
    edge_u: np.ndarray         # [M] joint action on the edge
    posterior: np.ndarray      # [M, X, Yj] posterior over (x^k, y^k)
    tv: np.ndarray             # [M] TV of (x,y) marginals vs b(.|w)
    w_values: np.ndarray       # distinct w indices with reachable histories
    w_posterior: np.ndarray    # [len(w_values), X, Yj]
    w_weight: np.ndarray       # [len(w_values)] discounted mass per w
    tail_weight: float         # discounted mass beyond the horizon: beta^(H+1)

    @property
    def n_histories(self) -> int:
        return self.prob.shape[0]

    def discounted_tv_expectation(self) -> float:
        """(1-beta) sum_k beta^k E^pi[TV_k], truncated at the horizon."""
        wgt = (1.0 - self.beta) * np.power(self.beta, self.level) * self.prob
        return float(np.sum(wgt * self.tv))

    def history_label(self, idx: int) -> str:
        steps = []
        k = idx
        while self.parent[k] >= 0:
            zt = joint_obs_tuple(self.model.obs_counts, int(self.edge_z[k]))
            ut = joint_action_tuple(self.model.action_counts, int(self.edge_u[k]))
            znames = ",".join(self.model.observations[i][z] for i, z in enumerate(zt))
            unames = ",".join(self.model.actions[i][u] for i, u in enumerate(ut))
            steps.append(f"(z:{znames}|u:{unames})")
            k = int(self.parent[k])
        steps.reverse()
        return "".join(steps) if steps else "(root)"


def _obs_factor(model: TabularPomg, u: int) -> np.ndarray:
    """[X, Yj] products of per-agent observation probabilities given action u."""
    x_count = model.n_states
    out = np.ones((x_count, 1))
    for i in range(model.n_agents):
        dense = np.zeros((x_count, model.obs_counts[i]))
        for x in range(x_count):
            cols, vals = model.obs_row(i, x, u)
            dense[x, cols] = vals
        out = (out[:, :, None] * dense[:, None, :]).reshape(x_count, -1)
    return out


def exact_beliefs(model: TabularPomg, spec, horizon: int, policy,
                  beta: float | None = None,
                  cap: int = DEFAULT_HISTORY_CAP) -> BeliefTable:
    """Enumerate all positive-probability histories to the horizon and filter."""
    if horizon < 0:
        raise ContractError("belief horizon must be >= 0")
    beta = model.discount if beta is None else float(beta)
    n = model.n_agents
    x_count = model.n_states
    u_count = model.n_joint_actions
    yj = 1
    for c in model.obs_counts:
        yj *= c
    if x_count * yj * (u_count + x_count) > DENSE_FACTOR_CAP:
        raise SizeError("belief filter needs dense [X, Yj] factors; this model "
                        "is too large", required=x_count * yj)

    obs_factors = [_obs_factor(model, u) for u in range(u_count)]
    p_dense = [np.asarray(model.transition[u].todense()) for u in range(u_count)]
    pi_tables = [policy.tables[i].probabilities() for i in range(n)]
    u_tuples = [joint_action_tuple(model.action_counts, u) for u in range(u_count)]
    z_tuples = [joint_obs_tuple(model.obs_counts, z) for z in range(yj)]

    root_post = (model.initial_state_dist[:, None]
                 * obs_factors[INITIAL_ACTION]).reshape(1, x_count, yj)
    lvl_prob = np.array([1.0])
    lvl_w = np.array([ist.initial_shared(spec)], dtype=np.int64)
    lvl_locals = [np.array([ist.initial_local(spec, i)], dtype=np.int64)
                  for i in range(n)]
    lvl_post = root_post

    levels = [0]
    all_prob = [lvl_prob]
    all_w = [lvl_w]
    all_locals = [[arr] for arr in lvl_locals]
    all_parent = [np.array([-1], dtype=np.int64)]
    all_edge_z = [np.array([-1], dtype=np.int64)]
    all_edge_u = [np.array([-1], dtype=np.int64)]
    all_post = [lvl_post]
    level_sizes = [1]
    offset = 0
    total = 1

    for k in range(horizon):
        parts = []
        base = offset
        for z in range(yj):
            zt = z_tuples[z]
            mass = lvl_post[:, :, z].sum(axis=1)             # [Nk]
            alive = mass > 0.0
            if not alive.any():
                continue
            idx = np.flatnonzero(alive)
            cond = lvl_post[idx, :, z] / mass[idx, None]     # [Na, X]
            polfac = np.ones(idx.size)
            flats = []
            for i in range(n):
                flat = (lvl_w[idx] * spec.n_local[i] + lvl_locals[i][idx]) \
                    * model.obs_counts[i] + zt[i]
                flats.append(flat)
            for u in range(u_count):
                ut = u_tuples[u]
                pf = polfac.copy()
                for i in range(n):
                    pf *= pi_tables[i][flats[i], ut[i]]
                child_prob = lvl_prob[idx] * mass[idx] * pf
                keep = child_prob > 0.0
                if not keep.any():
                    continue
                kidx = idx[keep]
                alpha2 = cond[keep] @ p_dense[u]             # [Nc, X]
                post = alpha2[:, :, None] * obs_factors[u][None, :, :]
                if spec.is_window:
                    w_next = ist.update_shared_vec(
                        spec, lvl_w[kidx],
                        [np.full(kidx.size, zt[i]) for i in range(n)], None)
                    l_next = [
                        ist.update_local_vec(
                            spec, i, lvl_locals[i][kidx],
                            np.full(kidx.size, zt[i]), np.full(kidx.size, ut[i]))
                        for i in range(n)
                    ]
                else:
                    w_next = spec.shared_table[lvl_w[kidx], z, u]
                    l_next = [
                        spec.local_tables[i][lvl_locals[i][kidx], zt[i], ut[i], zt[i]]
                        for i in range(n)
                    ]
                parts.append((child_prob[keep], w_next, l_next,
                              base + kidx, np.full(kidx.size, z, dtype=np.int64),
                              np.full(kidx.size, u, dtype=np.int64), post))
        if not parts:
            break
        lvl_prob = np.concatenate([p[0] for p in parts])
        lvl_w = np.concatenate([p[1] for p in parts])
        lvl_locals = [np.concatenate([p[2][i] for p in parts]) for i in range(n)]
        lvl_post = np.concatenate([p[6] for p in parts])
        total += lvl_prob.size
        if total > cap:
            raise SizeError(
                f"belief enumeration needs more than {cap} histories",
                required=total, cap=cap)
        levels.append(k + 1)
        all_prob.append(lvl_prob)
        all_w.append(lvl_w)
        for i in range(n):
            all_locals[i].append(lvl_locals[i])
        all_parent.append(np.concatenate([p[3] for p in parts]))
        all_edge_z.append(np.concatenate([p[4] for p in parts]))
        all_edge_u.append(np.concatenate([p[5] for p in parts]))
        all_post.append(lvl_post)
        offset = total - lvl_prob.size
        level_sizes.append(lvl_prob.size)

    level = np.concatenate([np.full(sz, lv, dtype=np.int64)
                            for lv, sz in zip(levels, level_sizes)])
    prob = np.concatenate(all_prob)
    w_arr = np.concatenate(all_w)
    locals_arr = tuple(np.concatenate(all_locals[i]) for i in range(n))
    parent = np.concatenate(all_parent)
    edge_z = np.concatenate(all_edge_z)
    edge_u = np.concatenate(all_edge_u)
    posterior = np.concatenate(all_post)

    # normalize each posterior (mass factors were carried in prob instead)
    norms = posterior.reshape(posterior.shape[0], -1).sum(axis=1)
    if np.abs(norms - 1.0).max() > 1e-9:
        posterior = posterior / norms[:, None, None]

    # compressed beliefs: discounted-occupancy-weighted mixtures per w
    weight = (1.0 - beta) * np.power(beta, level) * prob
    w_values, w_inverse = np.unique(w_arr, return_inverse=True)
    w_weight = np.zeros(w_values.size)
    np.add.at(w_weight, w_inverse, weight)
    w_post = np.zeros((w_values.size, x_count, yj))
    np.add.at(w_post, w_inverse, weight[:, None, None] * posterior)
    pos = w_weight > 0.0
    w_post[pos] /= w_weight[pos, None, None]

    diffs = np.abs(posterior - w_post[w_inverse])
    tv = 0.5 * diffs.reshape(diffs.shape[0], -1).sum(axis=1)

    return BeliefTable(
        model=model, spec=spec, policy_stamp=policy.stamp, horizon=horizon,
        beta=beta, level=level, prob=prob, w=w_arr, locals_=locals_arr,
        parent=parent, edge_z=edge_z, edge_u=edge_u, posterior=posterior,
        tv=tv, w_values=w_values, w_posterior=w_post, w_weight=w_weight,
        tail_weight=float(beta ** (horizon + 1)))


@dataclass(frozen=True)
class DbReport:
    d_b: float
    worst_history: str
    worst_index: int
    per_w: dict        # w index -> (max TV, history label)
    tail_weight: float


def distance_db(beliefs: BeliefTable) -> DbReport:
    """Worst-case TV between history-conditioned and compressed beliefs.

    The max runs over reachable histories (the per-history reading of the
    compression distance); per-w maxima are reported alongside.
    """
    k = int(beliefs.tv.argmax())
    per_w = {}
    for wi, wval in enumerate(beliefs.w_values.tolist()):
        mask = beliefs.w == wval
        if not mask.any():
            continue
        local = np.flatnonzero(mask)
        j = local[int(beliefs.tv[local].argmax())]
        per_w[wval] = (float(beliefs.tv[j]), beliefs.history_label(int(j)))
    return DbReport(
        d_b=float(beliefs.tv[k]),
        worst_history=beliefs.history_label(k),
        worst_index=k,
        per_w=per_w,
        tail_weight=beliefs.tail_weight)
