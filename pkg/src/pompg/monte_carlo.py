"""Model-free trajectory sampling and Monte-Carlo estimation.

Sampling is vectorized over a batch of trajectories. Work is partitioned into
worker chunks with substreams derived from (seed, worker index) and merged in
worker order, so estimates are bit-reproducible for a fixed (seed, config,
workers) regardless of how chunks are actually scheduled.

Advantage estimation is first-visit: for every (info point, action) pair the
discounted tail return from the pair's first occurrence in each trajectory is
averaged. Tail returns from first visits are unbiased for the value at the
visit; a geometric-horizon restart scheme would match the discounted-occupancy
conditional exactly but was rejected for its variance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import internal_state as ist
from .errors import ParameterError
from .model import INITIAL_ACTION, TabularPomg

DEFAULT_WORKERS = 1


@dataclass(frozen=True)
class TrajectoryStep:
    x: int
    y: tuple[int, ...]
    w: int
    l: tuple[int, ...]
    u: tuple[int, ...]
    rewards: tuple[float, ...]
    potential: float


@dataclass(frozen=True)
class Trajectory:
    seed: int | None
    horizon: int
    steps: tuple[TrajectoryStep, ...]
    discounted_returns: tuple[float, ...]
    discounted_potential: float


@dataclass(frozen=True)
class McEstimate:
    value: float
    n: int
    stderr: float
    bias_bound: float


def _rng_for(seed: int, worker: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(worker)]))


def _sample_categorical_rows(rows: np.ndarray, rng) -> np.ndarray:
    """One draw per row of a dense row-stochastic matrix."""
    cum = np.cumsum(rows, axis=1)
    r = rng.random(rows.shape[0])
    return np.minimum((cum < r[:, None]).sum(axis=1), rows.shape[1] - 1)


def _sample_sparse_grouped(row_of, keys: np.ndarray, rng) -> np.ndarray:
    """One categorical draw per entry from CSR-backed rows, grouped by key.

    Random numbers are consumed in ascending key order, which is deterministic
    for fixed inputs.
    """
    out = np.zeros(keys.size, dtype=np.int64)
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    boundaries = np.flatnonzero(np.diff(sorted_keys)) + 1
    groups = np.split(order, boundaries)
    for grp in groups:
        cols, probs = row_of(int(keys[grp[0]]))
        cum = np.cumsum(probs)
        r = rng.random(grp.size)
        picks = np.minimum(np.searchsorted(cum, r, side="right"), cols.size - 1)
        out[grp] = cols[picks]
    return out


class _BatchSampler:
    """Steps a batch of trajectories through model + compressor dynamics."""

    def __init__(self, model: TabularPomg, spec, policy):
        self.model = model
        self.spec = spec
        self.policy = policy
        self.pi = [t.probabilities() for t in policy.tables]
        self.n = model.n_agents
        self.u_count = model.n_joint_actions

    def _obs_row(self, i):
        model = self.model
        return lambda key: model.obs_row(i, key // self.u_count, key % self.u_count)

    def _trans_row(self):
        model = self.model
        return lambda key: model.trans_row(key // self.u_count, key % self.u_count)

    def start(self, m: int, rng):
        model, spec = self.model, self.spec
        cum0 = np.cumsum(model.initial_state_dist)
        x = np.minimum(np.searchsorted(cum0, rng.random(m), side="right"),
                       model.n_states - 1).astype(np.int64)
        keys = x * self.u_count + INITIAL_ACTION
        ys = [_sample_sparse_grouped(self._obs_row(i), keys, rng)
              for i in range(self.n)]
        w = np.full(m, ist.initial_shared(spec), dtype=np.int64)
        ls = [np.full(m, ist.initial_local(spec, i), dtype=np.int64)
              for i in range(self.n)]
        return x, w, ls, ys

    def act(self, w, ls, ys, rng):
        us = []
        for i in range(self.n):
            flat = (w * self.spec.n_local[i] + ls[i]) \
                * self.model.obs_counts[i] + ys[i]
            us.append(_sample_categorical_rows(self.pi[i][flat], rng))
        uj = np.zeros_like(us[0])
        for c, u in zip(self.model.action_counts, us):
            uj = uj * c + u
        return us, uj

    def advance(self, x, w, ls, ys, us, uj, rng):
        spec = self.spec
        w_next = ist.update_shared_vec(spec, w, ys, us) if spec.is_window \
            else self._table_shared(w, ys, uj)
        ls_next = [
            ist.update_local_vec(spec, i, ls[i], ys[i], us[i])
            if spec.is_window
            else spec.local_tables[i][ls[i], ys[i], us[i], ys[i]]
            for i in range(self.n)
        ]
        keys = x * self.u_count + uj
        x_next = _sample_sparse_grouped(self._trans_row(), keys, rng)
        keys_next = x_next * self.u_count + uj
        ys_next = [_sample_sparse_grouped(self._obs_row(i), keys_next, rng)
                   for i in range(self.n)]
        return x_next, w_next, ls_next, ys_next

    def _table_shared(self, w, ys, uj):
        zj = np.zeros_like(w)
        for c, y in zip(self.model.obs_counts, ys):
            zj = zj * c + y
        return self.spec.shared_table[w, zj, uj]


def rollout(model: TabularPomg, spec, policy, rng, horizon: int) -> Trajectory:
    """Sample one trajectory; deterministic given the stream (or int seed)."""
    if horizon < 1:
        raise ParameterError("horizon must be >= 1")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    gen = np.random.default_rng(rng) if seed is not None else rng
    sampler = _BatchSampler(model, spec, policy)
    x, w, ls, ys = sampler.start(1, gen)
    steps = []
    ret = np.zeros(model.n_agents)
    ret_phi = 0.0
    for k in range(horizon):
        us, uj = sampler.act(w, ls, ys, gen)
        rew = tuple(float(model.reward[i, x[0], uj[0]])
                    for i in range(model.n_agents))
        phi = float(model.potential[x[0], uj[0]])
        steps.append(TrajectoryStep(
            x=int(x[0]), y=tuple(int(y[0]) for y in ys), w=int(w[0]),
            l=tuple(int(l[0]) for l in ls), u=tuple(int(u[0]) for u in us),
            rewards=rew, potential=phi))
        ret += (model.discount ** k) * np.asarray(rew)
        ret_phi += (model.discount ** k) * phi
        x, w, ls, ys = sampler.advance(x, w, ls, ys, us, uj, gen)
    return Trajectory(seed=seed, horizon=horizon, steps=tuple(steps),
                      discounted_returns=tuple(ret.tolist()),
                      discounted_potential=ret_phi)


def _chunk_sizes(n_samples: int, workers: int) -> list[int]:
    base, extra = divmod(n_samples, workers)
    return [base + (1 if j < extra else 0) for j in range(workers)]


def mc_objective(model: TabularPomg, spec, policy, n_samples: int, horizon: int,
                 seed: int, workers: int = DEFAULT_WORKERS):
    """Mean discounted return per agent and for the potential.

    Returns (per-agent tuple of McEstimate, McEstimate for the potential).
    """
    if n_samples < 2:
        raise ParameterError("n_samples must be >= 2")
    sampler = _BatchSampler(model, spec, policy)
    rets = []
    phis = []
    for worker, m in enumerate(_chunk_sizes(n_samples, workers)):
        if m == 0:
            continue
        rng = _rng_for(seed, worker)
        x, w, ls, ys = sampler.start(m, rng)
        ret = np.zeros((model.n_agents, m))
        phi = np.zeros(m)
        disc = 1.0
        for _ in range(horizon):
            us, uj = sampler.act(w, ls, ys, rng)
            ret += disc * model.reward[:, x, uj]
            phi += disc * model.potential[x, uj]
            disc *= model.discount
            x, w, ls, ys = sampler.advance(x, w, ls, ys, us, uj, rng)
        rets.append(ret)
        phis.append(phi)
    ret = np.concatenate(rets, axis=1)
    phi = np.concatenate(phis)

    def estimate(samples, r_max):
        bias = (model.discount ** horizon) * r_max / (1 - model.discount)
        return McEstimate(
            value=float(samples.mean()), n=samples.size,
            stderr=float(samples.std(ddof=1) / np.sqrt(samples.size)),
            bias_bound=float(bias))

    agent_estimates = tuple(
        estimate(ret[i], float(np.abs(model.reward[i]).max()))
        for i in range(model.n_agents))
    phi_estimate = estimate(phi, max(abs(model.phi_max), abs(model.phi_min)))
    return agent_estimates, phi_estimate


@dataclass(frozen=True)
class McAdvantageTable:
    """First-visit Monte-Carlo advantage table for one agent."""

    agent: int
    policy_stamp: int
    q: np.ndarray            # [n_points, A_i]
    a: np.ndarray            # [n_points, A_i]
    counts: np.ndarray       # [n_points, A_i] first-visit counts
    stderr: np.ndarray       # [n_points, A_i] (inf where count < 2)
    visited: np.ndarray      # [n_points] any action visited
    bias_bound: float


def _first_visit_accumulate(pair, tails, sums, sumsq, counts):
    """Add each trajectory's first-visit tail return per pair; [H, m] inputs."""
    horizon, m = pair.shape
    traj = np.broadcast_to(np.arange(m), (horizon, m))
    kk = np.broadcast_to(np.arange(horizon)[:, None], (horizon, m))
    order = np.lexsort((kk.ravel(), pair.ravel(), traj.ravel()))
    p_sorted = pair.ravel()[order]
    t_sorted = traj.ravel()[order]
    first = np.ones(order.size, dtype=bool)
    first[1:] = (p_sorted[1:] != p_sorted[:-1]) | (t_sorted[1:] != t_sorted[:-1])
    sel = order[first]
    g = tails.ravel()[sel]
    p = pair.ravel()[sel]
    np.add.at(sums, p, g)
    np.add.at(sumsq, p, g * g)
    np.add.at(counts, p, 1)


def _table_from_sums(model, spec, policy, i, sums, sumsq, counts, horizon):
    n_points = ist.info_point_count(spec, i)
    n_act = model.action_counts[i]
    counts2 = counts.reshape(n_points, n_act)
    q = np.zeros((n_points, n_act))
    seen = counts2 > 0
    q[seen] = sums.reshape(n_points, n_act)[seen] / counts2[seen]
    mean_sq = np.zeros_like(q)
    mean_sq[seen] = sumsq.reshape(n_points, n_act)[seen] / counts2[seen]
    var = np.full((n_points, n_act), np.inf)
    many = counts2 > 1
    var[many] = np.maximum(
        (mean_sq[many] - q[many] ** 2) * counts2[many] / (counts2[many] - 1), 0.0)
    stderr = np.sqrt(np.where(counts2 > 1, var / np.maximum(counts2, 1), np.inf))

    # Fill unvisited cells of visited rows with the row's pi-weighted visited
    # mean, so centering is exact on visited rows and fill-ins get A = 0.
    pi_rows = policy.tables[i].probabilities()
    visited = seen.any(axis=1)
    filled = q.copy()
    for r in np.flatnonzero(visited & ~seen.all(axis=1)):
        wts = (pi_rows[r] * seen[r]).sum()
        mean = float((pi_rows[r] * q[r])[seen[r]].sum() / wts)
        filled[r, ~seen[r]] = mean
    baseline = (pi_rows * filled).sum(axis=1, keepdims=True)
    a = filled - baseline
    a[~visited] = 0.0
    filled[~visited] = 0.0
    bias = (model.discount ** horizon) * float(np.abs(model.reward[i]).max()) \
        / (1 - model.discount)
    return McAdvantageTable(
        agent=i, policy_stamp=policy.stamp, q=filled, a=a, counts=counts2,
        stderr=stderr, visited=visited, bias_bound=bias)


def mc_advantages(model: TabularPomg, spec, policy, n_samples: int,
                  horizon: int, seed: int, workers: int = DEFAULT_WORKERS,
                  agents=None):
    """First-visit advantage tables for several agents from one shared batch.

    Returns (tables dict agent -> McAdvantageTable, per-agent return
    McEstimates, potential McEstimate). Sharing one batch across agents is a
    variance/compute trade-off: tables at one iteration are correlated but
    each is the same estimator it would be on its own batch.
    """
    if n_samples < 1:
        raise ParameterError("n_samples must be >= 1")
    if horizon < 1:
        raise ParameterError("horizon must be >= 1")
    agents = list(range(model.n_agents)) if agents is None else list(agents)
    sampler = _BatchSampler(model, spec, policy)
    acc = {}
    for i in agents:
        n_pairs = ist.info_point_count(spec, i) * model.action_counts[i]
        acc[i] = (np.zeros(n_pairs), np.zeros(n_pairs),
                  np.zeros(n_pairs, dtype=np.int64))
    rets = []
    phis = []

    for worker, m in enumerate(_chunk_sizes(n_samples, max(1, workers))):
        if m == 0:
            continue
        rng = _rng_for(seed, worker)
        x, w, ls, ys = sampler.start(m, rng)
        flat_hist = {i: np.zeros((horizon, m), dtype=np.int64) for i in agents}
        act_hist = {i: np.zeros((horizon, m), dtype=np.int64) for i in agents}
        rew_hist = np.zeros((horizon, model.n_agents, m))
        phi_hist = np.zeros((horizon, m))
        for k in range(horizon):
            for i in agents:
                flat_hist[i][k] = (w * spec.n_local[i] + ls[i]) \
                    * model.obs_counts[i] + ys[i]
            us, uj = sampler.act(w, ls, ys, rng)
            for i in agents:
                act_hist[i][k] = us[i]
            rew_hist[k] = model.reward[:, x, uj]
            phi_hist[k] = model.potential[x, uj]
            x, w, ls, ys = sampler.advance(x, w, ls, ys, us, uj, rng)
        for i in agents:
            tails = np.zeros((horizon, m))
            tails[-1] = rew_hist[-1, i]
            for k in range(horizon - 2, -1, -1):
                tails[k] = rew_hist[k, i] + model.discount * tails[k + 1]
            pair = flat_hist[i] * model.action_counts[i] + act_hist[i]
            _first_visit_accumulate(pair, tails, *acc[i])
        disc = np.power(model.discount, np.arange(horizon))
        rets.append(np.einsum("k,kam->am", disc, rew_hist))
        phis.append(disc @ phi_hist)

    ret = np.concatenate(rets, axis=1)
    phi = np.concatenate(phis)

    def estimate(samples, r_max):
        bias = (model.discount ** horizon) * r_max / (1 - model.discount)
        return McEstimate(value=float(samples.mean()), n=samples.size,
                          stderr=float(samples.std(ddof=1) / np.sqrt(samples.size))
                          if samples.size > 1 else 0.0,
                          bias_bound=float(bias))

    tables = {i: _table_from_sums(model, spec, policy, i, *acc[i], horizon)
              for i in agents}
    agent_estimates = tuple(
        estimate(ret[i], float(np.abs(model.reward[i]).max()))
        for i in range(model.n_agents))
    phi_estimate = estimate(phi, max(abs(model.phi_max), abs(model.phi_min)))
    return tables, agent_estimates, phi_estimate


def mc_advantage(model: TabularPomg, spec, policy, i: int, n_samples: int,
                 horizon: int, seed: int,
                 workers: int = DEFAULT_WORKERS) -> McAdvantageTable:
    """First-visit tail-return estimates of Q_i, centered per row under pi_i.

    Unvisited rows are flagged and zeroed; see mc_advantages for the row
    centering convention.
    """
    tables, _, _ = mc_advantages(model, spec, policy, n_samples, horizon, seed,
                                 workers=workers, agents=[i])
    return tables[i]
