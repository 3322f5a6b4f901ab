"""Exact oracle over the augmented Markov chain induced by an FSC policy.

The augmented state is s = (x, w, l_1..l_n, y_1..y_n). Its transition under a
joint policy factors as: draw u ~ prod_i pi_i(.|w,l_i,y_i), broadcast z = y,
advance (w,l) deterministically through the compressor, then x' ~ P(.|x,u)
and y'_i ~ Omega_i(.|x',u).

The reachable state set and the per-joint-action kernels T_u are policy
independent (softmax policies have full support), so they are enumerated once
per (model, spec) as a ChainSpace and every policy-specific chain is just the
weighted assembly P_pi = sum_u diag(pi(u|.)) T_u. Enumeration order is
lexicographic in the state tuple regardless of construction order.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import internal_state as ist
from .errors import ContractError, SizeError, SolverError
from .model import INITIAL_ACTION, TabularPomg, joint_action_tuple

DEFAULT_CHAIN_CAP = 250_000
DIRECT_SOLVE_MAX = 50_000
RESIDUAL_TOL = 1e-10


@dataclass(eq=False)
class ChainSpace:
    """Reachable augmented states and policy-independent per-action kernels."""

    model: TabularPomg
    spec: ist.InternalStateSpec
    states: np.ndarray                     # [N, 2 + 2n] columns x,w,l...,y...
    initial: np.ndarray                    # [N]
    info_flat: tuple[np.ndarray, ...]      # per agent, [N]
    kernels: tuple[sp.csr_matrix, ...]     # per joint action, [N, N]
    reward_u: np.ndarray                   # [n, N, U]
    potential_u: np.ndarray                # [N, U]

    @property
    def n_states(self) -> int:
        return self.states.shape[0]


def _initial_aug_states(model, spec):
    """Initial distribution over augmented states (step-0 observation draw)."""
    n = model.n_agents
    w0 = ist.initial_shared(spec)
    l0 = tuple(ist.initial_local(spec, i) for i in range(n))
    out = {}
    for x in np.flatnonzero(model.initial_state_dist > 0.0):
        px = model.initial_state_dist[x]
        supports = [model.obs_row(i, int(x), INITIAL_ACTION) for i in range(n)]
        for combo in itertools.product(*(zip(s[0].tolist(), s[1]) for s in supports)):
            ys = tuple(c[0] for c in combo)
            p = px
            for c in combo:
                p *= c[1]
            key = (int(x), w0) + l0 + ys
            out[key] = out.get(key, 0.0) + p
    return out


def enumerate_chain_space(model: TabularPomg, spec, cap: int | None = None) -> ChainSpace:
    """BFS-enumerate the reachable augmented space and build the T_u kernels."""
    cap = DEFAULT_CHAIN_CAP if cap is None else cap
    n = model.n_agents
    u_count = model.n_joint_actions
    u_tuples = [joint_action_tuple(model.action_counts, u) for u in range(u_count)]

    init = _initial_aug_states(model, spec)
    visited = set(init)
    frontier = list(init)
    shared_cache: dict[tuple, int] = {}
    local_cache: dict[tuple, int] = {}
    obs_cache: dict[tuple, tuple] = {}

    def successors(state, u):
        x, w = state[0], state[1]
        ls = state[2:2 + n]
        ys = state[2 + n:]
        ua = u_tuples[u]
        skey = (w, ys)
        wn = shared_cache.get(skey)
        if wn is None:
            wn = ist.update_shared(spec, w, ys, ua)
            shared_cache[skey] = wn
        lns = []
        for i in range(n):
            lkey = (i, ls[i], ys[i], ua[i])
            ln = local_cache.get(lkey)
            if ln is None:
                ln = ist.update_local(spec, i, ls[i], ys[i], ua[i], ys[i])
                local_cache[lkey] = ln
            lns.append(ln)
        lns = tuple(lns)
        xcols, xprobs = model.trans_row(x, u)
        for xn, px in zip(xcols.tolist(), xprobs):
            okey = (xn, u)
            combos = obs_cache.get(okey)
            if combos is None:
                sup = [model.obs_row(i, xn, u) for i in range(n)]
                combos = []
                for combo in itertools.product(
                        *(zip(s[0].tolist(), s[1]) for s in sup)):
                    yn = tuple(c[0] for c in combo)
                    p = 1.0
                    for c in combo:
                        p *= c[1]
                    combos.append((yn, p))
                obs_cache[okey] = tuple(combos)
            for yn, py in combos:
                yield (xn, wn) + lns + yn, px * py

    while frontier:
        state = frontier.pop()
        for u in range(u_count):
            for nxt, _ in successors(state, u):
                if nxt not in visited:
                    visited.add(nxt)
                    frontier.append(nxt)
        if len(visited) > cap:
            raise SizeError(
                f"augmented chain needs more than {cap} states",
                required=len(visited), cap=cap)

    ordered = sorted(visited)
    index = {s: k for k, s in enumerate(ordered)}
    n_states = len(ordered)
    states = np.array(ordered, dtype=np.int64)

    initial = np.zeros(n_states)
    for s, p in init.items():
        initial[index[s]] = p

    rows = [[] for _ in range(u_count)]
    cols = [[] for _ in range(u_count)]
    vals = [[] for _ in range(u_count)]
    for k, state in enumerate(ordered):
        for u in range(u_count):
            acc: dict[int, float] = {}
            for nxt, p in successors(state, u):
                j = index[nxt]
                acc[j] = acc.get(j, 0.0) + p
            rows[u].extend([k] * len(acc))
            cols[u].extend(acc.keys())
            vals[u].extend(acc.values())
    kernels = []
    for u in range(u_count):
        m = sp.csr_matrix(
            (vals[u], (rows[u], cols[u])), shape=(n_states, n_states))
        m.sort_indices()
        resid = np.abs(np.asarray(m.sum(axis=1)).ravel() - 1.0).max()
        if resid > RESIDUAL_TOL:
            raise ContractError(
                f"chain kernel for joint action {u} is not stochastic "
                f"(residual {resid:.3e})")
        kernels.append(m)

    info_flat = []
    for i in range(n):
        w_col = states[:, 1]
        l_col = states[:, 2 + i]
        y_col = states[:, 2 + n + i]
        info_flat.append(
            (w_col * spec.n_local[i] + l_col) * model.obs_counts[i] + y_col)

    x_col = states[:, 0]
    reward_u = np.ascontiguousarray(model.reward[:, x_col, :])
    potential_u = np.ascontiguousarray(model.potential[x_col, :])
    return ChainSpace(
        model=model, spec=spec, states=states, initial=initial,
        info_flat=tuple(info_flat), kernels=tuple(kernels),
        reward_u=reward_u, potential_u=potential_u)


@dataclass(eq=False)
class AugmentedChain:
    """A ChainSpace weighted by one joint policy."""

    space: ChainSpace
    policy: object                       # JointPolicy
    policy_stamp: int
    agent_probs: tuple[np.ndarray, ...]  # per agent [N, A_i]
    weights: np.ndarray                  # [N, U] joint action probabilities
    P: sp.csr_matrix                     # [N, N]
    r_pi: np.ndarray                     # [n, N]
    phi_pi: np.ndarray                   # [N]
    _splu: object = field(default=None, repr=False)

    @property
    def n_states(self) -> int:
        return self.space.n_states

    def lu(self, beta: float):
        if self._splu is None or self._splu[0] != beta:
            a = sp.identity(self.n_states, format="csr") - beta * self.P
            self._splu = (beta, spla.splu(a.tocsc()))
        return self._splu[1]


def joint_weights(space: ChainSpace, agent_probs) -> np.ndarray:
    """[N, U] products of per-agent action probabilities (agent 0 slowest)."""
    n_states = space.n_states
    w = np.ones((n_states, 1))
    for p in agent_probs:
        w = (w[:, :, None] * p[:, None, :]).reshape(n_states, -1)
    return w


def build_chain(model: TabularPomg, spec, policy, cap: int | None = None,
                space: ChainSpace | None = None) -> AugmentedChain:
    """Assemble the policy-weighted chain (reusing a ChainSpace if given)."""
    if space is None:
        space = enumerate_chain_space(model, spec, cap=cap)
    agent_probs = tuple(
        policy.tables[i].probabilities()[space.info_flat[i]]
        for i in range(model.n_agents)
    )
    weights = joint_weights(space, agent_probs)
    p_pi = None
    for u, kern in enumerate(space.kernels):
        term = kern.multiply(weights[:, u][:, None]).tocsr()
        p_pi = term if p_pi is None else p_pi + term
    r_pi = np.einsum("anu,nu->an", space.reward_u, weights)
    phi_pi = np.einsum("nu,nu->n", space.potential_u, weights)
    return AugmentedChain(
        space=space, policy=policy, policy_stamp=policy.stamp,
        agent_probs=agent_probs, weights=weights, P=p_pi.tocsr(),
        r_pi=r_pi, phi_pi=phi_pi)


@dataclass(frozen=True)
class ValueTables:
    """Exact V and Q tables under one policy (potential and/or agent rewards)."""

    policy_stamp: int
    beta: float
    v_potential: np.ndarray | None       # [N]
    q_potential: np.ndarray | None       # [N, U]
    v_agent: np.ndarray | None           # [n, N]
    q_agent: np.ndarray | None           # [n, N, U]


def _linear_solve(chain: AugmentedChain, rhs: np.ndarray, beta: float,
                  transpose: bool = False) -> np.ndarray:
    """Solve (I - beta P) x = rhs (or the transposed system) to 1e-10."""
    n = chain.n_states
    a = sp.identity(n, format="csr") - beta * (chain.P.T.tocsr() if transpose else chain.P)
    rhs2 = rhs if rhs.ndim == 2 else rhs[:, None]
    if n <= DIRECT_SOLVE_MAX:
        lu = chain.lu(beta)
        out = np.column_stack([
            lu.solve(rhs2[:, k], trans="T" if transpose else "N")
            for k in range(rhs2.shape[1])
        ])
    else:
        op = chain.P.T.tocsr() if transpose else chain.P
        out = np.zeros_like(rhs2)
        scale = max(1.0, float(np.abs(rhs2).max()))
        max_iter = int(
            math.log(RESIDUAL_TOL * (1 - beta) / (10 * scale)) / math.log(beta)) + 50
        for _ in range(max_iter):
            nxt = rhs2 + beta * op.dot(out)
            if np.abs(nxt - out).max() < RESIDUAL_TOL * (1 - beta):
                out = nxt
                break
            out = nxt
    resid = np.abs(a.dot(out) - rhs2).max()
    if resid > 1e-8:
        raise SolverError(f"linear solve residual {resid:.3e}", residual=float(resid))
    return out if rhs.ndim == 2 else out[:, 0]


def solve_values(chain: AugmentedChain, reward_selector="all",
                 beta: float | None = None) -> ValueTables:
    """Exact values: V solves (I - beta P_pi) V = r_pi; Q = r_u + beta T_u V."""
    model = chain.space.model
    beta = model.discount if beta is None else float(beta)
    if not 0.0 < beta < 1.0:
        raise ContractError(f"discount {beta} outside (0,1)")
    n = model.n_agents

    want_pot = reward_selector in ("all", "potential")
    want_agents: list[int] = []
    if reward_selector in ("all", "agent-reward"):
        want_agents = list(range(n))
    elif isinstance(reward_selector, tuple) and reward_selector[0] == "agent":
        want_agents = [reward_selector[1]]
    elif not want_pot:
        raise ContractError(f"unknown reward selector {reward_selector!r}")

    cols = []
    if want_pot:
        cols.append(chain.phi_pi)
    for i in want_agents:
        cols.append(chain.r_pi[i])
    sol = _linear_solve(chain, np.column_stack(cols), beta)

    space = chain.space
    tu_v = [kern.dot(sol) for kern in space.kernels]   # per u: [N, k]

    k = 0
    v_pot = q_pot = v_ag = q_ag = None
    if want_pot:
        v_pot = np.ascontiguousarray(sol[:, k])
        q_pot = np.column_stack([
            space.potential_u[:, u] + beta * tu_v[u][:, k]
            for u in range(len(space.kernels))
        ])
        bound_hi = model.phi_max / (1 - beta) + 1e-8
        bound_lo = model.phi_min / (1 - beta) - 1e-8
        if v_pot.max() > bound_hi or v_pot.min() < bound_lo:
            raise SolverError(
                "potential value escaped its phi/(1-beta) bounds; solver unstable")
        k += 1
    if want_agents:
        v_rows, q_rows = [], []
        for i in want_agents:
            v_rows.append(sol[:, k])
            q_rows.append(np.column_stack([
                space.reward_u[i, :, u] + beta * tu_v[u][:, k]
                for u in range(len(space.kernels))
            ]))
            k += 1
        if want_agents == list(range(n)):
            v_ag = np.stack(v_rows)
            q_ag = np.stack(q_rows)
        else:
            v_ag = np.full((n, chain.n_states), np.nan)
            q_ag = np.full((n, chain.n_states, len(space.kernels)), np.nan)
            for j, i in enumerate(want_agents):
                v_ag[i] = v_rows[j]
                q_ag[i] = q_rows[j]
    return ValueTables(policy_stamp=chain.policy_stamp, beta=beta,
                       v_potential=v_pot, q_potential=q_pot,
                       v_agent=v_ag, q_agent=q_ag)


@dataclass(frozen=True)
class OccupancyMeasure:
    """(1-beta)-normalized discounted visitation over augmented states."""

    policy_stamp: int
    beta: float
    dist: np.ndarray                      # [N]
    marginals: tuple[np.ndarray, ...]     # per agent over info points
    mass_residual: float

    def min_positive(self, i: int) -> tuple[float, int]:
        m = self.marginals[i]
        pos = m > 0.0
        if not pos.any():
            raise ContractError(f"agent {i} has no visited info points")
        vals = np.where(pos, m, np.inf)
        k = int(vals.argmin())
        return float(vals[k]), k


def compute_occupancy(chain: AugmentedChain, beta: float | None = None) -> OccupancyMeasure:
    """d solves d^T (I - beta P) = (1-beta) mu0^T; agent marginals by summing out."""
    model = chain.space.model
    beta = model.discount if beta is None else float(beta)
    d = _linear_solve(chain, (1.0 - beta) * chain.space.initial, beta, transpose=True)
    mass_resid = float(abs(d.sum() - 1.0))
    if mass_resid > RESIDUAL_TOL * 100:
        raise SolverError(f"occupancy mass residual {mass_resid:.3e}",
                          residual=mass_resid)
    d = np.maximum(d, 0.0)
    marginals = []
    for i in range(model.n_agents):
        m = np.zeros(ist.info_point_count(chain.space.spec, i))
        np.add.at(m, chain.space.info_flat[i], d)
        marginals.append(m)
    return OccupancyMeasure(policy_stamp=chain.policy_stamp, beta=beta,
                            dist=d, marginals=tuple(marginals),
                            mass_residual=mass_resid)


@dataclass(frozen=True)
class AdvantageTable:
    """Marginal Q_i and zero-mean advantage A_i over agent i's info points."""

    agent: int
    policy_stamp: int
    q: np.ndarray                # [n_points, A_i]
    a: np.ndarray                # [n_points, A_i]
    visited: np.ndarray          # [n_points] bool; unvisited rows are zeroed


def _check_stamps(chain, *others):
    for o in others:
        if o.policy_stamp != chain.policy_stamp:
            raise ContractError(
                "mismatched policy stamps: tables were computed under "
                "different policies")


def marginal_advantage(chain: AugmentedChain, values: ValueTables,
                       occ: OccupancyMeasure, i: int,
                       source: str = "agent") -> AdvantageTable:
    """Marginalize Q(s,u) onto agent i's info points.

    Hidden components (x, l_-i, y_-i) follow the occupancy conditional
    d(. | h_i); other agents' actions follow their current policies. Rows with
    zero occupancy are flagged and zeroed.
    """
    _check_stamps(chain, values, occ)
    model = chain.space.model
    if source == "agent":
        q_joint = values.q_agent[i]
    elif source == "potential":
        q_joint = values.q_potential
    else:
        raise ContractError(f"unknown advantage source {source!r}")
    if q_joint is None or (source == "agent" and np.isnan(q_joint).any()):
        raise ContractError("value tables lack the requested reward selector")

    n_states = chain.n_states
    counts = model.action_counts
    w_minus = np.ones((n_states, 1))
    for j in range(model.n_agents):
        pj = chain.agent_probs[j] if j != i else np.ones((n_states, counts[j]))
        w_minus = (w_minus[:, :, None] * pj[:, None, :]).reshape(n_states, -1)

    weighted = (w_minus * q_joint).reshape((n_states,) + counts)
    other_axes = tuple(1 + j for j in range(model.n_agents) if j != i)
    m = weighted.sum(axis=other_axes)                       # [N, A_i]

    n_points = ist.info_point_count(chain.space.spec, i)
    numer = np.zeros((n_points, counts[i]))
    np.add.at(numer, chain.space.info_flat[i], occ.dist[:, None] * m)
    d_i = occ.marginals[i]
    visited = d_i > 0.0
    q_i = np.zeros_like(numer)
    q_i[visited] = numer[visited] / d_i[visited, None]

    pi_rows = chain.policy.tables[i].probabilities()
    baseline = (pi_rows * q_i).sum(axis=1, keepdims=True)
    a_i = q_i - baseline
    a_i[~visited] = 0.0
    q_i[~visited] = 0.0
    mean_resid = np.abs((pi_rows * a_i).sum(axis=1)[visited])
    if mean_resid.size and mean_resid.max() > 1e-9:
        raise SolverError(
            f"advantage rows are not zero-mean (max {mean_resid.max():.3e})")
    return AdvantageTable(agent=i, policy_stamp=chain.policy_stamp,
                          q=q_i, a=a_i, visited=visited)


def exact_objective(chain: AugmentedChain, values: ValueTables):
    """(J_i per agent, Phi): expectations of V under the initial distribution."""
    _check_stamps(chain, values)
    mu0 = chain.space.initial
    j_agents = None
    if values.v_agent is not None and not np.isnan(values.v_agent).any():
        j_agents = tuple(float(mu0 @ values.v_agent[i])
                         for i in range(values.v_agent.shape[0]))
    phi = float(mu0 @ values.v_potential) if values.v_potential is not None else None
    return j_agents, phi


def occupancy_info_measure(space: ChainSpace, dist: np.ndarray, i: int) -> np.ndarray:
    """Project a distribution over augmented states onto agent i's info points."""
    m = np.zeros(ist.info_point_count(space.spec, i))
    np.add.at(m, space.info_flat[i], dist)
    return m
