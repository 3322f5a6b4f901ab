"""Tabular partially observable Markov (potential) games.

A game is a finite tuple (states, per-agent observations/actions, transition,
observation kernels, rewards, potential, discount, initial distribution).
Joint actions are indexed lexicographically by agent order (agent 0 is the
most significant digit). Transition and observation tables are stored sparse
so that grid environments stay representable; rewards and the potential are
dense ``[S, U]`` tables.

The observation kernel is ``Omega_i(y | x', u)``: it conditions on the *next*
state and the joint action that produced it. The step-0 observation is drawn
from the kernel at joint action 0, so builders order actions to give that row
neutral semantics (see each builder).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ModelLoadError, ParameterError

ROW_TOL = 1e-12

# Joint action used for the step-0 observation draw.
INITIAL_ACTION = 0


def joint_action_count(action_counts) -> int:
    out = 1
    for c in action_counts:
        out *= int(c)
    return out


def joint_action_index(action_counts, actions) -> int:
    """Flat index of a per-agent action tuple (agent 0 most significant)."""
    idx = 0
    for c, a in zip(action_counts, actions):
        if not 0 <= a < c:
            raise ParameterError(f"action index {a} out of range [0,{c})")
        idx = idx * c + a
    return idx


def joint_action_tuple(action_counts, index) -> tuple[int, ...]:
    out = []
    for c in reversed(action_counts):
        index, a = divmod(index, c)
        out.append(a)
    return tuple(reversed(out))


@dataclass(frozen=True)
class TabularPomg:
    """A finite partially observable Markov game with a potential table.

    transition[u] is an (S x S) row-stochastic CSR matrix; observation_kernel[i]
    is an (S*U x Y_i) CSR matrix whose row x'*U+u is Omega_i(. | x', u).
    """

    states: tuple[str, ...]
    observations: tuple[tuple[str, ...], ...]
    actions: tuple[tuple[str, ...], ...]
    transition: tuple[sp.csr_matrix, ...]
    observation_kernel: tuple[sp.csr_matrix, ...]
    reward: np.ndarray          # [n, S, U]
    potential: np.ndarray       # [S, U]
    discount: float
    initial_state_dist: np.ndarray
    phi_min: float
    phi_max: float

    @property
    def n_agents(self) -> int:
        return len(self.actions)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def action_counts(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.actions)

    @property
    def obs_counts(self) -> tuple[int, ...]:
        return tuple(len(o) for o in self.observations)

    @property
    def n_joint_actions(self) -> int:
        return joint_action_count(self.action_counts)

    def trans_row(self, x: int, u: int):
        """Support and probabilities of P(. | x, u)."""
        m = self.transition[u]
        lo, hi = m.indptr[x], m.indptr[x + 1]
        return m.indices[lo:hi], m.data[lo:hi]

    def obs_row(self, i: int, x_next: int, u: int):
        """Support and probabilities of Omega_i(. | x_next, u)."""
        m = self.observation_kernel[i]
        r = x_next * self.n_joint_actions + u
        lo, hi = m.indptr[r], m.indptr[r + 1]
        return m.indices[lo:hi], m.data[lo:hi]

    def obs_dense(self, i: int) -> np.ndarray:
        """Dense [S, U, Y_i] observation kernel (small models only)."""
        return np.asarray(
            self.observation_kernel[i].todense()
        ).reshape(self.n_states, self.n_joint_actions, len(self.observations[i]))

    def transition_dense(self) -> np.ndarray:
        """Dense [S, U, S] transition table (small models only)."""
        out = np.zeros((self.n_states, self.n_joint_actions, self.n_states))
        for u, m in enumerate(self.transition):
            out[:, u, :] = np.asarray(m.todense())
        return out

    def common_reward(self, tol: float = ROW_TOL) -> bool:
        return bool(
            np.max(np.abs(self.reward - self.potential[None, :, :])) <= tol
        )


def _csr_from_dense_rows(dense: np.ndarray) -> sp.csr_matrix:
    m = sp.csr_matrix(dense)
    m.eliminate_zeros()
    m.sort_indices()
    return m


def make_pomg(states, observations, actions, transition_dense, obs_dense,
              reward, potential, discount, initial_state_dist) -> TabularPomg:
    """Validate dense tables and pack them into a TabularPomg.

    transition_dense: [S, U, S]; obs_dense: list per agent of [S, U, Y_i];
    reward: [n, S, U]; potential: [S, U].
    """
    states = tuple(states)
    observations = tuple(tuple(o) for o in observations)
    actions = tuple(tuple(a) for a in actions)
    n = len(actions)
    s_count = len(states)
    u_count = joint_action_count(len(a) for a in actions)
    if n < 1 or s_count < 1 or any(len(a) < 1 for a in actions) \
            or any(len(o) < 1 for o in observations):
        raise ParameterError("all set sizes must be >= 1")
    if len(observations) != n:
        raise ParameterError("observations must list one set per agent")
    if not 0.0 < discount < 1.0:
        raise ParameterError(f"discount must lie strictly in (0,1), got {discount}")

    transition_dense = np.asarray(transition_dense, dtype=float)
    reward = np.asarray(reward, dtype=float)
    potential = np.asarray(potential, dtype=float)
    initial = np.asarray(initial_state_dist, dtype=float)
    if transition_dense.shape != (s_count, u_count, s_count):
        raise ParameterError(f"transition shape {transition_dense.shape} != "
                             f"{(s_count, u_count, s_count)}")
    if reward.shape != (n, s_count, u_count):
        raise ParameterError(f"reward shape {reward.shape} != {(n, s_count, u_count)}")
    if potential.shape != (s_count, u_count):
        raise ParameterError(f"potential shape {potential.shape} != {(s_count, u_count)}")
    if initial.shape != (s_count,):
        raise ParameterError("initial_state_dist length mismatch")

    def _check_rows(rows2d, what):
        if rows2d.min(initial=0.0) < -ROW_TOL:
            raise ParameterError(f"{what} has negative entries")
        resid = np.abs(rows2d.sum(axis=-1) - 1.0).max()
        if resid > ROW_TOL:
            raise ParameterError(f"{what} rows do not sum to 1 (max residual {resid:.3e})")

    _check_rows(transition_dense.reshape(-1, s_count), "transition")
    _check_rows(initial[None, :], "initial_state_dist")
    obs_csr = []
    for i, table in enumerate(obs_dense):
        table = np.asarray(table, dtype=float)
        y_count = len(observations[i])
        if table.shape != (s_count, u_count, y_count):
            raise ParameterError(f"observation_kernel[{i}] shape {table.shape} != "
                                 f"{(s_count, u_count, y_count)}")
        _check_rows(table.reshape(-1, y_count), f"observation_kernel[{i}]")
        obs_csr.append(_csr_from_dense_rows(table.reshape(s_count * u_count, y_count)))

    trans_csr = tuple(
        _csr_from_dense_rows(transition_dense[:, u, :]) for u in range(u_count)
    )
    reward.setflags(write=False)
    potential.setflags(write=False)
    initial.setflags(write=False)
    return TabularPomg(
        states=states, observations=observations, actions=actions,
        transition=trans_csr, observation_kernel=tuple(obs_csr),
        reward=reward, potential=potential, discount=float(discount),
        initial_state_dist=initial,
        phi_min=float(potential.min()), phi_max=float(potential.max()),
    )


@dataclass(frozen=True)
class EnvParams:
    """Parameters for the built-in benchmark environments."""

    env_id: str = "matiger"          # matiger | mabc | lbf | custom
    listen_accuracy: float = 0.85
    arrival_probs: tuple[float, float] = (0.9, 0.1)
    collision_obs_accuracy: float = 0.9
    grid_width: int = 4
    grid_height: int = 4
    sight_range: int = 1
    cooperative_lift: bool = False
    lift_reward: float = 1.0
    episode_horizon: int = 10        # Monte-Carlo rollout truncation
    discount: float = 0.95
    state_cap: int = 20000
    model_path: str | None = None    # env_id == "custom"

    def validate(self) -> "EnvParams":
        for p in (self.listen_accuracy, self.collision_obs_accuracy, *self.arrival_probs):
            if not 0.0 <= p <= 1.0:
                raise ParameterError(f"probability {p} outside [0,1]")
        if self.grid_width < 2 or self.grid_height < 2:
            raise ParameterError("grid dimensions must be >= 2")
        if self.sight_range < 0:
            raise ParameterError("sight range must be >= 0")
        if not 0.0 < self.discount < 1.0:
            raise ParameterError("discount must lie strictly in (0,1)")
        if self.episode_horizon < 1:
            raise ParameterError("episode horizon must be >= 1")
        return self


def build_env(params: EnvParams) -> TabularPomg:
    params.validate()
    if params.env_id == "matiger":
        return build_matiger(params)
    if params.env_id == "mabc":
        return build_mabc(params)
    if params.env_id == "lbf":
        return build_lbf(params)
    if params.env_id == "custom":
        if not params.model_path:
            raise ParameterError("custom environment requires model_path")
        return load_model(params.model_path)
    raise ParameterError(f"unknown environment id {params.env_id!r}")


def build_matiger(params: EnvParams) -> TabularPomg:
    """Two-agent tiger problem, common reward.

    State is the tiger position. Hearing is accurate (= listen accuracy) only
    after a joint (listen, listen); any door opening relocates the tiger
    uniformly and makes the next observation uninformative. Joint action 0 is
    (open-left, open-left), so the step-0 observation row is the uniform one.
    """
    acc = params.listen_accuracy
    if not 0.5 < acc <= 1.0:
        raise ParameterError(f"listen accuracy must lie in (0.5, 1], got {acc}")
    states = ("tiger-left", "tiger-right")
    acts = ("open-left", "open-right", "listen")
    obs = ("hear-left", "hear-right")
    action_counts = (3, 3)
    u_count = 9

    trans = np.zeros((2, u_count, 2))
    obs_tab = np.zeros((2, u_count, 2))
    pot = np.zeros((2, u_count))
    for u in range(u_count):
        ua = joint_action_tuple(action_counts, u)
        both_listen = all(a == 2 for a in ua)
        for x in range(2):
            if both_listen:
                trans[x, u, x] = 1.0
            else:
                trans[x, u, :] = 0.5
            team = 0.0
            for a in ua:
                if a == 2:
                    team += -1.0
                elif a == x:        # open-left on tiger-left / open-right on tiger-right
                    team += -100.0
                else:
                    team += 10.0
            pot[x, u] = team
        for xn in range(2):
            if both_listen:
                obs_tab[xn, u, xn] = acc
                obs_tab[xn, u, 1 - xn] = 1.0 - acc
            else:
                obs_tab[xn, u, :] = 0.5

    reward = np.stack([pot, pot])
    return make_pomg(states, (obs, obs), (acts, acts), trans,
                     [obs_tab, obs_tab.copy()], reward, pot,
                     params.discount, np.array([0.5, 0.5]))


def build_mabc(params: EnvParams) -> TabularPomg:
    """Two-node multi-access broadcast channel, common reward.

    State is the pair of buffer-full flags. A transmitting node occupies the
    channel regardless of buffer content, so two transmissions always collide;
    the team earns 1 exactly when one node transmits and its buffer is full.
    A successful transmit empties that buffer; empty buffers refill with the
    node's arrival probability. Each node hears a noisy collision signal with
    the given accuracy. Actions are ordered (idle, transmit) so joint action 0
    is the quiet channel for the step-0 observation.
    """
    p_arr = params.arrival_probs
    q = params.collision_obs_accuracy
    states = tuple(f"{'ef'[b1]}|{'ef'[b2]}" for b1 in range(2) for b2 in range(2))
    acts = ("idle", "transmit")
    obs = ("quiet", "collision")
    action_counts = (2, 2)
    u_count = 4

    def state_index(b1, b2):
        return b1 * 2 + b2

    trans = np.zeros((4, u_count, 4))
    pot = np.zeros((4, u_count))
    obs_tab = np.zeros((4, u_count, 2))
    for x in range(4):
        bufs = (x // 2, x % 2)
        for u in range(u_count):
            ua = joint_action_tuple(action_counts, u)
            success = [
                ua[i] == 1 and ua[1 - i] == 0 and bufs[i] == 1 for i in range(2)
            ]
            pot[x, u] = 1.0 if any(success) else 0.0
            # Next-buffer distribution per node: a success empties, then the
            # arrival process (for empty buffers) refills with prob p_i.
            probs_full = []
            for i in range(2):
                if success[i] or bufs[i] == 0:
                    probs_full.append(p_arr[i])
                else:
                    probs_full.append(1.0)
            for b1n in range(2):
                for b2n in range(2):
                    pr = (probs_full[0] if b1n else 1 - probs_full[0]) * \
                         (probs_full[1] if b2n else 1 - probs_full[1])
                    trans[x, u, state_index(b1n, b2n)] += pr
    for xn in range(4):
        for u in range(u_count):
            collided = joint_action_tuple(action_counts, u) == (1, 1)
            sig = 1 if collided else 0
            obs_tab[xn, u, sig] = q
            obs_tab[xn, u, 1 - sig] = 1.0 - q

    reward = np.stack([pot, pot])
    initial = np.zeros(4)
    initial[state_index(1, 1)] = 1.0     # both buffers start full
    return make_pomg(states, (obs, obs), (acts, acts), trans,
                     [obs_tab, obs_tab.copy()], reward, pot,
                     params.discount, initial)


_LBF_DIRS = ("none", "N", "S", "E", "W", "here")
_LBF_ACTS = ("up", "down", "left", "right", "lift", "noop")
_LBF_DELTAS = {0: (-1, 0), 1: (1, 0), 2: (0, -1), 3: (0, 1)}


def _lbf_direction(src, dst, sight):
    dr, dc = dst[0] - src[0], dst[1] - src[1]
    if max(abs(dr), abs(dc)) > sight:
        return 0
    if dr == 0 and dc == 0:
        return 5
    if abs(dr) >= abs(dc):
        return 1 if dr < 0 else 2
    return 3 if dc > 0 else 4


def build_lbf(params: EnvParams) -> TabularPomg:
    """Level-based foraging on a grid: two agents, one food item, common reward.

    Non-done states are the pairwise-distinct cell triples (agent1, agent2,
    food); a successful lift (Manhattan-adjacent to the food; both agents must
    lift simultaneously in cooperative mode) pays the shared lift reward and
    jumps to a single absorbing done state. Moves are deterministic; moving
    off-grid, onto the food, onto the other agent, or into a move conflict
    leaves the agent in place. Observations are (own cell, food direction,
    other-agent direction) with directions visible within Chebyshev sight
    range and diagonals collapsed to the dominant axis.
    """
    w, h, sight = params.grid_width, params.grid_height, params.sight_range
    cells = w * h
    triples = [
        (a1, a2, f)
        for a1 in range(cells) for a2 in range(cells) for f in range(cells)
        if len({a1, a2, f}) == 3
    ]
    s_count = len(triples) + 1
    if s_count > params.state_cap:
        raise ParameterError(
            f"LBF grid enumerates {s_count} states, above the cap "
            f"{params.state_cap}; shrink the grid or raise state_cap")
    done = s_count - 1
    index = {t: k for k, t in enumerate(triples)}

    def rc(cell):
        return divmod(cell, w)

    def cell_of(r, c):
        return r * w + c

    def move(cell, a):
        if a not in _LBF_DELTAS:
            return cell
        r, c = rc(cell)
        r += _LBF_DELTAS[a][0]
        c += _LBF_DELTAS[a][1]
        if not (0 <= r < h and 0 <= c < w):
            return cell
        return cell_of(r, c)

    def adjacent(cell, food):
        (r1, c1), (r2, c2) = rc(cell), rc(food)
        return abs(r1 - r2) + abs(c1 - c2) == 1

    action_counts = (6, 6)
    u_count = 36
    names = [f"a1@{rc(a1)}|a2@{rc(a2)}|food@{rc(f)}" for a1, a2, f in triples]
    names.append("done")

    n_obs = cells * 36
    obs_names = tuple(
        f"cell{c}|food-{df}|other-{do}"
        for c in range(cells) for df in _LBF_DIRS for do in _LBF_DIRS
    )

    def obs_index(own, food_sig, other_sig):
        return (own * 6 + food_sig) * 6 + other_sig

    trans_rows = [[] for _ in range(u_count)]   # (row, col, val)
    pot = np.zeros((s_count, u_count))
    obs_of_state = np.zeros((s_count, 2), dtype=np.int64)
    for k, (a1, a2, f) in enumerate(triples):
        pos = (a1, a2)
        for i, own in enumerate(pos):
            other = pos[1 - i]
            sig_f = _lbf_direction(rc(own), rc(f), sight)
            sig_o = _lbf_direction(rc(own), rc(other), sight)
            obs_of_state[k, i] = obs_index(own, sig_f, sig_o)
    obs_of_state[done, :] = obs_index(0, 0, 0)

    for k, (a1, a2, f) in enumerate(triples):
        for u in range(u_count):
            ua = joint_action_tuple(action_counts, u)
            lifts = [ua[i] == 4 and adjacent((a1, a2)[i], f) for i in range(2)]
            collected = all(lifts) if params.cooperative_lift else any(lifts)
            if collected:
                pot[k, u] = params.lift_reward
                trans_rows[u].append((k, done, 1.0))
                continue
            t1, t2 = move(a1, ua[0]), move(a2, ua[1])
            if t1 == f or t1 == a2:
                t1 = a1
            if t2 == f or t2 == a1:
                t2 = a2
            if t1 == t2:
                t1, t2 = a1, a2
            trans_rows[u].append((k, index[(t1, t2, f)], 1.0))
    for u in range(u_count):
        trans_rows[u].append((done, done, 1.0))

    trans_csr = []
    for u in range(u_count):
        rows, cols, vals = zip(*trans_rows[u])
        m = sp.csr_matrix((vals, (rows, cols)), shape=(s_count, s_count))
        m.sort_indices()
        trans_csr.append(m)

    obs_csr = []
    for i in range(2):
        rows = np.repeat(np.arange(s_count) * u_count, u_count) + \
            np.tile(np.arange(u_count), s_count)
        cols = np.repeat(obs_of_state[:, i], u_count)
        m = sp.csr_matrix((np.ones(rows.size), (rows, cols)),
                          shape=(s_count * u_count, n_obs))
        m.sort_indices()
        obs_csr.append(m)

    reward = np.stack([pot, pot])
    initial = np.full(s_count, 1.0 / len(triples))
    initial[done] = 0.0
    pot = np.ascontiguousarray(pot)
    reward.setflags(write=False)
    pot.setflags(write=False)
    initial.setflags(write=False)
    return TabularPomg(
        states=tuple(names), observations=(obs_names, obs_names),
        actions=(_LBF_ACTS, _LBF_ACTS),
        transition=tuple(trans_csr), observation_kernel=tuple(obs_csr),
        reward=reward, potential=pot, discount=params.discount,
        initial_state_dist=initial,
        phi_min=float(pot.min()), phi_max=float(pot.max()),
    )


@dataclass(frozen=True)
class ModelReport:
    """Invariant residuals for a model; reported, never clamped."""

    transition_residual: float
    observation_residuals: tuple[float, ...]
    initial_residual: float
    min_entry: float
    reachable_states: int
    common_reward: bool
    phi_min: float
    phi_max: float
    potential_in_bounds: bool


def validate_model(model: TabularPomg) -> ModelReport:
    """Report row-sum residuals, reachability and the common-reward flag."""
    s_count, u_count = model.n_states, model.n_joint_actions
    t_res = 0.0
    min_entry = math.inf
    for m in model.transition:
        sums = np.asarray(m.sum(axis=1)).ravel()
        t_res = max(t_res, float(np.abs(sums - 1.0).max()))
        if m.nnz:
            min_entry = min(min_entry, float(m.data.min()))
    o_res = []
    for m in model.observation_kernel:
        sums = np.asarray(m.sum(axis=1)).ravel()
        o_res.append(float(np.abs(sums - 1.0).max()))
        if m.nnz:
            min_entry = min(min_entry, float(m.data.min()))
    init_res = float(abs(model.initial_state_dist.sum() - 1.0))
    min_entry = min(min_entry, float(model.initial_state_dist.min()))

    reached = set(np.flatnonzero(model.initial_state_dist > 0.0).tolist())
    frontier = list(reached)
    while frontier:
        x = frontier.pop()
        for u in range(u_count):
            cols, _ = model.trans_row(x, u)
            for xn in cols.tolist():
                if xn not in reached:
                    reached.add(xn)
                    frontier.append(xn)

    in_bounds = bool(
        (model.potential >= model.phi_min - ROW_TOL).all()
        and (model.potential <= model.phi_max + ROW_TOL).all()
    )
    return ModelReport(
        transition_residual=t_res,
        observation_residuals=tuple(o_res),
        initial_residual=init_res,
        min_entry=min_entry,
        reachable_states=len(reached),
        common_reward=model.common_reward(),
        phi_min=model.phi_min,
        phi_max=model.phi_max,
        potential_in_bounds=in_bounds,
    )


_MODEL_FIELDS = ("n_agents", "states", "observations", "actions", "transition",
                 "observation_kernel", "reward", "potential", "discount",
                 "initial_state_dist")

# Dense serialization guard: S*U*S quickly explodes for grid models.
SAVE_ELEMENT_CAP = 5_000_000


def save_model(model: TabularPomg, path, element_cap: int = SAVE_ELEMENT_CAP) -> None:
    """Write the dense row-major JSON form of the model."""
    s, u = model.n_states, model.n_joint_actions
    elements = s * u * s + sum(s * u * y for y in model.obs_counts) \
        + model.n_agents * s * u + s * u + s
    if elements > element_cap:
        raise ParameterError(
            f"dense serialization needs {elements} numbers, above the cap "
            f"{element_cap}; this model is meant to stay in memory")
    doc = {
        "n_agents": model.n_agents,
        "states": list(model.states),
        "observations": [list(o) for o in model.observations],
        "actions": [list(a) for a in model.actions],
        "transition": model.transition_dense().tolist(),
        "observation_kernel": [model.obs_dense(i).tolist()
                               for i in range(model.n_agents)],
        "reward": model.reward.tolist(),
        "potential": model.potential.tolist(),
        "discount": model.discount,
        "initial_state_dist": model.initial_state_dist.tolist(),
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n",
                          encoding="utf-8")


def load_model(path) -> TabularPomg:
    """Load and fully validate a model JSON file.

    Raises ModelLoadError naming the offending field on any schema violation
    or non-stochastic row.
    """
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelLoadError(f"cannot read model file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ModelLoadError("model file must contain a JSON object")
    missing = [f for f in _MODEL_FIELDS if f not in doc]
    if missing:
        raise ModelLoadError(f"missing model fields: {', '.join(missing)}")
    unknown = [k for k in doc if k not in _MODEL_FIELDS]
    if unknown:
        raise ModelLoadError(f"unknown model fields: {', '.join(unknown)}")

    n = doc["n_agents"]
    if not isinstance(n, int) or n < 1:
        raise ModelLoadError("n_agents must be a positive integer")
    for fname in ("observations", "actions", "reward", "observation_kernel"):
        if len(doc[fname]) != n:
            raise ModelLoadError(f"{fname} must have one entry per agent "
                                 f"(got {len(doc[fname])}, n_agents={n})")

    states = doc["states"]
    s_count = len(states)
    action_counts = [len(a) for a in doc["actions"]]
    u_count = joint_action_count(action_counts)

    def _as_array(fname, value, shape):
        try:
            arr = np.asarray(value, dtype=float)
        except (TypeError, ValueError) as exc:
            raise ModelLoadError(f"field {fname} is not numeric: {exc}") from exc
        if arr.shape != shape:
            raise ModelLoadError(f"field {fname} has shape {arr.shape}, "
                                 f"expected {shape}")
        return arr

    trans = _as_array("transition", doc["transition"], (s_count, u_count, s_count))
    reward = _as_array("reward", doc["reward"], (n, s_count, u_count))
    potential = _as_array("potential", doc["potential"], (s_count, u_count))
    initial = _as_array("initial_state_dist", doc["initial_state_dist"], (s_count,))
    obs_tables = [
        _as_array(f"observation_kernel[{i}]", doc["observation_kernel"][i],
                  (s_count, u_count, len(doc["observations"][i])))
        for i in range(n)
    ]

    def _check_rows(fname, rows2d):
        if rows2d.min(initial=0.0) < -ROW_TOL:
            bad = int(np.argwhere(rows2d < -ROW_TOL)[0][0])
            raise ModelLoadError(f"field {fname} row {bad} has a negative entry")
        resid = np.abs(rows2d.sum(axis=-1) - 1.0)
        if resid.max() > ROW_TOL:
            bad = int(resid.argmax())
            raise ModelLoadError(
                f"field {fname} row {bad} sums to {rows2d[bad].sum()!r}, not 1")

    _check_rows("transition", trans.reshape(-1, s_count))
    _check_rows("initial_state_dist", initial[None, :])
    for i, table in enumerate(obs_tables):
        _check_rows(f"observation_kernel[{i}]",
                    table.reshape(-1, len(doc["observations"][i])))

    try:
        return make_pomg(states, doc["observations"], doc["actions"], trans,
                         obs_tables, reward, potential, doc["discount"], initial)
    except ParameterError as exc:
        raise ModelLoadError(str(exc)) from exc


def potential_residual(model: TabularPomg, spec, policy_a, policy_b, agent: int,
                       chain_cap: int | None = None) -> float:
    """|ΔJ_agent − ΔΦ| for a unilateral deviation, via the exact oracle.

    policy_a and policy_b must differ only in the given agent's table.
    """
    from . import oracle
    from .errors import ContractError

    if len(policy_a.tables) != len(policy_b.tables):
        raise ContractError("policies have different agent counts")
    for j, (ta, tb) in enumerate(zip(policy_a.tables, policy_b.tables)):
        if j == agent:
            continue
        if ta.probabilities().shape != tb.probabilities().shape or \
                np.max(np.abs(ta.probabilities() - tb.probabilities())) > 1e-12:
            raise ContractError(
                f"policies differ in agent {j}, expected only agent {agent}")

    space = oracle.enumerate_chain_space(model, spec, cap=chain_cap)
    out = []
    for pol in (policy_a, policy_b):
        chain = oracle.build_chain(model, spec, pol, space=space)
        values = oracle.solve_values(chain, "all")
        j_agents, phi = oracle.exact_objective(chain, values)
        out.append((j_agents[agent], phi))
    (ja, pa), (jb, pb) = out
    return abs((ja - jb) - (pa - pb))
