"""Finite internal-state compressors.

The shared internal state is a window of every agent's last ``t_w`` broadcast
observations; each agent's local state is a window of its own last ``t_w``
(observation, action) pairs. A dedicated padding symbol fills pre-history
slots, so the state sets are well defined from step 0:

    |shared|   = prod_i (|Y_i| + 1)^{t_w}
    |local_i|  = (|Y_i| * |U_i| + 1)^{t_w}

States are plain integers in a mixed-radix encoding (agent order, then slots
oldest-first); updates shift the oldest slot out and the newest in. Custom
compressors can be supplied as explicit transition tables instead.

Each agent broadcasts its current observation (message alphabet Z_i = Y_i).
The shared update accepts the joint action to keep the general compressor
signature, but the built-in window map ignores it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, SizeError

DEFAULT_INFO_CAP = 5_000_000


@dataclass(frozen=True)
class InternalStateSpec:
    n_agents: int
    obs_counts: tuple[int, ...]
    act_counts: tuple[int, ...]
    window_length: int | None           # None for table-backed custom specs
    n_shared: int
    n_local: tuple[int, ...]
    shared_table: np.ndarray | None = None     # [n_shared, prod Y, prod U]
    local_tables: tuple[np.ndarray, ...] | None = None  # per agent [n_l, Y, U, Z]

    @property
    def is_window(self) -> bool:
        return self.window_length is not None


def make_window_spec(model, t_w: int, cap: int = DEFAULT_INFO_CAP) -> InternalStateSpec:
    """Window compressor spec for a model; errors if the info spaces blow up."""
    if t_w < 0:
        raise ContractError(f"window length must be >= 0, got {t_w}")
    obs_counts = model.obs_counts
    act_counts = model.action_counts
    n_shared = 1
    for y in obs_counts:
        n_shared *= (y + 1) ** t_w
    n_local = tuple((y * a + 1) ** t_w for y, a in zip(obs_counts, act_counts))
    total_points = sum(n_shared * nl * y for nl, y in zip(n_local, obs_counts))
    if total_points > cap:
        raise SizeError(
            f"window spec with t_w={t_w} enumerates {total_points} info points, "
            f"above the cap {cap}", required=total_points, cap=cap)
    return InternalStateSpec(
        n_agents=model.n_agents, obs_counts=obs_counts, act_counts=act_counts,
        window_length=t_w, n_shared=n_shared, n_local=n_local)


def make_table_spec(model, shared_table, local_tables) -> InternalStateSpec:
    """Custom compressor from explicit update tables (non-window plug-in)."""
    shared_table = np.asarray(shared_table, dtype=np.int64)
    local_tables = tuple(np.asarray(t, dtype=np.int64) for t in local_tables)
    n_shared = shared_table.shape[0]
    n_local = tuple(t.shape[0] for t in local_tables)
    if shared_table.max(initial=0) >= n_shared or shared_table.min(initial=0) < 0:
        raise ContractError("shared update table maps outside its state set")
    for i, t in enumerate(local_tables):
        if t.max(initial=0) >= n_local[i] or t.min(initial=0) < 0:
            raise ContractError(f"local update table {i} maps outside its state set")
    return InternalStateSpec(
        n_agents=model.n_agents, obs_counts=model.obs_counts,
        act_counts=model.action_counts, window_length=None,
        n_shared=n_shared, n_local=n_local,
        shared_table=shared_table, local_tables=local_tables)


# -- window arithmetic -------------------------------------------------------
#
# Per-agent shared window: t_w digits in base B_i = Y_i + 1 (digit Y_i = pad),
# oldest slot most significant; all-pad encodes as B_i^{t_w} - 1. The joint
# shared state stacks the per-agent window indices in agent order. Local
# windows use base C_i = Y_i * U_i + 1 with digit y*U_i + u.

def _shared_bases(spec):
    t = spec.window_length
    return [(y + 1) ** t for y in spec.obs_counts]


def initial_shared(spec: InternalStateSpec) -> int:
    if not spec.is_window:
        return 0
    return spec.n_shared - 1        # every digit = pad


def initial_local(spec: InternalStateSpec, i: int) -> int:
    if not spec.is_window:
        return 0
    return spec.n_local[i] - 1


def update_shared(spec: InternalStateSpec, w: int, z, u) -> int:
    """Next shared state from joint message z (= joint observation) and action."""
    if not 0 <= w < spec.n_shared:
        raise ContractError(f"shared state {w} out of range [0,{spec.n_shared})")
    z = tuple(z)
    u = tuple(u)
    for i, (zi, ui) in enumerate(zip(z, u)):
        if not 0 <= zi < spec.obs_counts[i]:
            raise ContractError(f"message {zi} out of range for agent {i}")
        if not 0 <= ui < spec.act_counts[i]:
            raise ContractError(f"action {ui} out of range for agent {i}")
    if not spec.is_window:
        from .model import joint_action_index
        zj = 0
        for y, zi in zip(spec.obs_counts, z):
            zj = zj * y + zi
        return int(spec.shared_table[w, zj, joint_action_index(spec.act_counts, u)])
    t = spec.window_length
    if t == 0:
        return 0
    sizes = _shared_bases(spec)
    # decode agent indices (agent 0 most significant)
    idx = []
    rem = w
    for size in reversed(sizes):
        rem, part = divmod(rem, size)
        idx.append(part)
    idx.reverse()
    out = 0
    for i, size in enumerate(sizes):
        base = spec.obs_counts[i] + 1
        shifted = (idx[i] % (size // base)) * base + z[i]
        out = out * size + shifted
    return out


def update_local(spec: InternalStateSpec, i: int, l: int, y: int, u: int, z: int) -> int:
    """Next local state of agent i from its (observation, action) and message."""
    if not 0 <= l < spec.n_local[i]:
        raise ContractError(f"local state {l} out of range for agent {i}")
    if not 0 <= y < spec.obs_counts[i]:
        raise ContractError(f"observation {y} out of range for agent {i}")
    if not 0 <= u < spec.act_counts[i]:
        raise ContractError(f"action {u} out of range for agent {i}")
    if not spec.is_window:
        return int(spec.local_tables[i][l, y, u, z])
    t = spec.window_length
    if t == 0:
        return 0
    base = spec.obs_counts[i] * spec.act_counts[i] + 1
    digit = y * spec.act_counts[i] + u
    return (l % (base ** (t - 1))) * base + digit


def update_shared_vec(spec, w: np.ndarray, z_per_agent, u_per_agent) -> np.ndarray:
    """Vectorized update_shared for integer arrays (window specs only)."""
    t = spec.window_length
    if t == 0:
        return np.zeros_like(w)
    sizes = _shared_bases(spec)
    parts = []
    rem = w
    for size in reversed(sizes):
        rem, part = np.divmod(rem, size)
        parts.append(part)
    parts.reverse()
    out = np.zeros_like(w)
    for i, size in enumerate(sizes):
        base = spec.obs_counts[i] + 1
        shifted = (parts[i] % (size // base)) * base + z_per_agent[i]
        out = out * size + shifted
    return out


def update_local_vec(spec, i: int, l: np.ndarray, y: np.ndarray, u: np.ndarray) -> np.ndarray:
    t = spec.window_length
    if t == 0:
        return np.zeros_like(l)
    base = spec.obs_counts[i] * spec.act_counts[i] + 1
    return (l % (base ** (t - 1))) * base + y * spec.act_counts[i] + u


# -- information points ------------------------------------------------------

@dataclass(frozen=True)
class InfoPoint:
    """Agent i's policy index: (shared state, local state, current observation)."""

    agent: int
    w: int
    l: int
    y: int
    flat: int


def info_point_count(spec: InternalStateSpec, i: int) -> int:
    return spec.n_shared * spec.n_local[i] * spec.obs_counts[i]


def info_flat(spec: InternalStateSpec, i: int, w: int, l: int, y: int) -> int:
    return (w * spec.n_local[i] + l) * spec.obs_counts[i] + y


def info_unflat(spec: InternalStateSpec, i: int, flat: int) -> tuple[int, int, int]:
    rest, y = divmod(flat, spec.obs_counts[i])
    w, l = divmod(rest, spec.n_local[i])
    return w, l, y


def info_point(spec: InternalStateSpec, i: int, flat: int) -> InfoPoint:
    w, l, y = info_unflat(spec, i, flat)
    return InfoPoint(agent=i, w=w, l=l, y=y, flat=flat)


def enumerate_info_points(spec: InternalStateSpec, i: int) -> list[InfoPoint]:
    """All info points of agent i, lexicographic in (w, l, y)."""
    out = []
    flat = 0
    for w in range(spec.n_shared):
        for l in range(spec.n_local[i]):
            for y in range(spec.obs_counts[i]):
                out.append(InfoPoint(agent=i, w=w, l=l, y=y, flat=flat))
                flat += 1
    return out


# -- labels (diagnostic dumps, policy files) ---------------------------------

def _shared_digits(spec, w, i):
    sizes = _shared_bases(spec)
    parts = []
    rem = w
    for size in reversed(sizes):
        rem, part = divmod(rem, size)
        parts.append(part)
    parts.reverse()
    t = spec.window_length
    base = spec.obs_counts[i] + 1
    digits = []
    rem = parts[i]
    for _ in range(t):
        rem, d = divmod(rem, base)
        digits.append(d)
    digits.reverse()
    return digits


def shared_label(spec, model, w: int) -> str:
    if not spec.is_window:
        return f"w{w}"
    if spec.window_length == 0:
        return "w()"
    segs = []
    for i in range(spec.n_agents):
        names = [
            "~" if d == spec.obs_counts[i] else model.observations[i][d]
            for d in _shared_digits(spec, w, i)
        ]
        segs.append(",".join(names))
    return "w(" + ";".join(segs) + ")"


def local_label(spec, model, i: int, l: int) -> str:
    if not spec.is_window:
        return f"l{l}"
    t = spec.window_length
    if t == 0:
        return "l()"
    base = spec.obs_counts[i] * spec.act_counts[i] + 1
    digits = []
    rem = l
    for _ in range(t):
        rem, d = divmod(rem, base)
        digits.append(d)
    digits.reverse()
    names = []
    for d in digits:
        if d == base - 1:
            names.append("~")
        else:
            y, u = divmod(d, spec.act_counts[i])
            names.append(f"{model.observations[i][y]}/{model.actions[i][u]}")
    return "l(" + ",".join(names) + ")"


def info_label(spec, model, point: InfoPoint) -> str:
    return (f"{shared_label(spec, model, point.w)}|"
            f"{local_label(spec, model, point.agent, point.l)}|"
            f"y={model.observations[point.agent][point.y]}")
