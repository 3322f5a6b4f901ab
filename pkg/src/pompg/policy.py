"""Tabular softmax policies over information points and the NPG update.

Parameters are raw logits theta[(w,l,y) flat index, action]; probabilities are
the row-wise softmax with max-subtraction. The natural-gradient step is the
closed multiplicative form

    pi'(u|h) = pi(u|h) * exp(eta * A(h,u) / (1-beta)) / g(h),
    g(h)     = sum_u pi(u|h) * exp(eta * A(h,u) / (1-beta)),

equivalently theta += eta * A / (1-beta); both forms are computed and
cross-checked on every step.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import internal_state as ist
from .errors import ContractError, ParameterError

_STAMPS = itertools.count(1)

FORM_AGREEMENT_TOL = 1e-10


def softmax_rows(theta: np.ndarray) -> np.ndarray:
    z = theta - theta.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass(eq=False)
class PolicyTable:
    """One agent's logit table; treat as immutable once constructed."""

    agent: int
    theta: np.ndarray                      # [n_points, n_actions]
    _probs: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.theta.setflags(write=False)

    @property
    def n_points(self) -> int:
        return self.theta.shape[0]

    @property
    def n_actions(self) -> int:
        return self.theta.shape[1]

    def probabilities(self) -> np.ndarray:
        if self._probs is None:
            p = softmax_rows(self.theta)
            p.setflags(write=False)
            self._probs = p
        return self._probs


@dataclass(eq=False)
class JointPolicy:
    tables: tuple[PolicyTable, ...]
    t: int = 0
    stamp: int = field(default_factory=lambda: next(_STAMPS))
    parent_stamp: int | None = None

    @property
    def n_agents(self) -> int:
        return len(self.tables)

    def replace_table(self, i: int, table: PolicyTable) -> "JointPolicy":
        tabs = list(self.tables)
        tabs[i] = table
        return JointPolicy(tables=tuple(tabs), t=self.t)


def init_policy(spec, model, mode: str = "uniform", tables=None) -> JointPolicy:
    """Initial joint policy: uniform (theta = 0) or explicit probability tables."""
    out = []
    for i in range(model.n_agents):
        n_pts = ist.info_point_count(spec, i)
        n_act = model.action_counts[i]
        if mode == "uniform":
            theta = np.zeros((n_pts, n_act))
        elif mode == "given-table":
            rows = np.asarray(tables[i], dtype=float)
            if rows.shape != (n_pts, n_act):
                raise ParameterError(
                    f"agent {i} table shape {rows.shape} != {(n_pts, n_act)}")
            if rows.min() <= 0.0:
                raise ParameterError(
                    f"agent {i} table has non-positive entries; softmax "
                    "policies are strictly positive")
            if np.abs(rows.sum(axis=1) - 1.0).max() > 1e-9:
                raise ParameterError(f"agent {i} table rows do not sum to 1")
            theta = np.log(rows)
        else:
            raise ParameterError(f"unknown init mode {mode!r}")
        out.append(PolicyTable(agent=i, theta=theta))
    return JointPolicy(tables=tuple(out))


def random_policy(spec, model, rng: np.random.Generator, scale: float = 0.5) -> JointPolicy:
    """Gaussian-logit initialization; breaks symmetric saddles in seeded runs."""
    tables = tuple(
        PolicyTable(agent=i, theta=scale * rng.standard_normal(
            (ist.info_point_count(spec, i), model.action_counts[i])))
        for i in range(model.n_agents)
    )
    return JointPolicy(tables=tables)


def action_probabilities(table: PolicyTable, point) -> np.ndarray:
    """Softmax row at an info point (index or InfoPoint)."""
    flat = point.flat if isinstance(point, ist.InfoPoint) else int(point)
    if not 0 <= flat < table.n_points:
        raise ContractError(f"info point {flat} out of range [0,{table.n_points})")
    return table.probabilities()[flat]


def _advantage_array(adv, policy_stamp: int):
    arr = getattr(adv, "a", adv)
    stamp = getattr(adv, "policy_stamp", None)
    if stamp is not None and stamp != policy_stamp:
        raise ContractError("advantage table was computed under a different policy")
    arr = np.asarray(arr, dtype=float)
    if not np.isfinite(arr).all():
        raise ContractError("advantage table contains non-finite entries")
    return arr


def npg_step(policy: JointPolicy, advantages, eta: float, beta: float):
    """One simultaneous natural-gradient step for all agents.

    Returns the updated JointPolicy and the per-agent normalizer tables
    g_i(h). Advantages may be raw arrays or objects with an ``a`` attribute
    (stamped tables are checked against the policy).
    """
    if eta <= 0.0:
        raise ParameterError(f"step size must be positive, got {eta}")
    scale = eta / (1.0 - beta)
    new_tables = []
    normalizers = []
    for i, table in enumerate(policy.tables):
        a = _advantage_array(advantages[i], policy.stamp)
        if a.shape != table.theta.shape:
            raise ContractError(
                f"agent {i} advantage shape {a.shape} != {table.theta.shape}")
        theta_next = table.theta + scale * a
        p = table.probabilities()
        # g in a log-safe way: g = exp(m) * sum p*exp(scale*a - m)
        m = (scale * a).max(axis=1, keepdims=True)
        inner = (p * np.exp(scale * a - m)).sum(axis=1, keepdims=True)
        g = (np.exp(m) * inner).ravel()
        p_mult = p * np.exp(scale * a - m) / inner
        p_incr = softmax_rows(theta_next)
        gap = np.abs(p_mult - p_incr).sum(axis=1).max()
        if gap > FORM_AGREEMENT_TOL:
            raise ContractError(
                f"multiplicative and logit-increment updates disagree "
                f"(agent {i}, max row L1 {gap:.3e})")
        new_tables.append(PolicyTable(agent=i, theta=theta_next))
        normalizers.append(g)
    out = JointPolicy(tables=tuple(new_tables), t=policy.t + 1)
    out.parent_stamp = policy.stamp
    return out, normalizers


def policy_kl(p: PolicyTable, q: PolicyTable, point) -> float:
    """KL(p_row || q_row) at one info point; softmax rows are never zero."""
    if p.agent != q.agent or p.theta.shape != q.theta.shape:
        raise ContractError("KL requires tables for the same agent and spec")
    flat = point.flat if isinstance(point, ist.InfoPoint) else int(point)
    pr = p.probabilities()[flat]
    qr = q.probabilities()[flat]
    return float(np.sum(pr * (np.log(pr) - np.log(qr))))


def kl_rows(p: PolicyTable, q: PolicyTable) -> np.ndarray:
    """Row-wise KL(p || q) for all info points."""
    if p.theta.shape != q.theta.shape:
        raise ContractError("KL requires tables of equal shape")
    pr = p.probabilities()
    qr = q.probabilities()
    return np.sum(pr * (np.log(pr) - np.log(qr)), axis=1)


# -- serialization -----------------------------------------------------------

def policy_to_json(policy: JointPolicy, spec, model) -> str:
    doc = {
        "t": policy.t,
        "spec": {"type": "window", "t_w": spec.window_length}
        if spec.is_window else {"type": "table"},
        "agents": [
            {
                "agent": tab.agent,
                "info_point_labels": [
                    ist.info_label(spec, model, p)
                    for p in ist.enumerate_info_points(spec, tab.agent)
                ],
                "theta": tab.theta.tolist(),
            }
            for tab in policy.tables
        ],
    }
    return json.dumps(doc, separators=(",", ":")) + "\n"


def save_policy(policy: JointPolicy, spec, model, path) -> None:
    Path(path).write_text(policy_to_json(policy, spec, model), encoding="utf-8")


def load_policy(path, spec, model) -> JointPolicy:
    """Restore a policy saved by save_policy; logits are bit-exact."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    stored = doc.get("spec", {})
    if spec.is_window and stored.get("t_w") != spec.window_length:
        raise ParameterError(
            f"policy file was trained with t_w={stored.get('t_w')}, "
            f"config has t_w={spec.window_length}")
    tables = []
    for i, entry in enumerate(doc["agents"]):
        theta = np.asarray(entry["theta"], dtype=float)
        expect = (ist.info_point_count(spec, i), model.action_counts[i])
        if theta.shape != expect:
            raise ParameterError(
                f"agent {i} theta shape {theta.shape} != {expect} for this spec")
        tables.append(PolicyTable(agent=i, theta=theta))
    return JointPolicy(tables=tuple(tables), t=int(doc.get("t", 0)))
