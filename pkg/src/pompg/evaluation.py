"""NE-gap measurement, convergence-bound constants, and lemma verification.

Best responses are taken over the finite-state-controller class (the same
info-point policies the trainer optimizes), either by exhaustive enumeration
of deterministic controllers or by single-agent NPG with the other agents
frozen. All lemma checks return residuals that must be >= -1e-8 when the
corresponding inequality holds; sweeps treat any violation as a failure.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import beliefs as bel
from . import internal_state as ist
from . import oracle
from .errors import ContractError, SizeError
from .model import TabularPomg
from .policy import JointPolicy, PolicyTable, kl_rows

RESIDUAL_FLOOR = -1e-8
TIE_EPS = 1e-9
DET_LOGIT = 20.0         # logit offset approximating a deterministic row


@dataclass(frozen=True)
class BestResponse:
    agent: int
    table: PolicyTable
    value: float
    method: str
    iterations: int


@dataclass(frozen=True)
class GapReport:
    gaps: tuple[float, ...]
    ne_gap: float
    method: str
    base_values: tuple[float, ...]
    br_values: tuple[float, ...]
    clamped: bool


def _agent_value(space, agent_probs, i: int) -> float:
    """Exact J_i for explicit per-agent action-probability arrays."""
    weights = oracle.joint_weights(space, agent_probs)
    p_pi = None
    for u, kern in enumerate(space.kernels):
        term = kern.multiply(weights[:, u][:, None]).tocsr()
        p_pi = term if p_pi is None else p_pi + term
    r_pi = np.einsum("nu,nu->n", space.reward_u[i], weights)
    beta = space.model.discount
    n = space.n_states
    import scipy.sparse as sp
    import scipy.sparse.linalg as spla
    a = sp.identity(n, format="csc") - beta * p_pi
    if n <= oracle.DIRECT_SOLVE_MAX:
        v = spla.splu(a).solve(r_pi)
    else:
        v = np.zeros(n)
        for _ in range(int(math.log(1e-12) / math.log(beta)) + 50):
            nxt = r_pi + beta * p_pi.dot(v)
            if np.abs(nxt - v).max() < 1e-12:
                v = nxt
                break
            v = nxt
    return float(space.initial @ v)


def best_response_fsc(model: TabularPomg, spec, policy, i: int,
                      method: str = "auto", budget: int = 4096,
                      space=None, eta: float | None = None,
                      tol: float = 1e-4) -> BestResponse:
    """Best response of agent i against the others' frozen policies.

    exhaustive: evaluates every deterministic controller for agent i exactly
    (only when |U_i|^{points} <= budget). npg-br: single-agent NPG until the
    max row advantage drops below tol or the iteration budget runs out.
    """
    if space is None:
        space = oracle.enumerate_chain_space(model, spec)
    n_points = ist.info_point_count(spec, i)
    n_act = model.action_counts[i]
    det_count = n_act ** n_points

    if method == "auto":
        method = "exhaustive" if det_count <= budget else "npg-br"

    if method == "exhaustive":
        if det_count > budget:
            raise SizeError(
                f"{det_count} deterministic controllers exceed the budget "
                f"{budget}", required=det_count, cap=budget)
        frozen = [policy.tables[j].probabilities()[space.info_flat[j]]
                  for j in range(model.n_agents)]
        best_val = -math.inf
        best_assign = None
        for assign in itertools.product(range(n_act), repeat=n_points):
            acts = np.asarray(assign, dtype=np.int64)[space.info_flat[i]]
            probs_i = np.zeros((space.n_states, n_act))
            probs_i[np.arange(space.n_states), acts] = 1.0
            agent_probs = list(frozen)
            agent_probs[i] = probs_i
            val = _agent_value(space, agent_probs, i)
            if val > best_val:
                best_val = val
                best_assign = assign
        theta = np.full((n_points, n_act), -DET_LOGIT)
        theta[np.arange(n_points), best_assign] = DET_LOGIT
        return BestResponse(agent=i, table=PolicyTable(agent=i, theta=theta),
                            value=best_val, method="exhaustive",
                            iterations=det_count)

    if method != "npg-br":
        raise ContractError(f"unknown best-response method {method!r}")
    beta = model.discount
    if eta is None:
        scale = model.phi_max if model.phi_max > 0 else \
            max(model.phi_max - model.phi_min, 1.0)
        eta = (1.0 - beta) ** 2 / (2.0 * scale)
    current = JointPolicy(tables=tuple(policy.tables), t=0)
    iters = 0
    for iters in range(1, budget + 1):
        chain = oracle.build_chain(model, spec, current, space=space)
        values = oracle.solve_values(chain, ("agent", i))
        occ = oracle.compute_occupancy(chain)
        adv = oracle.marginal_advantage(chain, values, occ, i)
        max_adv = float(adv.a[adv.visited].max()) if adv.visited.any() else 0.0
        if max_adv < tol:
            break
        theta = current.tables[i].theta + eta / (1 - beta) * adv.a
        current = current.replace_table(i, PolicyTable(agent=i, theta=theta))
    chain = oracle.build_chain(model, spec, current, space=space)
    values = oracle.solve_values(chain, ("agent", i))
    val = float(space.initial @ values.v_agent[i])
    return BestResponse(agent=i, table=current.tables[i], value=val,
                        method="npg-br", iterations=iters)


def ne_gap(model: TabularPomg, spec, policy, method: str = "auto",
           budget: int = 4096, space=None, br_tol: float = 1e-4) -> GapReport:
    """Per-agent best-response gaps and their max; tiny negatives clamp to 0."""
    if space is None:
        space = oracle.enumerate_chain_space(model, spec)
    chain = oracle.build_chain(model, spec, policy, space=space)
    values = oracle.solve_values(chain, "agent-reward")
    j_agents, _ = oracle.exact_objective(
        chain, oracle.solve_values(chain, "all"))
    gaps = []
    br_vals = []
    clamped = False
    used_method = None
    for i in range(model.n_agents):
        br = best_response_fsc(model, spec, policy, i, method=method,
                               budget=budget, space=space, tol=br_tol)
        used_method = br.method if used_method is None else used_method
        gap = br.value - j_agents[i]
        if gap < 0.0:
            if gap < -1e-6:
                raise ContractError(
                    f"best response for agent {i} lost to the base policy by "
                    f"{-gap:.3e}; solver or search failure")
            clamped = True
            gap = 0.0
        gaps.append(gap)
        br_vals.append(br.value)
    return GapReport(gaps=tuple(gaps), ne_gap=max(gaps), method=used_method,
                     base_values=tuple(j_agents), br_values=tuple(br_vals),
                     clamped=clamped)


def compute_a(policy, q_tables) -> float:
    """min over agents and visited points of the policy mass on argmax-Q actions.

    Ties within 1e-9 of the row max are included in the argmax set.
    """
    a_min = 1.0
    for i, tab in enumerate(q_tables):
        q = getattr(tab, "q", tab)
        visited = getattr(tab, "visited", np.ones(q.shape[0], dtype=bool))
        if not visited.any():
            continue
        rows = q[visited]
        pi_rows = policy.tables[i].probabilities()[visited]
        top = rows.max(axis=1, keepdims=True)
        tied = rows >= top - TIE_EPS
        mass = (pi_rows * tied).sum(axis=1)
        a_min = min(a_min, float(mass.min()))
    return a_min


def compute_M(occupancies) -> float:
    """Running max of 1/occupancy over positive info points and policies seen.

    A lower bound on the sup over all policies in the theorem constant.
    """
    m_hat = 1.0
    for occ in occupancies:
        for marg in occ.marginals:
            pos = marg[marg > 0.0]
            if pos.size:
                m_hat = max(m_hat, float(1.0 / pos.min()))
    return m_hat


# -- lemma checks -------------------------------------------------------------

@dataclass(frozen=True)
class Lemma1Report:
    residual: float          # min over agents of RHS - LHS
    per_agent: tuple[float, ...]
    lhs: float               # Phi(pi') - Phi(pi)
    advantage_terms: tuple[float, ...]
    tv_term: float
    tv_expectation: float


def _joint_marginal_tables(space, chain_prime, values_base, occ_prime, i):
    """A_phi^pi(h_i, u) and the (d^{pi'} (x) pi')-measure over (h_i, u)."""
    n_points = ist.info_point_count(space.spec, i)
    u_count = len(space.kernels)
    d = occ_prime.dist
    flat = space.info_flat[i]
    d_i = np.zeros(n_points)
    np.add.at(d_i, flat, d)

    q_cond = np.zeros((n_points, u_count))
    np.add.at(q_cond, flat, d[:, None] * values_base.q_potential)
    v_cond = np.zeros(n_points)
    np.add.at(v_cond, flat, d * values_base.v_potential)
    visited = d_i > 0.0
    q_cond[visited] /= d_i[visited, None]
    v_cond[visited] /= d_i[visited]
    adv = q_cond - v_cond[:, None]
    adv[~visited] = 0.0

    measure = np.zeros((n_points, u_count))
    np.add.at(measure, flat, d[:, None] * chain_prime.weights)
    return adv, measure


def lemma1_check(model: TabularPomg, spec, policy_prime, policy_base,
                 horizon: int, space=None, beta: float | None = None) -> Lemma1Report:
    """Performance-difference bound: RHS - LHS must be >= -1e-8.

    LHS = Phi(pi') - Phi(pi). RHS = advantage term under the deviating
    policy's occupancy plus the belief-compression TV term (truncated at the
    belief horizon, which only under-counts the nonnegative TV term).
    """
    if space is None:
        space = oracle.enumerate_chain_space(model, spec)
    beta = model.discount if beta is None else beta
    chain_p = oracle.build_chain(model, spec, policy_prime, space=space)
    chain_b = oracle.build_chain(model, spec, policy_base, space=space)
    values_p = oracle.solve_values(chain_p, "potential", beta=beta)
    values_b = oracle.solve_values(chain_b, "potential", beta=beta)
    occ_p = oracle.compute_occupancy(chain_p, beta=beta)
    _, phi_p = oracle.exact_objective(chain_p, values_p)
    _, phi_b = oracle.exact_objective(chain_b, values_b)
    lhs = phi_p - phi_b

    table = bel.exact_beliefs(model, spec, horizon, policy_prime, beta=beta)
    tv_exp = table.discounted_tv_expectation()
    tv_term = 2.0 * model.phi_max / (1.0 - beta) * tv_exp

    adv_terms = []
    residuals = []
    for i in range(model.n_agents):
        adv, measure = _joint_marginal_tables(space, chain_p, values_b, occ_p, i)
        term = float((measure * adv).sum()) / (1.0 - beta)
        adv_terms.append(term)
        residuals.append(term + tv_term - lhs)
    return Lemma1Report(
        residual=min(residuals), per_agent=tuple(residuals), lhs=lhs,
        advantage_terms=tuple(adv_terms), tv_term=tv_term, tv_expectation=tv_exp)


@dataclass(frozen=True)
class Lemma2Report:
    residual: float
    gap: float
    max_advantage: float
    d_b: float
    rhs: float


def lemma2_check(model: TabularPomg, spec, policy, horizon: int,
                 method: str = "auto", budget: int = 4096,
                 space=None) -> Lemma2Report:
    """NE-gap <= max advantage/(1-beta) + 2 d_b phi_max/(1-beta)."""
    if space is None:
        space = oracle.enumerate_chain_space(model, spec)
    beta = model.discount
    chain = oracle.build_chain(model, spec, policy, space=space)
    values = oracle.solve_values(chain, "agent-reward")
    occ = oracle.compute_occupancy(chain)
    max_adv = 0.0
    for i in range(model.n_agents):
        adv = oracle.marginal_advantage(chain, values, occ, i)
        if adv.visited.any():
            max_adv = max(max_adv, float(adv.a[adv.visited].max()))
    gap_report = ne_gap(model, spec, policy, method=method, budget=budget,
                        space=space)
    d_b = bel.distance_db(
        bel.exact_beliefs(model, spec, horizon, policy)).d_b
    rhs = max_adv / (1.0 - beta) + 2.0 * d_b * model.phi_max / (1.0 - beta)
    return Lemma2Report(residual=rhs - gap_report.ne_gap, gap=gap_report.ne_gap,
                        max_advantage=max_adv, d_b=d_b, rhs=rhs)


@dataclass(frozen=True)
class Lemma3Terms:
    advantage_expectation: float   # E over d^{t+1} x pi^{t+1} of A_phi^{pi^t}
    kl_sum: float                  # sum_i sum_h d_i^{t+1}(h) KL_i(h)
    kl_sum_literal: float | None   # alternate index reading, when well-typed
    log_g_sum: float               # sum_i sum_h d_i^{t+1}(h) log g_i(h)
    occ_next: object
    advantages: list
    normalizers: list


def lemma3_terms(model: TabularPomg, spec, policy_t, policy_t1, normalizers,
                 space=None) -> Lemma3Terms:
    """The three expectations in the one-step improvement inequality.

    The advantage expectation is taken at the augmented-state level, for which
    the product-policy telescoping identity behind the lemma is exact.
    """
    if space is None:
        space = oracle.enumerate_chain_space(model, spec)
    chain_t = oracle.build_chain(model, spec, policy_t, space=space)
    values_t = oracle.solve_values(chain_t, "potential")
    chain_t1 = oracle.build_chain(model, spec, policy_t1, space=space)
    occ_t1 = oracle.compute_occupancy(chain_t1)

    a_joint = values_t.q_potential - values_t.v_potential[:, None]
    adv_exp = float(np.einsum("n,nu,nu->", occ_t1.dist, chain_t1.weights, a_joint))

    kl_sum = 0.0
    log_g_sum = 0.0
    for i in range(model.n_agents):
        kl_i = kl_rows(policy_t1.tables[i], policy_t.tables[i])
        kl_sum += float(occ_t1.marginals[i] @ kl_i)
        log_g_sum += float(occ_t1.marginals[i] @ np.log(normalizers[i]))

    kl_literal = None
    sizes = {t.theta.shape for t in policy_t.tables}
    if len(sizes) == 1:
        kl_literal = 0.0
        kls = [kl_rows(policy_t1.tables[j], policy_t.tables[j])
               for j in range(model.n_agents)]
        for i in range(model.n_agents):
            for j in range(model.n_agents):
                kl_literal += float(occ_t1.marginals[i] @ kls[j])
    return Lemma3Terms(advantage_expectation=adv_exp, kl_sum=kl_sum,
                       kl_sum_literal=kl_literal, log_g_sum=log_g_sum,
                       occ_next=occ_t1, advantages=None, normalizers=normalizers)


def lemma3_check(model: TabularPomg, policy_t, policy_t1,
                 advantage_expectation: float, kls: float, normalizers: float,
                 eta: float) -> float:
    """Residual of: E[A_phi]/(1-beta) >= kappa * KLs + log-g sum / eta."""
    if policy_t1.parent_stamp != policy_t.stamp:
        raise ContractError("lemma 3 requires consecutive NPG iterates")
    beta = model.discount
    kappa = 1.0 / eta - 2.0 * model.n_agents * model.phi_max / (1.0 - beta) ** 2
    lhs = advantage_expectation / (1.0 - beta)
    rhs = kappa * kls + normalizers / eta
    return lhs - rhs


@dataclass(frozen=True)
class Lemma4Report:
    residual: float
    lhs: float
    rhs: float
    pointwise_min: float
    pointwise_skipped: int


def lemma4_check(model: TabularPomg, policy_t, advantages, normalizers,
                 occ_next, eta: float, beta: float, a: float, m_const: float,
                 gap: float, d_b: float) -> Lemma4Report:
    """Normalizer lower bound: sum d^{t+1} log g >= (a eta^2 / 3M) (gap - slack)^2.

    Also verifies the pointwise log g(h) >= (a/3)(eta maxA/(1-beta))^2 bound on
    rows where the Taylor step's lambda <= 1/2 premise holds (always true at
    the theorem step size; rows violating it are counted, not checked).
    """
    if eta > (1.0 - beta) ** 2 + 1e-15:
        raise ContractError(
            f"lemma 4 requires eta <= (1-beta)^2, got eta={eta}")
    lhs = 0.0
    pointwise_min = math.inf
    skipped = 0
    for i, adv in enumerate(advantages):
        g = normalizers[i]
        lhs += float(occ_next.marginals[i] @ np.log(g))
        visited = adv.visited
        if not visited.any():
            continue
        max_a = adv.a[visited].max(axis=1)
        lam = 0.5 * a * (eta * max_a / (1.0 - beta)) ** 2
        ok = lam <= 0.5
        skipped += int((~ok).sum())
        if ok.any():
            bound = (a / 3.0) * (eta * max_a[ok] / (1.0 - beta)) ** 2
            pointwise_min = min(
                pointwise_min,
                float((np.log(g[visited][ok]) - bound).min()))
    slack = max(gap - 2.0 * d_b * model.phi_max / (1.0 - beta), 0.0)
    rhs = a * eta ** 2 / (3.0 * m_const) * slack ** 2
    return Lemma4Report(residual=lhs - rhs, lhs=lhs, rhs=rhs,
                        pointwise_min=pointwise_min if pointwise_min < math.inf
                        else 0.0,
                        pointwise_skipped=skipped)


@dataclass(frozen=True)
class BoundReport:
    lhs: float               # measured (1/T) sum NE-gap
    rhs: float               # explicit finite-T right-hand side
    holds: bool
    a: float
    m_hat: float
    d_b: float
    eps_fsc: float
    eta: float
    iterations: int


def theorem_bound_check(records, model: TabularPomg,
                        eta: float | None = None) -> BoundReport:
    """Explicit-constant convergence bound vs the measured average NE-gap.

    Uses the minimum logged a, the running-max occupancy surrogate for M (a
    lower bound of the sup in the constant), and the maximum logged d_b.
    """
    if not records:
        raise ContractError("no training records")
    missing = [r.t for r in records if r.ne_gap is None]
    if missing:
        raise ContractError(
            f"NE-gap missing at iterations {missing[:5]}; the bound check "
            "needs it at every counted iteration")
    beta = model.discount
    n = model.n_agents
    phi = model.phi_max
    if eta is None:
        eta = (1.0 - beta) ** 2 / (2.0 * n * phi)
    t_count = len(records)
    mean_gap = float(np.mean([r.ne_gap for r in records]))
    a_vals = [r.a for r in records if r.a is not None]
    if not a_vals:
        raise ContractError("records carry no a values")
    a = max(min(a_vals), 1e-12)
    occ_vals = [r.min_occupancy for r in records if r.min_occupancy is not None]
    if not occ_vals:
        raise ContractError("records carry no occupancy values")
    m_hat = 1.0 / min(occ_vals)
    db_vals = [r.d_b for r in records if r.d_b is not None]
    if not db_vals:
        raise ContractError("records carry no d_b values")
    d_b = max(db_vals)

    rhs_sq = 12.0 * m_hat * n * phi ** 2 / (a * (1 - beta) ** 3 * t_count) \
        + (8.0 * phi ** 2 / (1 - beta) ** 2) \
        * (d_b ** 2 + m_hat * n * d_b / (a * (1 - beta)))
    rhs = math.sqrt(rhs_sq)
    eps_fsc = (2.0 * math.sqrt(2.0) * phi / (1 - beta)) \
        * math.sqrt(d_b ** 2 + 3.0 * m_hat * n * d_b / (a * (1 - beta)))
    return BoundReport(lhs=mean_gap, rhs=rhs, holds=mean_gap <= rhs, a=a,
                       m_hat=m_hat, d_b=d_b, eps_fsc=eps_fsc, eta=eta,
                       iterations=t_count)


def fisher_consistency_check(model: TabularPomg, spec, policy, i: int,
                             eta: float, space=None) -> float:
    """Max row-L1 gap between the pseudo-inverse update and the closed form.

    Builds the Fisher information matrix of agent i's softmax table under
    d_{xi_i} (x) pi_i explicitly, applies theta + eta F^+ grad J, and compares
    the induced probabilities with the multiplicative update row by row
    (positive-occupancy rows only; parameter differences in the softmax null
    space are invisible here by construction).
    """
    if space is None:
        space = oracle.enumerate_chain_space(model, spec)
    n_points = ist.info_point_count(spec, i)
    n_act = model.action_counts[i]
    dim = n_points * n_act
    if dim > 200:
        raise SizeError(f"Fisher check capped at 200 parameters, got {dim}",
                        required=dim, cap=200)
    beta = model.discount
    chain = oracle.build_chain(model, spec, policy, space=space)
    values = oracle.solve_values(chain, ("agent", i))
    occ = oracle.compute_occupancy(chain)
    adv = oracle.marginal_advantage(chain, values, occ, i)
    d_i = occ.marginals[i]
    pi_rows = policy.tables[i].probabilities()

    fisher = np.zeros((dim, dim))
    grad = np.zeros(dim)
    for h in range(n_points):
        sl = slice(h * n_act, (h + 1) * n_act)
        p = pi_rows[h]
        fisher[sl, sl] = d_i[h] * (np.diag(p) - np.outer(p, p))
        grad[sl] = d_i[h] * p * adv.a[h] / (1.0 - beta)
    theta_nat = policy.tables[i].theta.ravel() + eta * np.linalg.pinv(fisher) @ grad
    probs_nat = PolicyTable(agent=i, theta=theta_nat.reshape(n_points, n_act)
                            ).probabilities()
    theta_closed = policy.tables[i].theta + eta / (1.0 - beta) * adv.a
    probs_closed = PolicyTable(agent=i, theta=theta_closed).probabilities()
    rows = d_i > 0.0
    if not rows.any():
        return 0.0
    return float(np.abs(probs_nat[rows] - probs_closed[rows]).sum(axis=1).max())
