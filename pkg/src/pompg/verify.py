"""Randomized lemma sweeps and the full verification report.

These drivers are shared by the CLI `verify` command and the acceptance
suite: they draw seeded random policies, run the numbered inequality checks,
and aggregate minima. A residual below -1e-8 anywhere is a failure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import beliefs as bel
from . import evaluation as ev
from . import oracle
from .errors import SizeError
from .model import TabularPomg
from .policy import npg_step, random_policy
from .training import _effective_step_size

RESIDUAL_FLOOR = -1e-8


def _rng(seed, k):
    return np.random.default_rng(np.random.SeedSequence([seed, k]))


def lemma1_sweep(model: TabularPomg, spec, n_instances: int, horizon: int,
                 seed: int, space=None, scale: float = 1.0):
    """Performance-difference bound residuals over random policy pairs."""
    if space is None:
        space = oracle.enumerate_chain_space(model, spec)
    out = []
    for k in range(n_instances):
        rng = _rng(seed, k)
        pol_prime = random_policy(spec, model, rng, scale=scale)
        pol_base = random_policy(spec, model, rng, scale=scale)
        out.append(ev.lemma1_check(model, spec, pol_prime, pol_base, horizon,
                                   space=space))
    return out


def lemma2_sweep(model: TabularPomg, spec, n_instances: int, horizon: int,
                 seed: int, space=None, scale: float = 1.0,
                 method: str = "auto", budget: int = 4096):
    """NE-gap bound residuals over random policies."""
    if space is None:
        space = oracle.enumerate_chain_space(model, spec)
    out = []
    for k in range(n_instances):
        rng = _rng(seed, k)
        policy = random_policy(spec, model, rng, scale=scale)
        out.append(ev.lemma2_check(model, spec, policy, horizon, method=method,
                                   budget=budget, space=space))
    return out


@dataclass(frozen=True)
class StepInstance:
    """One NPG step from a random policy with everything the lemmas need."""

    lemma3_residual: float
    lemma3_terms: object
    lemma4: object
    a: float
    m_hat: float
    gap: float
    d_b: float
    eta: float


def step_instance(model: TabularPomg, spec, policy, eta: float | None = None,
                  horizon: int = 4, space=None, gap_method: str = "auto",
                  gap_budget: int = 4096, compute_db: bool = True) -> StepInstance:
    """Run one simultaneous NPG step and evaluate the per-step inequalities."""
    if space is None:
        space = oracle.enumerate_chain_space(model, spec)
    beta = model.discount
    if eta is None:
        eta = _effective_step_size(model)
    chain = oracle.build_chain(model, spec, policy, space=space)
    values = oracle.solve_values(chain, "all")
    occ = oracle.compute_occupancy(chain)
    advs = [oracle.marginal_advantage(chain, values, occ, i)
            for i in range(model.n_agents)]
    policy_next, normalizers = npg_step(policy, advs, eta, beta)

    terms = ev.lemma3_terms(model, spec, policy, policy_next, normalizers,
                            space=space)
    res3 = ev.lemma3_check(model, policy, policy_next,
                           terms.advantage_expectation, terms.kl_sum,
                           terms.log_g_sum, eta)
    gap = ev.ne_gap(model, spec, policy, method=gap_method, budget=gap_budget,
                    space=space).ne_gap
    d_b = 0.0
    if compute_db:
        d_b = bel.distance_db(
            bel.exact_beliefs(model, spec, horizon, policy)).d_b
    a_const = ev.compute_a(policy, advs)
    m_hat = ev.compute_M([occ, terms.occ_next])
    rep4 = ev.lemma4_check(model, policy, advs, normalizers, terms.occ_next,
                           eta, beta, a_const, m_hat, gap, d_b)
    return StepInstance(lemma3_residual=res3, lemma3_terms=terms, lemma4=rep4,
                        a=a_const, m_hat=m_hat, gap=gap, d_b=d_b, eta=eta)


def lemma34_sweep(model: TabularPomg, spec, n_instances: int, horizon: int,
                  seed: int, space=None, scale: float = 1.0,
                  gap_method: str = "auto", gap_budget: int = 4096):
    if space is None:
        space = oracle.enumerate_chain_space(model, spec)
    out = []
    for k in range(n_instances):
        rng = _rng(seed, k)
        policy = random_policy(spec, model, rng, scale=scale)
        out.append(step_instance(model, spec, policy, horizon=horizon,
                                 space=space, gap_method=gap_method,
                                 gap_budget=gap_budget))
    return out


def full_report(model: TabularPomg, spec, n_instances: int, horizon: int,
                seed: int, records=None, fisher_eta: float = 0.05,
                gap_method: str = "auto", gap_budget: int = 4096) -> dict:
    """Assemble the JSON-shaped verification report."""
    space = oracle.enumerate_chain_space(model, spec)
    l1 = lemma1_sweep(model, spec, n_instances, horizon, seed, space=space)
    l2 = lemma2_sweep(model, spec, n_instances, horizon, seed + 1, space=space,
                      method=gap_method, budget=gap_budget)
    l34 = lemma34_sweep(model, spec, n_instances, horizon, seed + 2,
                        space=space, gap_method=gap_method,
                        gap_budget=gap_budget)
    report = {
        "lemma1": {
            "instances": len(l1),
            "min_residual": min(r.residual for r in l1),
            "max_tv_term": max(r.tv_term for r in l1),
        },
        "lemma2": {
            "instances": len(l2),
            "min_residual": min(r.residual for r in l2),
            "max_gap": max(r.gap for r in l2),
        },
        "lemma3": {
            "instances": len(l34),
            "min_residual": min(r.lemma3_residual for r in l34),
        },
        "lemma4": {
            "instances": len(l34),
            "min_residual": min(r.lemma4.residual for r in l34),
            "min_pointwise": min(r.lemma4.pointwise_min for r in l34),
            "pointwise_skipped": sum(r.lemma4.pointwise_skipped for r in l34),
        },
    }
    try:
        dev = ev.fisher_consistency_check(model, spec, policy=random_policy(
            spec, model, _rng(seed, 991), scale=0.7), i=0, eta=fisher_eta,
            space=space)
        report["fisher"] = {"max_deviation": dev, "skipped": False}
    except SizeError as exc:
        report["fisher"] = {"skipped": True, "reason": str(exc)}
    if records is not None:
        bound = ev.theorem_bound_check(records, model)
        report["theorem"] = {
            "lhs": bound.lhs, "rhs": bound.rhs, "holds": bound.holds,
            "a": bound.a, "M_hat": bound.m_hat, "d_b": bound.d_b,
            "eps_fsc": bound.eps_fsc, "iterations": bound.iterations,
        }
    residuals = [report["lemma1"]["min_residual"],
                 report["lemma2"]["min_residual"],
                 report["lemma3"]["min_residual"],
                 report["lemma4"]["min_residual"],
                 report["lemma4"]["min_pointwise"]]
    report["min_residual"] = min(residuals)
    report["pass"] = bool(report["min_residual"] >= RESIDUAL_FLOOR)
    return report
