"""The simultaneous internal-state NPG training loop with metric logging.

Every iteration computes each agent's advantage table under the *current*
joint policy (exact oracle or shared-batch Monte-Carlo) and then applies one
simultaneous multiplicative NPG step; simultaneity is enforced through policy
stamps. Runs are fully deterministic given (config, seed).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import beliefs as bel
from . import evaluation as ev
from . import monte_carlo as mc
from . import oracle
from .errors import ContractError, ParameterError
from .model import TabularPomg
from .policy import JointPolicy, init_policy, npg_step, random_policy

ASCENT_TOL = 1e-8


def default_step_size(model: TabularPomg) -> float:
    """The convergence-theorem step size (1-beta)^2 / (2 n phi_max)."""
    if model.phi_max <= 0.0:
        raise ParameterError(
            "phi_max must be positive for the default step size; shift the "
            "potential by a constant first")
    return (1.0 - model.discount) ** 2 / (2.0 * model.n_agents * model.phi_max)


def _effective_step_size(model: TabularPomg) -> float:
    """Theorem rule, shifting the potential when phi_max <= 0.

    Constant shifts change no advantage and no argmax, so training with the
    shifted scale is equivalent.
    """
    if model.phi_max > 0.0:
        return default_step_size(model)
    spread = model.phi_max - model.phi_min
    scale = spread if spread > 0.0 else 1.0
    return (1.0 - model.discount) ** 2 / (2.0 * model.n_agents * scale)


@dataclass(frozen=True)
class TrainConfig:
    iterations: int
    step_size: float | None = None       # None -> theorem rule
    advantage_source: str = "exact"      # exact | monte-carlo
    mc_samples: int = 2000
    mc_horizon: int = 40
    mc_workers: int = 1
    seed: int = 0
    init: str = "uniform"                # uniform | random
    init_scale: float = 0.5
    metric_cadence: int = 1
    eval_cadence: int = 10               # NE-gap / d_b cadence; 0 disables
    compute_gap: bool = True
    compute_db: bool = True
    belief_horizon: int = 4
    gap_method: str = "auto"             # auto | exhaustive | npg-br
    gap_budget: int = 400
    chain_cap: int | None = None

    def validate(self) -> "TrainConfig":
        if self.iterations < 1:
            raise ParameterError("iterations must be >= 1")
        if self.step_size is not None and self.step_size <= 0.0:
            raise ParameterError("explicit step size must be positive")
        if self.advantage_source not in ("exact", "monte-carlo"):
            raise ParameterError(
                f"unknown advantage source {self.advantage_source!r}")
        if self.init not in ("uniform", "random"):
            raise ParameterError(f"unknown init mode {self.init!r}")
        if self.metric_cadence < 1:
            raise ParameterError("metric cadence must be >= 1")
        return self


@dataclass(frozen=True)
class TrainRecord:
    t: int
    potential: float
    j_agents: tuple[float, ...]
    ne_gap: float | None
    a: float | None
    d_b: float | None
    min_occupancy: float | None
    max_abs_adv: tuple[float, ...]
    wall_ms: float
    ascent_residual: float | None = None  # Phi_t - Phi_prev + 2 d_b phi_max/(1-beta)


def _iteration_seed(seed: int, t: int) -> int:
    return int(np.random.SeedSequence([seed, t]).generate_state(1)[0])


def train(model: TabularPomg, spec, config: TrainConfig):
    """Run Algorithm-style simultaneous NPG; returns (policy, records)."""
    config.validate()
    eta = config.step_size if config.step_size is not None \
        else _effective_step_size(model)
    beta = model.discount

    if config.init == "uniform":
        policy = init_policy(spec, model, mode="uniform")
    else:
        rng = np.random.default_rng(np.random.SeedSequence([config.seed]))
        policy = random_policy(spec, model, rng, scale=config.init_scale)

    exact = config.advantage_source == "exact"
    space = None
    if exact or config.compute_gap or config.compute_db:
        space = oracle.enumerate_chain_space(model, spec, cap=config.chain_cap)

    records: list[TrainRecord] = []
    prev_phi = None
    prev_db = None
    theorem_eta = eta <= _effective_step_size(model) * (1 + 1e-12)
    t0 = time.perf_counter()

    for t in range(config.iterations):
        log_metrics = (t % config.metric_cadence == 0) or t == config.iterations - 1
        log_eval = config.eval_cadence > 0 and (
            t % config.eval_cadence == 0 or t == config.iterations - 1)

        if exact:
            chain = oracle.build_chain(model, spec, policy, space=space)
            values = oracle.solve_values(chain, "all")
            occ = oracle.compute_occupancy(chain)
            advs = [oracle.marginal_advantage(chain, values, occ, i)
                    for i in range(model.n_agents)]
            j_agents, phi = oracle.exact_objective(chain, values)
            min_occ = min(occ.min_positive(i)[0] for i in range(model.n_agents))
        else:
            tables, agent_est, phi_est = mc.mc_advantages(
                model, spec, policy, config.mc_samples, config.mc_horizon,
                _iteration_seed(config.seed, t), workers=config.mc_workers)
            advs = [tables[i] for i in range(model.n_agents)]
            j_agents = tuple(e.value for e in agent_est)
            phi = phi_est.value
            min_occ = None

        if log_metrics:
            max_abs = tuple(
                float(np.abs(a.a[a.visited]).max()) if a.visited.any() else 0.0
                for a in advs)
            a_const = ev.compute_a(policy, advs)
            gap = d_b = None
            if log_eval and config.compute_gap:
                gap = ev.ne_gap(model, spec, policy, method=config.gap_method,
                                budget=config.gap_budget, space=space).ne_gap
            if log_eval and config.compute_db:
                table = bel.exact_beliefs(model, spec, config.belief_horizon,
                                          policy)
                d_b = bel.distance_db(table).d_b
            ascent = None
            consecutive = records and records[-1].t == t - 1
            if exact and theorem_eta and consecutive and prev_phi is not None \
                    and prev_db is not None:
                ascent = phi - prev_phi + 2 * prev_db * model.phi_max / (1 - beta)
            rec = TrainRecord(
                t=t, potential=float(phi), j_agents=tuple(map(float, j_agents)),
                ne_gap=gap, a=a_const, d_b=d_b, min_occupancy=min_occ,
                max_abs_adv=max_abs,
                wall_ms=(time.perf_counter() - t0) * 1e3,
                ascent_residual=ascent)
            for name, val in (("potential", rec.potential), ("ne_gap", gap),
                              ("a", a_const), ("d_b", d_b)):
                if val is not None and not np.isfinite(val):
                    raise ContractError(
                        f"non-finite metric {name} at iteration {t}")
            records.append(rec)
            prev_phi = float(phi)
            prev_db = d_b if d_b is not None else prev_db

        policy, _ = npg_step(policy, advs, eta, beta)

    return policy, records
