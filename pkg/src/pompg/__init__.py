"""Tabular multi-agent RL for partially observable Markov potential games.

Finite-state-controller policies over shared/local internal states, the
closed-form natural policy gradient, an exact augmented-chain oracle with
belief-compression distances, Monte-Carlo estimation, and numeric
verification of the method's convergence bound.
"""

from .beliefs import BeliefTable, DbReport, distance_db, exact_beliefs
from .errors import (ContractError, ModelLoadError, ParameterError, PompgError,
                     SizeError, SolverError)
from .evaluation import (BestResponse, BoundReport, GapReport, best_response_fsc,
                         compute_M, compute_a, fisher_consistency_check,
                         lemma1_check, lemma2_check, lemma3_check, lemma3_terms,
                         lemma4_check, ne_gap, theorem_bound_check)
from .internal_state import (InfoPoint, InternalStateSpec, enumerate_info_points,
                             info_flat, info_label, info_point, info_point_count,
                             make_table_spec, make_window_spec, update_local,
                             update_shared)
from .model import (EnvParams, ModelReport, TabularPomg, build_env, build_lbf,
                    build_mabc, build_matiger, load_model, make_pomg,
                    potential_residual, save_model, validate_model)
from .monte_carlo import (McAdvantageTable, McEstimate, Trajectory, mc_advantage,
                          mc_advantages, mc_objective, rollout)
from .oracle import (AdvantageTable, AugmentedChain, ChainSpace, OccupancyMeasure,
                     ValueTables, build_chain, compute_occupancy,
                     enumerate_chain_space, exact_objective, marginal_advantage,
                     solve_values)
from .policy import (JointPolicy, PolicyTable, action_probabilities, init_policy,
                     load_policy, npg_step, policy_kl, random_policy, save_policy)
from .training import TrainConfig, TrainRecord, default_step_size, train

__version__ = "0.1.0"

__all__ = [
    "AdvantageTable", "AugmentedChain", "BeliefTable", "BestResponse",
    "BoundReport", "ChainSpace", "ContractError", "DbReport", "EnvParams",
    "GapReport", "InfoPoint", "InternalStateSpec", "JointPolicy",
    "McAdvantageTable", "McEstimate", "ModelLoadError", "ModelReport",
    "OccupancyMeasure", "ParameterError", "PolicyTable", "PompgError",
    "SizeError", "SolverError", "TabularPomg", "TrainConfig", "TrainRecord",
    "Trajectory", "ValueTables", "action_probabilities", "best_response_fsc",
    "build_chain", "build_env", "build_lbf", "build_mabc", "build_matiger",
    "compute_M", "compute_a", "compute_occupancy", "default_step_size",
    "distance_db", "enumerate_chain_space", "enumerate_info_points",
    "exact_beliefs", "exact_objective", "fisher_consistency_check", "info_flat",
    "info_label", "info_point", "info_point_count", "init_policy",
    "lemma1_check", "lemma2_check", "lemma3_check", "lemma3_terms",
    "lemma4_check", "load_model", "load_policy", "make_pomg", "make_table_spec",
    "make_window_spec", "marginal_advantage", "mc_advantage", "mc_advantages",
    "mc_objective", "ne_gap", "npg_step", "policy_kl", "potential_residual",
    "random_policy", "rollout", "save_model", "save_policy", "solve_values",
    "theorem_bound_check", "train", "update_local", "update_shared",
    "validate_model",
]
