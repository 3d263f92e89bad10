"""Solvers for two-player zero-sum diffusion games where one player knows
which of finitely many scenarios is being played and the other only knows
the prior.

The package computes the game value two independent ways — a regression
backward solve over simulated paths coupled to belief-martingale revelation
policies, and a monotone grid scheme for the convexity-obstacle equation —
and cross-checks them, then extracts and verifies the informed player's
feedback controls and revelation policy.
"""

__version__ = "0.1.0"

from .errors import (BlowUpError, CflError, InfogameError, NonConvergenceError,
                     NumericalError, SingularSigmaError, ValidationError)
from .game_model import (GameBounds, GameSpec, Saddle, argminmax_batch,
                         argminmax_control, as_belief, hamiltonian,
                         hamiltonian_tilde, hamiltonian_tilde_batch,
                         hamiltonian_upper, isaacs_gap, terminal_value,
                         terminal_value_batch, validate_spec, vertex_belief)
from .gallery import GALLERY, SEPARABLE_GAMES, gallery_game, list_gallery
from .sde_engine import (PathBundle, TimeGrid, brownian_increments,
                         girsanov_weight, simulate_controlled,
                         simulate_uncontrolled)
from .belief_policy import (BeliefPolicy, BeliefSampler, GlueCase, PolicyNode,
                            SplitEvent, StatePartition, constant_policy, glue,
                            load_policy, make_node, one_shot_split,
                            policy_from_dict, policy_to_dict,
                            sample_belief_paths, save_policy)
from .bsde_solver import (BsdeProblem, BsdeSolution, RegressionConfig,
                          apriori_check, check_driver_lipschitz,
                          comparison_check, solve_backward, solve_picard)
from .hji_solver import (ObstacleSolution, ValueGrid, complete_info_solve,
                         convex_envelope_1d, kushner_minmax_step,
                         nonrevealing_step_residual, solve_obstacle_hji)
from .value_search import (GatedOneShotFamily, OneShotFamily, SearchResult,
                           TwoStageFamily, dpp_residual, evaluate_policy,
                           merge_one_shot, minimize_over_policies)
from .play_harness import (PlayReport, StrategyTable, extract_strategy,
                           make_opponent, reweighted_play, simulate_play,
                           verify_sufficiency)
from .acceptance import AcceptanceContext, CriterionResult, run_all

__all__ = [
    "__version__",
    # errors
    "InfogameError", "ValidationError", "NumericalError", "SingularSigmaError",
    "CflError", "BlowUpError", "NonConvergenceError",
    # model
    "GameSpec", "GameBounds", "Saddle", "as_belief", "vertex_belief",
    "hamiltonian", "hamiltonian_upper", "hamiltonian_tilde",
    "hamiltonian_tilde_batch", "argminmax_control", "argminmax_batch",
    "isaacs_gap", "terminal_value", "terminal_value_batch", "validate_spec",
    "GALLERY", "SEPARABLE_GAMES", "gallery_game", "list_gallery",
    # paths
    "TimeGrid", "PathBundle", "brownian_increments", "simulate_uncontrolled",
    "simulate_controlled", "girsanov_weight",
    # policies
    "BeliefPolicy", "PolicyNode", "SplitEvent", "StatePartition", "GlueCase",
    "BeliefSampler", "make_node", "constant_policy", "one_shot_split", "glue",
    "sample_belief_paths", "save_policy", "load_policy", "policy_to_dict",
    "policy_from_dict",
    # backward solver
    "BsdeProblem", "BsdeSolution", "RegressionConfig", "solve_backward",
    "solve_picard", "comparison_check", "apriori_check",
    "check_driver_lipschitz",
    # grid solver
    "ValueGrid", "ObstacleSolution", "solve_obstacle_hji",
    "complete_info_solve", "convex_envelope_1d", "kushner_minmax_step",
    "nonrevealing_step_residual",
    # search
    "OneShotFamily", "TwoStageFamily", "GatedOneShotFamily", "SearchResult",
    "minimize_over_policies", "evaluate_policy", "merge_one_shot",
    "dpp_residual",
    # play
    "StrategyTable", "PlayReport", "extract_strategy", "make_opponent",
    "simulate_play", "reweighted_play", "verify_sufficiency",
    # acceptance
    "AcceptanceContext", "CriterionResult", "run_all",
]
