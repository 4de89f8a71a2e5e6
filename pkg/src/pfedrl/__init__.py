"""Personalized federated TD and Q-learning with a shared, server-averaged representation."""

from .analysis import (
    MixingError,
    PolicyEvaluationProblem,
    RankDeficientFeaturesError,
    expected_updates,
    lipschitz_check,
    lipschitz_constants,
    lyapunov,
    reference_optimum,
    td_fixed_point,
    tv_mixing_profile,
)
from .envs import CliffWalkingSpec, GarnetSpec, build_cliffwalking, build_garnet, perturb_kernel
from .estimator import SharedRepresentationTD
from .federation import VARIANTS, FederationSetup, Schedule, run_round, run_training
from .harness import ConfigError, ExperimentConfig, load_config, run_experiment, sweep_agents
from .mdp import Mdp, Observation, Policy, ReducibleChainError, exact_value, stationary_distribution

__version__ = "0.1.0"

__all__ = [
    "CliffWalkingSpec", "ConfigError", "ExperimentConfig", "FederationSetup", "GarnetSpec", "Mdp",
    "MixingError", "Observation", "Policy", "PolicyEvaluationProblem", "RankDeficientFeaturesError",
    "ReducibleChainError", "Schedule", "SharedRepresentationTD", "VARIANTS", "build_cliffwalking",
    "build_garnet", "exact_value", "expected_updates", "lipschitz_check", "lipschitz_constants",
    "load_config", "lyapunov", "perturb_kernel", "reference_optimum", "run_experiment", "run_round",
    "run_training", "stationary_distribution", "sweep_agents", "td_fixed_point", "tv_mixing_profile",
]
