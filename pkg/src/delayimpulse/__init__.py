"""Infinite-horizon impulse control with execution delay on finite Markov chains."""
from .model import (ChainModel, ConfigError, CumulativeLattice, GridSpec, ImpulseSpec, Problem, RewardSpec,
                    build_lattice, build_random_walk_chain, validate)
from .iterate import ValueStack, compute_Y0, solve
from .strategy import Policy, evaluate_exact, extract_policy, simulate
from .oracle import bellman_oracle, cross_check, enumerate_tiny

__all__ = [
    "ChainModel", "ConfigError", "CumulativeLattice", "GridSpec", "ImpulseSpec", "Problem", "RewardSpec",
    "build_lattice", "build_random_walk_chain", "validate", "ValueStack", "compute_Y0", "solve", "Policy",
    "evaluate_exact", "extract_policy", "simulate", "bellman_oracle", "cross_check", "enumerate_tiny",
]
