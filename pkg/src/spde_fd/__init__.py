"""Finite-difference scheme for the stochastic heat equation on the torus with bounded drift."""

from .convergence import ExperimentPlan, RateReport, deterministic_rate_experiment, estimate_rates
from .grid import CFLError, GridConfig, GridError, make_grid
from .kernels import apply_semigroup_cont, apply_semigroup_disc, kernel_l2_distance_sq
from .noise import NoiseField, NoiseView, aggregate, sample_noise
from .ou import ou_coupling_error_sq, q_cont, q_disc, simulate_ou_disc
from .scheme import builtin_drifts, builtin_initials, run, step

__version__ = "0.1.0"

__all__ = [
    "CFLError", "ExperimentPlan", "GridConfig", "GridError", "NoiseField", "NoiseView", "RateReport",
    "aggregate", "apply_semigroup_cont", "apply_semigroup_disc", "builtin_drifts", "builtin_initials",
    "deterministic_rate_experiment", "estimate_rates", "kernel_l2_distance_sq", "make_grid",
    "ou_coupling_error_sq", "q_cont", "q_disc", "run", "sample_noise", "simulate_ou_disc", "step",
]
