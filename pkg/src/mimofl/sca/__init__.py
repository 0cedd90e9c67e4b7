"""Successive convex approximation for the three FL designs."""

from .algorithms import (
    ScaResult, ScaTrace, binarize_and_polish, fill_compute, round_schedule, run_algorithm1,
    run_algorithm2, solve_sb, solve_single,
)
from .bounds import (
    BilinearSurrogate, RateSurrogate, ReciprocalBound, SurrogateDomainError, balanced_scale,
    bilinear_bounds, log_lb_coeffs, log_ub_coeffs, lower_bound_rate_dl, lower_bound_rate_ul,
    rate_surrogates, reciprocal_bound, upper_bound_rate_dl, upper_bound_rate_ul,
)
from .problems import (
    InitialPointError, PenaltyConfig, build_asyn_subproblem, build_sb_subproblem,
    build_syn_subproblem, initial_point, penalty_values, sb_lagrangian, sb_penalties,
)

__all__ = [
    "ScaResult", "ScaTrace", "binarize_and_polish", "fill_compute", "round_schedule",
    "run_algorithm1", "run_algorithm2", "solve_sb", "solve_single",
    "BilinearSurrogate", "RateSurrogate", "ReciprocalBound", "SurrogateDomainError",
    "balanced_scale", "bilinear_bounds", "log_lb_coeffs", "log_ub_coeffs",
    "lower_bound_rate_dl", "lower_bound_rate_ul", "rate_surrogates", "reciprocal_bound",
    "upper_bound_rate_dl", "upper_bound_rate_ul",
    "InitialPointError", "PenaltyConfig", "build_asyn_subproblem", "build_sb_subproblem",
    "build_syn_subproblem", "initial_point", "penalty_values", "sb_lagrangian", "sb_penalties",
]
