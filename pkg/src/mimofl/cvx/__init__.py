"""Structured smooth convex programs and a log-barrier solver for them."""

from .barrier import (
    DomainError, InfeasibleProblem, KktReport, MaxIterations, Phase1Result,
    PrimalSolution, SolverError, UnboundedProblem, check_kkt, phase1, solve, spec_center,
)
from .expr import ConvexExpr, ExprBlock, SpecBuilder, SubproblemSpec

__all__ = [
    "ConvexExpr", "ExprBlock", "SpecBuilder", "SubproblemSpec", "PrimalSolution",
    "Phase1Result", "KktReport", "solve", "phase1", "check_kkt", "spec_center",
    "SolverError", "InfeasibleProblem", "UnboundedProblem", "MaxIterations", "DomainError",
]
