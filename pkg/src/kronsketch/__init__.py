"""Sketching-based regression and low-rank approximation for Kronecker-structured designs."""

from .kron import KronDesign, kron_apply, kron_dense, kron_rows
from .leverage import solve_l2, factor_leverage
from .lp_regression import solve_lp, boosted_solve, LpConfig
from .allpairs import AllPairsProblem, allpairs_solve, allpairs_objective
from .lra import kron_lra, lra_cost, trank_approx
from .oracle import exact_lp_regression, OracleBudget, BudgetExceeded
from .solvers import lp_solve, least_squares, lp_norm

__all__ = [
    "KronDesign", "kron_apply", "kron_dense", "kron_rows",
    "solve_l2", "factor_leverage",
    "solve_lp", "boosted_solve", "LpConfig",
    "AllPairsProblem", "allpairs_solve", "allpairs_objective",
    "kron_lra", "lra_cost", "trank_approx",
    "exact_lp_regression", "OracleBudget", "BudgetExceeded",
    "lp_solve", "least_squares", "lp_norm",
]
