"""Leverage scores of Kronecker designs and the sampled l2 solver.

Leverage scores of ``A_1 (x) ... (x) A_q`` are products of the factors'
scores, so sampling one row per factor independently in proportion to its
own scores draws rows of the full design in proportion to its scores.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil, log

import numpy as np
import scipy.sparse as sp

from .kron import KronDesign, flatten
from .sampler import DiagonalSampler, inverse_cdf
from .sketching import CountSketch, Seed, as_seed
from .solvers import SolveReport, least_squares


@dataclass(frozen=True)
class LeverageScores:
    scores: tuple
    eps: float

    def probabilities(self):
        out = []
        for s in self.scores:
            total = s.sum()
            if not total > 0:
                raise ValueError("a factor has all-zero leverage scores")
            out.append(s / total)
        return out


def default_eps_lev(q: int) -> float:
    return min(1.0 / (10 * q), 0.1)


def _range_map(SA, tol_scale):
    """``d x r`` map sending ``A`` to an orthonormal-up-to-sketch basis of its range."""
    _, s, Vt = np.linalg.svd(SA, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((SA.shape[1], 0))
    rank = int(np.sum(s > s[0] * tol_scale * np.finfo(float).eps))
    return Vt[:rank].T / s[:rank]


def approx_leverage(A, eps_lev: float, seed, sketch_const: float = 2.0, jl_const: float = 8.0) -> np.ndarray:
    """Leverage scores of one factor to relative accuracy about ``eps_lev``.

    A count-sketch with ``sketch_const * d^2 / eps^2`` rows gives ``R`` with
    ``A R^-1`` nearly orthonormal; a Gaussian map with ``jl_const * log n /
    eps^2`` columns then shortens ``R^-1`` before the product with ``A``.
    Either step is skipped when it would not be smaller than what it replaces
    (sketch rows >= n, or JL columns >= rank), in which case that step is exact.
    """
    seed = as_seed(seed)
    dense = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    n, d = dense.shape
    if not np.any(dense):
        return np.zeros(n)
    rows = int(ceil(sketch_const * d * d / eps_lev**2))
    SA = dense if rows >= n else CountSketch(rows, n, seed.child(0)).apply(A)
    T = _range_map(np.asarray(SA), max(SA.shape))
    cols = int(ceil(jl_const * log(max(n, 2)) / eps_lev**2))
    if cols < T.shape[1]:
        G = seed.child(1).rng().standard_normal((T.shape[1], cols)) / np.sqrt(cols)
        T = T @ G
    B = A @ T
    return np.sum(np.asarray(B) ** 2, axis=1)


def factor_leverage(design: KronDesign, seed, eps_lev: float | None = None) -> LeverageScores:
    seed = as_seed(seed)
    eps = default_eps_lev(design.q) if eps_lev is None else eps_lev
    return LeverageScores(tuple(approx_leverage(A, eps, seed.child(i)) for i, A in enumerate(design.factors)), eps)


def kron_leverage(scores: LeverageScores, idx) -> float:
    """Leverage of the Kronecker row at multi-index ``idx`` (0-based)."""
    if len(idx) != len(scores.scores):
        raise ValueError("need one coordinate per factor")
    out = 1.0
    for s, i in zip(scores.scores, idx):
        if not 0 <= i < s.size:
            raise IndexError(f"coordinate {i} out of range for factor with {s.size} rows")
        out *= float(s[i])
    return out


def build_l2_sampler(design: KronDesign, scores: LeverageScores, m: int, seed) -> DiagonalSampler:
    """``m`` draws with replacement, each picking one row per factor by its scores.

    The weight of a row drawn with probability ``p`` is ``1 / sqrt(m p)`` so
    that the squared diagonal equals ``1 / (m p)``.
    """
    if m < 1:
        raise ValueError("sample count must be positive")
    rng = as_seed(seed).rng()
    coords, prob = [], np.ones(m)
    for pr in scores.probabilities():
        idx = inverse_cdf(pr, rng.random(m))
        coords.append(idx)
        prob *= pr[idx]
    rows = flatten(coords, design.row_dims)
    return DiagonalSampler(rows, 1.0 / np.sqrt(m * prob), prob, m, tuple(coords))


@dataclass(frozen=True)
class L2Result:
    x: np.ndarray
    sampler: DiagonalSampler
    report: SolveReport

    @property
    def rank_deficient(self):
        return self.report.rank_deficient


def default_l2_rows(d: int, eps: float, delta: float, const: float = 10.0) -> int:
    return int(ceil(const * d / (delta * eps * eps)))


def solve_l2(design: KronDesign, eps: float = 0.1, delta: float = 0.1, seed=0, m: int | None = None,
             const: float = 10.0) -> L2Result:
    """Sketched least squares ``argmin ||D A x - D b||_2`` over leverage-sampled rows."""
    if design.response is None:
        raise ValueError("design has no response vector")
    if not 0.0 < eps < 0.5 or not 0.0 < delta < 1.0:
        raise ValueError("need 0 < eps < 1/2 and 0 < delta < 1")
    seed = as_seed(seed)
    if m is None:
        m = default_l2_rows(design.d, eps, delta, const)
    scores = factor_leverage(design, seed.child(0))
    sampler = build_l2_sampler(design, scores, m, seed.child(1))
    W, c = sampler.sampled_system(design)
    report = least_squares(W, c, normal_equations=True)
    return L2Result(report.x, sampler, report)


def residual_norm(design: KronDesign, x, p: float = 2.0) -> float:
    from .kron import kron_apply
    from .solvers import lp_norm

    return lp_norm(kron_apply(design, x) - design.response, p)


__all__ = [
    "LeverageScores", "approx_leverage", "factor_leverage", "kron_leverage", "build_l2_sampler",
    "solve_l2", "L2Result", "default_eps_lev", "default_l2_rows", "residual_norm", "Seed",
]
