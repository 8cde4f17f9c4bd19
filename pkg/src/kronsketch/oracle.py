"""Brute-force references that materialize everything.

Used by tests, the acceptance suite and the benchmark CLI.  Every entry point
checks an :class:`OracleBudget` first and raises :class:`BudgetExceeded`
instead of trying to allocate something huge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy import optimize

from .kron import KronDesign, kron_dense
from .solvers import SolveReport, lp_norm, optimality_residual


class BudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class OracleBudget:
    max_entries: int = 10**7
    max_lp_rows: int = 10**5

    def check_entries(self, count: int, what: str = "matrix"):
        if count > self.max_entries:
            raise BudgetExceeded(f"{what} needs {count} entries, budget is {self.max_entries}")

    def check_rows(self, rows: int):
        if rows > self.max_lp_rows:
            raise BudgetExceeded(f"problem has {rows} rows, budget is {self.max_lp_rows}")


DEFAULT_BUDGET = OracleBudget()

# above this many tableau entries the LP goes to HiGHS instead of the dense simplex
SIMPLEX_TABLEAU_LIMIT = 500_000
# above this many entries the full LP goes to the certified active-set method
ACTIVE_SET_THRESHOLD = 10**6


def materialize(design, budget: OracleBudget = DEFAULT_BUDGET) -> np.ndarray:
    factors = design.factors if isinstance(design, KronDesign) else design
    n = int(np.prod([A.shape[0] for A in factors], dtype=object))
    d = int(np.prod([A.shape[1] for A in factors], dtype=object))
    budget.check_entries(n * d, "materialized design")
    return kron_dense(factors)


def exact_leverage(A, budget: OracleBudget = DEFAULT_BUDGET) -> np.ndarray:
    """Leverage scores as squared row norms of the left singular basis."""
    A = np.asarray(A, dtype=float)
    budget.check_entries(A.size)
    if not np.any(A):
        return np.zeros(A.shape[0])
    U, s, _ = sla.svd(A, full_matrices=False)
    rank = int(np.sum(s > s[0] * max(A.shape) * np.finfo(float).eps))
    return np.sum(U[:, :rank] ** 2, axis=1)


def exact_lp_distribution(rho, p: float) -> np.ndarray:
    mass = np.abs(np.asarray(rho, dtype=float)) ** p
    total = mass.sum()
    if total == 0.0:
        raise ValueError("zero vector has no l_p distribution")
    return mass / total


def simplex_lad(W, c, max_pivots: int | None = None):
    """Least absolute deviations by a dense tableau simplex with Bland's rule.

    Solves ``min sum(u + v)`` subject to ``W (xp - xm) + u - v = c`` with all
    variables nonnegative, starting from the slack basis.
    """
    W = np.asarray(W, dtype=float)
    c = np.asarray(c, dtype=float)
    m, d = W.shape
    ncol = 2 * d + 2 * m
    T = np.zeros((m, ncol + 1))
    T[:, :d] = W
    T[:, d : 2 * d] = -W
    T[:, 2 * d : 2 * d + m] = np.eye(m)
    T[:, 2 * d + m : ncol] = -np.eye(m)
    T[:, -1] = c
    neg = c < 0
    T[neg] *= -1.0
    basis = np.where(neg, 2 * d + m + np.arange(m), 2 * d + np.arange(m))
    cost = np.concatenate([np.zeros(2 * d), np.ones(2 * m)])
    # reduced-cost row kept in step with the tableau
    reduced = cost - cost[basis] @ T[:, :ncol]
    tol = 1e-9 * max(1.0, np.abs(T).max())
    limit = max_pivots if max_pivots is not None else 50 * (m + ncol)
    pivots = 0
    while True:
        entering = np.flatnonzero(reduced < -tol)
        if entering.size == 0:
            break
        e = entering[0]
        col = T[:, e]
        pos = col > tol
        if not pos.any():
            raise RuntimeError("LP unbounded, which cannot happen for least absolute deviations")
        ratios = np.full(m, np.inf)
        ratios[pos] = T[pos, -1] / col[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + tol * (1.0 + abs(best)))
        leave = ties[np.argmin(basis[ties])]
        T[leave] /= T[leave, e]
        factor = T[:, e].copy()
        factor[leave] = 0.0
        T -= factor[:, None] * T[leave]
        reduced -= reduced[e] * T[leave, :ncol]
        basis[leave] = e
        pivots += 1
        if pivots > limit:
            raise RuntimeError("simplex pivot limit reached")
    values = np.zeros(ncol)
    values[basis] = T[:, -1]
    return values[:d] - values[d : 2 * d], pivots


def _highs_lad(W, c):
    """LAD through the dual ``max c^T y : W^T y = 0, -1 <= y <= 1`` solved by HiGHS."""
    d = W.shape[1]
    res = optimize.linprog(-c, A_eq=W.T, b_eq=np.zeros(d), bounds=(-1.0, 1.0), method="highs")
    if res.status != 0:
        raise RuntimeError(f"HiGHS failed: {res.message}")
    # equality multipliers of the dual are the primal coefficients up to sign
    return -np.asarray(res.eqlin.marginals), int(res.nit)


def _newton_lp(W, c, p):
    obj = lambda x: np.sum(np.abs(W @ x - c) ** p)

    def grad(x):
        r = W @ x - c
        return p * W.T @ (np.sign(r) * np.abs(r) ** (p - 1.0))

    x0 = sla.lstsq(W, c, lapack_driver="gelsy")[0]
    res = optimize.minimize(obj, x0, jac=grad, method="BFGS", options={"gtol": 1e-12, "maxiter": 5000})
    x = res.x
    steps = res.nit
    floor = np.finfo(float).eps
    for _ in range(100):
        r = W @ x - c
        a = np.maximum(np.abs(r), floor * max(1.0, np.abs(c).max()))
        g = p * W.T @ (np.sign(r) * a ** (p - 1.0))
        H = p * (p - 1.0) * (W.T * a ** (p - 2.0)) @ W
        try:
            step = sla.solve(H, g, assume_a="pos")
        except (sla.LinAlgError, ValueError):
            break
        f0, t = obj(x), 1.0
        while t > 1e-12 and obj(x - t * step) > f0:
            t *= 0.5
        if t <= 1e-12:
            break
        x = x - t * step
        steps += 1
        if np.linalg.norm(t * step) <= 1e-15 * (1.0 + np.linalg.norm(x)):
            break
    return x, steps


def _scan_1d(w, c, p):
    """Fine grid over the breakpoint range followed by bounded scalar polish."""
    w = w.ravel()
    nz = w != 0
    if not nz.any():
        return np.zeros(1), 0
    ratios = c[nz] / w[nz]
    lo, hi = ratios.min(), ratios.max()
    obj = lambda t: np.sum(np.abs(w * t - c) ** p)
    grid = np.linspace(lo, hi, 4001)
    if p == 1.0:
        grid = np.concatenate([grid, ratios])
    vals = np.array([obj(t) for t in grid])
    k = int(np.argmin(vals))
    best = grid[k]
    if p > 1.0 or hi > lo:
        span = (hi - lo) / 4000.0
        res = optimize.minimize_scalar(obj, bounds=(best - span, best + span), method="bounded",
                                       options={"xatol": 1e-14})
        if res.fun < vals[k]:
            best = res.x
    return np.array([best]), grid.size


def _restricted_lad(W, c, active, signs):
    """``min_x s_N^T (W_N x - c_N) + ||W_S x - c_S||_1`` with ``S = active``.

    The objective is a pointwise lower bound of ``||Wx - c||_1``.  Returns
    ``(x, value)`` or ``None`` when HiGHS reports no finite optimum.
    """
    m, d = W.shape
    WS, cS = W[active], c[active]
    k = WS.shape[0]
    rest = ~np.zeros(m, dtype=bool)
    rest[active] = False
    g = W[rest].T @ signs[rest]
    const = -float(c[rest] @ signs[rest])
    obj = np.concatenate([g, np.ones(k)])
    eye = np.eye(k)
    A_ub = np.block([[WS, -eye], [-WS, -eye]])
    b_ub = np.concatenate([cS, -cS])
    bounds = [(None, None)] * d + [(0, None)] * k
    res = optimize.linprog(obj, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        return None
    return res.x[:d], float(res.fun) + const


def large_lad_oracle(W, c, irls_iter: int = 40, active_size: int | None = None, rounds: int = 30) -> SolveReport:
    """Certified ``min ||Wx - c||_1`` for systems too large for the tableau.

    IRLS on the normal equations locates the optimum approximately.  Rows
    whose residual is clearly nonzero keep their sign fixed and the LP over
    the remaining rows is solved exactly; that restricted objective never
    exceeds the true one, so its minimum is a lower bound, and when no fixed
    sign flips at its minimizer the two coincide.  Violating rows join the
    active set until that happens.  ``optimality`` reports the final relative
    gap (0 when certified).
    """
    W = np.asarray(W, dtype=float)
    c = np.asarray(c, dtype=float)
    m, d = W.shape
    x = sla.cho_solve(sla.cho_factor(W.T @ W), W.T @ c)
    r = W @ x - c
    mu = float(np.abs(r).mean())
    for _ in range(irls_iter):
        w = 1.0 / np.sqrt(r * r + mu * mu)
        Ww = W * w[:, None]
        try:
            x = sla.cho_solve(sla.cho_factor(Ww.T @ W), Ww.T @ c)
        except sla.LinAlgError:
            x = sla.lstsq(W * np.sqrt(w)[:, None], c * np.sqrt(w), lapack_driver="gelsy")[0]
        r = W @ x - c
        mu = max(mu * 0.5, 1e-12)
    best_x, best = x, float(np.abs(r).sum())
    size = min(m, active_size or max(8 * d, 2 * d + 50))
    active = np.sort(np.argsort(np.abs(r), kind="stable")[:size])
    signs = np.sign(r)
    lower = -np.inf
    certified = False
    for _ in range(rounds):
        out = _restricted_lad(W, c, active, signs)
        if out is None:
            grow = np.argsort(np.abs(r), kind="stable")[: min(m, 2 * active.size)]
            active = np.union1d(active, grow)
            continue
        xr, value = out
        lower = max(lower, value)
        rr = W @ xr - c
        obj = float(np.abs(rr).sum())
        if obj < best:
            best, best_x = obj, xr
        rest = np.ones(m, dtype=bool)
        rest[active] = False
        flipped = np.flatnonzero(rest & (rr * signs < 0))
        if flipped.size == 0:
            certified = True
            break
        active = np.union1d(active, flipped)
        r = rr
    gap = 0.0 if certified else (best - lower) / best if best > 0 else 0.0
    return SolveReport(best_x, best, len(active), certified, max(gap, 0.0))


def exact_lp_regression(W, c, p: float, budget: OracleBudget = DEFAULT_BUDGET, method: str = "auto") -> SolveReport:
    """Ground-truth ``min_x ||Wx - c||_p``.

    ``p = 1`` is a linear program: a dense Bland-rule simplex for small
    systems, HiGHS above ``SIMPLEX_TABLEAU_LIMIT`` tableau entries and the
    certified active-set method above ``ACTIVE_SET_THRESHOLD`` entries of W.
    ``1 < p < 2`` uses a 1-D scan for a single unknown and BFGS followed by
    damped Newton otherwise.  ``p = 2`` solves the normal equations.
    """
    W = np.asarray(W, dtype=float)
    c = np.asarray(c, dtype=float)
    m, d = W.shape
    budget.check_rows(m)
    budget.check_entries(W.size)
    if p == 2.0:
        G = W.T @ W
        try:
            x = sla.solve(G, W.T @ c, assume_a="pos")
        except (sla.LinAlgError, ValueError):
            x = sla.lstsq(W, c)[0]
        steps = 1
    elif p == 1.0:
        if method == "auto":
            if m * (2 * d + 2 * m) <= SIMPLEX_TABLEAU_LIMIT:
                method = "simplex"
            else:
                method = "highs" if m * d <= ACTIVE_SET_THRESHOLD else "active"
        if d == 1 and method == "scan":
            x, steps = _scan_1d(W, c, p)
        elif method == "simplex":
            x, steps = simplex_lad(W, c)
        elif method == "highs":
            x, steps = _highs_lad(W, c)
        elif method == "active":
            rep = large_lad_oracle(W, c)
            if not rep.converged:
                raise RuntimeError(f"active-set l1 oracle stopped with relative gap {rep.optimality:.3g}")
            x, steps = rep.x, rep.iterations
        else:
            raise ValueError(f"unknown method {method}")
    elif 1.0 < p < 2.0:
        x, steps = _scan_1d(W, c, p) if d == 1 else _newton_lp(W, c, p)
    else:
        raise ValueError(f"p must lie in [1, 2], got {p}")
    return SolveReport(x, lp_norm(W @ x - c, p), steps, True, optimality_residual(W, c, x, p))
