"""Dense solvers for the small sampled regression problems.

``least_squares`` is a rank-revealing minimum-norm solve.  ``lp_solve``
handles ``1 <= p < 2`` by iteratively reweighted least squares on the
smoothed objective ``sum (r_i^2 + mu^2)^(p/2)`` with ``mu`` shrinking
geometrically, and keeps the best of several candidate points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.optimize import lsq_linear


@dataclass(frozen=True)
class SolveReport:
    x: np.ndarray
    objective: float
    iterations: int
    converged: bool
    optimality: float
    rank_deficient: bool = False


@dataclass(frozen=True)
class IrlsConfig:
    tol: float = 1e-10
    patience: int = 3
    max_iter: int = 500
    mu_final: float = 1e-10
    mu_decay: float = 0.5
    polish: bool = True


def lp_norm(r, p: float) -> float:
    r = np.abs(np.asarray(r, dtype=float))
    if p == 1.0:
        return float(r.sum())
    if p == 2.0:
        return float(np.linalg.norm(r))
    top = r.max(initial=0.0)
    if top == 0.0:
        return 0.0
    return float(top * np.sum((r / top) ** p) ** (1.0 / p))


# normal equations are trusted only while cond(W)^2 stays below this
NORMAL_EQ_COND2 = 1e8


def least_squares(W, c, normal_equations: bool = False) -> SolveReport:
    """Minimum-norm least squares.

    Blocked Householder QR handles the full-rank case; when the singular
    values of ``R`` show a numerical rank below ``d`` the solve is redone with
    pivoted QR (complete orthogonal factorization), which gives the
    minimum-norm solution.  With ``normal_equations=True`` a Cholesky solve of
    ``W^T W`` is tried first and kept only if the Gram matrix is well
    conditioned.
    """
    W = np.asarray(W, dtype=float)
    c = np.asarray(c, dtype=float)
    m, d = W.shape
    if m < 1:
        raise ValueError("need at least one row")
    cond = np.finfo(float).eps * max(m, d)
    x = None
    if normal_equations and m >= d:
        G = W.T @ W
        ev = np.linalg.eigvalsh(G)
        if ev[-1] > 0 and ev[0] > ev[-1] / NORMAL_EQ_COND2:
            x = sla.cho_solve(sla.cho_factor(G, check_finite=False), W.T @ c, check_finite=False)
            rank = d
    if x is None and m >= d:
        # the last column of R for [W, c] holds Q^T c
        (Rc,) = sla.qr(np.column_stack([W, c]), mode="r", check_finite=False)
        R = Rc[:d, :d]
        s = np.linalg.svd(R, compute_uv=False)
        if s[0] > 0 and s[-1] > cond * s[0]:
            x = sla.solve_triangular(R, Rc[:d, d], check_finite=False)
            rank = d
    if x is None:
        x, _, rank, _ = sla.lstsq(W, c, cond=cond, lapack_driver="gelsy")
    r = W @ x - c
    scale = max(np.linalg.norm(W) * np.linalg.norm(c), np.finfo(float).tiny)
    return SolveReport(x, float(np.linalg.norm(r)), 0, True, float(np.linalg.norm(W.T @ r) / scale), rank < d)


def _weighted_solve(W, c, w):
    s = np.sqrt(w)
    Ws, cs = W * s[:, None], c * s
    d = W.shape[1]
    if W.shape[0] >= d:
        (Rc,) = sla.qr(np.column_stack([Ws, cs]), mode="r", check_finite=False)
        R = Rc[:d, :d]
        diag = np.abs(np.diag(R))
        if diag.min(initial=np.inf) > diag.max(initial=0.0) * 1e-10:
            return sla.solve_triangular(R, Rc[:d, d], check_finite=False)
    x, *_ = sla.lstsq(Ws, cs, lapack_driver="gelsy", check_finite=False)
    return x


def optimality_residual(W, c, x, p: float) -> float:
    """Scaled norm of the (sub)gradient of ``||Wx - c||_p^p`` at ``x``.

    For ``p = 1`` the signs of (numerically) zero residuals are chosen in
    ``[-1, 1]`` to minimize the norm, giving the distance of 0 to the
    subdifferential.
    """
    W = np.asarray(W, dtype=float)
    r = W @ x - c
    scale = max(np.linalg.norm(W), np.finfo(float).tiny)
    if p == 1.0:
        zero = np.abs(r) <= 1e-9 * max(1.0, np.abs(c).max(initial=0.0))
        fixed = W[~zero].T @ np.sign(r[~zero])
        if not zero.any():
            return float(np.linalg.norm(fixed) / scale)
        sol = lsq_linear(W[zero].T, -fixed, bounds=(-1.0, 1.0), method="bvls")
        return float(np.linalg.norm(W[zero].T @ sol.x + fixed) / scale)
    mag = lp_norm(r, p)
    if mag == 0.0:
        return 0.0
    g = W.T @ (np.sign(r) * (np.abs(r) / mag) ** (p - 1.0))
    return float(np.linalg.norm(g) / scale)


def _vertex_polish(W, c, x, return_basis=False):
    """Exact solve on the first ``d`` independent rows in order of increasing residual (an LP vertex guess)."""
    d = W.shape[1]
    order = np.argsort(np.abs(W @ x - c), kind="stable")[: max(4 * d, d + 10)]
    # unpivoted QR of the ordered rows keeps a row iff it is independent of the earlier ones
    R = sla.qr(W[order].T, mode="r", check_finite=False)[0]
    diag = np.abs(np.diag(R))
    if diag.size == 0:
        return None
    tol = max(diag.max(), np.abs(R).max()) * d * np.finfo(float).eps * 1e3
    keep = np.flatnonzero(diag > tol)
    if keep.size < d:
        return None
    picked = order[keep[:d]]
    try:
        v = np.linalg.solve(W[picked], c[picked])
    except np.linalg.LinAlgError:
        return None
    return (v, picked) if return_basis else v


def _basic_duals(W, r, basis):
    y = -np.sign(r)
    y[basis] = 0.0
    return np.linalg.solve(W[basis].T, -(W.T @ y))


def vertex_is_optimal(W, c, v, basis, slack: float = 1e-9) -> bool:
    """l1 optimality of the vertex ``v`` interpolating rows ``basis``.

    Nonbasic rows take dual ``-sign(r)``; basic duals solve
    ``W_B^T y_B = -W_N^T y_N``.  The vertex is optimal iff ``|y_B| <= 1``.
    """
    try:
        yb = _basic_duals(W, W @ v - c, basis)
    except np.linalg.LinAlgError:
        return False
    return bool(np.abs(yb).max(initial=0.0) <= 1.0 + slack)


def lad_vertex_descent(W, c, v, basis, max_pivots: int | None = None, slack: float = 1e-9):
    """Walk l1 vertices downhill until the basic duals certify optimality.

    At each step the basic row with the largest ``|y_k| > 1`` leaves; moving
    along the edge that frees it lowers the objective at rate ``|y_k| - 1``,
    and the exact minimizer along the edge (a weighted median of the
    breakpoints) is the next vertex.  Returns ``(x, basis, optimal)``.
    """
    m, d = W.shape
    basis = np.array(basis, dtype=np.int64)
    x = np.array(v, dtype=float)
    max_pivots = max_pivots if max_pivots is not None else 20 * d + 100
    for _ in range(max_pivots):
        r = W @ x - c
        r[basis] = 0.0
        try:
            yb = _basic_duals(W, r, basis)
        except np.linalg.LinAlgError:
            return x, basis, False
        k = int(np.argmax(np.abs(yb)))
        if abs(yb[k]) <= 1.0 + slack:
            return x, basis, True
        sigma = -np.sign(yb[k])
        e = np.zeros(d)
        e[k] = sigma
        try:
            delta = np.linalg.solve(W[basis], e)
        except np.linalg.LinAlgError:
            return x, basis, False
        a = W @ delta
        a[basis] = 0.0
        a[basis[k]] = sigma
        slope = 1.0 - abs(yb[k])
        move = (a != 0) & (r != 0)
        t = -r[move] / a[move]
        ahead = t > 0
        t, weight, rows = t[ahead], 2.0 * np.abs(a[move][ahead]), np.flatnonzero(move)[ahead]
        if t.size == 0:
            return x, basis, False
        order = np.argsort(t, kind="stable")
        crossing = np.searchsorted(slope + np.cumsum(weight[order]), 0.0, side="left")
        if crossing >= order.size:
            return x, basis, False
        pick = order[crossing]
        x = x + t[pick] * delta
        basis[k] = rows[pick]
    return x, basis, False


def lp_solve(W, c, p: float, config: IrlsConfig = IrlsConfig()) -> SolveReport:
    """Minimize ``||Wx - c||_p`` for ``1 <= p < 2`` (``p = 2`` is routed to least squares)."""
    W = np.asarray(W, dtype=float)
    c = np.asarray(c, dtype=float)
    if W.ndim != 2 or W.shape[0] != c.shape[0]:
        raise ValueError("W must be m x d with m = len(c)")
    if not 1.0 <= p <= 2.0:
        raise ValueError(f"p must lie in [1, 2], got {p}")
    m, d = W.shape
    if m < 1:
        raise ValueError("need at least one row")
    ls = least_squares(W, c)
    if p == 2.0:
        return ls
    obj = lambda x: lp_norm(W @ x - c, p)
    candidates = [(obj(np.zeros(d)), np.zeros(d)), (obj(ls.x), ls.x)]

    x = ls.x
    r = W @ x - c
    mu = max(np.abs(c).max(initial=0.0) / m, config.mu_final)
    best_obj, best_x = candidates[1][0], x
    prev = best_obj
    calm = 0
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        w = (r * r + mu * mu) ** (0.5 * p - 1.0)
        x = _weighted_solve(W, c, w / w.max())
        r = W @ x - c
        cur = lp_norm(r, p)
        change = abs(prev - cur) / max(prev, np.finfo(float).tiny)
        prev = cur
        if cur < best_obj:
            best_obj, best_x = cur, x
        if cur == 0.0:
            converged = True
            break
        if p == 1.0 and config.polish and m >= d and it % 20 == 0:
            # a vertex with feasible duals is an exact optimum, no need to keep smoothing
            found = _vertex_polish(W, c, best_x, return_basis=True)
            if found is not None:
                v, basis, optimal = lad_vertex_descent(W, c, *found)
                candidates.append((obj(v), v))
                if optimal:
                    converged = True
                    break
        if mu <= config.mu_final:
            calm = calm + 1 if change < config.tol else 0
            if calm >= config.patience:
                converged = True
                break
        mu = max(config.mu_final, mu * config.mu_decay)
    candidates.append((best_obj, best_x))
    if config.polish and p == 1.0 and m >= d:
        v = _vertex_polish(W, c, best_x)
        if v is not None:
            candidates.append((obj(v), v))
    best_obj, best_x = min(candidates, key=lambda t: t[0])
    return SolveReport(best_x, best_obj, it, converged, optimality_residual(W, c, best_x, p), ls.rank_deficient)
