"""Reduced-size invariant checks run by ``kronsketch selftest``.

Each check returns ``(ok, detail)``; any failure makes the run exit with the
invariant-failure code and names the check that broke.
"""

from __future__ import annotations

import json
import sys
import time

import numpy as np
from scipy import stats

from . import sketching
from .allpairs import AllPairsProblem, allpairs_objective, allpairs_solve, materialize_pairs
from .kron import KronDesign, kron_apply, kron_dense, reshape_tensor_to_vec, reshape_vec_to_tensor
from .leverage import factor_leverage, solve_l2
from .lp_regression import solve_lp
from .lra import kron_lra, lra_cost, optimal_rank_cost, kron_pair, rearrange_for_trank
from .oracle import exact_leverage, exact_lp_regression
from .solvers import lp_norm

EXIT_INVARIANT = 4


def _rng(k):
    return np.random.default_rng(1000 + k)


def check_theta_table():
    grid = sketching.THETA_GRID_START + sketching.THETA_GRID_STEP * np.arange(sketching.THETA_TABLE.size)
    worst = 0.0
    for p in grid:
        ref = sketching.theta_p_quadrature(float(p))
        worst = max(worst, abs(sketching.theta_p(float(p)) - ref) / ref)
    return worst <= 1e-4, f"max relative error {worst:.2e}"


def check_kron_apply():
    rng = _rng(1)
    factors = [rng.standard_normal((5, 2)), rng.standard_normal((4, 3)), rng.standard_normal((3, 2))]
    design = KronDesign(factors)
    x = rng.standard_normal(design.d)
    y = rng.standard_normal(design.n)
    dense = kron_dense(factors)
    err = max(np.abs(kron_apply(design, x) - dense @ x).max(),
              np.abs(kron_apply(design, y, transpose=True) - dense.T @ y).max())
    return err <= 1e-12, f"max abs error {err:.2e}"


def check_reshaping():
    rng = _rng(2)
    A1, A2 = rng.standard_normal((6, 2)), rng.standard_normal((5, 3))
    b = rng.standard_normal(30)
    x = rng.standard_normal(6)
    design = KronDesign([A1, A2], b)
    X = reshape_vec_to_tensor(x, design.col_dims)
    B = reshape_vec_to_tensor(b, design.row_dims)
    tensor_residual = A1 @ X @ A2.T - B
    worst = 0.0
    for p in (1.0, 1.5, 2.0):
        lhs = lp_norm(reshape_tensor_to_vec(tensor_residual), p)
        rhs = lp_norm(np.kron(A2, A1) @ x - b, p)
        worst = max(worst, abs(lhs - rhs) / rhs)
    return worst <= 1e-12, f"max relative gap {worst:.2e}"


def check_leverage_product():
    rng = _rng(3)
    factors = [rng.standard_normal((12, 2)), rng.standard_normal((10, 3))]
    design = KronDesign(factors)
    scores = factor_leverage(design, 0, eps_lev=0.01)
    product = np.kron(scores.scores[1], scores.scores[0])
    err = np.abs(product - exact_leverage(kron_dense(factors))).max()
    return err <= 1e-9, f"max abs error {err:.2e}"


def check_exp_argmax():
    x = np.array([3.0, -1.0, 0.5, 2.0, 0.25])
    rng = _rng(4)
    worst = 1.0
    for p in (1.0, 1.5, 2.0):
        draws = sketching.exp_argmax_draws(x, p, 20000, rng)
        probs = np.abs(x) ** p / np.sum(np.abs(x) ** p)
        observed = np.bincount(draws, minlength=x.size)
        worst = min(worst, stats.chisquare(observed, probs * draws.size).pvalue)
    return worst >= 1e-4, f"min p-value {worst:.3g}"


def check_count_sketch():
    S = sketching.CountSketch(7, 40, 5)
    M = S.apply(np.eye(40))
    ok = np.all(np.count_nonzero(M, axis=0) == 1) and set(np.unique(M[M != 0])) <= {-1.0, 1.0}
    same = np.array_equal(M, sketching.CountSketch(7, 40, 5).apply(np.eye(40)))
    return bool(ok and same), "one signed nonzero per column, reproducible"


def check_trank_rank_one():
    rng = _rng(5)
    U, V = rng.standard_normal((4, 4)), rng.standard_normal((4, 4))
    s = np.linalg.svd(rearrange_for_trank(kron_pair(U, V)), compute_uv=False)
    return s[1] <= 1e-10 * s[0], f"second singular value ratio {s[1] / s[0]:.2e}"


def _ratio(design, x, p, oracle):
    return lp_norm(kron_apply(design, x) - design.response, p) / oracle


def check_l2_solve():
    rng = _rng(6)
    factors = [rng.standard_normal((40, 2)), rng.standard_normal((40, 2))]
    design = KronDesign(factors, rng.standard_normal(1600))
    res = solve_l2(design, eps=0.2, delta=0.2, seed=0)
    dense = kron_dense(factors)
    opt = np.linalg.norm(dense @ np.linalg.lstsq(dense, design.response, rcond=None)[0] - design.response)
    ratio = _ratio(design, res.x, 2.0, opt)
    return ratio <= 1.2, f"ratio {ratio:.4f}"


def check_lp_solve():
    rng = _rng(7)
    factors = [rng.standard_normal((15, 2)), rng.standard_normal((15, 2))]
    design = KronDesign(factors, rng.standard_normal(225))
    dense = kron_dense(factors)
    worst = 0.0
    for p in (1.0, 1.5):
        opt = exact_lp_regression(dense, design.response, p).objective
        worst = max(worst, _ratio(design, solve_lp(design, p, eps=0.2, seed=0).x, p, opt))
    return worst <= 1.2, f"worst ratio {worst:.4f}"


def check_oracle_objective():
    rng = _rng(8)
    W, c = rng.standard_normal((30, 3)), rng.standard_normal(30)
    worst = 0.0
    for p in (1.0, 1.5, 2.0):
        rep = exact_lp_regression(W, c, p)
        worst = max(worst, abs(rep.objective - lp_norm(W @ rep.x - c, p)) / rep.objective)
    return worst <= 1e-12, f"max relative mismatch {worst:.2e}"


def check_allpairs():
    rng = _rng(9)
    problem = AllPairsProblem(rng.standard_normal((30, 2)), rng.standard_normal(30))
    Abar, bbar = materialize_pairs(problem)
    opt = exact_lp_regression(Abar, bbar, 1.0).objective
    res = allpairs_solve(problem, 1.0, eps=0.2, seed=0)
    ratio = allpairs_objective(problem, res.x, 1.0) / opt
    return ratio <= 1.2, f"ratio {ratio:.4f}"


def check_lra():
    rng = _rng(10)
    design = KronDesign([rng.standard_normal((12, 3)), rng.standard_normal((12, 3))])
    res = kron_lra(design, 2, eps=0.3, seed=0)
    gram = res.U @ res.U.T
    ortho = np.abs(gram - np.eye(gram.shape[0])).max()
    ratio = lra_cost(res) / optimal_rank_cost(kron_dense(design.factors), 2)
    return ortho <= 1e-10 and ratio <= 1.5, f"orthonormality {ortho:.1e}, cost ratio {ratio:.4f}"


CHECKS = [
    ("theta_table_matches_quadrature", check_theta_table),
    ("kron_apply_matches_dense", check_kron_apply),
    ("reshaping_preserves_norms", check_reshaping),
    ("leverage_product_matches_svd", check_leverage_product),
    ("exp_argmax_chi_square", check_exp_argmax),
    ("count_sketch_structure", check_count_sketch),
    ("trank_rearrangement_rank_one", check_trank_rank_one),
    ("oracle_objective_recomputes", check_oracle_objective),
    ("l2_solve_ratio", check_l2_solve),
    ("lp_solve_ratio", check_lp_solve),
    ("allpairs_solve_ratio", check_allpairs),
    ("lra_projection", check_lra),
]


def run_selftest(as_json: bool = False, out=None) -> int:
    out = out or sys.stdout
    results = []
    for name, fn in CHECKS:
        start = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed invariant, reported by name
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append({"name": name, "ok": bool(ok), "detail": detail,
                        "seconds": round(time.perf_counter() - start, 3)})
    if as_json:
        out.write(json.dumps({"passed": all(r["ok"] for r in results), "checks": results}) + "\n")
    else:
        for r in results:
            out.write(f"{'PASS' if r['ok'] else 'FAIL'} {r['name']}: {r['detail']}\n")
    return 0 if all(r["ok"] for r in results) else EXIT_INVARIANT
