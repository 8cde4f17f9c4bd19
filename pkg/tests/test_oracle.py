import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from kronsketch.kron import KronDesign, kron_dense
from kronsketch.oracle import (BudgetExceeded, OracleBudget, exact_leverage, exact_lp_distribution,
                               exact_lp_regression, large_lad_oracle, materialize, simplex_lad)
from kronsketch.solvers import lp_norm


def test_exact_leverage_identity():
    np.testing.assert_allclose(exact_leverage(np.eye(3)), [1, 1, 1])


def test_exact_leverage_zero_matrix():
    np.testing.assert_array_equal(exact_leverage(np.zeros((4, 2))), np.zeros(4))


def test_exact_lp_distribution():
    np.testing.assert_allclose(exact_lp_distribution([1.0, -1.0], 1.0), [0.5, 0.5])
    np.testing.assert_allclose(exact_lp_distribution([1.0, 2.0], 2.0), [0.2, 0.8])
    with pytest.raises(ValueError):
        exact_lp_distribution([0.0, 0.0], 1.0)


def test_one_dimensional_median_example():
    W, c = np.ones((3, 1)), np.array([1.0, 2.0, 4.0])
    rep = exact_lp_regression(W, c, 1.0)
    assert rep.x[0] == pytest.approx(2.0) and rep.objective == pytest.approx(3.0)
    assert exact_lp_regression(W, c, 1.0, method="scan").x[0] == pytest.approx(2.0)


def test_simplex_matches_vertex_enumeration(rng):
    # an l1 optimum sits at a vertex that interpolates d rows
    W, c = rng.standard_normal((9, 2)), rng.standard_normal(9)
    best = min(lp_norm(W @ np.linalg.solve(W[list(S)], c[list(S)]) - c, 1.0)
               for S in itertools.combinations(range(9), 2))
    x, _ = simplex_lad(W, c)
    assert lp_norm(W @ x - c, 1.0) == pytest.approx(best, rel=1e-12)


@pytest.mark.parametrize("method", ["simplex", "highs", "active"])
def test_l1_routes_agree(rng, method):
    W, c = rng.standard_normal((120, 4)), rng.standard_cauchy(120)
    ref = exact_lp_regression(W, c, 1.0, method="simplex").objective
    assert exact_lp_regression(W, c, 1.0, method=method).objective == pytest.approx(ref, rel=1e-10)


def test_active_set_oracle_certifies(rng):
    W, c = rng.standard_normal((3000, 10)), rng.standard_normal(3000)
    rep = large_lad_oracle(W, c)
    assert rep.converged and rep.optimality == 0.0
    ref = exact_lp_regression(W, c, 1.0, method="highs").objective
    assert rep.objective == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("p", [1.2, 1.5, 1.8])
def test_lp_oracle_first_order_optimal(rng, p):
    W, c = rng.standard_normal((60, 3)), rng.standard_normal(60)
    rep = exact_lp_regression(W, c, p)
    r = W @ rep.x - c
    grad = W.T @ (np.abs(r) ** (p - 1) * np.sign(r))
    assert np.linalg.norm(grad) <= 1e-8 * np.linalg.norm(W) * np.linalg.norm(r) ** (p - 1)


def test_lp_oracle_one_dimensional_scan(rng):
    W, c = np.ones((7, 1)), rng.standard_normal(7)
    rep = exact_lp_regression(W, c, 1.5)
    grid = np.linspace(c.min(), c.max(), 20001)
    assert rep.objective <= min(lp_norm(c - t, 1.5) for t in grid) + 1e-9


def test_p2_oracle_matches_lstsq(rng):
    W, c = rng.standard_normal((40, 3)), rng.standard_normal(40)
    np.testing.assert_allclose(exact_lp_regression(W, c, 2.0).x, np.linalg.lstsq(W, c, rcond=None)[0], atol=1e-12)


def test_bad_p_and_method(rng):
    W, c = rng.standard_normal((5, 1)), rng.standard_normal(5)
    with pytest.raises(ValueError):
        exact_lp_regression(W, c, 2.5)
    with pytest.raises(ValueError):
        exact_lp_regression(W, c, 1.0, method="nope")


def test_budget_enforced():
    design = KronDesign([np.ones((100, 2)), np.ones((100, 2))])
    with pytest.raises(BudgetExceeded):
        materialize(design, OracleBudget(max_entries=1000))
    with pytest.raises(BudgetExceeded):
        exact_lp_regression(np.ones((50, 1)), np.ones(50), 1.0, OracleBudget(max_lp_rows=10))
    with pytest.raises(BudgetExceeded):
        exact_leverage(np.ones((50, 50)), OracleBudget(max_entries=100))


def test_materialize_matches_kron_dense(rng):
    factors = [rng.standard_normal((3, 2)), rng.standard_normal((4, 2))]
    np.testing.assert_array_equal(materialize(KronDesign(factors)), kron_dense(factors))


@given(st.integers(0, 2**31), st.sampled_from([1.0, 1.5, 2.0]))
def test_oracles_deterministic_and_objective_consistent(seed, p):
    rng = np.random.default_rng(seed)
    W, c = rng.standard_normal((20, 2)), rng.standard_normal(20)
    a, b = exact_lp_regression(W, c, p), exact_lp_regression(W, c, p)
    np.testing.assert_array_equal(a.x, b.x)
    assert abs(a.objective - lp_norm(W @ a.x - c, p)) <= 1e-12 * a.objective
