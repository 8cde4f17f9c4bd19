import numpy as np
import pytest
from hypothesis import given, strategies as st

from kronsketch.allpairs import (AllPairsConfig, AllPairsProblem, allpairs_embed, allpairs_l2_sketch,
                                 allpairs_objective, allpairs_sample, allpairs_solve, materialize_pairs,
                                 pair_row_probability)
from kronsketch.oracle import exact_lp_regression
from kronsketch.sketching import PStableSparse
from kronsketch.solvers import lp_norm


def problem(seed, n=60, d=3):
    rng = np.random.default_rng(seed)
    return AllPairsProblem(rng.standard_normal((n, d)), rng.standard_normal(n))


def oracle(prob, p):
    Abar, bbar = materialize_pairs(prob)
    return exact_lp_regression(Abar, bbar, p).objective


def test_pair_rows_follow_flat_index():
    prob = problem(0, n=7, d=2)
    Abar, bbar = materialize_pairs(prob)
    for i, j in [(0, 0), (3, 5), (6, 1)]:
        np.testing.assert_array_equal(Abar[i + 7 * j], prob.A[i] - prob.A[j])
        assert bbar[i + 7 * j] == prob.b[i] - prob.b[j]
    rows = np.array([3 + 7 * 5, 6 + 7])
    W, c = prob.pair_rows(rows)
    np.testing.assert_array_equal(W, Abar[rows])
    np.testing.assert_array_equal(c, bbar[rows])


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0])
def test_streamed_residual_norm_matches_materialized(p):
    prob = problem(1, n=50)
    x = np.random.default_rng(2).standard_normal(3)
    Abar, bbar = materialize_pairs(prob)
    assert allpairs_objective(prob, x, p) == pytest.approx(lp_norm(Abar @ x - bbar, p), rel=1e-12)


def test_problem_shape_checks():
    with pytest.raises(ValueError):
        AllPairsProblem(np.ones((4, 2)), np.ones(5))


def test_identity_sketch_reproduces_exact_norms():
    prob = problem(3, n=25)
    R = allpairs_embed(prob, 2.0, k=25)
    Abar, bbar = materialize_pairs(prob)
    M = np.column_stack([Abar, bbar])
    x = np.random.default_rng(4).standard_normal(4)
    assert np.linalg.norm(R @ x) == pytest.approx(np.linalg.norm(M @ x), rel=1e-10)


@pytest.mark.parametrize("p", [1.0, 1.5])
def test_sketched_difference_distortion_bounded(p):
    # max/min distortion over 200 directions; the recorded constant is d^3
    n, d, k = 30, 3, 10
    prob = problem(5, n=n, d=d)
    Abar, bbar = materialize_pairs(prob)
    M = np.column_stack([Abar, bbar])
    S1, S2 = PStableSparse(k, n, p, 1), PStableSparse(k, n, p, 2)
    F, ones = prob.F, np.ones(n)
    SM = (S1.apply(F)[:, None, :] * S2.apply(ones)[None, :, None]
          - S1.apply(ones)[:, None, None] * S2.apply(F)[None, :, :]).reshape(-1, d + 1)
    # the Kronecker-difference identity: (S1 (x) S2) M computed without forming M
    # SM rows run (S1 row, S2 row) with the S1 row slowest
    first_fast = SM.reshape(k, k, d + 1).transpose(1, 0, 2).reshape(-1, d + 1)
    np.testing.assert_allclose(first_fast, np.kron(S2.matrix().toarray(), S1.matrix().toarray()) @ M, atol=1e-9)
    rng = np.random.default_rng(6)
    ratios = []
    for _ in range(200):
        x = rng.standard_normal(d + 1)
        ratios.append(lp_norm(SM @ x, p) / lp_norm(M @ x, p))
    assert max(ratios) / min(ratios) <= d**3


def test_identical_rows_give_zero_residual():
    A = np.tile([[1.0, 2.0]], (10, 1))
    prob = AllPairsProblem(A, np.full(10, 3.0))
    for p in (1.0, 2.0):
        res = allpairs_solve(prob, p, seed=0)
        assert allpairs_objective(prob, res.x, p) == 0.0
    R = allpairs_embed(prob, 1.0)
    assert allpairs_sample(prob, R, 50, 1.0, seed=0).meta["zero"]


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0])
def test_b_in_span_solved_exactly(p):
    prob = problem(7)
    b = prob.A @ np.array([1.0, -2.0, 0.5]) + 4.0  # an intercept cancels in every difference
    prob = AllPairsProblem(prob.A, b)
    res = allpairs_solve(prob, p, seed=1)
    Abar, bbar = materialize_pairs(prob)
    assert allpairs_objective(prob, res.x, p) <= 1e-6 * lp_norm(bbar, p)


def test_two_distinct_rows_concentrate():
    rng = np.random.default_rng(8)
    group = rng.integers(0, 2, 40)
    A = np.array([[1.0, 0.0], [0.0, 3.0]])[group]
    b = np.array([0.5, -1.0])[group]
    prob = AllPairsProblem(A, b)
    sampler = allpairs_sample(prob, allpairs_embed(prob, 1.0, seed=0), 200, 1.0, seed=0)
    i, j = sampler.rows % 40, sampler.rows // 40
    assert len(sampler) > 0 and np.all(group[i] != group[j])


def test_replayed_probabilities_form_distribution_near_exact():
    # per-draw probabilities against exact ||M_i||_p^p / ||M||_p^p, within a d^2 band
    n, d, p = 20, 2, 1.0
    prob = problem(9, n=n, d=d)
    R = allpairs_embed(prob, p, seed=0)
    rows = np.arange(n * n)
    per_draw = pair_row_probability(prob, R, 50, p, 3, rows)
    assert per_draw.sum() == pytest.approx(1.0)
    Abar, bbar = materialize_pairs(prob)
    M = np.column_stack([Abar, bbar]) @ np.linalg.pinv(R)
    exact = np.sum(np.abs(M) ** p, axis=1)
    exact /= exact.sum()
    live = exact > 0
    ratio = per_draw[live] / exact[live]
    assert np.all((ratio >= 1 / d**2) & (ratio <= d**2))
    assert np.all(per_draw[~live] == 0)


def test_inclusion_probabilities_match_empirical_frequency():
    n, p, r, seeds = 12, 1.0, 6, 2000
    prob = problem(10, n=n, d=2)
    R = allpairs_embed(prob, p, seed=0)
    rows = np.arange(n * n)
    observed = np.zeros(n * n)
    expected = np.zeros(n * n)
    variance = np.zeros(n * n)
    for s in range(seeds):
        sampler = allpairs_sample(prob, R, r, p, seed=s)
        observed[sampler.rows] += 1
        incl = -np.expm1(-r * pair_row_probability(prob, R, r, p, s, rows))
        np.testing.assert_allclose(sampler.probs, incl[sampler.rows], rtol=1e-12)
        expected += incl
        variance += incl * (1 - incl)
    z = np.abs(observed - expected) / np.sqrt(np.maximum(variance, 1e-12))
    assert np.max(z[expected > 0]) <= 4.5
    assert np.all(observed[expected == 0] == 0)


def test_sampler_probabilities_valid():
    prob = problem(11)
    sampler = allpairs_sample(prob, allpairs_embed(prob, 1.0, seed=0), 400, 1.0, seed=0)
    assert np.all((sampler.probs > 0) & (sampler.probs <= 1))
    np.testing.assert_allclose(sampler.weights, sampler.probs ** -1.0)


@pytest.mark.parametrize("p", [1.0, 1.5])
def test_end_to_end_ratio_small(p):
    ok = 0
    for seed in range(8):
        prob = problem(20 + seed)
        ok += allpairs_objective(prob, allpairs_solve(prob, p, seed=seed).x, p) <= 1.1 * oracle(prob, p)
    assert ok >= 7


def test_l2_sketch_path_ratio():
    ok = 0
    for seed in range(10):
        prob = problem(40 + seed, n=100, d=3)
        ok += allpairs_objective(prob, allpairs_solve(prob, 2.0, seed=seed).x, 2.0) <= 1.05 * oracle(prob, 2.0)
    assert ok >= 9


def test_l2_sketch_is_kronecker_difference():
    prob = problem(12, n=30)
    W, c = allpairs_l2_sketch(prob, 0.5, seed=0, config=AllPairsConfig(l2_const=1.0))
    assert W.shape[0] == int(np.ceil(np.sqrt(4 / 0.25))) ** 2


def test_translation_invariance():
    prob = problem(13)
    shifted = AllPairsProblem(prob.A + np.array([5.0, -2.0, 1.0]), prob.b + 7.0)
    A1, b1 = materialize_pairs(prob)
    A2, b2 = materialize_pairs(shifted)
    np.testing.assert_allclose(A1, A2, atol=1e-12)
    np.testing.assert_allclose(b1, b2, atol=1e-12)
    opt = oracle(prob, 1.0)
    assert oracle(shifted, 1.0) == pytest.approx(opt, rel=1e-9)
    for prb in (prob, shifted):
        assert allpairs_objective(prb, allpairs_solve(prb, 1.0, seed=3).x, 1.0) <= 1.1 * opt


def test_argument_checks():
    with pytest.raises(ValueError):
        allpairs_solve(problem(0, n=3, d=3), 1.0)
    with pytest.raises(ValueError):
        allpairs_solve(problem(0), 2.5)
    with pytest.raises(ValueError):
        allpairs_embed(problem(0), 0.5)


@given(st.integers(0, 2**20))
def test_same_seed_same_result(seed):
    prob = problem(seed % 5, n=25, d=2)
    a, b = allpairs_solve(prob, 1.0, seed=seed), allpairs_solve(prob, 1.0, seed=seed)
    np.testing.assert_array_equal(a.x, b.x)
