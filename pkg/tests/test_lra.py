import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from kronsketch.kron import KronDesign, kron_dense
from kronsketch.lra import (SKETCH_ROW_CAP, default_sketch_rows, kron_lra, kron_pair, lra_cost, optimal_rank_cost,
                            rearrange_for_trank, trank_approx, trank_tail, undo_rearrange)
from kronsketch.sketching import CountSketch


def random_design(seed, n=30, d=4):
    rng = np.random.default_rng(seed)
    return KronDesign([rng.standard_normal((n, d)), rng.standard_normal((n, d))])


def test_rank_one_recovered():
    rng = np.random.default_rng(0)
    design = KronDesign([np.outer(rng.standard_normal(20), rng.standard_normal(3)),
                         np.outer(rng.standard_normal(15), rng.standard_normal(2))])
    res = kron_lra(design, 1, seed=0)
    A = kron_dense(design.factors)
    assert np.linalg.norm(A - res.materialize()) <= 1e-8 * np.linalg.norm(A)
    assert lra_cost(res) <= 1e-6 * np.linalg.norm(A)


def test_rows_orthonormal_and_cost_matches_materialized():
    design = random_design(1)
    res = kron_lra(design, 3, seed=1)
    np.testing.assert_allclose(res.U @ res.U.T, np.eye(3), atol=1e-10)
    A = kron_dense(design.factors)
    assert lra_cost(res) == pytest.approx(np.linalg.norm(A - res.materialize()), rel=1e-8)
    x = np.random.default_rng(2).standard_normal(16)
    np.testing.assert_allclose(res.project(x), res.materialize() @ x, atol=1e-10)


def test_cost_ratio_over_seeds():
    ok = 0
    for seed in range(10):
        design = random_design(100 + seed)
        opt = optimal_rank_cost(kron_dense(design.factors), 3)
        ok += lra_cost(kron_lra(design, 3, eps=0.3, seed=seed)) <= 1.1 * opt
    assert ok >= 8


def test_subspace_embedding_statistic():
    n1, k, eps = 1000, 2, 0.3
    rows = default_sketch_rows(2, k, eps)
    rng = np.random.default_rng(3)
    basis = np.linalg.qr(rng.standard_normal((n1 * n1, k)))[0]
    S1, S2 = CountSketch(rows, n1, 4), CountSketch(rows, n1, 5)
    fails = 0
    for _ in range(100):
        y = basis @ rng.standard_normal(k)
        Y = y.reshape(n1, n1, order="F")
        SY = S2.apply(S1.apply(Y).T).T
        fails += not (1 - eps <= np.linalg.norm(SY) / np.linalg.norm(y) <= 1 + eps)
    assert fails <= 10 + 5


def test_jl_moment_proxy():
    n1, rows, q, trials = 50, 20, 2, 10**4
    rng = np.random.default_rng(6)
    x = rng.standard_normal((n1, n1))
    x /= np.linalg.norm(x)
    second = np.empty(trials)
    for t in range(trials):
        S1, S2 = CountSketch(rows, n1, (t, 1)), CountSketch(rows, n1, (t, 2))
        second[t] = np.sum(S2.apply(S1.apply(x).T) ** 2)
    assert abs(second.mean() - 1) <= 0.02
    assert np.mean(second**2) <= 1 + (4 * q + 8) / rows


def test_pcp_fitted_constant():
    rng = np.random.default_rng(7)
    design = KronDesign([rng.standard_normal((200, 4)), rng.standard_normal((200, 4))])
    k, eps = 2, 0.5
    rows = default_sketch_rows(2, k, eps)
    A = kron_dense(design.factors)
    M = kron_dense([CountSketch(rows, 200, 8 + i).apply(F) for i, F in enumerate(design.factors)])
    full, sketch = [], []
    for _ in range(50):
        V = np.linalg.qr(rng.standard_normal((16, k)))[0]
        P = V @ V.T
        full.append(np.linalg.norm(A - A @ P) ** 2)
        sketch.append(np.linalg.norm(M - M @ P) ** 2)
    full, sketch = np.array(full), np.array(sketch)
    c = np.mean(full - sketch)  # least-squares fit of a single additive constant
    ratio = (sketch + c) / full
    assert np.all((ratio >= 1 - eps) & (ratio <= 1 + eps))


def test_rank_above_sketch_rank_warns():
    design = KronDesign([np.outer(np.arange(1.0, 9), [1.0, 2.0]), np.eye(2)])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = kron_lra(design, 4, seed=0)
    assert res.k == 2 and any(issubclass(w.category, RuntimeWarning) for w in caught)


def test_argument_errors():
    design = random_design(0)
    with pytest.raises(ValueError):
        kron_lra(design, 0)
    with pytest.raises(ValueError):
        kron_lra(design, 17)
    with pytest.raises(ValueError):
        kron_lra(design, 2, eps=1.5)
    big = KronDesign([np.random.default_rng(0).standard_normal((1000, 4))] * 2)
    with pytest.raises(ValueError, match="cap"):
        kron_lra(big, 2, rows=[1000, 1000])
    assert SKETCH_ROW_CAP == 10**5
    with pytest.raises(ValueError):
        kron_lra(design, 2, seed=0).materialize(limit=100)


def test_identity_pair_rearranges_to_rank_one():
    R = rearrange_for_trank(kron_pair(np.eye(2), np.eye(2)))
    assert np.linalg.matrix_rank(R) == 1
    np.testing.assert_array_equal(R, np.outer(np.eye(2).ravel(order="F"), np.eye(2).ravel(order="F")))


def test_kron_pair_index_convention():
    rng = np.random.default_rng(9)
    U, V = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
    K = kron_pair(U, V)
    for i1, i2, j1, j2 in [(0, 1, 2, 0), (2, 2, 1, 1), (1, 0, 0, 2)]:
        assert K[i1 + 3 * i2, j1 + 3 * j2] == U[i1, j1] * V[i2, j2]


@given(st.integers(3, 8), st.integers(0, 2**31))
def test_random_pair_rearranges_to_rank_one(n, seed):
    rng = np.random.default_rng(seed)
    U, V = rng.standard_normal((n, n)), rng.standard_normal((n, n))
    R = rearrange_for_trank(kron_pair(U, V))
    s = np.linalg.svd(R, compute_uv=False)
    assert s[1] <= 1e-10 * s[0]
    np.testing.assert_allclose(R, np.outer(U.ravel(order="F"), V.ravel(order="F")), atol=1e-12)


@given(st.integers(2, 5), st.integers(0, 2**31))
def test_rearrange_is_entry_permutation(n, seed):
    A = np.random.default_rng(seed).standard_normal((n * n, n * n))
    R = rearrange_for_trank(A)
    np.testing.assert_array_equal(np.sort(R.ravel()), np.sort(A.ravel()))
    np.testing.assert_array_equal(undo_rearrange(R, n), A)


def test_rearrange_dimension_errors():
    with pytest.raises(ValueError):
        rearrange_for_trank(np.ones((5, 5)))
    with pytest.raises(ValueError):
        rearrange_for_trank(np.ones((4, 9)))
    with pytest.raises(ValueError):
        rearrange_for_trank(np.ones((9, 9)), n=2)


def test_trank_exact_single_pair():
    rng = np.random.default_rng(10)
    A = kron_pair(rng.standard_normal((4, 4)), rng.standard_normal((4, 4)))
    res = trank_approx(A, 1)
    assert np.linalg.norm(res.materialize() - A) <= 1e-8 * np.linalg.norm(A)


def test_trank_exact_two_pairs():
    rng = np.random.default_rng(11)
    A = sum(kron_pair(rng.standard_normal((4, 4)), rng.standard_normal((4, 4))) for _ in range(2))
    res = trank_approx(A, 2)
    assert res.k == 2
    assert np.linalg.norm(res.materialize() - A) <= 1e-8 * np.linalg.norm(A)


def test_trank_residual_equals_tail_mass():
    A = np.random.default_rng(12).standard_normal((16, 16))
    res = trank_approx(A, 3)
    s = np.linalg.svd(rearrange_for_trank(A), compute_uv=False)
    assert np.linalg.norm(res.materialize() - A) ** 2 == pytest.approx(np.sum(s[3:] ** 2), abs=1e-8)
    assert trank_tail(A, 3) == pytest.approx(np.sum(s[3:] ** 2), rel=1e-12)
    with pytest.raises(ValueError):
        trank_approx(A, 17)


def test_sketched_trank_recovers_exact_pairs():
    rng = np.random.default_rng(13)
    A = sum(kron_pair(rng.standard_normal((5, 5)), rng.standard_normal((5, 5))) for _ in range(2))
    res = trank_approx(A, 2, sketch_rows=8, seed=3)
    assert np.linalg.norm(res.materialize() - A) <= 1e-8 * np.linalg.norm(A)


def test_sketched_trank_close_to_exact_on_noisy_input():
    rng = np.random.default_rng(14)
    A = sum(kron_pair(rng.standard_normal((6, 6)), rng.standard_normal((6, 6))) for _ in range(2))
    A = A + 1e-3 * np.linalg.norm(A) / 36 * rng.standard_normal(A.shape)
    best = np.sqrt(trank_tail(A, 2))
    errs = [np.linalg.norm(trank_approx(A, 2, sketch_rows=24, seed=s).materialize() - A) for s in range(20)]
    assert np.median(errs) <= 1.5 * best


def test_sketched_trank_rejects_too_few_rows():
    with pytest.raises(ValueError):
        trank_approx(np.eye(9), 2, sketch_rows=1)
