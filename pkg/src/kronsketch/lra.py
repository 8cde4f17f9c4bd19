"""Low-rank approximation of Kronecker products, and low Kronecker-rank approximation.

``kron_lra`` sketches every factor with its own count-sketch, forms the
(small) Kronecker product of the sketched factors and keeps its top right
singular vectors.  The result stays factored: ``A U^T U`` with ``A`` given by
its factors.

``trank_approx`` uses the entry permutation that sends ``U (x) V`` to the
rank-one matrix ``vec(U) vec(V)^T``, so best approximations by sums of ``k``
Kronecker products are truncated SVDs of the permuted matrix.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from math import ceil, isqrt

import numpy as np

from .kron import KronDesign, kron_apply, kron_dense
from .sketching import CountSketch, as_seed

SKETCH_ROW_CAP = 10**5


@dataclass(frozen=True)
class LraFactors:
    factors: tuple
    U: np.ndarray  # k x d, orthonormal rows
    k: int

    @property
    def design(self) -> KronDesign:
        return KronDesign(self.factors)

    def project(self, x):
        """``A U^T U x`` for a vector or matrix ``x`` of length ``d``."""
        return kron_apply(self.design, self.U.T @ (self.U @ x))

    def materialize(self, limit: int = 4096) -> np.ndarray:
        design = self.design
        if design.n > limit:
            raise ValueError(f"refusing to materialize {design.n} rows")
        return kron_dense(design.dense_factors()) @ self.U.T @ self.U


def default_sketch_rows(q: int, k: int, eps: float, const: float = 4.0) -> int:
    return int(ceil(const * q * k * k / eps**2))


def kron_lra(design: KronDesign, k: int, eps: float = 0.3, seed=0, const: float = 4.0,
             rows: list | None = None) -> LraFactors:
    """Rank-``k`` factored approximation from the SVD of ``S_1 A_1 (x) ... (x) S_q A_q``."""
    if k < 1 or k > design.d:
        raise ValueError("need 1 <= k <= d")
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    seed = as_seed(seed)
    rows = rows or [default_sketch_rows(design.q, k, eps, const)] * design.q
    sketched = []
    for i, A in enumerate(design.factors):
        SA = np.asarray(CountSketch(rows[i], A.shape[0], seed.child(i)).apply(A))
        SA = SA.toarray() if hasattr(SA, "toarray") else SA
        # empty buckets contribute zero rows of the product and nothing to its SVD
        sketched.append(SA[np.any(SA != 0, axis=1)])
    total = int(np.prod([s.shape[0] for s in sketched]))
    if total > SKETCH_ROW_CAP:
        raise ValueError(f"sketched product has {total} rows (cap {SKETCH_ROW_CAP}); lower k or raise eps")
    M = kron_dense(sketched)
    _, s, Vt = np.linalg.svd(M, full_matrices=False)
    rank = int(np.sum(s > (s[0] if s.size else 0.0) * max(M.shape) * np.finfo(float).eps))
    if rank < k:
        warnings.warn(f"sketch has rank {rank} < k = {k}; returning {rank} directions", RuntimeWarning)
    kept = min(k, rank)
    return LraFactors(tuple(design.factors), Vt[:kept], kept)


def lra_cost(result: LraFactors) -> float:
    """``||A - A U^T U||_F`` from factor Gram matrices, without forming ``A``."""
    dense = result.design.dense_factors()
    gram = kron_dense([A.T @ A for A in dense])
    total = float(np.prod([np.sum(A * A) for A in dense]))
    kept = float(np.sum((result.U @ gram) * result.U))
    return float(np.sqrt(max(total - kept, 0.0)))


def optimal_rank_cost(A: np.ndarray, k: int) -> float:
    s = np.linalg.svd(A, compute_uv=False)
    return float(np.sqrt(np.sum(s[k:] ** 2)))


# ---------------------------------------------------------------------------
# low Kronecker rank


def _side(A: np.ndarray) -> int:
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("expected a square matrix")
    n = isqrt(A.shape[0])
    if n * n != A.shape[0]:
        raise ValueError("matrix side must be a perfect square n^2")
    return n


def rearrange_for_trank(A, n: int | None = None) -> np.ndarray:
    """Permute entries so that ``U (x) V`` becomes ``vec(U) vec(V)^T``.

    Rows of ``A`` are indexed ``i1 + n i2`` and columns ``j1 + n j2``, with
    ``(U (x) V)[i1 + n i2, j1 + n j2] = U[i1, j1] V[i2, j2]``; ``vec`` stacks
    columns.
    """
    A = np.asarray(A, dtype=float)
    side = _side(A)
    if n is not None and n != side:
        raise ValueError(f"matrix side {A.shape[0]} is not {n}^2")
    n = side
    # C-order reshape gives axes (i2, i1, j2, j1)
    return A.reshape(n, n, n, n).transpose(3, 1, 2, 0).reshape(n * n, n * n)


def undo_rearrange(Abar, n: int) -> np.ndarray:
    return np.asarray(Abar).reshape(n, n, n, n).transpose(3, 1, 2, 0).reshape(n * n, n * n)


def kron_pair(U, V) -> np.ndarray:
    """Dense ``U (x) V`` in the row convention above."""
    return np.kron(V, U)


@dataclass(frozen=True)
class TrankFactors:
    pairs: tuple  # ((U_1, V_1), ..., (U_k, V_k))
    singular_values: np.ndarray  # of the rearranged matrix

    @property
    def k(self) -> int:
        return len(self.pairs)

    def materialize(self) -> np.ndarray:
        out = None
        for U, V in self.pairs:
            term = kron_pair(U, V)
            out = term if out is None else out + term
        return out


def trank_approx(A, k: int, sketch_rows: int | None = None, seed=0) -> TrankFactors:
    """Best Frobenius approximation of ``A`` (``n^2 x n^2``) by ``k`` Kronecker products.

    With ``sketch_rows`` set, the right factors come from the SVD of a
    count-sketch of the rearranged matrix instead of the matrix itself, and
    the left factors are the projections onto them; ``singular_values`` are
    then those of the projected matrix.
    """
    A = np.asarray(A, dtype=float)
    n = _side(A)
    if not 1 <= k <= n * n:
        raise ValueError("need 1 <= k <= n^2")
    Abar = rearrange_for_trank(A, n)
    if sketch_rows is None:
        W, s, Vt = np.linalg.svd(Abar)
    else:
        if sketch_rows < k:
            raise ValueError("sketch_rows must be at least k")
        SA = np.asarray(CountSketch(sketch_rows, n * n, as_seed(seed)).apply(Abar))
        Vt = np.linalg.svd(SA, full_matrices=False)[2][:k]
        W, s, inner = np.linalg.svd(Abar @ Vt.T, full_matrices=False)
        Vt = inner @ Vt
    pairs = []
    for i in range(k):
        scale = np.sqrt(s[i])
        pairs.append((scale * W[:, i].reshape(n, n, order="F"), scale * Vt[i].reshape(n, n, order="F")))
    return TrankFactors(tuple(pairs), s)


def trank_tail(A, k: int) -> float:
    """``sum_{i > k} sigma_i^2`` of the rearranged matrix."""
    s = np.linalg.svd(rearrange_for_trank(A), compute_uv=False)
    return float(np.sum(s[k:] ** 2))


__all__ = [
    "LraFactors", "kron_lra", "lra_cost", "optimal_rank_cost", "default_sketch_rows", "rearrange_for_trank",
    "undo_rearrange", "kron_pair", "TrankFactors", "trank_approx", "trank_tail", "SKETCH_ROW_CAP",
]
