"""Implicit Kronecker products and the vector/tensor views they act on.

Index convention, used by every module in the package: the first factor's
index varies fastest.  A 0-based multi-index ``(i_1, ..., i_q)`` over shape
``(n_1, ..., n_q)`` maps to

    flat = i_1 + i_2 * n_1 + i_3 * n_1 * n_2 + ...

which is column-major (Fortran) order.  With this convention
``A_1 (x) ... (x) A_q`` applied to ``x = vec_F(X)`` is the sequence of mode
products of ``X`` by ``A_1, ..., A_q``, row ``(i_1, ..., i_q)`` of the product
holds ``prod_l (A_l)[i_l, j_l]`` in column ``(j_1, ..., j_q)``, and the dense
matrix equals ``np.kron(A_q, ..., A_1)`` in numpy's own ordering.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from math import prod

import numpy as np
import scipy.sparse as sp

# flat indices are numpy int64; products past this cannot be indexed
INDEX_LIMIT = np.iinfo(np.int64).max

# sparse factors smaller than this (in both dimensions) are densified
DENSE_FALLBACK = 64


def _as_factor(A):
    if sp.issparse(A):
        if A.shape[0] < DENSE_FALLBACK and A.shape[1] < DENSE_FALLBACK:
            return np.asarray(A.toarray(), dtype=float)
        return sp.csr_array(A, dtype=float)
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise ValueError("factor must be a matrix")
    return A


def checked_product(sizes) -> int:
    total = prod(int(s) for s in sizes)
    if total > INDEX_LIMIT:
        raise OverflowError(f"product of sizes {tuple(sizes)} overflows the 64-bit index type")
    return total


@dataclass(frozen=True)
class KronDesign:
    """Kronecker design ``A_1 (x) ... (x) A_q`` kept as its factors.

    Parameters
    ----------
    factors : sequence of array_like or sparse matrices
        Factor ``i`` has shape ``(n_i, d_i)``.
    response : array_like, optional
        Vector of length ``prod(n_i)``.  May be omitted for low-rank work.
    """

    factors: tuple
    response: np.ndarray | None = None
    row_dims: tuple = field(init=False)
    col_dims: tuple = field(init=False)
    n: int = field(init=False)
    d: int = field(init=False)

    def __post_init__(self):
        facs = tuple(_as_factor(A) for A in self.factors)
        if not facs:
            raise ValueError("need at least one factor")
        for A in facs:
            if A.shape[0] < 1 or A.shape[1] < 1:
                raise ValueError("factors must be non-empty")
        row_dims = tuple(int(A.shape[0]) for A in facs)
        col_dims = tuple(int(A.shape[1]) for A in facs)
        n = checked_product(row_dims)
        d = checked_product(col_dims)
        b = self.response
        if b is not None:
            b = np.asarray(b, dtype=float).ravel()
            if b.shape[0] != n:
                raise ValueError(f"response has length {b.shape[0]}, expected {n}")
            b.setflags(write=False)
        object.__setattr__(self, "factors", facs)
        object.__setattr__(self, "response", b)
        object.__setattr__(self, "row_dims", row_dims)
        object.__setattr__(self, "col_dims", col_dims)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "d", d)

    @property
    def q(self) -> int:
        return len(self.factors)

    def dense_factors(self):
        return [A.toarray() if sp.issparse(A) else A for A in self.factors]

    def with_response(self, b) -> "KronDesign":
        return KronDesign(self.factors, b)


def flatten(coords, dims):
    """Flat index of 0-based multi-indices (first coordinate fastest).

    ``coords`` is a sequence of ``q`` integer arrays (or scalars).
    """
    return np.ravel_multi_index(tuple(np.asarray(c) for c in coords), tuple(dims), order="F")


def unflatten(flat, dims):
    """Inverse of :func:`flatten`; returns a tuple of ``q`` coordinate arrays."""
    return np.unravel_index(flat, tuple(dims), order="F")


def reshape_vec_to_tensor(x, dims):
    x = np.asarray(x)
    if x.ndim != 1 or x.shape[0] != prod(dims):
        raise ValueError(f"vector of length {x.size} does not fit dims {tuple(dims)}")
    return x.reshape(tuple(dims), order="F")


def reshape_tensor_to_vec(X):
    return np.asarray(X).reshape(-1, order="F")


def mode_product(X, A, axis):
    """Multiply tensor ``X`` along ``axis`` by matrix ``A`` (``A @`` that mode)."""
    if A.shape[1] != X.shape[axis]:
        raise ValueError(f"factor has {A.shape[1]} columns, mode {axis} has size {X.shape[axis]}")
    Xm = np.moveaxis(X, axis, 0)
    rest = Xm.shape[1:]
    Y = A @ Xm.reshape(Xm.shape[0], -1)
    return np.moveaxis(np.asarray(Y).reshape((A.shape[0],) + rest), 0, axis)


def apply_factors_to_tensor(factors, X):
    """Tensor with entries ``sum_j X[j] prod_l B_l[i_l, j_l]``.

    For two factors this is ``B_1 @ X @ B_2.T``.  Trailing axes of ``X`` beyond
    the number of factors are carried along as a batch.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim < len(factors):
        raise ValueError("tensor has fewer modes than there are factors")
    for axis, B in enumerate(factors):
        X = mode_product(X, B, axis)
    return X


def kron_apply(design, x, transpose=False):
    """Compute ``(A_1 (x) ... (x) A_q) x`` without forming the product.

    ``design`` is a :class:`KronDesign` or a sequence of factors.  ``x`` may be
    a vector or a matrix whose columns are transformed independently.  With
    ``transpose=True`` the transposed product is applied instead.
    """
    factors = design.factors if isinstance(design, KronDesign) else [_as_factor(A) for A in design]
    if transpose:
        factors = [A.T for A in factors]
    in_dims = tuple(A.shape[1] for A in factors)
    x = np.asarray(x, dtype=float)
    batch = x.shape[1:]
    if x.ndim not in (1, 2) or x.shape[0] != prod(in_dims):
        raise ValueError(f"input has {x.shape[0]} rows, expected {prod(in_dims)}")
    X = x.reshape(in_dims + batch, order="F")
    Y = apply_factors_to_tensor(factors, X)
    return Y.reshape((-1,) + batch, order="F")


def kron_rows(factors, coords):
    """Rows of the Kronecker product at the given multi-indices.

    Returns an ``(m, d)`` dense array for ``q`` coordinate arrays of length m.
    """
    rows = None
    for A, idx in zip(factors, coords):
        part = A[np.asarray(idx)]
        part = part.toarray() if sp.issparse(part) else np.asarray(part, dtype=float)
        if rows is None:
            rows = part
        else:
            # new column index is j_prev + d_prev * j_l
            rows = (part[:, :, None] * rows[:, None, :]).reshape(part.shape[0], -1)
    return rows


def kron_dense(factors):
    """Dense Kronecker product in the package convention (first factor fastest)."""
    dense = [A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float) for A in factors]
    return reduce(np.kron, reversed(dense))
