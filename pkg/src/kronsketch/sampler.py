"""Row-sampling diagonal matrices shared by the regression paths."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kron import kron_rows


@dataclass(frozen=True)
class DiagonalSampler:
    """Sparse diagonal sampling matrix over the rows of a tall design.

    ``rows[k]`` is a flat row index, ``weights[k]`` the diagonal entry at it and
    ``probs[k]`` the probability recorded for it: the per-draw probability in
    the with-replacement l2 path, the inclusion probability in the l_p paths.
    ``coords`` holds the per-factor coordinates of each row when the design is
    a Kronecker product.
    """

    rows: np.ndarray
    weights: np.ndarray
    probs: np.ndarray
    target: int
    coords: tuple | None = None
    success: bool = True
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return int(self.rows.size)

    def sampled_system(self, design):
        """Weighted rows ``D A`` and right-hand side ``D b`` of a Kronecker design."""
        A = kron_rows(design.factors, self.coords)
        b = design.response[self.rows]
        return A * self.weights[:, None], b * self.weights


def empty_sampler(target: int, q: int, **meta) -> DiagonalSampler:
    z = np.empty(0, dtype=np.int64)
    return DiagonalSampler(z, np.empty(0), np.empty(0), target, tuple(z for _ in range(q)), True, dict(meta))


def inverse_cdf(probs, u):
    """Indices drawn by inverse CDF of ``probs`` at uniforms ``u``; ties go to the lower index."""
    cdf = np.cumsum(probs)
    cdf /= cdf[-1]
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, len(cdf) - 1)
