"""All-pairs (rank) regression without forming the n^2 difference rows.

The design has one row ``A_i - A_j`` with response ``b_i - b_j`` for every
ordered pair, stored at flat index ``i + j n``.  With ``F = [A, b]`` the
augmented difference matrix is ``F (x) 1 - 1 (x) F`` and a Kronecker sketch
``S_1 (x) S_2`` applied to it equals ``S_1 F (x) S_2 1 - S_1 1 (x) S_2 F``,
which only touches ``F`` and two vectors.

For ``1 <= p < 2`` the sketch gives ``R`` with ``M = [A_bar, b_bar] R^-1``
well conditioned.  Rows of ``M G`` (``G`` Gaussian with few columns) are
sampled by picking a column block ``(i, l)`` of the pair index, then ``j``
inside it.  For ``p = 2`` the count-sketched system is solved directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil, log2

import numpy as np

from .sampler import DiagonalSampler, inverse_cdf
from .sketching import CountSketch, PStableSparse, as_seed, default_tau, pstable_sample, theta_p
from .solvers import least_squares, lp_norm, lp_solve, IrlsConfig


@dataclass(frozen=True)
class AllPairsProblem:
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float).ravel()
        if A.ndim != 2 or A.shape[0] != b.size:
            raise ValueError("A must be n x d and b of length n")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[1]

    @property
    def F(self) -> np.ndarray:
        return np.column_stack([self.A, self.b])

    def pair_rows(self, rows):
        """Difference rows and responses at flat pair indices ``i + j n``."""
        rows = np.asarray(rows, dtype=np.int64)
        i, j = rows % self.n, rows // self.n
        return self.A[i] - self.A[j], self.b[i] - self.b[j]

    def residual_norm(self, x, p: float, chunk: int = 256) -> float:
        """``||A_bar x - b_bar||_p`` streamed over blocks of ``j``."""
        r = self.A @ np.asarray(x, dtype=float) - self.b
        total = 0.0
        for start in range(0, self.n, chunk):
            block = r[:, None] - r[None, start : start + chunk]
            total += float(np.sum(np.abs(block) ** p))
        return total ** (1.0 / p)


def materialize_pairs(problem: AllPairsProblem):
    """Dense ``A_bar`` and ``b_bar`` (oracle use only)."""
    n = problem.n
    i = np.tile(np.arange(n), n)
    j = np.repeat(np.arange(n), n)
    return problem.A[i] - problem.A[j], problem.b[i] - problem.b[j]


@dataclass(frozen=True)
class AllPairsConfig:
    k_const: float = 64.0  # sketch rows per side for the embedding: const * d^2
    r_const: float = 1.0  # sampled rows: const * (d+1)^2 / eps^2
    r: int | None = None
    l2_const: float = 16.0  # p = 2 sketch rows in total: const * (d+1) / eps^2
    xi: int | None = None  # Gaussian columns, default max(8, 2 log2 n)
    tau_const: float = 8.0
    hh_exponent: float = 4.0  # heavy threshold r^-hh_exponent of a block's p-mass
    heavy_fraction: float | None = None
    partition_min_block: int = 32
    block_rows: int = 1 << 16
    max_draws_per_row: float = 8.0
    irls: IrlsConfig = IrlsConfig()


def _sketch_pair(n: int, k: int, p: float, seed):
    """Sketch applying to length-n vectors; the identity when k >= n."""
    if k >= n:
        return None
    return PStableSparse(k, n, p, seed)


def _apply(S, X):
    return np.asarray(X, dtype=float) if S is None else np.asarray(S.apply(X))


def _stream_r(left_f, left_one, right_one, right_f, block_rows: int):
    """R of the rows ``left_f[a] * right_one[c] - left_one[a] * right_f[c]`` by streaming QR."""
    k2, width = right_f.shape
    R = np.zeros((0, width))
    step = max(1, block_rows // max(k2, 1))
    for start in range(0, left_f.shape[0], step):
        sl = slice(start, start + step)
        block = left_f[sl, None, :] * right_one[None, :, None] - left_one[sl, None, None] * right_f[None, :, :]
        stacked = np.vstack([R, block.reshape(-1, width)])
        R = np.linalg.qr(stacked, mode="r")
    if R.shape[0] < width:
        R = np.vstack([R, np.zeros((width - R.shape[0], width))])
    return R


def allpairs_embed(problem: AllPairsProblem, p: float, k: int | None = None, seed=0,
                   config: AllPairsConfig = AllPairsConfig()) -> np.ndarray:
    """Upper-triangular ``R`` (``d+1`` square) of the sketched augmented difference matrix."""
    if not 1.0 <= p <= 2.0:
        raise ValueError("p must lie in [1, 2]")
    seed = as_seed(seed)
    n = problem.n
    k = k if k is not None else int(ceil(config.k_const * problem.d**2))
    F = problem.F
    ones = np.ones(n)
    S1 = _sketch_pair(n, k, p, seed.child(0))
    S2 = _sketch_pair(n, k, p, seed.child(1))
    return _stream_r(_apply(S1, F), _apply(S1, ones), _apply(S2, ones), _apply(S2, F), config.block_rows)


def _pinv_triangular(R):
    U, s, Vt = np.linalg.svd(R)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros_like(R.T), 0
    keep = s > s[0] * max(R.shape) * np.finfo(float).eps * 16
    return (Vt[keep].T / s[keep]) @ U[:, keep].T, int(keep.sum())


@dataclass
class PairSamplerState:
    FY: np.ndarray  # n x xi, rows of F R^+ G
    sigma: np.ndarray  # n x xi column-block mass estimates
    blocks: np.ndarray  # fixed partition of [n]
    heavy_fraction: float
    fallbacks: int = 0
    meta: dict = field(default_factory=dict)


def _column_conditionals(W, p, state: PairSamplerState):
    """Per-column conditional distributions of ``j`` (columns of ``W`` are blocks ``(i, l)``).

    Returns the ``n x xi`` probability matrix and per-column branch data.
    """
    mass = np.abs(W) ** p
    total = mass.sum(axis=0)
    heavy = mass >= state.heavy_fraction * total[None, :]
    heavy &= mass > 0
    eta = int(state.blocks.max()) + 1
    probs = np.zeros_like(mass)
    branch = []
    for l in range(W.shape[1]):
        if total[l] <= 0:
            branch.append(None)
            continue
        hm = np.where(heavy[:, l], mass[:, l], 0.0)
        rest = mass[:, l] - hm
        bm = np.bincount(state.blocks, weights=rest, minlength=eta)
        live = np.flatnonzero(bm > 0)
        gamma = rest.sum()
        g = gamma / total[l]
        if hm.sum() > 0:
            probs[:, l] += hm / total[l]
        if live.size:
            inb = rest > 0
            probs[inb, l] += g / live.size * rest[inb] / bm[state.blocks[inb]]
        branch.append((g, live, heavy[:, l]))
    return probs, branch


def pair_sampler_state(problem: AllPairsProblem, R, p: float, r: float, seed,
                       config: AllPairsConfig = AllPairsConfig()) -> PairSamplerState:
    seed = as_seed(seed)
    n = problem.n
    xi = config.xi or max(8, int(ceil(2 * log2(max(n, 2)))))
    Rp, rank = _pinv_triangular(R)
    G = seed.child(0).rng().standard_normal((R.shape[0], xi))
    FY = problem.F @ (Rp @ G)
    # median estimates of ||FY[i, l] - FY[:, l]||_p^p from p-stable contractions
    tau = default_tau(n, config.tau_const)
    Z = pstable_sample(p, (n, tau), seed.child(1).rng())
    zsum = Z.sum(axis=0)
    ZFY = Z.T @ FY
    sigma = np.empty((n, xi))
    theta = theta_p(p)
    for l in range(xi):
        est = np.abs(FY[:, l][:, None] * zsum[None, :] - ZFY[:, l][None, :])
        sigma[:, l] = (np.median(est, axis=1) / theta) ** p
    frac = config.heavy_fraction
    if frac is None:
        frac = max(r, 2.0) ** (-config.hh_exponent)
    eta = max(1, min(int(ceil(r * r)), n // config.partition_min_block))
    blocks = seed.child(2).rng().integers(0, eta, n)
    return PairSamplerState(FY, sigma, blocks, frac, meta={"xi": xi, "tau": tau, "rank": rank, "eta": eta})


def _row_probability(state, i, js, probs):
    """Per-draw probability of rows ``(i, j)`` summed over the column index ``l``."""
    col = state.sigma[i] / state.sigma.sum()
    return probs[js] @ col


def allpairs_sample(problem: AllPairsProblem, R, r: float, p: float = 1.0, seed=0,
                    config: AllPairsConfig = AllPairsConfig()) -> DiagonalSampler:
    """Poissonized row sample of the pair design with exact inclusion probabilities."""
    seed = as_seed(seed)
    n = problem.n
    state = pair_sampler_state(problem, R, p, r, seed.child(0), config)
    total = state.sigma.sum()
    z = np.empty(0, dtype=np.int64)
    if not total > 0 or not np.any(state.FY - state.FY[:1]):
        return DiagonalSampler(z, np.empty(0), np.empty(0), int(r), None, True, {"zero": True})
    rng = seed.child(1).rng()
    mean = min(r, config.max_draws_per_row * n * n)
    count = int(rng.poisson(mean))
    flat = inverse_cdf(state.sigma.ravel(), rng.random(count))
    ii, ll = np.divmod(flat, state.sigma.shape[1])
    rows_out, prob_out = [], []
    for i in np.unique(ii):
        sel = np.flatnonzero(ii == i)
        W = state.FY[i][None, :] - state.FY
        probs, branch = _column_conditionals(W, p, state)
        js = np.empty(sel.size, dtype=np.int64)
        for slot, l in enumerate(ll[sel]):
            info = branch[l]
            if info is None:
                # column estimated nonzero but exactly zero: pick by the fallback scan
                state.fallbacks += 1
                js[slot] = i
                continue
            g, live, heavy = info
            if rng.random() >= g:
                js[slot] = inverse_cdf(probs[:, l] * heavy, rng.random(1))[0]
            else:
                t = live[rng.integers(0, live.size)]
                members = np.flatnonzero((state.blocks == t) & ~heavy)
                u = rng.standard_exponential(members.size)
                js[slot] = members[np.argmax(np.abs(W[members, l]) * u ** (-1.0 / p))]
        rows_out.append(i + js * n)
        prob_out.append(_row_probability(state, i, js, probs))
    rows = np.concatenate(rows_out) if rows_out else z
    per_draw = np.concatenate(prob_out) if prob_out else np.empty(0)
    rows, first = np.unique(rows, return_index=True)
    per_draw = per_draw[first]
    keep = per_draw > 0
    rows, per_draw = rows[keep], per_draw[keep]
    incl = -np.expm1(-mean * per_draw)
    meta = dict(state.meta, draws=count, fallbacks=state.fallbacks)
    return DiagonalSampler(rows, incl ** (-1.0 / p), incl, int(r), None, True, meta)


def pair_row_probability(problem: AllPairsProblem, R, r: float, p: float, seed, rows,
                         config: AllPairsConfig = AllPairsConfig()) -> np.ndarray:
    """Replay the per-draw probability of given pair rows under the sampler for ``seed``."""
    state = pair_sampler_state(problem, R, p, r, as_seed(seed).child(0), config)
    rows = np.asarray(rows, dtype=np.int64)
    out = np.empty(rows.size)
    ii, jj = rows % problem.n, rows // problem.n
    for i in np.unique(ii):
        sel = ii == i
        probs, _ = _column_conditionals(state.FY[i][None, :] - state.FY, p, state)
        out[sel] = _row_probability(state, i, jj[sel], probs)
    return out


def allpairs_l2_sketch(problem: AllPairsProblem, eps: float, seed=0, config: AllPairsConfig = AllPairsConfig()):
    """Count-sketched system ``(S_1 (x) S_2) [A_bar, b_bar]`` with about ``const (d+1) / eps^2`` rows."""
    seed = as_seed(seed)
    n = problem.n
    k = int(ceil(np.sqrt(config.l2_const * (problem.d + 1) / eps**2)))
    F = problem.F
    ones = np.ones(n)
    if k >= n:
        S1F, S1o, S2F, S2o = F, ones, F, ones
    else:
        S1, S2 = CountSketch(k, n, seed.child(0)), CountSketch(k, n, seed.child(1))
        S1F, S1o, S2F, S2o = S1.apply(F), S1.apply(ones), S2.apply(F), S2.apply(ones)
    rows = (S1F[:, None, :] * S2o[None, :, None] - S1o[:, None, None] * S2F[None, :, :]).reshape(-1, F.shape[1])
    return rows[:, :-1], rows[:, -1]


@dataclass(frozen=True)
class AllPairsResult:
    x: np.ndarray
    rows: int
    meta: dict


def allpairs_solve(problem: AllPairsProblem, p: float, eps: float = 0.1, delta: float = 0.1, seed=0,
                   config: AllPairsConfig = AllPairsConfig()) -> AllPairsResult:
    if not 1.0 <= p <= 2.0:
        raise ValueError("p must lie in [1, 2]")
    if problem.d >= problem.n:
        raise ValueError("all-pairs regression needs d < n")
    if not 0.0 < eps < 1.0 or not 0.0 < delta < 1.0:
        raise ValueError("need 0 < eps < 1 and 0 < delta < 1")
    seed = as_seed(seed)
    if p == 2.0:
        W, c = allpairs_l2_sketch(problem, eps, seed.child(0), config)
        rep = least_squares(W, c)
        return AllPairsResult(rep.x, W.shape[0], {"path": "sketch"})
    R = allpairs_embed(problem, p, seed=seed.child(0), config=config)
    r = config.r if config.r is not None else int(ceil(config.r_const * (problem.d + 1) ** 2 / eps**2))
    sampler = allpairs_sample(problem, R, r, p, seed.child(1), config)
    if len(sampler) == 0:
        return AllPairsResult(np.zeros(problem.d), 0, dict(sampler.meta, path="sample"))
    W, c = problem.pair_rows(sampler.rows)
    rep = lp_solve(W * sampler.weights[:, None], c * sampler.weights, p, config.irls)
    return AllPairsResult(rep.x, len(sampler), dict(sampler.meta, path="sample"))


def allpairs_objective(problem: AllPairsProblem, x, p: float) -> float:
    return problem.residual_norm(x, p)


__all__ = [
    "AllPairsProblem", "AllPairsConfig", "AllPairsResult", "allpairs_embed", "allpairs_sample",
    "allpairs_solve", "allpairs_l2_sketch", "pair_row_probability", "materialize_pairs", "allpairs_objective",
    "lp_norm",
]
