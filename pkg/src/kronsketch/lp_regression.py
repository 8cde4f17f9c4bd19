"""l_p regression (1 <= p < 2) over Kronecker designs.

The pipeline has three parts:

1. A well-conditioned basis per factor from a sparse p-stable sketch and
   QR, with row p-norms of ``A_i R_i^-1`` estimated by the median estimator.
   Products of the normalized per-factor norms give a sampling distribution
   over rows of the full design; solving on those rows gives a constant
   factor solution ``x'``.
2. A residual sampler that draws rows roughly in proportion to
   ``|rho_i|^p`` for ``rho = A x' - b`` one coordinate at a time, without
   forming ``rho``.  Stage 1 uses median-of-p-stable contractions of every
   other mode.  Later stages split the conditional distribution into a
   heavy part (coordinates found by a heavy-hitter sketch) and a remainder
   sampled through a fixed random partition.
3. An l_p solve on the union of fresh basis samples and residual samples.

Sampling is Poissonized.  The number of draws is Poisson with the target
mean, and rows are kept once however often they are drawn.  A row whose
per-draw probability is ``pi`` is then included independently with
probability ``1 - exp(-r pi)``, exactly, and that value is the inclusion
probability recorded for it.  Conditional distributions depend only on
the fixed sketches, so the probability of any multi-index can be replayed
after the fact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil, log, log2

import numpy as np
import scipy.linalg as sla

from .kron import KronDesign, flatten, kron_apply, kron_rows, reshape_vec_to_tensor, unflatten
from .sampler import DiagonalSampler, empty_sampler, inverse_cdf
from .sketching import (DyadicHeavyHitter, PStableSparse, Seed, as_seed, default_tau, pstable_sample, theta_p)
from .solvers import IrlsConfig, SolveReport, lp_norm, lp_solve


@dataclass(frozen=True)
class LpConfig:
    """Constants of the l_p pipeline (the analysis fixes only their order)."""

    r1: int | None = None
    r2: int | None = None
    r1_const: float = 1.0
    r2_const: float = 1.0
    basis_rows_const: float = 4.0  # sketch rows per factor: const * q * d_i^2
    basis_tau_const: float = 32.0  # repetitions for basis row norms: const * log2 n
    sampler_tau_const: float = 64.0  # repetitions inside the residual sampler
    log_oversampling: bool = False  # r3 = 4 r2 log2(n)^(q^2) / delta instead of r3 = r2
    oversample_const: float = 4.0
    hh_exponent: float = 4.0  # heavy threshold r3^-hh_exponent on |W_u|^p / ||W||_p^p
    hh_eps: float | None = None  # explicit l2 heavy-hitter threshold, overrides the exponent
    hh_columns: int = 16  # repetitions scanned for heavy hitters per prefix
    partition_min_block: int = 32
    max_draws_per_row: float = 8.0  # Poisson means are capped at this times n
    exact_fit_tol: float = 1e-12
    boost_cap: int = 64
    irls: IrlsConfig = IrlsConfig()

    def sizes(self, d: int, eps: float):
        r1 = self.r1 if self.r1 is not None else int(ceil(self.r1_const * d**3))
        r2 = self.r2 if self.r2 is not None else int(ceil(self.r2_const * d**3 / eps**2 * log(1.0 / eps)))
        return max(1, r1), max(1, r2)


DESK = LpConfig()
FULL_CONSTANTS = LpConfig(log_oversampling=True, hh_exponent=8.0)


# ---------------------------------------------------------------------------
# well-conditioned basis


@dataclass(frozen=True)
class BasisRep:
    """Per-factor ``R_i^-1`` and estimated row norms ``||(A_i R_i^-1)_j||_p^p``."""

    rinv: tuple
    norms: tuple
    p: float
    tau: int

    def factor_probs(self):
        out = []
        for a in self.norms:
            total = a.sum()
            if not np.isfinite(total) or total <= 0:
                raise ValueError("basis row norms do not define a distribution")
            out.append(a / total)
        return out

    def product_prob(self, coords) -> np.ndarray:
        prob = None
        for pr, idx in zip(self.factor_probs(), coords):
            prob = pr[idx] if prob is None else prob * pr[idx]
        return prob


def build_wc_basis(design: KronDesign, p: float, seed, config: LpConfig = DESK, tau: int | None = None) -> BasisRep:
    if not 1.0 <= p < 2.0:
        raise ValueError("p must lie in [1, 2)")
    seed = as_seed(seed)
    tau = tau if tau is not None else default_tau(design.n, config.basis_tau_const)
    theta = theta_p(p)
    rinvs, norms = [], []
    for i, A in enumerate(design.factors):
        n_i, d_i = A.shape
        rows = int(ceil(config.basis_rows_const * design.q * d_i * d_i))
        rinv = None
        for attempt in range(3):
            S = PStableSparse(rows, n_i, p, seed.child(i, attempt))
            SA = np.asarray(S.apply(A))
            R = np.linalg.qr(SA, mode="r")
            sv = np.linalg.svd(R, compute_uv=False)
            if sv[-1] > sv[0] * max(R.shape) * np.finfo(float).eps and sv[-1] > 0:
                rinv = sla.solve_triangular(R, np.eye(d_i))
                break
        if rinv is None:
            raise np.linalg.LinAlgError(f"factor {i}: sketched R singular after 3 attempts")
        Z = pstable_sample(p, (d_i, tau), seed.child(i, 99).rng())
        UZ = np.asarray(A @ (rinv @ Z))
        norms.append((np.median(np.abs(UZ), axis=1) / theta) ** p)
        rinvs.append(rinv)
    return BasisRep(tuple(rinvs), tuple(norms), p, tau)


# ---------------------------------------------------------------------------
# Poissonized product sampling


def _cap(mean: float, n: int, config: LpConfig):
    cap = config.max_draws_per_row * n
    return (min(mean, cap), mean > cap)


def poisson_product_sample(design: KronDesign, basis: BasisRep, intensity: float, rng, config: LpConfig = DESK):
    """Distinct rows hit by Poisson(intensity) draws from the basis product distribution.

    Returns ``(coords, rows, qprime)`` with ``qprime`` the per-draw probability.
    """
    mean, _ = _cap(intensity, design.n, config)
    count = rng.poisson(mean)
    coords = [inverse_cdf(pr, rng.random(count)) for pr in basis.factor_probs()]
    rows = flatten(coords, design.row_dims) if count else np.empty(0, dtype=np.int64)
    rows, first = np.unique(rows, return_index=True)
    coords = tuple(c[first] for c in coords)
    return coords, rows, basis.product_prob(coords) if rows.size else np.empty(0)


def _sampler(rows, coords, incl, p, target, **meta):
    return DiagonalSampler(rows, incl ** (-1.0 / p), incl, target, coords, True, meta)


@dataclass(frozen=True)
class StageResult:
    x: np.ndarray
    sampler: DiagonalSampler
    report: SolveReport


def solve_on_sampler(design: KronDesign, sampler: DiagonalSampler, p: float, irls: IrlsConfig = IrlsConfig()):
    if len(sampler) == 0:
        raise ValueError("sampled system is empty; increase the sample size")
    W, c = sampler.sampled_system(design)
    return lp_solve(W, c, p, irls)


def o1_approx_solve(design: KronDesign, basis: BasisRep, r1: int, seed, config: LpConfig = DESK) -> StageResult:
    """Constant-factor solution from rows sampled by the basis product distribution."""
    p = basis.p
    rng = as_seed(seed).rng()
    coords, rows, qprime = poisson_product_sample(design, basis, r1, rng, config)
    if rows.size == 0:
        raise ValueError("sampled system is empty; increase r1")
    mean, _ = _cap(r1, design.n, config)
    incl = -np.expm1(-mean * qprime)
    sampler = _sampler(rows, coords, incl, p, r1, stage="basis")
    report = solve_on_sampler(design, sampler, p, config.irls)
    return StageResult(report.x, sampler, report)


# ---------------------------------------------------------------------------
# residual sampler


@dataclass
class StageDist:
    """Conditional distribution of one coordinate given the earlier ones."""

    probs: np.ndarray  # full conditional distribution over [n_i]
    heavy: np.ndarray  # heavy coordinates
    heavy_weights: np.ndarray
    partition_prob: float  # probability of the partition branch (gamma / beta)
    theta: np.ndarray  # remainder weights, zero on the heavy set
    block_mass: np.ndarray
    fallback: bool = False


class ResidualHandle:
    """Implicit residual ``rho = A x' - b`` with the sketches the sampler needs.

    Stage ``i`` (0-based) works with, for a fixed prefix ``a`` of earlier
    coordinates, the ``n_i x tau`` matrix whose column ``j`` contracts every
    later mode ``k`` of ``rho`` against the p-stable vector ``Z_k[:, j]``.
    Contractions of the design use ``Z_k^T A_k`` and contractions of ``b``
    are precomputed once per stage.
    """

    def __init__(self, design: KronDesign, x_prime, p: float, seed, r3: float = 1.0, config: LpConfig = DESK,
                 tau: int | None = None):
        if design.response is None:
            raise ValueError("design has no response vector")
        seed = as_seed(seed)
        self.design, self.p, self.config = design, float(p), config
        self.q = design.q
        self.x_prime = np.asarray(x_prime, dtype=float)
        self.X = reshape_vec_to_tensor(self.x_prime, design.col_dims)
        self.tau = tau if tau is not None else default_tau(design.n, config.sampler_tau_const)
        self.r3 = float(r3)
        self.theta = theta_p(p)
        self.dense = design.dense_factors()
        q, n_dims = self.q, design.row_dims
        self.Z = [None] + [pstable_sample(p, (n_dims[k], self.tau), seed.child(1, k).rng()) for k in range(1, q)]
        self.ZA = [None] + [self.Z[k].T @ self.dense[k] for k in range(1, q)]
        B = reshape_vec_to_tensor(np.asarray(design.response), n_dims)
        self.Bc = [None] * q
        self.Bc[q - 1] = B
        if q >= 2:
            T = B @ self.Z[q - 1]  # contracts the last mode, keeps the repetition axis
            self.Bc[q - 2] = T
            for k in range(q - 2, 0, -1):
                T = np.einsum("...kj,kj->...j", T, self.Z[k])
                self.Bc[k - 1] = T
        # heavy-hitter thresholds and the fixed partitions, one per stage
        self.hh = [None] * q
        self.blocks = [None] * q
        for i in range(1, q):
            n_i = n_dims[i]
            eps_hh = config.hh_eps
            if eps_hh is None:
                eps_hh = min(1.0, max(self.r3, 2.0) ** (-config.hh_exponent / self.p))
            sk = DyadicHeavyHitter(n_i, eps_hh, seed.child(2, i))
            self.hh[i] = None if sk.width * sk.reps >= n_i and config.hh_eps is None else sk
            eta = max(1, min(int(ceil(self.r3**2)), n_i // config.partition_min_block))
            self.blocks[i] = seed.child(3, i).rng().integers(0, eta, n_i)
        self._cache = {}
        self.fallbacks = 0
        self._stage0 = self._stage_zero()

    # -- contractions -------------------------------------------------------

    def stage_matrix(self, i: int, prefix) -> np.ndarray:
        """``n_i x tau`` matrix of contracted residuals (one column at the last stage)."""
        T = self.X
        for k in range(i):
            T = np.tensordot(self.dense[k][prefix[k]], T, axes=([0], [0]))
        if i == self.q - 1:
            return (self.dense[i] @ T - self.Bc[i][tuple(prefix)])[:, None]
        T = T @ self.ZA[self.q - 1].T
        for k in range(self.q - 2, i, -1):
            T = np.einsum("...kj,jk->...j", T, self.ZA[k])
        return self.dense[i] @ T - self.Bc[i][tuple(prefix)]

    def _stage_zero(self):
        W = self.stage_matrix(0, ())
        if W.shape[1] == 1:
            w = np.abs(W[:, 0]) ** self.p
        else:
            w = np.median(np.abs(W), axis=1) ** self.p
        # median-estimated ||rho||_p decides whether there is anything to refine
        self.rho_estimate = float(np.sum(w) ** (1.0 / self.p) / (self.theta if W.shape[1] > 1 else 1.0))
        b_norm = lp_norm(self.design.response, self.p)
        self.exact_fit = self.rho_estimate <= self.config.exact_fit_tol * max(b_norm, np.finfo(float).tiny)
        total = w.sum()
        return w / total if total > 0 else w

    def stage_distribution(self, i: int, prefix) -> StageDist:
        key = (i, tuple(int(a) for a in prefix))
        sd = self._cache.get(key)
        if sd is None:
            sd = self._build_stage(i, key[1])
            self._cache[key] = sd
        return sd

    def _build_stage(self, i, prefix) -> StageDist:
        p = self.p
        W = self.stage_matrix(i, prefix)
        n_i = W.shape[0]
        cols = W.shape[1]
        absp = np.abs(W) ** p
        est = absp[:, 0] if cols == 1 else np.median(absp, axis=1)
        # heavy set: union of heavy-hitter queries over the repetitions scanned
        if self.hh[i] is None:
            heavy = np.flatnonzero(np.any(W != 0, axis=1))
        else:
            found = [self.hh[i].query(self.hh[i].sketch(W[:, j])) for j in range(min(cols, self.config.hh_columns))]
            heavy = np.unique(np.concatenate(found)) if found else np.empty(0, dtype=np.int64)
        mask = np.zeros(n_i, dtype=bool)
        mask[heavy] = True
        Zi = self.Z[i]
        Wfull = np.broadcast_to(W, (n_i, Zi.shape[1])) if cols == 1 else W
        beta = np.median(np.abs(np.sum(Zi * Wfull, axis=0))) ** p
        gamma = np.median(np.abs(np.sum((Zi * Wfull)[~mask], axis=0))) ** p
        heavy_w = est[heavy]
        theta = np.where(mask, 0.0, est)
        blocks = self.blocks[i]
        eta = int(blocks.max()) + 1
        block_mass = np.bincount(blocks, weights=theta, minlength=eta)
        hsum, rsum = heavy_w.sum(), theta.sum()
        fallback = False
        if hsum <= 0 and rsum <= 0:
            # medians vanished although some repetition is nonzero
            fallback = True
            self.fallbacks += 1
            theta = np.where(mask, 0.0, np.max(absp, axis=1))
            heavy_w = np.max(absp, axis=1)[heavy]
            block_mass = np.bincount(blocks, weights=theta, minlength=eta)
            hsum, rsum = heavy_w.sum(), theta.sum()
            if hsum <= 0 and rsum <= 0:
                theta = np.ones(n_i)
                heavy, heavy_w = np.empty(0, dtype=np.int64), np.empty(0)
                block_mass = np.bincount(blocks, weights=theta, minlength=eta)
                hsum, rsum = 0.0, float(n_i)
        if hsum <= 0:
            g = 1.0
        elif rsum <= 0:
            g = 0.0
        else:
            g = float(np.clip(gamma / beta, 0.0, 1.0)) if beta > 0 else 0.0
        probs = np.zeros(n_i)
        if hsum > 0:
            probs[heavy] += (1.0 - g) * heavy_w / hsum
        live = block_mass > 0
        if g > 0 and live.any():
            share = g / live.sum()
            in_live = live[blocks] & (theta > 0)
            probs[in_live] += share * theta[in_live] / block_mass[blocks[in_live]]
        return StageDist(probs, heavy, heavy_w, g, theta, block_mass, fallback)

    # -- sampling -----------------------------------------------------------

    def draw(self, count: int, rng: np.random.Generator):
        """``count`` independent multi-index draws and their per-draw probabilities."""
        q = self.q
        coords = [np.empty(count, dtype=np.int64) for _ in range(q)]
        prob = np.ones(count)
        coords[0] = inverse_cdf(self._stage0, rng.random(count)) if count else coords[0]
        prob *= self._stage0[coords[0]]
        for i in range(1, q):
            if count == 0:
                break
            prefixes = np.stack(coords[:i], axis=1)
            uniq, inverse = np.unique(prefixes, axis=0, return_inverse=True)
            inverse = inverse.ravel()
            order = np.argsort(inverse, kind="stable")
            bounds = np.searchsorted(inverse[order], np.arange(uniq.shape[0] + 1))
            for g_idx in range(uniq.shape[0]):
                members = order[bounds[g_idx] : bounds[g_idx + 1]]
                sd = self.stage_distribution(i, uniq[g_idx])
                picks = self._draw_stage(sd, i, members.size, rng)
                coords[i][members] = picks
                prob[members] *= sd.probs[picks]
        return tuple(coords), prob

    def _draw_stage(self, sd: StageDist, i: int, count: int, rng):
        out = np.empty(count, dtype=np.int64)
        branch = rng.random(count) < sd.partition_prob
        heavy_draws = ~branch
        if heavy_draws.any():
            out[heavy_draws] = sd.heavy[inverse_cdf(sd.heavy_weights, rng.random(heavy_draws.sum()))]
        if branch.any():
            live = np.flatnonzero(sd.block_mass > 0)
            # uniform block among those with mass, i.e. redraw empty blocks
            picks = live[rng.integers(0, live.size, branch.sum())]
            res = np.empty(picks.size, dtype=np.int64)
            for t in np.unique(picks):
                sel = picks == t
                members = np.flatnonzero(self.blocks[i] == t)
                res[sel] = members[inverse_cdf(sd.theta[members], rng.random(sel.sum()))]
            out[branch] = res
        return out

    def draw_probability(self, coords) -> np.ndarray:
        """Per-draw probability of given multi-indices under this sampler."""
        coords = [np.asarray(c, dtype=np.int64) for c in coords]
        prob = self._stage0[coords[0]].copy()
        for k in range(prob.size):
            for i in range(1, self.q):
                if prob[k] == 0.0:
                    break
                sd = self.stage_distribution(i, [c[k] for c in coords[:i]])
                prob[k] *= sd.probs[coords[i][k]]
        return prob


def oversampled_r3(r2: int, n: int, q: int, delta: float, config: LpConfig = DESK) -> float:
    if not config.log_oversampling:
        return float(r2)
    return config.oversample_const * r2 * log2(max(n, 2)) ** (q * q) / delta


@dataclass(frozen=True)
class ResidualSample:
    sampler: DiagonalSampler
    per_draw: np.ndarray
    r3: float


def residual_sample(handle: ResidualHandle, r2: int, delta: float, seed, config: LpConfig | None = None) -> ResidualSample:
    """Rows drawn roughly in proportion to ``|rho_i|^p`` with exact inclusion probabilities."""
    if r2 < 1:
        raise ValueError("r2 must be positive")
    config = config or handle.config
    design = handle.design
    r3 = oversampled_r3(r2, design.n, design.q, delta, config)
    if handle.exact_fit:
        return ResidualSample(empty_sampler(r2, design.q, stage="residual", exact_fit=True), np.empty(0), r3)
    rng = as_seed(seed).rng()
    mean, capped = _cap(r3, design.n, config)
    coords, per_draw = handle.draw(int(rng.poisson(mean)), rng)
    rows = flatten(coords, design.row_dims)
    rows, first = np.unique(rows, return_index=True)
    coords = tuple(c[first] for c in coords)
    per_draw = per_draw[first]
    incl = -np.expm1(-mean * per_draw)
    sampler = _sampler(rows, coords, incl, handle.p, r2, stage="residual", r3=r3, capped=capped,
                       fallbacks=handle.fallbacks)
    return ResidualSample(sampler, per_draw, mean)


def combined_sampler(design: KronDesign, basis: BasisRep, r1: float, handle: ResidualHandle, res: ResidualSample,
                     seed, config: LpConfig = DESK) -> DiagonalSampler:
    """Union of fresh basis samples and residual samples with joint inclusion probabilities."""
    rng = as_seed(seed).rng()
    mean1, _ = _cap(r1, design.n, config)
    bc, brows, _ = poisson_product_sample(design, basis, mean1, rng, config)
    rrows = res.sampler.rows
    rows = np.union1d(brows, rrows)
    if rows.size == 0:
        raise ValueError("sampled system is empty")
    coords = tuple(np.asarray(c) for c in unflatten(rows, design.row_dims))
    qprime = basis.product_prob(coords)
    pi = np.zeros(rows.size)
    pos = np.searchsorted(rows, rrows)
    pi[pos] = res.per_draw
    missing = np.ones(rows.size, dtype=bool)
    missing[pos] = False
    if missing.any() and not handle.exact_fit:
        pi[missing] = handle.draw_probability([c[missing] for c in coords])
    incl = -np.expm1(-(mean1 * qprime + res.r3 * pi))
    return _sampler(rows, coords, incl, basis.p, int(r1 + res.r3), stage="combined")


def refine_solve(design: KronDesign, sigma: DiagonalSampler, p: float, irls: IrlsConfig = IrlsConfig()) -> SolveReport:
    return solve_on_sampler(design, sigma, p, irls)


# ---------------------------------------------------------------------------
# end-to-end


@dataclass(frozen=True)
class LpResult:
    x: np.ndarray
    x_prime: np.ndarray
    sigma: DiagonalSampler
    report: SolveReport
    meta: dict = field(default_factory=dict)


def solve_lp(design: KronDesign, p: float, eps: float = 0.1, delta: float = 0.1, seed=0,
             config: LpConfig = DESK) -> LpResult:
    """One run of the pipeline: basis, constant-factor solve, residual sampling, refine."""
    if design.response is None:
        raise ValueError("design has no response vector")
    if not 1.0 <= p < 2.0:
        raise ValueError("p must lie in [1, 2)")
    seed = as_seed(seed)
    r1, r2 = config.sizes(design.d, eps)
    basis = build_wc_basis(design, p, seed.child(0), config)
    first = o1_approx_solve(design, basis, r1, seed.child(1), config)
    handle = ResidualHandle(design, first.x, p, seed.child(2), oversampled_r3(r2, design.n, design.q, delta, config),
                            config)
    res = residual_sample(handle, r2, delta, seed.child(3), config)
    meta = {"r1": r1, "r2": r2, "r3": res.r3, "basis_rows": len(first.sampler)}
    if handle.exact_fit:
        return LpResult(first.x, first.x, res.sampler, first.report, {**meta, "exact_fit": True})
    sigma = combined_sampler(design, basis, r1, handle, res, seed.child(4), config)
    report = refine_solve(design, sigma, p, config.irls)
    meta.update(rows=len(sigma), residual_rows=len(res.sampler), fallbacks=handle.fallbacks)
    return LpResult(report.x, first.x, sigma, report, meta)


def sampled_cost(design: KronDesign, sigma: DiagonalSampler, x, p: float) -> float:
    """``||Sigma (A x - b)||_p`` evaluated on the sampled rows only."""
    W = kron_rows(design.factors, sigma.coords)
    return lp_norm(sigma.weights * (W @ x - design.response[sigma.rows]), p)


@dataclass(frozen=True)
class BoostResult:
    x: np.ndarray
    candidates: list
    cost_estimates: np.ndarray
    chosen: int


def boost_count(delta: float, cap: int = 64) -> int:
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    return int(min(cap, max(1, ceil(log2(1.0 / delta)))))


def pick_by_median_cost(design: KronDesign, candidates, sigmas, p: float):
    """Index of the candidate with least median sampled cost, and all estimates."""
    est = np.array([np.median([sampled_cost(design, s, x, p) for s in sigmas]) for x in candidates])
    return int(np.argmin(est)), est


def boosted_solve(design: KronDesign, p: float, eps: float = 0.1, delta: float = 0.1, seed=0,
                  config: LpConfig = DESK) -> BoostResult:
    """Repeat the pipeline and keep the candidate whose cost, estimated by the
    median over independent repetitions' sampling matrices, is least."""
    seed = as_seed(seed)
    r = boost_count(delta, config.boost_cap)
    if r == 1:
        run = solve_lp(design, p, eps, 0.1, seed.child(0), config)
        return BoostResult(run.x, [run.x], np.array([np.nan]), 0)
    runs = [solve_lp(design, p, eps, 0.1, seed.child(k), config) for k in range(2 * r)]
    candidates = [run.x for run in runs[:r]]
    sigmas = [run.sigma for run in runs[r:]]
    chosen, est = pick_by_median_cost(design, candidates, sigmas, p)
    return BoostResult(candidates[chosen], candidates, est, chosen)


def residual_vector(design: KronDesign, x) -> np.ndarray:
    return kron_apply(design, x) - design.response


__all__ = [
    "LpConfig", "DESK", "FULL_CONSTANTS", "BasisRep", "build_wc_basis", "o1_approx_solve", "ResidualHandle",
    "residual_sample", "combined_sampler", "refine_solve", "solve_lp", "boosted_solve", "sampled_cost",
    "pick_by_median_cost", "boost_count", "residual_vector", "Seed",
]
