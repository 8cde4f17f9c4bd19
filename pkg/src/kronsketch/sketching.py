"""Seeded random sketches and the median estimator for p-norms.

Every random object here is built from a :class:`Seed`, a ``(value, stream)``
pair; equal pairs give bit-identical realizations.  Hash-based sketches use
the splitmix64 finalizer keyed by a per-sketch salt so that hash values can
be recomputed for any key without storing a table.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil, log2

import numpy as np
import scipy.sparse as sp
from scipy import integrate, optimize

_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class Seed:
    """A 64-bit seed value plus a stream id naming an independent substream."""

    value: int
    stream: int = 0

    def __post_init__(self):
        for v in (self.value, self.stream):
            if not 0 <= int(v) <= _MASK64:
                raise ValueError("seed components must be 64-bit unsigned integers")

    def rng(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.value), spawn_key=(int(self.stream),))
        return np.random.default_rng(ss)

    def child(self, *keys: int) -> "Seed":
        """Deterministic child seed; distinct key paths give unrelated streams."""
        ss = np.random.SeedSequence(entropy=int(self.value), spawn_key=(int(self.stream),) + tuple(int(k) for k in keys))
        return Seed(int(ss.generate_state(1, dtype=np.uint64)[0]), 0)

    def salt(self) -> int:
        return int(self.rng().integers(0, 2**64, dtype=np.uint64, endpoint=False))


def as_seed(seed) -> Seed:
    if isinstance(seed, Seed):
        return seed
    if isinstance(seed, tuple):
        return Seed(*seed)
    return Seed(int(seed))


def mix64(keys, salt: int) -> np.ndarray:
    """splitmix64 finalizer of ``keys + salt * golden``, elementwise, as uint64."""
    z = np.asarray(keys).astype(np.uint64) + np.uint64((int(salt) * _GOLDEN) & _MASK64)
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def hash_bucket(keys, salt: int, width: int) -> np.ndarray:
    return (mix64(keys, salt) % np.uint64(width)).astype(np.int64)


def hash_sign(keys, salt: int) -> np.ndarray:
    return 1.0 - 2.0 * (mix64(keys, salt) >> np.uint64(63)).astype(np.float64)


# ---------------------------------------------------------------------------
# p-stable variables


def pstable_sample(p: float, size, seed_or_rng) -> np.ndarray:
    """I.i.d. symmetric p-stable draws.

    ``p == 2`` gives standard normals and ``p == 1`` standard Cauchy.  Other
    ``p`` use the Chambers-Mallows-Stuck construction, whose characteristic
    function is ``exp(-|t|^p)``.
    """
    if not 1.0 <= p <= 2.0:
        raise ValueError(f"p must lie in [1, 2], got {p}")
    rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) else as_seed(seed_or_rng).rng()
    if p == 2.0:
        return rng.standard_normal(size)
    if p == 1.0:
        return rng.standard_cauchy(size)
    v = rng.uniform(-np.pi / 2, np.pi / 2, size)
    w = rng.standard_exponential(size)
    return np.sin(p * v) / np.cos(v) ** (1.0 / p) * (np.cos((1.0 - p) * v) / w) ** ((1.0 - p) / p)


# Median of |X| for the characteristic-function-exp(-|t|^p) law on the grid
# p = 1.00, 1.01, ..., 2.00, from Fourier inversion of the CDF.  At p = 2 the
# sampler switches to the standard normal, whose value is THETA_NORMAL.
THETA_GRID_START = 1.0
THETA_GRID_STEP = 0.01
THETA_TABLE = np.array([
    1.0, 0.9986472234, 0.9973546875, 0.99611944, 0.9949386452, 0.9938095799, 0.9927296297,
    0.9916962861, 0.9907071433, 0.989759895, 0.9888523316, 0.9879823377, 0.9871478895,
    0.9863470517, 0.9855779755, 0.9848388955, 0.9841281279, 0.9834440672, 0.9827851842,
    0.9821500234, 0.9815372004, 0.9809453995, 0.9803733712, 0.9798199297, 0.9792839506,
    0.9787643683, 0.9782601738, 0.9777704122, 0.9772941804, 0.9768306251, 0.9763789403,
    0.9759383652, 0.9755081823, 0.9750877149, 0.9746763258, 0.9742734148, 0.9738784171,
    0.9734908014, 0.9731100685, 0.9727357493, 0.9723674032, 0.9720046169, 0.9716470027,
    0.9712941971, 0.9709458597, 0.9706016715, 0.9702613344, 0.9699245691, 0.969591115,
    0.9692607283, 0.9689331817, 0.968608263, 0.9682857744, 0.9679655315, 0.967647363,
    0.9673311092, 0.9670166217, 0.966703763, 0.9663924052, 0.9660824298, 0.9657737272,
    0.965466196, 0.9651597425, 0.9648542802, 0.9645497293, 0.9642460167, 0.963943075,
    0.9636408423, 0.9633392621, 0.9630382829, 0.9627378575, 0.9624379432, 0.962138501,
    0.961839496, 0.9615408966, 0.9612426745, 0.9609448042, 0.9606472635, 0.9603500323,
    0.9600530933, 0.9597564314, 0.9594600336, 0.9591638888, 0.9588679878, 0.958572323,
    0.9582768886, 0.95798168, 0.9576866939, 0.9573919285, 0.957097383, 0.9568030575,
    0.9565089534, 0.9562150725, 0.955921418, 0.9556279932, 0.9553348027, 0.9550418512,
    0.9547491443, 0.9544566878, 0.9541644882, 0.9538725524,
])
THETA_NORMAL = 0.6744897501960817


def theta_p(p: float) -> float:
    """Median of ``|X|`` for ``X`` drawn by :func:`pstable_sample` at this ``p``."""
    if not 1.0 <= p <= 2.0:
        raise ValueError(f"p must lie in [1, 2], got {p}")
    if p == 2.0:
        return THETA_NORMAL
    grid = THETA_GRID_START + THETA_GRID_STEP * np.arange(THETA_TABLE.size)
    return float(np.interp(p, grid, THETA_TABLE))


def theta_p_quadrature(p: float) -> float:
    """Reference value of :func:`theta_p` by numerical Fourier inversion."""
    if p == 2.0:
        return THETA_NORMAL
    top = 50.0 ** (1.0 / p)

    def mass_below(x):
        f = lambda t: x * np.sinc(t * x / np.pi) * np.exp(-(t**p))
        val, _ = integrate.quad(f, 0.0, top, epsabs=1e-13, epsrel=1e-12, limit=2000)
        return 2.0 / np.pi * val - 0.5

    return optimize.brentq(mass_below, 0.05, 10.0, xtol=1e-13)


@dataclass(frozen=True)
class MedianEstimatorConfig:
    """Number of repetitions and the scale constant of the median estimator."""

    p: float
    tau: int

    @property
    def theta(self) -> float:
        return theta_p(self.p)


def default_tau(n: int, const: float = 8.0, floor: int = 9) -> int:
    """Repetition count growing like ``log n``; kept odd so medians are exact."""
    tau = max(floor, int(ceil(const * log2(max(n, 2)))))
    return tau | 1


def median_estimate(values, p: float, axis=0):
    """Median estimator ``median |values| / theta_p`` of a p-norm.

    ``values`` holds independent p-stable contractions ``<z_j, x>`` along
    ``axis``; returns an estimate of ``||x||_p`` (zero for a zero vector).
    """
    return np.median(np.abs(values), axis=axis) / theta_p(p)


def pstable_norm_estimate(cfg: MedianEstimatorConfig, samples):
    samples = np.asarray(samples, dtype=float)
    if samples.shape[0] < 1:
        raise ValueError("need at least one sample")
    return median_estimate(samples, cfg.p, axis=0)


# ---------------------------------------------------------------------------
# sketch operators


class CountSketch:
    """Count-sketch with ``rows`` buckets over ``cols`` coordinates.

    Column ``j`` has a single nonzero ``g(j)`` in row ``h(j)``.
    """

    def __init__(self, rows: int, cols: int, seed):
        if rows < 1 or cols < 1:
            raise ValueError("count-sketch needs positive dimensions")
        seed = as_seed(seed)
        self.rows, self.cols = int(rows), int(cols)
        keys = np.arange(self.cols, dtype=np.uint64)
        self.h = hash_bucket(keys, seed.child(0).salt(), self.rows)
        self.g = hash_sign(keys, seed.child(1).salt())

    @classmethod
    def from_maps(cls, h, g, rows):
        self = cls.__new__(cls)
        self.h = np.asarray(h, dtype=np.int64)
        self.g = np.asarray(g, dtype=float)
        self.rows, self.cols = int(rows), self.h.size
        return self

    def matrix(self):
        return sp.csr_array((self.g, (self.h, np.arange(self.cols))), shape=(self.rows, self.cols))

    def apply(self, X):
        """``S @ X`` for a vector, a dense matrix or a sparse matrix."""
        if sp.issparse(X):
            return self.matrix() @ X
        X = np.asarray(X, dtype=float)
        if X.shape[0] != self.cols:
            raise ValueError(f"input has {X.shape[0]} rows, sketch expects {self.cols}")
        if X.ndim == 1:
            return np.bincount(self.h, weights=self.g * X, minlength=self.rows)
        out = np.zeros((self.rows,) + X.shape[1:])
        np.add.at(out, self.h, self.g[:, None] * X)
        return out


def cs_apply(S: CountSketch, x):
    return S.apply(x)


class PStableDense:
    """Dense ``m x n`` matrix of i.i.d. p-stable entries times ``scale``."""

    def __init__(self, m: int, n: int, p: float, seed, scale: float = 1.0):
        self.m, self.n, self.p, self.scale = int(m), int(n), float(p), float(scale)
        self.matrix = scale * pstable_sample(p, (self.m, self.n), as_seed(seed).rng())

    def apply(self, X):
        return self.matrix @ X


class PStableSparse:
    """Sparse p-stable transform: random bucket per column times a p-stable diagonal.

    Applying it to ``A`` touches each nonzero of ``A`` once.
    """

    def __init__(self, m: int, n: int, p: float, seed, scale: float = 1.0):
        seed = as_seed(seed)
        rng = seed.rng()
        self.m, self.n, self.p, self.scale = int(m), int(n), float(p), float(scale)
        self.buckets = rng.integers(0, self.m, self.n)
        self.diag = scale * pstable_sample(p, self.n, rng)

    def matrix(self):
        return sp.csr_array((self.diag, (self.buckets, np.arange(self.n))), shape=(self.m, self.n))

    def apply(self, X):
        if sp.issparse(X):
            return self.matrix() @ X
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            return np.bincount(self.buckets, weights=self.diag * X, minlength=self.m)
        out = np.zeros((self.m,) + X.shape[1:])
        np.add.at(out, self.buckets, self.diag[:, None] * X)
        return out


class ExponentialScaler:
    """Diagonal ``1 / u_i^(1/p)`` for i.i.d. standard exponentials ``u_i``."""

    def __init__(self, n: int, p: float, seed):
        self.n, self.p = int(n), float(p)
        u = as_seed(seed).rng().standard_exponential(self.n)
        # exponential draws of exactly 0 have probability zero but guard anyway
        u = np.maximum(u, np.finfo(float).tiny)
        self.diag = u ** (-1.0 / self.p)


def exp_argmax_sample(E: ExponentialScaler, x) -> int:
    """Index maximizing ``|x_i| / u_i^(1/p)``.

    Over the randomness of ``E`` index ``i`` is returned with probability
    ``|x_i|^p / ||x||_p^p``.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (E.n,):
        raise ValueError("vector length does not match the scaler")
    if not np.any(x):
        raise ValueError("cannot sample from a zero vector")
    return int(np.argmax(np.abs(x) * E.diag))


def exp_argmax_draws(x, p: float, count: int, rng: np.random.Generator, chunk: int = 1 << 20) -> np.ndarray:
    """``count`` independent exponential-argmax draws with fresh scalers."""
    x = np.abs(np.asarray(x, dtype=float))
    if not np.any(x):
        raise ValueError("cannot sample from a zero vector")
    out = np.empty(count, dtype=np.int64)
    per = max(1, chunk // x.size)
    for start in range(0, count, per):
        stop = min(count, start + per)
        u = rng.standard_exponential((stop - start, x.size))
        out[start:stop] = np.argmax(x * u ** (-1.0 / p), axis=1)
    return out


# ---------------------------------------------------------------------------
# heavy hitters


@dataclass
class HeavyHitterState:
    tables: list  # tables[level] has shape (reps, width)
    sketch: "DyadicHeavyHitter"


class DyadicHeavyHitter:
    """Count-sketches over dyadic prefixes for l2 heavy-hitter recovery.

    Level ``l`` (1-based) hashes the ``l`` most significant bits of the
    zero-padded ``ceil(log2 n)``-bit index, so every coordinate sharing a
    prefix lands in the same bucket; signs stay per coordinate so a bucket
    squared estimates the l2 mass of its prefix group.  A query walks the
    levels keeping prefixes whose estimated mass clears the threshold.
    """

    def __init__(self, n: int, eps_hh: float, seed, reps: int | None = None, width: int | None = None,
                 confidence: float = 2.0):
        if n < 1:
            raise ValueError("dimension must be positive")
        if not 0.0 < eps_hh <= 1.0:
            raise ValueError("eps_hh must lie in (0, 1]")
        seed = as_seed(seed)
        self.n, self.eps_hh = int(n), float(eps_hh)
        self.bits = max(1, int(ceil(log2(n))))
        self.reps = reps if reps is not None else (2 * int(ceil(confidence * log2(max(n, 2)))) + 1)
        self.width = width if width is not None else int(ceil(16.0 / eps_hh**2))
        self.max_candidates = int(ceil(8.0 / eps_hh**2))
        self._bucket_salt = [[seed.child(l, r, 0).salt() for r in range(self.reps)] for l in range(self.bits)]
        self._sign_salt = [[seed.child(l, r, 1).salt() for r in range(self.reps)] for l in range(self.bits)]

    @property
    def size(self) -> int:
        return self.bits * self.reps * self.width

    def _prefix(self, idx, level):
        return idx >> np.uint64(self.bits - level)

    def sketch(self, x) -> HeavyHitterState:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError("vector length does not match the sketch")
        support = np.flatnonzero(x).astype(np.uint64)
        vals = x[support.astype(np.int64)]
        tables = []
        for level in range(1, self.bits + 1):
            pref = self._prefix(support, level)
            tab = np.empty((self.reps, self.width))
            for r in range(self.reps):
                b = hash_bucket(pref, self._bucket_salt[level - 1][r], self.width)
                s = hash_sign(support, self._sign_salt[level - 1][r])
                tab[r] = np.bincount(b, weights=s * vals, minlength=self.width)
            tables.append(tab)
        return HeavyHitterState(tables, self)

    def _group_mass(self, state, level, prefixes):
        tab = state.tables[level - 1]
        est = np.empty((self.reps, prefixes.size))
        for r in range(self.reps):
            est[r] = tab[r, hash_bucket(prefixes, self._bucket_salt[level - 1][r], self.width)] ** 2
        return np.median(est, axis=0)

    def query(self, state: HeavyHitterState) -> np.ndarray:
        if state is None or state.sketch is not self:
            raise ValueError("state was not produced by this sketch")
        total = float(np.median(np.sum(state.tables[-1] ** 2, axis=1)))
        if total == 0.0:
            return np.empty(0, dtype=np.int64)
        cut = (0.5 * self.eps_hh) ** 2 * total
        cand = np.array([0, 1], dtype=np.uint64)
        for level in range(1, self.bits + 1):
            lo = cand << np.uint64(self.bits - level)
            cand = cand[lo < np.uint64(self.n)]
            if cand.size == 0:
                break
            mass = self._group_mass(state, level, cand)
            keep = mass >= cut
            cand, mass = cand[keep], mass[keep]
            if cand.size > self.max_candidates:
                top = np.argsort(-mass, kind="stable")[: self.max_candidates]
                cand = np.sort(cand[top])
            if level < self.bits:
                cand = np.concatenate([cand << np.uint64(1), (cand << np.uint64(1)) + np.uint64(1)])
        return np.sort(cand.astype(np.int64))


def hh_query(D: DyadicHeavyHitter, state: HeavyHitterState) -> np.ndarray:
    return D.query(state)
