"""Benchmark command line: generate instances, run solvers, write CSV records.

Every subcommand writes one CSV row per trial.  Trial ``t`` uses the
algorithm seed ``Seed(seed).child(t)`` on a fixed instance, so the CSV body
is a function of the arguments only.  Wall times vary between runs and are
written only with ``--timings``; a summary footer goes to stderr.

Exit codes: 0 success, 2 invalid arguments, 3 oracle budget exceeded,
4 invariant failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.sparse as sp

from . import allpairs as ap
from . import lra as lra_mod
from .kron import KronDesign
from .leverage import residual_norm, solve_l2
from .lp_regression import LpConfig, solve_lp
from .oracle import BudgetExceeded, OracleBudget, exact_lp_regression, materialize
from .sketching import Seed

EXIT_OK, EXIT_ARGS, EXIT_BUDGET, EXIT_INVARIANT = 0, 2, 3, 4

FIELDS = ["trial", "algorithm", "p", "m", "seed", "rows_used", "objective", "oracle_objective", "r_e"]
TIMING_FIELDS = ["t_ours", "t_bf", "r_t"]


class InvalidArgument(ValueError):
    pass


class InvariantFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# instances and Matrix Market I/O


def generate_instance(dims, seed: int):
    """Gaussian factors ``n_i x d_i`` and a Gaussian response of length ``prod n_i``."""
    if len(dims) < 2 or len(dims) % 2:
        raise InvalidArgument("generator needs pairs n_i d_i")
    rng = Seed(seed, 0).rng()
    shapes = [(int(dims[k]), int(dims[k + 1])) for k in range(0, len(dims), 2)]
    if any(n < 1 or d < 1 for n, d in shapes):
        raise InvalidArgument("dimensions must be positive")
    factors = [rng.standard_normal(s) for s in shapes]
    b = rng.standard_normal(int(np.prod([s[0] for s in shapes])))
    return factors, b


def write_mm(path, M):
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    scipy.io.mmwrite(path, M, precision=17)


def read_mm(path) -> np.ndarray:
    M = scipy.io.mmread(path)
    return M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)


def read_table(path) -> np.ndarray:
    """Observations as rows; Matrix Market or comma separated text."""
    if str(path).endswith(".mtx"):
        return read_mm(path)
    return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=float))


def load_design(args) -> KronDesign:
    if args.gen:
        factors, b = generate_instance(args.gen, args.gen_seed)
    else:
        if not args.factors or not args.b:
            raise InvalidArgument("give --gen or both --factors and --b")
        factors = [read_mm(f) for f in args.factors]
        b = read_mm(args.b).ravel()
    return KronDesign(tuple(factors), b)


# ---------------------------------------------------------------------------
# records


@dataclass
class BenchRecord:
    trial: int
    algorithm: str
    p: float | str
    m: int | str
    seed: int
    rows_used: int
    objective: float
    oracle_objective: float | None = None
    t_ours: float = 0.0
    t_bf: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def r_e(self):
        if self.oracle_objective is None:
            return None
        if self.oracle_objective == 0.0:
            return 0.0 if self.objective == 0.0 else float("inf")
        return 100.0 * abs(self.objective - self.oracle_objective) / self.oracle_objective

    @property
    def r_t(self):
        if self.t_bf is None or self.t_bf <= 0:
            return None
        return self.t_ours / self.t_bf

    def row(self, timings: bool):
        fmt = lambda v: "" if v is None else (f"{v:.12g}" if isinstance(v, float) else str(v))
        out = [self.trial, self.algorithm, self.p, self.m, self.seed, self.rows_used, self.objective,
               self.oracle_objective, self.r_e]
        if timings:
            out += [self.t_ours, self.t_bf, self.r_t]
        return [fmt(v) for v in out]


def _oracle_value(fn, enabled: bool):
    if not enabled:
        return None, None
    t = time.perf_counter()
    value = fn()
    return value, time.perf_counter() - t


def _check(record: BenchRecord):
    if not np.isfinite(record.objective) or record.objective < 0:
        raise InvariantFailure(f"trial {record.trial}: objective {record.objective} is not a finite norm")
    if record.r_e is not None and not record.r_e >= 0:
        raise InvariantFailure(f"trial {record.trial}: r_e = {record.r_e}")
    return record


# ---------------------------------------------------------------------------
# runners: each returns (oracle thunk, per-trial thunk)


def _budget(args):
    return OracleBudget(max_entries=args.oracle_budget, max_lp_rows=max(args.oracle_budget // 100, 10**5))


def runner_l2(args):
    design = load_design(args)

    def oracle():
        W = materialize(design, _budget(args))
        return exact_lp_regression(W, design.response, 2.0, _budget(args)).objective

    def trial(seed):
        t = time.perf_counter()
        res = solve_l2(design, args.eps, args.delta, seed, m=args.rows)
        elapsed = time.perf_counter() - t
        return residual_norm(design, res.x, 2.0), len(res.sampler), elapsed

    return oracle, trial, 2.0, args.rows or ""


def lp_config(args) -> LpConfig:
    r1, r2 = args.r1, args.r2
    if args.rows is not None:
        # three quarters of the rows go to basis samples, the rest to residual samples
        r1 = r1 if r1 is not None else max(1, (3 * args.rows) // 4)
        r2 = r2 if r2 is not None else max(1, args.rows - (3 * args.rows) // 4)
    return LpConfig(r1=r1, r2=r2, hh_exponent=4.0 * args.hh_scale)


def runner_lp(args):
    design = load_design(args)
    config = lp_config(args)

    def oracle():
        W = materialize(design, _budget(args))
        return exact_lp_regression(W, design.response, args.p, _budget(args)).objective

    def trial(seed):
        t = time.perf_counter()
        res = solve_lp(design, args.p, args.eps, args.delta, seed, config)
        elapsed = time.perf_counter() - t
        return residual_norm(design, res.x, args.p), len(res.sigma), elapsed

    return oracle, trial, args.p, args.rows or ""


def runner_allpairs(args):
    if args.gen:
        if len(args.gen) != 2:
            raise InvalidArgument("allpairs --gen takes n d")
        rng = Seed(args.gen_seed, 0).rng()
        n, d = (int(v) for v in args.gen)
        A = rng.standard_normal((n, d))
        b = A @ rng.standard_normal(d) + rng.standard_normal(n)
    else:
        if not args.data:
            raise InvalidArgument("give --gen n d or --data FILE")
        table = read_table(args.data)
        A, b = table[:, :-1], table[:, -1]
    problem = ap.AllPairsProblem(A, b)

    def oracle():
        budget = _budget(args)
        budget.check_entries(problem.n**2 * problem.d, "pair matrix")
        Ab, bb = ap.materialize_pairs(problem)
        return exact_lp_regression(Ab, bb, args.p, budget).objective

    def trial(seed):
        t = time.perf_counter()
        res = ap.allpairs_solve(problem, args.p, args.eps, args.delta, seed)
        elapsed = time.perf_counter() - t
        return problem.residual_norm(res.x, args.p), res.rows, elapsed

    return oracle, trial, args.p, ""


def runner_lra(args):
    design = load_design(args) if args.b or args.gen else None
    if design is None:
        if not args.factors:
            raise InvalidArgument("give --gen or --factors")
        design = KronDesign(tuple(read_mm(f) for f in args.factors))
    design = KronDesign(design.factors)

    def oracle():
        A = materialize(design, _budget(args))
        return lra_mod.optimal_rank_cost(A, args.k)

    def trial(seed):
        t = time.perf_counter()
        res = lra_mod.kron_lra(design, args.k, args.eps, seed)
        elapsed = time.perf_counter() - t
        return lra_mod.lra_cost(res), res.k, elapsed

    return oracle, trial, "", ""


def runner_trank(args):
    if args.gen:
        if len(args.gen) != 1:
            raise InvalidArgument("trank --gen takes n")
        n = int(args.gen[0])
        A = Seed(args.gen_seed, 0).rng().standard_normal((n * n, n * n))
    elif args.matrix:
        A = read_mm(args.matrix)
    else:
        raise InvalidArgument("give --gen n or --matrix FILE")

    def oracle():
        return float(np.sqrt(lra_mod.trank_tail(A, args.k)))

    def trial(seed):
        t = time.perf_counter()
        res = lra_mod.trank_approx(A, args.k, sketch_rows=args.sketch_rows, seed=seed)
        elapsed = time.perf_counter() - t
        return float(np.linalg.norm(res.materialize() - A)), res.k, elapsed

    return oracle, trial, "", ""


RUNNERS = {"l2": runner_l2, "lp": runner_lp, "allpairs": runner_allpairs, "lra": runner_lra, "trank": runner_trank}


def cmd_solve(args, out, err) -> list:
    _validate(args)
    oracle, trial, p, m = RUNNERS[args.command](args)
    oracle_value, oracle_time = _oracle_value(oracle, args.oracle)
    base = Seed(args.seed)

    def one(t):
        seed = base.child(t)
        obj, rows, elapsed = trial(seed)
        return _check(BenchRecord(t, args.command, p, m, args.seed, rows, float(obj), oracle_value, elapsed,
                                  oracle_time))

    if args.parallel_trials and args.trials > 1:
        with ThreadPoolExecutor() as pool:
            records = list(pool.map(one, range(args.trials)))
    else:
        records = [one(t) for t in range(args.trials)]
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(FIELDS + (TIMING_FIELDS if args.timings else []))
    for rec in records:
        writer.writerow(rec.row(args.timings))
    _footer(records, args, err)
    return records


def _footer(records, args, err):
    r_e = [r.r_e for r in records if r.r_e is not None]
    times = [r.t_ours for r in records]
    parts = [f"{args.command}: {len(records)} trials"]
    if r_e:
        parts.append(f"r_e mean {np.mean(r_e):.4g}% median {np.median(r_e):.4g}%")
    parts.append(f"T_ours mean {np.mean(times):.4g}s median {np.median(times):.4g}s")
    if records and records[0].t_bf is not None:
        parts.append(f"T_bf {records[0].t_bf:.4g}s")
        r_t = [r.r_t for r in records]
        parts.append(f"r_t mean {np.mean(r_t):.4g} median {np.median(r_t):.4g}")
    if args.parallel_trials:
        parts.append("timings unreliable (parallel trials)")
    print("# " + "; ".join(parts), file=err)


def _validate(args):
    if getattr(args, "trials", 1) < 1:
        raise InvalidArgument("--trials must be >= 1")
    if hasattr(args, "eps") and not 0.0 < args.eps < 0.5:
        raise InvalidArgument("--eps must lie in (0, 1/2)")
    if hasattr(args, "delta") and not 0.0 < args.delta < 1.0:
        raise InvalidArgument("--delta must lie in (0, 1)")
    if hasattr(args, "p") and not 1.0 <= args.p <= 2.0:
        raise InvalidArgument("--p must lie in [1, 2]")
    if args.command == "l2" and args.p != 2.0:
        raise InvalidArgument("l2 solves p = 2 only; use lp for p < 2")
    if args.command == "lp" and args.p >= 2.0:
        raise InvalidArgument("lp needs p < 2; use l2 for p = 2")
    if getattr(args, "rows", None) is not None and args.rows < 1:
        raise InvalidArgument("--rows must be positive")
    if getattr(args, "sketch_rows", None) is not None and args.sketch_rows < args.k:
        raise InvalidArgument("--sketch-rows must be at least --k")
    if getattr(args, "k", 1) < 1:
        raise InvalidArgument("--k must be positive")


def cmd_gen(args, out, err):
    factors, b = generate_instance(args.dims, args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    paths = []
    for i, A in enumerate(factors, start=1):
        paths.append(os.path.join(args.out_dir, f"A{i}.mtx"))
        write_mm(paths[-1], A)
    paths.append(os.path.join(args.out_dir, "b.mtx"))
    write_mm(paths[-1], b)
    for p in paths:
        print(p, file=out)


# ---------------------------------------------------------------------------
# parser


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kronsketch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="write a Gaussian Kronecker instance as Matrix Market files")
    gen.add_argument("dims", nargs="+", type=_positive_int, help="n_1 d_1 n_2 d_2 [...]")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out-dir", default=".")

    def common(sp_, p_default=None):
        sp_.add_argument("--seed", type=int, default=0)
        sp_.add_argument("--trials", type=int, default=1)
        sp_.add_argument("--eps", type=float, default=0.1)
        sp_.add_argument("--delta", type=float, default=0.1)
        if p_default is not None:
            sp_.add_argument("--p", type=float, default=p_default)
        sp_.add_argument("--oracle", action=argparse.BooleanOptionalAction, default=True)
        sp_.add_argument("--oracle-budget", type=int, default=10**7, help="max dense entries the oracle may form")
        sp_.add_argument("--out", help="CSV output file (default stdout)")
        sp_.add_argument("--json", action="store_true", help="also print records as JSON to stderr")
        sp_.add_argument("--timings", action="store_true", help="add wall-time columns")
        sp_.add_argument("--parallel-trials", action="store_true")
        sp_.add_argument("--gen", nargs="+", type=_positive_int, help="generate the instance instead of reading it")
        sp_.add_argument("--gen-seed", type=int, default=0)

    for name in ("l2", "lp"):
        s = sub.add_parser(name, help=f"{name} Kronecker regression")
        common(s, 2.0 if name == "l2" else 1.0)
        s.add_argument("--factors", nargs="+")
        s.add_argument("--b")
        s.add_argument("-m", "--rows", type=int)
        if name == "lp":
            s.add_argument("--r1", type=_positive_int)
            s.add_argument("--r2", type=_positive_int)
            s.add_argument("--hh-scale", type=float, default=1.0, help="heavy-hitter exponent multiplier")

    s = sub.add_parser("allpairs", help="all-pairs regression")
    common(s, 1.0)
    s.add_argument("--data", help="observations, last column the response (.mtx or CSV)")

    s = sub.add_parser("lra", help="low-rank approximation of a Kronecker product")
    common(s)
    s.set_defaults(eps=0.3)
    s.add_argument("--factors", nargs="+")
    s.add_argument("--b", help=argparse.SUPPRESS)
    s.add_argument("--k", type=int, default=3)

    s = sub.add_parser("trank", help="low Kronecker-rank approximation")
    common(s)
    s.add_argument("--matrix")
    s.add_argument("--k", type=int, default=1)
    s.add_argument("--sketch-rows", type=int, help="sketch the rearranged matrix instead of a full SVD")

    s = sub.add_parser("selftest", help="run the invariant suites at reduced sizes")
    s.add_argument("--json", action="store_true")
    return parser


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "gen":
            cmd_gen(args, out, err)
            return EXIT_OK
        if args.command == "selftest":
            from .selftest import run_selftest

            return run_selftest(as_json=args.json, out=out)
        buffer = io.StringIO()
        records = cmd_solve(args, buffer, err)
        if args.out:
            with open(args.out, "w", newline="") as fh:
                fh.write(buffer.getvalue())
        else:
            out.write(buffer.getvalue())
        if args.json:
            payload = [dict(zip(FIELDS + TIMING_FIELDS, rec.row(True))) for rec in records]
            print(json.dumps(payload), file=err)
        return EXIT_OK
    except (InvalidArgument, ValueError) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_ARGS
    except BudgetExceeded as exc:
        print(f"oracle budget exceeded: {exc}", file=err)
        return EXIT_BUDGET
    except InvariantFailure as exc:
        print(f"invariant failure: {exc}", file=err)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
