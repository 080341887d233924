"""Command-line experiment runner.

Exit codes: 0 success, 1 usage or input error, 2 breakdown or no
convergence, 3 runs not bit-identical (``compare``) or an oracle mismatch
(``oracle``).
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .accumulators import exact_dot, superacc_round
from .hexfloat import float_hex
from .reduction import DotMode, ReductionPlan, dot_global
from .solvers import SolveReport, SolverConfig, Variant, build_rhs, pbicgstab, pipelined_pbicgstab
from .sparsemat import (CsrMatrix, MatrixMarketError, RankWorld, gen_band, gen_poisson27,
                        read_matrix_market)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NOT_CONVERGED = 2
EXIT_MISMATCH = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------
# argument plumbing

def _problem_args(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--matrix", metavar="PATH", help="Matrix Market coordinate file")
    src.add_argument("--poisson", type=int, metavar="M", help="27-point Poisson on an M^3 grid")
    src.add_argument("--band", type=int, nargs=2, metavar=("N", "HB"),
                     help="band matrix of size N and half bandwidth HB")
    p.add_argument("--perturb", action="store_true", help="make the Poisson matrix unsymmetric")
    p.add_argument("--band-seed", type=int, default=0)
    p.add_argument("--signed", action="store_true", help="random signs on band off-diagonals")
    p.add_argument("--variant", choices=[v.value for v in Variant], default="standard")
    p.add_argument("--mode", choices=[m.value for m in DotMode], default="exblas")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iters", type=int, default=None)


def _load_problem(args) -> tuple[CsrMatrix, str]:
    if args.perturb and args.poisson is None:
        raise UsageError("--perturb only applies to --poisson")
    if args.signed and args.band is None:
        raise UsageError("--signed only applies to --band")
    try:
        if args.matrix is not None:
            return read_matrix_market(args.matrix), f"matrix {args.matrix}"
        if args.poisson is not None:
            label = f"poisson27 m={args.poisson}" + (" perturbed" if args.perturb else "")
            return gen_poisson27(args.poisson, args.perturb), label
        n, hb = args.band
        return gen_band(n, hb, args.band_seed, args.signed), f"band n={n} hb={hb}"
    except (OSError, MatrixMarketError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _config(args) -> SolverConfig:
    try:
        return SolverConfig(args.tol, args.max_iters, Variant(args.variant))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _make_plan(policy: str, seed: int) -> ReductionPlan:
    return ReductionPlan(policy, seed if policy == "random" else 0)


def _int_list(text: str) -> list[int]:
    try:
        values = [int(t) for t in text.split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated integer list: {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _str_list(text: str) -> list[str]:
    return [t for t in text.split(",") if t]


def run_solver(A: CsrMatrix, config: SolverConfig, mode: str, nranks: int,
               plan: ReductionPlan) -> SolveReport:
    if not 1 <= nranks <= A.n:
        raise UsageError(f"--ranks must lie in 1..{A.n}")
    world = RankWorld.create(A.n, nranks, mode, plan)
    b = build_rhs(A, world)
    fn = pbicgstab if config.variant is Variant.STANDARD else pipelined_pbicgstab
    return fn(world, A, b, config)


# --------------------------------------------------------------------------
# solve

def write_history(path: Path, report: SolveReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "tau_hex", "tau_dec"])
        for j, tau in report.history:
            w.writerow([j, float_hex(tau), repr(tau)])


def cmd_solve(args) -> int:
    A, label = _load_problem(args)
    config = _config(args)
    plan = _make_plan(args.plan, args.seed)
    report = run_solver(A, config, args.mode, args.ranks, plan)
    summary = {"problem": label, "n": A.n, "nnz": A.nnz, "tol": repr(config.tol)}
    summary.update(report.summary())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_history(out / "history.csv", report)
        (out / "report.json").write_text(json.dumps(summary, indent=2) + "\n")
    for key in ("problem", "converged", "iterations", "initial_residual_hex",
                "final_scaled_residual_hex", "final_true_residual", "breakdown"):
        print(f"{key}: {summary[key]}")
    for msg in report.warnings:
        print(f"warning: {msg}", file=sys.stderr)
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


# --------------------------------------------------------------------------
# compare

def cmd_compare(args) -> int:
    A, label = _load_problem(args)
    config = _config(args)
    plans = []
    for policy in args.plans:
        if policy == "random":
            plans.extend(ReductionPlan("random", s) for s in args.seeds)
        else:
            try:
                plans.append(ReductionPlan(policy))
            except ValueError as exc:
                raise UsageError(str(exc)) from exc
    if args.repeats < 1:
        raise UsageError("--repeats must be at least 1")

    runs: list[tuple[str, SolveReport]] = []
    for nranks in args.ranks:
        for plan in plans:
            for rep in range(args.repeats):
                report = run_solver(A, config, args.mode, nranks, plan)
                runs.append((f"P={nranks} {plan.label()} #{rep}", report))

    groups: dict[tuple, list[int]] = {}
    for i, (_, report) in enumerate(runs):
        groups.setdefault(report.fingerprint(), []).append(i)
    reps = [members[0] for members in groups.values()]

    print(f"problem: {label}; variant {config.variant.value}; mode {args.mode}; {len(runs)} runs")
    for g, members in enumerate(groups.values()):
        names = ", ".join(runs[i][0] for i in members)
        rep = runs[members[0]][1]
        print(f"group {g}: {len(members)} run(s), {rep.iterations} iterations: {names}")
    width = max(len(float_hex(t)) for i in reps for _, t in runs[i][1].history)
    print("iter  " + "  ".join(f"group {g}".ljust(width) for g in range(len(reps))))
    depth = max(len(runs[i][1].history) for i in reps)
    for row in range(depth):
        cells = []
        for i in reps:
            hist = runs[i][1].history
            text = float_hex(hist[row][1]) if row < len(hist) else "-"
            cells.append(text.ljust(width))
        mark = " *" if len(set(cells)) > 1 else ""
        print(f"{row:<5} " + "  ".join(cells) + mark)
    reproducible = len(groups) == 1
    print("verdict: " + ("REPRODUCIBLE" if reproducible else "NOT-REPRODUCIBLE"))
    return EXIT_OK if reproducible else EXIT_MISMATCH


# --------------------------------------------------------------------------
# oracle

def ulp_distance(a: float, b: float) -> int:
    """Number of binary64 values between ``a`` and ``b`` (0 iff bit-equal up to the zero sign)."""
    if math.isnan(a) or math.isnan(b):
        return 0 if math.isnan(a) and math.isnan(b) else 2 ** 64

    def key(x):
        i = int(np.float64(x).view(np.int64))
        return i if i >= 0 else -(i & 0x7FFF_FFFF_FFFF_FFFF)
    return abs(key(a) - key(b))


def random_dot_instance(rng: np.random.Generator, max_len: int, exp_range: int):
    """Random vectors with decimal element exponents in ``[-exp_range, exp_range]``.

    Every third instance is a cancellation case: the second half repeats
    the first with negated ``y`` and ``x`` perturbed in its low bits.
    """
    n = int(rng.integers(0, max_len + 1))
    mant = lambda k: rng.uniform(1.0, 10.0, k) * rng.choice([-1.0, 1.0], k)
    expo = lambda k: 10.0 ** rng.integers(-exp_range, exp_range + 1, k).astype(np.float64)
    x = mant(n) * expo(n)
    y = mant(n) * expo(n)
    if n >= 2 and rng.integers(3) == 0:
        h = n // 2
        x[h:2 * h] = x[:h] * (1.0 + rng.uniform(-2.0 ** -30, 2.0 ** -30, h))
        y[h:2 * h] = -y[:h]
    return x, y


def run_oracle(trials: int, max_len: int, exp_range: int, modes: Sequence[str],
               seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    stats = {m: {"mismatches": 0, "warned": 0, "max_ulp": 0} for m in modes}
    policies = ("leftfold", "balanced", "random")
    for t in range(trials):
        x, y = random_dot_instance(rng, max_len, exp_range)
        expected = superacc_round(exact_dot(x, y))
        nranks = int(rng.integers(1, 9)) if len(x) >= 8 else 1
        plan = ReductionPlan(policies[t % 3], t)
        for m in modes:
            world = RankWorld.create(len(x), nranks, m, plan)
            got = dot_global(world, x, y)
            warned = bool(world.events)
            d = ulp_distance(got, expected)
            s = stats[m]
            s["warned"] += warned
            s["max_ulp"] = max(s["max_ulp"], d)
            s["mismatches"] += d != 0
    return {"trials": trials, "max_len": max_len, "exp_range": exp_range, "seed": seed,
            "modes": stats}


def cmd_oracle(args) -> int:
    import warnings

    from .reduction import FpeOverflowWarning

    if args.trials < 0 or args.max_len < 0 or args.exp_range < 0:
        raise UsageError("--trials, --max-len and --exp-range must be non-negative")
    modes = ["fpe", "exblas"] if args.mode == "both" else [args.mode]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FpeOverflowWarning)
        result = run_oracle(args.trials, args.max_len, args.exp_range, modes, args.seed)
    ok = True
    for m, s in result["modes"].items():
        print(f"{m}: {s['mismatches']} mismatches, {s['warned']} warned, "
              f"max discrepancy {s['max_ulp']} ulp over {args.trials} trials")
        ok &= s["mismatches"] == 0
    if args.out:
        Path(args.out).write_text(json.dumps(result, indent=2) + "\n")
    print("verdict: " + ("PASS" if ok else "FAIL"))
    return EXIT_OK if ok else EXIT_MISMATCH


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="reprobicg", description="Reproducible BiCGStab experiments")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    solve = sub.add_parser("solve", help="solve one system and write its residual history")
    _problem_args(solve)
    solve.add_argument("--ranks", type=int, default=1)
    solve.add_argument("--plan", choices=["leftfold", "balanced", "random"], default="balanced")
    solve.add_argument("--seed", type=int, default=0, help="seed of the random reduction tree")
    solve.add_argument("--out", metavar="DIR", help="write history.csv and report.json here")
    solve.set_defaults(func=cmd_solve)

    compare = sub.add_parser("compare", help="check bit-identity across ranks, plans and repeats")
    _problem_args(compare)
    compare.add_argument("--ranks", type=_int_list, default=[1, 2, 4], help="e.g. 1,2,4")
    compare.add_argument("--plans", type=_str_list, default=["leftfold", "balanced", "random"])
    compare.add_argument("--seeds", type=_int_list, default=[0], help="random-tree seeds")
    compare.add_argument("--repeats", type=int, default=1)
    compare.set_defaults(func=cmd_compare)

    oracle = sub.add_parser("oracle", help="check dot products against the exact accumulator")
    oracle.add_argument("--trials", type=int, default=10_000)
    oracle.add_argument("--max-len", type=int, default=1000)
    oracle.add_argument("--exp-range", type=int, default=150,
                        help="decimal exponent bound of the vector elements")
    oracle.add_argument("--mode", choices=["fpe", "exblas", "both"], default="both")
    oracle.add_argument("--seed", type=int, default=0)
    oracle.add_argument("--out", metavar="FILE", help="write the JSON summary here")
    oracle.set_defaults(func=cmd_oracle)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
