"""Command-line entry point: ``caterpillars <subcommand> [flags]``.

Every table starts with ``#`` header lines (CSV) or a header object
(JSON lines) recording the tool version and the resolved configuration.
"""

from __future__ import annotations

import argparse
import contextlib
import shlex
import sys

from . import __version__
from .montecarlo import (
    ExperimentConfig,
    aggregate,
    default_workers,
    output_header,
    run_ensemble,
    variance_scaling_probe,
    write_table,
)
from .rates import RateDomainError, asymptotic_validator, parse_measure, write_rate_dump
from .theory import limit_constant, x_r, x_up
from .verify import all_passed, run_suite

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_NUMERIC = 3

AGG_COLUMNS = ["n", "r", "t", "mean", "sd", "ci_low", "ci_high", "count", "target", "deviation", "degenerate", "failures"]
VALIDATOR_COLUMNS = ["check", "b", "deviation", "decreasing"]
INFORMATIONAL_CHECKS = ("second_moment_b2alpha",)
VARIANCE_TARGETS = ("none", "alpha-3", "1-alpha", "2/alpha-2")


def _shared(parser: argparse.ArgumentParser, *, measure=True, replicas=True, workers=True) -> None:
    if measure:
        parser.add_argument("--measure", default="kind=beta alpha=1.5", help="measure spec, e.g. 'kind=beta alpha=1.5 scale=1'")
    parser.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    if replicas:
        parser.add_argument("--replicas", type=int, default=100, help="replicas per n (default 100)")
    parser.add_argument("--output", default="-", help="output path, '-' for stdout (default)")
    parser.add_argument("--format", choices=("csv", "jsonl"), default="csv", help="table format (default csv)")
    if workers:
        parser.add_argument("--workers", type=int, default=None, help="worker processes (default: available CPUs)")
    parser.add_argument("--config", metavar="FILE", default=None,
                        help="key = value file of flags; flags given on the command line win")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="caterpillars",
        description="Exact simulation and limit theory for r-caterpillar counts in Lambda-coalescents.",
    )
    parser.add_argument("--version", action="version", version=f"caterpillars {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("rates", help="dump merger rates and run the large-b validator")
    _shared(p, replicas=False, workers=False)
    p.add_argument("--b", type=int, nargs="+", default=[10], help="block counts to dump (default 10)")
    p.add_argument("--validate-b", type=int, nargs="*", default=[100, 1000, 10000, 100000],
                   help="b grid for the validator; empty to skip")
    p.add_argument("--x-grid", type=float, nargs="+", default=[0.25, 0.5, 1.0], help="fractions x in (0, 1]")
    p.add_argument("--report", default="-", help="validator table path, '-' for stderr (default)")
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser("theory", help="closed-form curves or limit constants")
    _shared(p, measure=False, replicas=False, workers=False)
    p.add_argument("--alpha", type=float, nargs="+", default=[1.5], help="alpha values in (1, 2]")
    p.add_argument("--r", type=int, nargs="+", default=None, help="r values (default 2..5 or 0..4 for curves)")
    p.add_argument("--t", type=float, nargs="+", default=[0.25, 0.5, 1.0, 2.0, 4.0], help="rescaled times for curves")
    p.add_argument("--table", choices=("limits", "curves"), default="limits", help="which table (default limits)")
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("totals", help="replicated caterpillar totals versus the limit constants")
    _shared(p)
    p.add_argument("--n", type=int, nargs="+", required=True, help="sample sizes")
    p.add_argument("--r", type=int, nargs="+", default=[2, 3, 4], help="caterpillar sizes to report")
    p.add_argument("--raw", action="store_true", help="emit per-replica rows instead of the summary")
    p.add_argument("--tolerance", type=float, default=None, help="fail if any deviation exceeds this")
    p.set_defaults(func=cmd_totals)

    p = sub.add_parser("trajectory", help="replicated rescaled trajectories versus x_r(t)")
    _shared(p)
    p.add_argument("--n", type=int, nargs="+", required=True, help="sample sizes")
    p.add_argument("--t", type=float, nargs="+", default=[0.25, 0.5, 1.0, 2.0, 4.0], help="rescaled time grid")
    p.add_argument("--r-max", type=int, default=3, help="largest caterpillar size tracked (default 3)")
    p.add_argument("--raw", action="store_true", help="emit per-replica rows instead of the summary")
    p.add_argument("--tolerance", type=float, default=None, help="fail if any deviation exceeds this")
    p.set_defaults(func=cmd_trajectory)

    p = sub.add_parser("verify", help="engine equivalence and exact identity checks")
    _shared(p, measure=False, replicas=False, workers=False)
    p.add_argument("--small-n", type=int, default=8, help="largest n for the equivalence check (default 8, max 64)")
    p.add_argument("--runs", type=int, default=1000, help="seeded runs per (n, measure) (default 1000)")
    p.add_argument("--fast", action="store_true", help="smaller identity and integrator grids")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("variance", help="log-log slope of the X_0 increment variance against n")
    _shared(p)
    p.add_argument("--n", type=int, nargs="+", default=[1000, 10000, 100000], help="n grid spanning two decades")
    p.add_argument("--t0", type=float, default=0.5, help="window start in rescaled time (default 0.5)")
    p.add_argument("--dt", type=float, default=0.1, help="window length (default 0.1)")
    p.add_argument("--target", choices=VARIANCE_TARGETS, default="none", help="exponent to check the slope against")
    p.add_argument("--tolerance", type=float, default=0.3, help="allowed |slope - target| (default 0.3)")
    p.set_defaults(func=cmd_variance)
    return parser


@contextlib.contextmanager
def _open_out(path: str, fallback=None):
    if path == "-":
        yield fallback or sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _header(args) -> dict:
    config = {k: v for k, v in vars(args).items() if k not in ("func", "output", "workers", "report", "config")}
    if "measure" in config:
        config["measure"] = parse_measure(config["measure"]).spec()
    return output_header(config)


def _workers(args) -> int:
    return args.workers if args.workers is not None else default_workers()


def cmd_rates(args) -> int:
    measure = parse_measure(args.measure)
    header = _header(args)
    with _open_out(args.output) as fh:
        for key, value in header.items():
            fh.write(f"# {key}={value}\n")
        write_rate_dump(measure, args.b, fh)
    if not args.validate_b:
        return EXIT_OK
    report = asymptotic_validator(measure, args.validate_b, args.x_grid)
    with _open_out(args.report, sys.stderr) as fh:
        if not report.applicable:
            fh.write(f"# {report.reason}\n")
            return EXIT_OK
        rows = [dict(zip(VALIDATOR_COLUMNS, row)) for row in report.rows()]
        write_table(rows, VALIDATOR_COLUMNS, fh, args.format, header)
    failed = [name for name, check in report.checks.items() if name not in INFORMATIONAL_CHECKS and not check.decreasing]
    for name in failed:
        print(f"validator check {name} is not strictly decreasing", file=sys.stderr)
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def cmd_theory(args) -> int:
    rows = []
    if args.table == "limits":
        rs = args.r if args.r is not None else [2, 3, 4, 5]
        for alpha in args.alpha:
            for r in rs:
                rows.append({"alpha": alpha, "r": r, "limit_constant": limit_constant(alpha, r)})
        columns = ["alpha", "r", "limit_constant"]
    else:
        rs = args.r if args.r is not None else [0, 1, 2, 3, 4]
        for alpha in args.alpha:
            for r in rs:
                for t in args.t:
                    up = x_up(alpha, r, t) if r >= 2 else None
                    rows.append({"alpha": alpha, "r": r, "t": t, "x_r": x_r(alpha, r, t), "x_up_r": up})
        columns = ["alpha", "r", "t", "x_r", "x_up_r"]
    with _open_out(args.output) as fh:
        write_table(rows, columns, fh, args.format, _header(args))
    return EXIT_OK


def _config(args, mode, time_grid=()) -> ExperimentConfig:
    r_max = max(args.r) if mode == "totals" else args.r_max
    return ExperimentConfig(
        measure=args.measure, n_values=args.n, r_max=r_max, replicas=args.replicas,
        master_seed=args.seed, mode=mode, time_grid=list(time_grid), output=args.output,
        fmt=args.format, workers=_workers(args),
    )


def _check_tolerance(rows, tolerance) -> int:
    if tolerance is None:
        return EXIT_OK
    worst = max(row["deviation"] for row in rows if row["deviation"] is not None)
    if worst > tolerance:
        print(f"max deviation {worst:.6g} exceeds tolerance {tolerance}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def _report_failures(results) -> int:
    failed = [res for res in results if res.failed]
    for res in failed:
        print(f"replica {res.replica} at n={res.n} failed: {res.error}", file=sys.stderr)
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_totals(args) -> int:
    if min(args.r) < 2:
        raise RateDomainError("--r values must be at least 2")
    config = _config(args, "totals")
    results = run_ensemble(config)
    header = _header(args)
    with _open_out(args.output) as fh:
        if args.raw:
            rows = [
                {"n": res.n, "r": r, "xi_r": round(res.values[r] * res.n), "replica": res.replica, "seed": res.seed}
                for res in results if not res.failed for r in args.r
            ]
            write_table(rows, ["n", "r", "xi_r", "replica", "seed"], fh, args.format, header)
            status = EXIT_OK
        else:
            table = aggregate(results, config.lambda_measure)
            rows = [row for row in table.as_dicts() if row["r"] in args.r]
            write_table(rows, AGG_COLUMNS, fh, args.format, header)
            status = _check_tolerance(rows, args.tolerance)
    return _report_failures(results) or status


def cmd_trajectory(args) -> int:
    config = _config(args, "trajectory", args.t)
    results = run_ensemble(config)
    header = _header(args)
    with _open_out(args.output) as fh:
        if args.raw:
            rows = [
                {"t_scaled": t, "r": r, "X_r": res.values[r][i], "replica": res.replica, "n": res.n}
                for res in results if not res.failed
                for i, t in enumerate(config.time_grid) for r in sorted(res.values)
            ]
            write_table(rows, ["t_scaled", "r", "X_r", "replica", "n"], fh, args.format, header)
            status = EXIT_OK
        else:
            table = aggregate(results, config.lambda_measure, config.time_grid)
            rows = table.as_dicts()
            write_table(rows, AGG_COLUMNS, fh, args.format, header)
            status = _check_tolerance(rows, args.tolerance)
    return _report_failures(results) or status


def cmd_verify(args) -> int:
    if not 2 <= args.small_n <= 64 or args.runs < 1:
        raise RateDomainError("need 2 <= --small-n <= 64 and --runs >= 1")
    results = run_suite(args.small_n, args.runs, args.seed, args.fast)
    for res in results:
        print(res.line(), file=sys.stderr)
    rows = [{"check": r.name, "passed": r.passed, "detail": r.detail} for r in results]
    with _open_out(args.output) as fh:
        write_table(rows, ["check", "passed", "detail"], fh, args.format, _header(args))
    return EXIT_OK if all_passed(results) else EXIT_CHECK_FAILED


def cmd_variance(args) -> int:
    measure = parse_measure(args.measure)
    probe = variance_scaling_probe(measure, args.n, args.seed, args.replicas, args.t0, args.dt, _workers(args))
    refs = probe.reference_exponents
    rows = [{"n": n, "variance": v} for n, v in zip(probe.n_grid, probe.variances)]
    summary = {"slope": probe.slope, "slope_se": probe.slope_se, "slope_se_robust": probe.slope_se_robust, **{f"ref[{k}]": v for k, v in refs.items()}}
    header = {**_header(args), **summary}
    with _open_out(args.output) as fh:
        write_table(rows, ["n", "variance"], fh, args.format, header)
    print(f"slope {probe.slope:.4f} +- {probe.slope_se:.4f}; "
          + ", ".join(f"{k} = {v:.4f}" for k, v in refs.items()), file=sys.stderr)
    if args.target == "none":
        return EXIT_OK
    gap = abs(probe.slope - refs[args.target])
    if gap > args.tolerance:
        print(f"slope differs from {args.target} by {gap:.4f} > {args.tolerance}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def config_tokens(text: str) -> list[str]:
    """Turn ``key = value`` lines into flag tokens.

    Blank lines and ``#`` comments are skipped; ``_`` in keys becomes ``-``;
    lists are whitespace separated; ``true``/``false`` toggle switches.
    """
    tokens = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("_", "-")
        if not sep or not key or key == "config":
            raise ValueError(f"config line {lineno}: expected key = value, got {line!r}")
        value = value.strip()
        if value.lower() == "true":
            tokens.append(f"--{key}")
        elif value.lower() != "false":
            # a measure spec holds spaces but is one value
            tokens += [f"--{key}", value] if key == "measure" else [f"--{key}", *shlex.split(value)]
    return tokens


def _expand_config(argv: list[str], parser: argparse.ArgumentParser) -> list[str]:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config is None:
        return argv
    try:
        with open(known.config) as fh:
            tokens = config_tokens(fh.read())
    except (OSError, ValueError) as exc:
        parser.error(str(exc))
    # file flags go straight after the subcommand so later command-line flags override them
    at = next((i for i, tok in enumerate(argv) if not tok.startswith("-")), len(argv))
    return argv[: at + 1] + tokens + argv[at + 1 :]


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(_expand_config(argv, parser))
    if getattr(args, "workers", None) is not None and args.workers < 1:
        parser.error("--workers must be at least 1")
    try:
        return args.func(args)
    except (ValueError, ArithmeticError) as exc:
        print(f"caterpillars {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
