"""Command-line entry point.

Subcommands: run-query, run-campaign, analyze, scorecard,
protocol-check. Exit codes: 0 success, 1 usage error, 2 job failure,
3 partial convergence.
"""

from __future__ import annotations

import argparse
import logging
import shlex
import sys
from pathlib import Path

from . import analysis, campaign, models, quatex
from .blackbox import LaunchSpec, protocol_check, spawn_external
from .engine import EngineConfig, run_query
from .stats import StoppingPolicy

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_JOB_FAILURE = 2
EXIT_PARTIAL = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smckit",
        description="Statistical model checking of black-box discrete-event simulators.",
    )
    parser.add_argument("--verbose", action="store_true", help="emit progress diagnostics")
    sub = parser.add_subparsers(dest="command", required=True)

    rq = sub.add_parser("run-query", help="estimate one query's expectation trajectory")
    rq.add_argument("--query", required=True, help="query file path")
    rq.add_argument(
        "--obs",
        action="append",
        default=[],
        metavar="NAME=OBS",
        help="bind a free observable name in the query (repeatable)",
    )
    rq.add_argument("--delta", type=float, required=True, help="CI half-width target")
    rq.add_argument("--alpha", type=float, default=0.05, help="significance level (default 0.05)")
    rq.add_argument("--block", type=int, default=30, help="runs between convergence checks (default 30)")
    rq.add_argument("--workers", type=int, default=1, help="parallel workers (default 1)")
    rq.add_argument("--seed-of-seeds", type=int, default=1, help="master seed (default 1)")
    rq.add_argument("--horizon", type=int, default=600, help="max simulation steps (default 600)")
    rq.add_argument("--max-runs", type=int, default=None, help="safety cap on runs (default none)")
    rq.add_argument("--sim", default=None, help="builtin simulator spec (counter|bernoulli:p|gaussian:mu,sd|switching)")
    rq.add_argument("--sim-cmd", default=None, help="external simulator command line")
    rq.add_argument(
        "--param",
        action="append",
        default=[],
        metavar="NAME=VALUE",
        help="builtin model parameter override (repeatable)",
    )
    rq.add_argument("--experiment-id", type=int, default=None, help="external -experimentMV value")
    rq.add_argument("--param-index", type=int, default=None, help="external -numMCexpMV value")
    rq.add_argument("--out", default=None, help="trajectory CSV path (default stdout)")

    rc = sub.add_parser("run-campaign", help="execute a multi-sweep campaign")
    rc.add_argument("--config", required=True, help="campaign config file (YAML)")
    rc.add_argument("--out", required=True, help="output directory")
    rc.add_argument("--fail-fast", action="store_true", help="stop at the first failed job")

    for name, help_text in (
        ("analyze", "emit plot-ready trajectory and significance data"),
        ("scorecard", "build the cross-experiment scorecard"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--in", dest="input", required=True, help="campaign output directory")
        p.add_argument("--tail-frac", type=float, default=None, help="tail window fraction")
        p.add_argument("--alpha", type=float, default=None, help="significance level")
        p.add_argument(
            "--method",
            choices=("z", "ci"),
            default="z",
            help="pairwise separation test (default z)",
        )
        if name == "scorecard":
            p.add_argument(
                "--pair",
                default=None,
                metavar="GOOD,BAD",
                help="trade-off observable pair (higher-better,lower-better)",
            )
            p.add_argument("--out", default=None, help="scorecard CSV path")
        else:
            p.add_argument("--out", default=None, help="output directory (default <in>/plotdata)")
            p.add_argument("--svg", action="store_true", help="also emit SVG charts")

    pc = sub.add_parser("protocol-check", help="conformance transcript against an external simulator")
    pc.add_argument("--cmd", nargs="+", required=True, help="simulator command and arguments")
    return parser


def _parse_bindings(pairs: list[str], what: str) -> dict[str, str]:
    out = {}
    for pair in pairs:
        name, sep, value = pair.partition("=")
        if not sep or not name:
            raise SystemExit(f"invalid {what} {pair!r}, expected NAME=VALUE")
        out[name] = value
    return out


def _make_factory(args) -> tuple:
    if (args.sim is None) == (args.sim_cmd is None):
        raise SystemExit("exactly one of --sim or --sim-cmd is required")
    params = {k: float(v) for k, v in _parse_bindings(args.param, "--param").items()}
    if args.sim is not None:
        return models.make_factory(args.sim, params)
    command = tuple(shlex.split(args.sim_cmd))
    spec = LaunchSpec(
        command=command,
        experiment_id=args.experiment_id,
        param_index=args.param_index,
    )
    return lambda: spawn_external(spec)


def _cmd_run_query(args) -> int:
    source = Path(args.query).read_text()
    try:
        ast = quatex.parse(source)
    except quatex.QueryError as exc:
        print(f"{args.query}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    obs_binding = _parse_bindings(args.obs, "--obs")
    plan = quatex.expand_parametric(ast, obs_binding, horizon=args.horizon)
    policy = StoppingPolicy(
        alpha=args.alpha, delta=args.delta, block_size=args.block, max_runs=args.max_runs
    )
    config = EngineConfig(
        workers=args.workers,
        seed_of_seeds=args.seed_of_seeds,
        policy=policy,
        horizon=args.horizon,
    )
    factory = _make_factory(args)
    try:
        result = run_query(ast, plan, factory, config, verbose=args.verbose)
    except Exception as exc:  # noqa: BLE001 - reported as job failure
        print(f"job failed: {exc}", file=sys.stderr)
        return EXIT_JOB_FAILURE
    lines = ["observable,step,mean,ci_halfwidth,n_at_convergence"]
    for p in result.points:
        lines.append(f"{p.observable},{p.step},{p.mean!r},{p.half_width!r},{p.n}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK if result.status == "converged" else EXIT_PARTIAL


def _cmd_run_campaign(args) -> int:
    try:
        config = campaign.load_config(args.config)
    except campaign.ConfigError as exc:
        print(f"{args.config}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    results = campaign.run_campaign(
        config, args.out, fail_fast=args.fail_fast, verbose=args.verbose
    )
    if any(r.error is not None for r in results):
        return EXIT_JOB_FAILURE
    if any(r.trajectory.status == "partial" for r in results):
        return EXIT_PARTIAL
    return EXIT_OK


def _cmd_analyze(args) -> int:
    results = analysis.load_results(args.input)
    if args.alpha is not None:
        results.alpha = args.alpha
    if args.tail_frac is not None:
        results.tail_fraction = args.tail_frac
    out = args.out or str(Path(args.input) / "plotdata")
    written = analysis.emit_plotdata(results, out, method=args.method, svg=args.svg)
    print(f"wrote {len(written)} files to {out}")
    return EXIT_OK


def _cmd_scorecard(args) -> int:
    results = analysis.load_results(args.input)
    if args.pair:
        good, _, bad = args.pair.partition(",")
        pair = (good, bad)
    else:
        higher = [o for o in results.observables if results.directions.get(o) == "higher-is-better"]
        lower = [o for o in results.observables if results.directions.get(o) == "lower-is-better"]
        if not higher or not lower:
            print("no trade-off pair derivable from directions; pass --pair", file=sys.stderr)
            return EXIT_USAGE
        pair = (higher[0], lower[0])
    rows = analysis.build_scorecard(
        results, pair, alpha=args.alpha, tail_fraction=args.tail_frac, method=args.method
    )
    sys.stdout.write(analysis.scorecard_text(rows, results.observables))
    if args.out:
        Path(args.out).write_text(analysis.scorecard_csv(rows, results.observables))
    return EXIT_OK


def _cmd_protocol_check(args) -> int:
    checks = protocol_check(tuple(args.cmd))
    failed = 0
    for name, ok, detail in checks:
        status = "PASS" if ok else "FAIL"
        print(f"{status}  {name}  [{detail}]")
        failed += not ok
    return EXIT_OK if failed == 0 else EXIT_JOB_FAILURE


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    handlers = {
        "run-query": _cmd_run_query,
        "run-campaign": _cmd_run_campaign,
        "analyze": _cmd_analyze,
        "scorecard": _cmd_scorecard,
        "protocol-check": _cmd_protocol_check,
    }
    try:
        return handlers[args.command](args)
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(exc.code, file=sys.stderr)
            return EXIT_USAGE
        return exc.code if exc.code is not None else EXIT_OK


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
