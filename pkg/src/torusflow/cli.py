"""Command-line interface.

Subcommands:
  run       integrate one configured flow and write trajectory.csv + summary.json
  sequence  run the delta-schedule stability experiment
  check     run the built-in property suites (exit 0 iff all pass)
  gen       write initial-data snapshots (band-limited field or delta family)

Exit codes: 0 success, 1 validation error, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .conformal import PositivityError
from .experiment import (
    CalibrationError,
    ConfigError,
    SequenceError,
    calibrate_delta_family,
    gen_bandlimited,
    parse_config,
    run_experiment,
    run_sequence_experiment,
)
from .flow import FlowError
from .grid import make_grid
from .outputs import emit_outputs, write_field_snapshot
from .selfcheck import run_suite

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="torusflow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="integrate one configured flow")
    p_run.add_argument("--config", required=True, help="JSON configuration file")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--plots", action="store_true", help="also write SVG line plots")
    p_run.add_argument(
        "--snapshot", action="store_true", help="also write the final factor field"
    )

    p_seq = sub.add_parser("sequence", help="run the stability experiment")
    p_seq.add_argument("--config", required=True)
    p_seq.add_argument("--out", required=True)
    p_seq.add_argument("--plots", action="store_true")

    p_check = sub.add_parser("check", help="run the built-in property suites")
    p_check.add_argument(
        "--suite", default="all", choices=["all", "grid", "flow", "diagnostics"]
    )

    p_gen = sub.add_parser("gen", help="write initial-data snapshots")
    p_gen.add_argument("--kind", required=True, choices=["bandlimited", "delta-family"])
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--seed", type=int, default=7)
    p_gen.add_argument("--n", type=int, default=3)
    p_gen.add_argument("--m", type=int, default=32)
    p_gen.add_argument("--lengths", default=None, help="comma-separated, default all 1")
    p_gen.add_argument("--amplitude", type=float, default=0.1)
    p_gen.add_argument("--kmax", type=int, default=4)
    p_gen.add_argument("--count", type=int, default=8)
    p_gen.add_argument("--p0", type=float, default=12.0)
    p_gen.add_argument("--lambda-budget", type=float, default=2.0)
    return parser


def _cmd_run(args) -> int:
    cfg = parse_config(Path(args.config).read_text(encoding="utf-8"))
    outcome = run_experiment(cfg)
    paths = emit_outputs(outcome, Path(args.out), plots=args.plots, snapshot=args.snapshot)
    for p in paths:
        print(p)
    print(
        f"run finished: {outcome.result.state.step_count} steps, "
        f"termination {outcome.result.termination}, "
        f"final sup|R| {outcome.final_R_sup:.3e}, "
        f"flat distance {outcome.final_flat_distance:.3e}"
    )
    return EXIT_OK


def _cmd_sequence(args) -> int:
    cfg = parse_config(Path(args.config).read_text(encoding="utf-8"))
    result = run_sequence_experiment(cfg)
    paths = emit_outputs(result, Path(args.out), plots=args.plots)
    for p in paths:
        print(p)
    mono = result.monotonicity
    print(
        f"sequence finished: {len(result.members)} members, "
        f"final flat distance {mono.final_flat_distance:.3e}, "
        f"monotone within slack: {mono.non_increasing_within_slack}"
    )
    for v in mono.violations:
        print(f"  violation: {v}")
    return EXIT_OK


def _cmd_check(args) -> int:
    results = run_suite(args.suite)
    all_ok = True
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(f"[{status}] {res.name}: {res.detail}")
        all_ok &= res.passed
    print(f"{sum(r.passed for r in results)}/{len(results)} checks passed")
    return EXIT_OK if all_ok else EXIT_NUMERICAL


def _cmd_gen(args) -> int:
    lengths = (
        [float(tok) for tok in args.lengths.split(",")]
        if args.lengths
        else [1.0] * args.n
    )
    grid = make_grid(args.n, args.m, lengths)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.kind == "bandlimited":
        u = gen_bandlimited(grid, args.seed, args.amplitude, args.kmax)
        path = write_field_snapshot(u, out_dir / f"bandlimited_seed{args.seed}.bin")
        print(path)
        return EXIT_OK
    members = calibrate_delta_family(
        grid,
        args.seed,
        args.count,
        lambda_budget=args.lambda_budget,
        p0=args.p0,
    )
    for member in members:
        path = write_field_snapshot(
            member.metric.u, out_dir / f"member_{member.index:02d}.bin"
        )
        print(f"{path}  delta={member.delta!r} amplitude={member.amplitude!r}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "sequence": _cmd_sequence,
        "check": _cmd_check,
        "gen": _cmd_gen,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, PositivityError, ValueError) as err:
        print(f"validation error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FlowError, CalibrationError, SequenceError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
