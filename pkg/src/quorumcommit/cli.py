"""Command line front end: run, sweep, check, stats and explore.

Exit status is 0 when every invariant holds, 1 when a violation was found and
2 for configuration or input errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional, Sequence

from .checker import check_all
from .core import QuorumCommitError, parse_trace_lines
from .harness import Scenario, latencies_from_trace, latency_stats, run_scenario, seed_sweep

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG = 0, 1, 2


def _load_scenario(ref: str) -> Scenario:
    # a path wins; otherwise try the scenarios shipped with the package
    if os.path.exists(ref):
        return Scenario.from_file(ref)
    return Scenario.builtin(ref)


def _read_trace(path: str) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return parse_trace_lines(fh)


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def cmd_run(args: argparse.Namespace) -> int:
    sc = _load_scenario(args.scenario)
    res = run_scenario(sc, args.seed, trace_out=args.trace_out, bucket_ms=args.bucket_ms)
    body = {"seed": res.seed, "report": res.report.to_dict(),
            "stats": res.stats.to_dict(), "rolled_back": res.rolled_back,
            "trace_sha256": res.trace.digest()}
    if args.report_out:
        _write(args.report_out, json.dumps(body, indent=2, sort_keys=True) + "\n")
    print(res.report.to_text())
    print("latency " + res.stats.summary())
    print(f"rolled back: {res.rolled_back}")
    return EXIT_OK if res.report.ok else EXIT_VIOLATION


def cmd_sweep(args: argparse.Namespace) -> int:
    sc = _load_scenario(args.scenario)
    if args.seeds < 0:
        raise QuorumCommitError("--seeds must be non-negative")
    seeds = list(range(args.first_seed, args.first_seed + args.seeds))
    rep = seed_sweep(sc, seeds, jobs=args.jobs, bucket_ms=args.bucket_ms)
    if args.report_out:
        _write(args.report_out, json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n")
    print(rep.to_text())
    if args.safety_only:
        return EXIT_VIOLATION if rep.safety_failures else EXIT_OK
    return EXIT_VIOLATION if rep.any_failed else EXIT_OK


def cmd_check(args: argparse.Namespace) -> int:
    report = check_all(_read_trace(args.trace), args.horizon)
    print(report.to_json() if args.json else report.to_text())
    return EXIT_OK if report.ok else EXIT_VIOLATION


def cmd_stats(args: argparse.Namespace) -> int:
    lat, rolled = latencies_from_trace(_read_trace(args.trace))
    st = latency_stats(lat, args.bucket_ms)
    summary = f"latency {st.summary()}\nrolled back: {rolled}"
    if args.csv_out:
        _write(args.csv_out, st.histogram_csv())
        print(summary)
    else:
        sys.stdout.write(st.histogram_csv())
        print(summary, file=sys.stderr)
    return EXIT_OK


def cmd_explore(args: argparse.Namespace) -> int:
    from .explore import MicroModel, explore

    model = MicroModel(max_crashes=args.crashes, max_states=args.max_states,
                       crash_window=args.crash_window, seed=args.seed)
    res = explore(model)
    print(res.to_text())
    return EXIT_OK if res.ok else EXIT_VIOLATION


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="quorumcommit", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario and check its trace")
    p.add_argument("--scenario", required=True, help="scenario file or builtin name")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--trace-out")
    p.add_argument("--report-out")
    p.add_argument("--bucket-ms", type=float, default=10.0)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a scenario over many seeds")
    p.add_argument("--scenario", required=True)
    p.add_argument("--seeds", type=int, required=True, help="number of seeds")
    p.add_argument("--first-seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--bucket-ms", type=float, default=10.0)
    p.add_argument("--report-out")
    p.add_argument("--safety-only", action="store_true",
                   help="ignore termination when choosing the exit status")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check", help="check a trace file")
    p.add_argument("--trace", required=True)
    p.add_argument("--horizon", type=int, default=None, help="termination horizon, us")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("stats", help="latency statistics and histogram from a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--bucket-ms", type=float, default=10.0)
    p.add_argument("--csv-out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("explore", help="exhaustively explore the micro-model")
    p.add_argument("--crashes", type=int, default=1, choices=(0, 1))
    p.add_argument("--crash-window", type=int, default=None,
                   help="last tick a crash may hit (default: the horizon)")
    p.add_argument("--max-states", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_explore)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (QuorumCommitError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
