"""Scenario harness entry point: eteach-sim run <scenario.json>."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from eteach.tools.runner import ScenarioRunner, ServerSpawnFailed
from eteach.tools.scenario import ScenarioInvalid, load_scenario

EXIT_OK = 0
EXIT_ASSERT = 1
EXIT_USAGE = 2


def _print_summary(report) -> None:
    print(f"scenario {report.scenario!r}: "
          f"{'PASS' if report.ok else 'FAIL'} "
          f"in {report.wall_seconds:.1f}s")
    for r in report.assertions:
        mark = "PASS" if r.ok else "FAIL"
        print(f"  [{mark}] {r.name} ({r.check}): {r.detail}")
    for failure in report.step_failures:
        print(f"  [FAIL] step: {failure}")
    m = report.metrics
    msg = m["messages"]
    print(f"  messages: public {msg['public_delivered']}/"
          f"{msg['public_sent']} per-client deliveries, "
          f"private {msg['private_delivered']}/{msg['private_sent']}; "
          f"ordering violations {m['ordering_violations']}")
    audio = m["audio"]
    print(f"  audio: sent {audio['sent']}, delivered {audio['delivered']}, "
          f"dropped {audio['dropped_at_server']}, "
          f"in flight at shutdown {audio['in_flight_at_shutdown']}")
    conv = m["page_convergence_ms"]
    if conv.get("samples"):
        print(f"  page convergence: {conv['samples']} samples, "
              f"mean {conv['mean_ms']}ms, max {conv['max_ms']}ms")
    delays = m["step_delay_ms"]
    print(f"  step scheduling delay: mean {delays['mean']}ms, "
          f"max {delays['max']}ms")


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        scenario = load_scenario(Path(args.scenario))
    except ScenarioInvalid as exc:
        print(f"error: SCENARIO_INVALID: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot load scenario: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        runner = ScenarioRunner(scenario, time_scale=args.time_scale)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        report = runner.run()
    except ServerSpawnFailed as exc:
        print(f"error: SERVER_SPAWN_FAILED: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.report:
        Path(args.report).write_text(
            json.dumps(report.to_json(), indent=2) + "\n", encoding="utf-8")
        print(f"report written to {args.report}")
    _print_summary(report)
    return EXIT_OK if report.ok else EXIT_ASSERT


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eteach-sim",
        description="Drive scripted classroom scenarios against a live server.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario file")
    p.add_argument("scenario", help="path to a scenario JSON file")
    p.add_argument("--time-scale", type=float, default=1.0,
                   help="multiply step times and server timers (default 1.0)")
    p.add_argument("--report", help="write a JSON report to this path")
    p.set_defaults(func=_cmd_run)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
