#!/usr/bin/env python3
"""Scenario soak with a cross-run determinism check.

Runs the shipped soak scenario (seven parkings, fifty spots, a thousand
steps, twenty requests) through a freshly started stack, prints one line
per invariant, then repeats the run on a second fresh stack and checks
that the two reports agree byte for byte once wall-clock timings are set
aside. A scenario whose outcome moves between runs under the same seed
is a bug, whatever the invariants say.

Exit code 0 means every invariant held on every run and the reports
matched; 1 flags an invariant failure or a determinism break; 2 a
configuration problem; 3 an unreachable service.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from twinlod.config import StackConfig
from twinlod.errors import ConfigError, ServiceUnavailable, TwinlodError
from twinlod.stack import Stack
from twinlod.twin import ScenarioConfig, run_scenario

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_SERVICE = 0, 1, 2, 3

ROOT = Path(__file__).resolve().parent.parent


def run_once(cfg: StackConfig, scenario_cfg: ScenarioConfig, report_path: Path) -> dict:
    stack = Stack(cfg.with_ephemeral_ports(), wire_pipelines=False)
    with stack:
        return run_scenario(stack.bundle(), scenario_cfg, report_path=report_path)


def summarize(report: dict, report_path: Path) -> bool:
    for name, value in report["invariants"].items():
        ok = value == "pass"
        print(f"  {'PASS' if ok else 'FAIL'} {name}" + ("" if ok else f"  ({value})"))
    timings = report["timings"]
    latencies = timings["request_latencies_ms"]
    entities = report["entities"]
    trace = report["trace"]
    print(
        f"  entities: {entities['parking_broker']} parking-side,"
        f" {entities['urban_broker']} urban-side"
    )
    print(f"  portal datasets: {report['portal']['datasets']}")
    print(
        f"  trace: {trace['events']} events over {trace['steps']} steps"
        f" ({trace['parking_touches']} capacity changes, {trace['spot_flips']} spot flips)"
    )
    print(f"  requests answered: {len(report['requests'])}")
    if latencies:
        print(
            f"  request latency ms: min {min(latencies):.1f}"
            f" / median {sorted(latencies)[len(latencies) // 2]:.1f}"
            f" / max {max(latencies):.1f}"
        )
    print(f"  wall clock: {timings['total_s']:.1f}s")
    print(f"  report: {report_path}")
    return bool(report["ok"])


def comparable(report: dict) -> str:
    trimmed = {k: v for k, v in report.items() if k != "timings"}
    return json.dumps(trimmed, sort_keys=True)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument(
        "--config",
        default=str(ROOT / "configs" / "stack.json"),
        help="stack config file (default: the shipped one)",
    )
    parser.add_argument(
        "--scenario",
        default=str(ROOT / "configs" / "scenario_soak.json"),
        help="scenario file (default: the shipped soak scenario)",
    )
    parser.add_argument(
        "--runs", type=int, default=2, help="independent runs to compare (default: 2)"
    )
    args = parser.parse_args(argv)
    if args.runs < 1:
        print("--runs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG

    try:
        cfg = StackConfig.from_file(args.config)
        scenario_cfg = ScenarioConfig.from_file(args.scenario)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    cfg.data_dir.mkdir(parents=True, exist_ok=True)
    reports: list[dict] = []
    all_ok = True
    started = time.monotonic()
    try:
        for run in range(1, args.runs + 1):
            print(f"== run {run}/{args.runs} ==")
            report_path = cfg.data_dir / f"soak_report_{run}.json"
            report = run_once(cfg, scenario_cfg, report_path)
            all_ok &= summarize(report, report_path)
            reports.append(report)
    except ServiceUnavailable as exc:
        print(f"service failure: {exc}", file=sys.stderr)
        return EXIT_SERVICE
    except TwinlodError as exc:
        print(f"scenario failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE

    print()
    if len(reports) > 1:
        baseline = comparable(reports[0])
        deterministic = all(comparable(r) == baseline for r in reports[1:])
        print(
            f"determinism: {'identical' if deterministic else 'REPORTS DIVERGED'}"
            f" across {len(reports)} runs (timings aside)"
        )
        all_ok &= deterministic
    print(f"total wall clock: {time.monotonic() - started:.1f}s")
    print(f"soak {'passed' if all_ok else 'FAILED'}")
    return EXIT_OK if all_ok else EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
