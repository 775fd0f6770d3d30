"""Operator command line: serve the stack, run scenarios, inspect state.

`twinlod serve --config <stack.json>` starts all six services and blocks
until interrupted. `twinlod scenario` brings up a private stack, runs
one end-to-end scenario, writes the report, and exits 0 only if every
invariant check passed. `twinlod inspect ...` talks to an already
running stack over HTTP (history reads the stack's data directory, which
the config names).

Exit codes: 0 success, 1 invariant/lookup failure, 2 configuration
error, 3 service failure. Every config value can be overridden with a
`TWINLOD_`-prefixed environment variable (see config module).
"""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading
from pathlib import Path

from . import errors as err
from .clients import BrokerClient, PortalClient
from .config import StackConfig
from .stack import Stack
from .twin import ScenarioConfig, run_scenario

log = logging.getLogger("twinlod.cli")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_SERVICE = 3

_CONFIG_ERRORS = (err.ConfigError, err.InvalidConfig)
_SERVICE_ERRORS = (
    err.PortInUse,
    err.ServiceUnavailable,
    err.BrokerUnavailable,
    err.UpstreamUnavailable,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twinlod",
        description="Digital-twin federation stack: brokers, portal, gateways, scenarios.",
    )
    parser.add_argument("--log-level", default=None, help="override the configured log level")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="start all services and block until interrupted")
    serve.add_argument("--config", required=True, help="stack config JSON")
    serve.set_defaults(func=cmd_serve)

    scenario = sub.add_parser("scenario", help="run one end-to-end scenario on a private stack")
    scenario.add_argument("--config", required=True, help="stack config JSON")
    scenario.add_argument("--scenario", default=None, help="scenario config JSON (default: from stack config)")
    scenario.add_argument("--report", default=None, help="report output path (default: <data_dir>/report.json)")
    scenario.set_defaults(func=cmd_scenario)

    inspect = sub.add_parser("inspect", help="read state from a running stack")
    inspect.add_argument("--config", required=True, help="stack config JSON")
    target = inspect.add_subparsers(dest="target", required=True)

    entities = target.add_parser("entities", help="list broker entities (simplified form)")
    entities.add_argument("--type", dest="entity_type", default=None)
    entities.add_argument("--broker", choices=("parking", "urban"), default="parking")
    entities.set_defaults(func=cmd_inspect_entities)

    datasets = target.add_parser("datasets", help="list portal datasets")
    datasets.set_defaults(func=cmd_inspect_datasets)

    dcat = target.add_parser("dcat", help="print a dataset's RDF catalog record")
    dcat.add_argument("name")
    dcat.set_defaults(func=cmd_inspect_dcat)

    history = target.add_parser("history", help="print history rows for one entity")
    history.add_argument("entity_id")
    history.set_defaults(func=cmd_inspect_history)

    return parser


def _load_config(args: argparse.Namespace) -> StackConfig:
    return StackConfig.from_file(args.config)


def _setup_logging(args: argparse.Namespace, cfg: StackConfig | None) -> None:
    level = args.log_level or (cfg.log_level if cfg else "INFO")
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


# --- commands ---


def cmd_serve(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    _setup_logging(args, cfg)
    stack = Stack(cfg)
    stop_requested = threading.Event()

    def _on_signal(signum, frame):
        log.info("signal %s: shutting down", signal.Signals(signum).name)
        stop_requested.set()

    signal.signal(signal.SIGINT, _on_signal)
    signal.signal(signal.SIGTERM, _on_signal)
    stack.start()
    try:
        for name, url in stack.urls.items():
            print(f"ready {name} {url}")
        sys.stdout.flush()
        stop_requested.wait()
    finally:
        stack.stop()
    print("stopped")
    return EXIT_OK


def cmd_scenario(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    _setup_logging(args, cfg)
    scenario_path = args.scenario or cfg.scenario_path
    if scenario_path is None:
        raise err.ConfigError("no scenario file: pass --scenario or set scenario_path")
    scenario_cfg = ScenarioConfig.from_file(scenario_path)
    report_path = Path(args.report) if args.report else cfg.data_dir / "report.json"
    stack = Stack(cfg, wire_pipelines=False)
    with stack:
        report = run_scenario(stack.bundle(), scenario_cfg, report_path=report_path)
    for name, value in report["invariants"].items():
        print(f"{'PASS' if value == 'pass' else 'FAIL'} {name}" + ("" if value == "pass" else f"  ({value})"))
    print(f"report: {report_path}")
    print(f"operation log: {report_path.with_suffix('.oplog.jsonl')}")
    return EXIT_OK if report["ok"] else EXIT_FAILURE


def _broker_client(cfg: StackConfig, which: str) -> BrokerClient:
    port = cfg.broker_parking_port if which == "parking" else cfg.broker_urban_port
    return BrokerClient(f"http://{cfg.host}:{port}")


def _portal_client(cfg: StackConfig) -> PortalClient:
    return PortalClient(f"http://{cfg.host}:{cfg.odp_port}")


def cmd_inspect_entities(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    _setup_logging(args, cfg)
    client = _broker_client(cfg, args.broker)
    if not client.health():
        raise err.ServiceUnavailable(f"broker-{args.broker}")
    docs = client.query(entity_type=args.entity_type)
    print(json.dumps(docs, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_inspect_datasets(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    _setup_logging(args, cfg)
    client = _portal_client(cfg)
    if not client.health():
        raise err.ServiceUnavailable("odp")
    for doc in client.package_search(""):
        print(doc["name"])
    return EXIT_OK


def cmd_inspect_dcat(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    _setup_logging(args, cfg)
    client = _portal_client(cfg)
    if not client.health():
        raise err.ServiceUnavailable("odp")
    print(client.dcat(args.name))
    return EXIT_OK


def cmd_inspect_history(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    _setup_logging(args, cfg)
    path = cfg.data_dir / "history.jsonl"
    if not path.is_file():
        raise err.NotFound(f"no history at {path}")
    count = 0
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            if record.get("entity_id") == args.entity_id:
                print(json.dumps(record, sort_keys=True))
                count += 1
    log.info("%d history rows for %s", count, args.entity_id)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _SERVICE_ERRORS as exc:
        print(f"service failure: {exc}", file=sys.stderr)
        return EXIT_SERVICE
    except err.NotFound as exc:
        print(f"not found: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except err.TwinlodError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
