"""Command-line entry points: run, bench, validate."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .bench import StageSpec, SyntheticWorkload, bench_report
from .config import RunConfig, load_config, parse_latency
from .errors import ConfigError, P2PFlowError
from .session import build_session, read_input

log = logging.getLogger(__name__)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="YAML run configuration")
    parser.add_argument(
        "overrides",
        nargs="*",
        metavar="key=value",
        help="dotted-path config overrides applied after the file",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="p2pflow", description="peer-to-peer multi-agent workflow runtime"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a workload over an input dataset")
    _add_common(run_p)
    run_p.add_argument("--input", required=True, help="JSONL file or directory of files")
    run_p.add_argument("--output", help="output JSONL path (defaults to config `output`)")
    run_p.add_argument(
        "--allow-failures",
        action="store_true",
        help="exit 0 even when some tasks failed",
    )
    run_p.add_argument("--metrics-port", type=int, help="serve GET /metrics on this port")
    run_p.add_argument("--metrics-jsonl", help="append periodic metric samples to this file")

    bench_p = sub.add_parser("bench", help="row-level vs batch-level scheduling comparison")
    _add_common(bench_p)

    val_p = sub.add_parser("validate", help="parse and validate a configuration")
    _add_common(val_p)
    return parser


def cmd_validate(args) -> int:
    load_config(args.config, args.overrides)
    print("ok")
    return 0


def cmd_run(args) -> int:
    config = load_config(args.config, args.overrides)
    if args.metrics_port is not None:
        config.metrics_port = args.metrics_port
    if args.metrics_jsonl:
        config.metrics_jsonl = args.metrics_jsonl
    if args.allow_failures:
        config.allow_failures = True
    output_path = args.output or config.output
    session = build_session(config, output_path=output_path)
    partitions = read_input(args.input, config.data_parallelism)
    snapshot = session.run(partitions)
    summary = snapshot.to_dict()
    print(json.dumps(summary, sort_keys=True))
    if output_path:
        with open(f"{output_path}.metrics.json", "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
    failed = snapshot.counter("tasks_failed_total")
    if failed and not config.allow_failures:
        log.error("%d task(s) failed", int(failed))
        return 1
    return 0


def _bench_workload(config: RunConfig) -> tuple[SyntheticWorkload, dict]:
    params = dict(config.bench_params)
    latency = parse_latency(params.pop("latency", {"token_mu": 4.6, "token_sigma": 1.0}),
                             "bench.latency")
    knobs = {
        "replicas": int(params.pop("replicas", 8)),
        "capacity": int(params.pop("capacity", 15)),
        "max_concurrency": int(params.pop("max_concurrency", 150)),
        "batch_size": int(params.pop("batch_size", 50)),
        "data_parallelism": int(params.pop("data_parallelism", 3)),
    }
    workload = SyntheticWorkload(
        num_tasks=int(params.pop("num_tasks", 2000)),
        stages=[StageSpec("svc", latency)],
        drop_probabilities=list(params.pop("drop_probabilities", [])),
        seed=int(params.pop("seed", config.seed)),
    )
    if params:
        raise ConfigError("bench", f"unknown keys {sorted(params)}")
    return workload, knobs


def cmd_bench(args) -> int:
    config = load_config(args.config, args.overrides)
    workload, knobs = _bench_workload(config)
    report = bench_report(workload, **knobs)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "bench":
            return cmd_bench(args)
        return cmd_validate(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except P2PFlowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
