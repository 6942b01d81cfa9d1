"""Command-line entry points: ``rankpipe serve`` and ``rankpipe bench``."""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import os
import sys

from . import bench as bench_mod
from .errors import RankpipeError
from .server import serve_from_file

PORT_ENV_VAR = "RANKPIPE_PORT"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rankpipe")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="start a gateway node from a JSON config")
    serve.add_argument("config", help="path to the configuration JSON file")
    serve.add_argument(
        "--port",
        type=int,
        default=None,
        help=f"listen port (overrides ${PORT_ENV_VAR} and the config file)",
    )

    bench = sub.add_parser("bench", help="measure throughput or latency of a node")
    bench.add_argument("--mode", choices=["batched", "sequential"], required=True)
    bench.add_argument("--endpoint", required=True, help="gateway base URL")
    bench.add_argument("--queries", required=True, help="query file: text lines or JSONL bodies")
    bench.add_argument("--concurrency", type=int, default=None, help="bound in-flight requests (batched mode)")
    target = bench.add_mutually_exclusive_group()
    target.add_argument("--service", default=None)
    target.add_argument("--pipeline", default=None)
    bench.add_argument("--collection", default=None)
    bench.add_argument("--limit", type=int, default=None)
    bench.add_argument("--bust-cache", action="store_true", help="append a unique nonce to every query")
    bench.add_argument("--log", default="bench_log.csv", help="raw per-request CSV log path")
    bench.add_argument("--report", default="bench_report.json", help="JSON report path")
    return parser


def _resolve_port(flag_port: int | None) -> int | None:
    if flag_port is not None:
        return flag_port
    env_port = os.environ.get(PORT_ENV_VAR)
    if env_port:
        try:
            return int(env_port)
        except ValueError:
            raise SystemExit(f"${PORT_ENV_VAR} is not an integer: {env_port!r}")
    return None


def _run_serve(args: argparse.Namespace) -> int:
    try:
        serve_from_file(args.config, _resolve_port(args.port))
    except RankpipeError as exc:
        print(f"error: {exc.detail}", file=sys.stderr)
        return 2
    return 0


def _run_bench(args: argparse.Namespace) -> int:
    bodies = bench_mod.load_query_bodies(
        args.queries,
        service=args.service,
        pipeline=args.pipeline,
        collection=args.collection,
        limit=args.limit,
        bust_cache=args.bust_cache,
    )
    if args.mode == "batched":
        report, records = asyncio.run(
            bench_mod.run_batched(args.endpoint, bodies, concurrency=args.concurrency)
        )
    else:
        report, records = asyncio.run(bench_mod.run_sequential(args.endpoint, bodies))
    bench_mod.write_csv(args.log, records)
    with open(args.report, "w", encoding="utf-8") as handle:
        json.dump(report.to_json(), handle, indent=2)
        handle.write("\n")
    print(bench_mod.render_table(report))
    print(f"raw log: {args.log}")
    print(f"json report: {args.report}")
    failures = [r for r in records if not r.ok]
    if failures:
        print(f"{len(failures)} request(s) failed:", file=sys.stderr)
        for record in failures[:20]:
            reason = record.error or f"HTTP {record.status}"
            print(f"  {record.query!r}: {reason}", file=sys.stderr)
        return 1
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(asctime)s [%(levelname)s] %(name)s: %(message)s"
    )
    args = _build_parser().parse_args(argv)
    if args.command == "serve":
        return _run_serve(args)
    return _run_bench(args)


if __name__ == "__main__":
    raise SystemExit(main())
