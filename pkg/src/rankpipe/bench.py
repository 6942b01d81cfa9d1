"""Load-generation client: batched (concurrent) and sequential request modes.

Batched mode fires every query as an asynchronous HTTP request and reports
throughput (queries per second over the whole run); sequential mode keeps
exactly one request in flight and reports per-query latency. A raw
per-request log is always produced so every reported number can be
recomputed independently.
"""

from __future__ import annotations

import asyncio
import csv
import json
import logging
import math
import time
import uuid
from dataclasses import dataclass

import aiohttp

logger = logging.getLogger(__name__)


@dataclass
class RequestRecord:
    query: str
    send_time: float  # monotonic seconds
    receive_time: float
    status: int  # HTTP status; 0 for transport errors
    error: str = ""

    @property
    def latency(self) -> float:
        return self.receive_time - self.send_time

    @property
    def ok(self) -> bool:
        return self.status == 200


def percentile(sorted_values: list[float], fraction: float) -> float:
    """Nearest-rank percentile over an ascending list."""
    if not sorted_values:
        return 0.0
    rank = max(1, math.ceil(fraction * len(sorted_values)))
    return sorted_values[rank - 1]


@dataclass
class BenchReport:
    mode: str
    query_count: int
    wall_time: float
    throughput: float
    latency_mean: float
    latency_p50: float
    latency_p90: float
    latency_p99: float
    error_count: int

    @classmethod
    def from_records(cls, mode: str, records: list[RequestRecord], wall_time: float) -> "BenchReport":
        count = len(records)
        latencies = sorted(r.latency for r in records)
        return cls(
            mode=mode,
            query_count=count,
            wall_time=wall_time,
            throughput=count / wall_time if wall_time > 0 else 0.0,
            latency_mean=sum(latencies) / count if count else 0.0,
            latency_p50=percentile(latencies, 0.50),
            latency_p90=percentile(latencies, 0.90),
            latency_p99=percentile(latencies, 0.99),
            error_count=sum(1 for r in records if not r.ok),
        )

    def to_json(self) -> dict:
        return dict(self.__dict__)


def load_query_bodies(
    path: str,
    service: str | None = None,
    pipeline: str | None = None,
    collection: str | None = None,
    limit: int | None = None,
    bust_cache: bool = False,
) -> list[dict]:
    """One request body per non-empty line: either raw query text or a JSON body.

    CLI-level service/pipeline/collection/limit fill in whatever a line does
    not set itself. --bust-cache appends a unique nonce to each query so
    repeated runs measure the cold path.
    """
    bodies: list[dict] = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            if line.startswith("{"):
                body = json.loads(line)
                if not isinstance(body, dict):
                    raise ValueError(f"not a JSON object: {line!r}")
            else:
                body = {"query": line}
            if service is not None:
                body.setdefault("service", service)
            if pipeline is not None:
                body.setdefault("pipeline", pipeline)
            if collection is not None:
                body.setdefault("collection", collection)
            if limit is not None:
                body.setdefault("limit", limit)
            if bust_cache:
                body["query"] = f"{body['query']} {uuid.uuid4().hex}"
            bodies.append(body)
    if not bodies:
        logger.warning("query file %s contains no queries", path)
    return bodies


async def _send_one(session: aiohttp.ClientSession, url: str, body: dict) -> RequestRecord:
    send = time.perf_counter()
    try:
        async with session.post(url, json=body) as response:
            await response.read()
            return RequestRecord(body.get("query", ""), send, time.perf_counter(), response.status)
    except Exception as exc:
        return RequestRecord(body.get("query", ""), send, time.perf_counter(), 0, error=str(exc))


async def run_batched(
    endpoint: str,
    bodies: list[dict],
    concurrency: int | None = None,
    timeout_s: float = 120.0,
) -> tuple[BenchReport, list[RequestRecord]]:
    """All requests in flight concurrently, optionally bounded by a semaphore."""
    url = endpoint.rstrip("/") + "/query"
    timeout = aiohttp.ClientTimeout(total=timeout_s)
    semaphore = asyncio.Semaphore(concurrency) if concurrency else None

    async with aiohttp.ClientSession(timeout=timeout) as session:

        async def bounded(body: dict) -> RequestRecord:
            if semaphore is None:
                return await _send_one(session, url, body)
            async with semaphore:
                return await _send_one(session, url, body)

        started = time.perf_counter()
        records = list(await asyncio.gather(*(bounded(b) for b in bodies)))
        wall = time.perf_counter() - started
    return BenchReport.from_records("batched", records, wall), records


async def run_sequential(
    endpoint: str, bodies: list[dict], timeout_s: float = 120.0
) -> tuple[BenchReport, list[RequestRecord]]:
    """Strictly one request in flight; the next query goes out after the reply."""
    url = endpoint.rstrip("/") + "/query"
    timeout = aiohttp.ClientTimeout(total=timeout_s)
    records: list[RequestRecord] = []
    async with aiohttp.ClientSession(timeout=timeout) as session:
        started = time.perf_counter()
        for body in bodies:
            records.append(await _send_one(session, url, body))
        wall = time.perf_counter() - started
    return BenchReport.from_records("sequential", records, wall), records


def write_csv(path: str, records: list[RequestRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["query", "send_time", "receive_time", "status"])
        for record in records:
            writer.writerow([record.query, repr(record.send_time), repr(record.receive_time), record.status])


def render_table(report: BenchReport) -> str:
    rows = [
        ("mode", report.mode),
        ("queries", str(report.query_count)),
        ("wall time (s)", f"{report.wall_time:.4f}"),
        ("throughput (q/s)", f"{report.throughput:.3f}"),
        ("latency mean (s)", f"{report.latency_mean:.4f}"),
        ("latency p50 (s)", f"{report.latency_p50:.4f}"),
        ("latency p90 (s)", f"{report.latency_p90:.4f}"),
        ("latency p99 (s)", f"{report.latency_p99:.4f}"),
        ("errors", str(report.error_count)),
    ]
    width = max(len(label) for label, _ in rows)
    return "\n".join(f"{label.ljust(width)}  {value}" for label, value in rows)
