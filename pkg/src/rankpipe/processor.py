"""Per-service query processor: request queue, micro-batching, caching.

Search requests enter a queue; one dispatch task per service drains it,
handing a batch to the engine whenever the batch is full or the oldest
request has waited max_wait. Concurrent callers therefore share engine
invocations, which is where throughput under load comes from: one lone
query pays up to max_wait of queueing delay, while a burst fills batches
instantly and amortizes the engine call.

Only the search path is queued. Scoring, fusion, and rewriting pass through
directly: their inputs (candidate lists, ranked lists) already batch the
work, and they are invoked from pipeline execution where the caller
controls concurrency.

Batches to one engine instance never overlap unless the engine clears
``serial_batches`` (relays do: they only fan out HTTP requests, and overlap
keeps forwarded traffic from wedging behind an in-flight remote call).
"""

from __future__ import annotations

import asyncio
import logging
import time
from dataclasses import dataclass
from typing import Sequence

from .cache import ResultCache, cache_key
from .engines.base import Engine
from .errors import EngineFailure, RankpipeError, Unsupported
from .model import EngineCapability, Query, ScoredList, ServiceDescriptor, canonicalize, truncate

logger = logging.getLogger(__name__)


@dataclass
class PendingRequest:
    query: Query
    enqueue_time: float
    completion: asyncio.Future


@dataclass
class ProcessorStats:
    enqueued: int = 0
    dispatched_batches: int = 0
    engine_invocations: int = 0
    cache_hits: int = 0
    cache_misses: int = 0
    batched_requests: int = 0

    @property
    def mean_batch_size(self) -> float:
        if self.dispatched_batches == 0:
            return 0.0
        return self.batched_requests / self.dispatched_batches


class Processor:
    def __init__(
        self,
        descriptor: ServiceDescriptor,
        engine: Engine,
        cache: ResultCache | None = None,
        clock=time.monotonic,
    ):
        self.descriptor = descriptor
        self.engine = engine
        self.stats = ProcessorStats()
        self._cache = cache
        self._clock = clock
        self._batch_size = descriptor.batch_size
        self._max_wait = descriptor.max_wait_ms / 1000.0
        self._queue: asyncio.Queue[PendingRequest] | None = None
        self._task: asyncio.Task | None = None
        self._inflight: set[asyncio.Task] = set()

    @property
    def name(self) -> str:
        return self.descriptor.name

    @property
    def capabilities(self) -> frozenset:
        return self.engine.capabilities

    @property
    def queue_depth(self) -> int:
        return self._queue.qsize() if self._queue is not None else 0

    async def start(self) -> None:
        if self._task is not None:
            return
        self._queue = asyncio.Queue()
        self._task = asyncio.create_task(self._dispatch_loop(), name=f"dispatch:{self.name}")

    async def close(self) -> None:
        if self._task is None:
            return
        self._task.cancel()
        try:
            await self._task
        except asyncio.CancelledError:
            pass
        self._task = None
        for task in list(self._inflight):
            task.cancel()
        if self._inflight:
            await asyncio.gather(*self._inflight, return_exceptions=True)
        while self._queue is not None and not self._queue.empty():
            pending = self._queue.get_nowait()
            if not pending.completion.done():
                pending.completion.set_exception(EngineFailure("service shut down"))

    def _require(self, capability: EngineCapability) -> None:
        if capability not in self.engine.capabilities:
            raise Unsupported(f"service {self.name!r} does not provide {capability.value}")

    async def submit(self, query: Query) -> ScoredList:
        """Queue one search; resolves to a canonical list truncated to query.limit.

        A cache hit bypasses the queue entirely.
        """
        self._require(EngineCapability.SEARCH)
        self.stats.enqueued += 1
        key = cache_key(self.name, query.text, query.limit)
        if self._cache is not None and self._cache.enabled:
            cached = await self._cache.get(key)
            if cached is not None:
                self.stats.cache_hits += 1
                return cached
        self.stats.cache_misses += 1
        if self._queue is None:
            raise EngineFailure(f"service {self.name!r} is not running")
        completion = asyncio.get_running_loop().create_future()
        self._queue.put_nowait(PendingRequest(query, self._clock(), completion))
        return await completion

    async def _dispatch_loop(self) -> None:
        assert self._queue is not None
        while True:
            first = await self._queue.get()
            batch = [first]
            # drain the backlog that built up while the engine was busy
            while len(batch) < self._batch_size:
                try:
                    batch.append(self._queue.get_nowait())
                except asyncio.QueueEmpty:
                    break
            # then wait out the oldest request's budget for more arrivals
            deadline = first.enqueue_time + self._max_wait
            while len(batch) < self._batch_size:
                remaining = deadline - self._clock()
                if remaining <= 0:
                    break
                try:
                    batch.append(await asyncio.wait_for(self._queue.get(), remaining))
                except asyncio.TimeoutError:
                    break
            if self.engine.serial_batches:
                await self._run_batch(batch)
            else:
                task = asyncio.create_task(self._run_batch(batch))
                self._inflight.add(task)
                task.add_done_callback(self._inflight.discard)

    async def _run_batch(self, batch: list[PendingRequest]) -> None:
        self.stats.dispatched_batches += 1
        self.stats.batched_requests += len(batch)
        self.stats.engine_invocations += 1
        try:
            results = await self.engine.search_batch([p.query for p in batch])
            if len(results) != len(batch):
                raise EngineFailure(
                    f"engine returned {len(results)} results for a batch of {len(batch)}"
                )
        except asyncio.CancelledError:
            for pending in batch:
                if not pending.completion.done():
                    pending.completion.set_exception(EngineFailure("service shut down"))
            raise
        except Exception as exc:
            failure = exc if isinstance(exc, RankpipeError) else EngineFailure(str(exc))
            logger.warning("service %s: batch of %d failed: %s", self.name, len(batch), exc)
            for pending in batch:
                if not pending.completion.done():
                    pending.completion.set_exception(failure)
            return
        for pending, result in zip(batch, results):
            if isinstance(result, Exception):
                # engines with per-query failure semantics return exceptions in-slot
                error = result if isinstance(result, RankpipeError) else EngineFailure(str(result))
                pending.completion.set_exception(error)
                continue
            try:
                final = truncate(canonicalize(result), pending.query.limit)
            except Exception as exc:
                pending.completion.set_exception(EngineFailure(f"bad engine result: {exc}"))
                continue
            if self._cache is not None and self._cache.enabled:
                key = cache_key(self.name, pending.query.text, pending.query.limit)
                await self._cache.put(key, final)
            pending.completion.set_result(final)

    async def score(self, query: Query, candidates: Sequence[tuple[str, str]]) -> ScoredList:
        self._require(EngineCapability.SCORE)
        result = await self.engine.score_batch(query, candidates)
        return canonicalize(result)

    async def fuse(self, lists: Sequence[ScoredList]) -> ScoredList:
        self._require(EngineCapability.FUSE)
        result = await self.engine.fuse(lists)
        return canonicalize(result)

    async def rewrite(self, query: Query, n: int | None = None) -> list[Query]:
        self._require(EngineCapability.REWRITE)
        return await self.engine.rewrite(query, n)
