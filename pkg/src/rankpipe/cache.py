"""Result caching: bounded in-memory LRU tier plus an optional external tier.

The external tier speaks the RESP wire protocol (GET/SET/EXPIRE with string
keys), so any RESP-compatible key-value server works. Connectivity failures
degrade to cache misses; the service keeps answering from its engines, and
the outage is logged once until the connection recovers.
"""

from __future__ import annotations

import asyncio
import hashlib
import json
import logging
from collections import OrderedDict

from .model import ScoredList

logger = logging.getLogger(__name__)

_SEPARATOR = "\x1f"


def cache_key(service: str, query_text: str, limit: int) -> str:
    """Stable key for one (service, query, limit) request.

    Includes the limit so a shallow cached result can never serve a deeper
    request. Text keeps its casing, surrounding whitespace is trimmed.
    """
    raw = _SEPARATOR.join((service, query_text.strip(), str(limit)))
    return hashlib.sha256(raw.encode("utf-8")).hexdigest()


def encode_scored_list(slist: ScoredList) -> bytes:
    return json.dumps(
        [[doc_id, score] for doc_id, score in slist], separators=(",", ":")
    ).encode("utf-8")


def decode_scored_list(data: bytes) -> ScoredList:
    return ScoredList.from_pairs(tuple(pair) for pair in json.loads(data))


class LruCache:
    """Bounded mapping with least-recently-used eviction; get refreshes recency."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._store: OrderedDict = OrderedDict()

    def get(self, key):
        if key not in self._store:
            return None
        self._store.move_to_end(key)
        return self._store[key]

    def put(self, key, value) -> None:
        if self.capacity <= 0:
            return
        if key in self._store:
            self._store.move_to_end(key)
        elif len(self._store) >= self.capacity:
            self._store.popitem(last=False)
        self._store[key] = value

    def __len__(self) -> int:
        return len(self._store)

    def __contains__(self, key) -> bool:
        return key in self._store


class RespClient:
    """Minimal asyncio client for the RESP protocol: GET, SET, EXPIRE."""

    def __init__(self, host: str, port: int, timeout: float = 2.0):
        self.host = host
        self.port = port
        self.timeout = timeout
        self._reader: asyncio.StreamReader | None = None
        self._writer: asyncio.StreamWriter | None = None
        self._lock = asyncio.Lock()

    async def _connect(self) -> None:
        if self._writer is not None:
            return
        self._reader, self._writer = await asyncio.wait_for(
            asyncio.open_connection(self.host, self.port), self.timeout
        )

    def _drop_connection(self) -> None:
        if self._writer is not None:
            self._writer.close()
        self._reader = None
        self._writer = None

    async def _command(self, *parts: bytes):
        async with self._lock:
            try:
                await self._connect()
                payload = b"*%d\r\n" % len(parts)
                for part in parts:
                    payload += b"$%d\r\n%s\r\n" % (len(part), part)
                self._writer.write(payload)
                await asyncio.wait_for(self._writer.drain(), self.timeout)
                return await asyncio.wait_for(self._read_reply(), self.timeout)
            except Exception:
                self._drop_connection()
                raise

    async def _read_reply(self):
        line = await self._reader.readline()
        if not line.endswith(b"\r\n"):
            raise ConnectionError("truncated RESP reply")
        marker, body = line[:1], line[1:-2]
        if marker == b"+":
            return body
        if marker == b"-":
            raise ConnectionError(f"server error: {body.decode(errors='replace')}")
        if marker == b":":
            return int(body)
        if marker == b"$":
            length = int(body)
            if length < 0:
                return None
            data = await self._reader.readexactly(length + 2)
            return data[:-2]
        if marker == b"*":
            count = int(body)
            if count < 0:
                return None
            return [await self._read_reply() for _ in range(count)]
        raise ConnectionError(f"unexpected RESP marker {marker!r}")

    async def get(self, key: str) -> bytes | None:
        return await self._command(b"GET", key.encode())

    async def set(self, key: str, value: bytes) -> None:
        await self._command(b"SET", key.encode(), value)

    async def expire(self, key: str, seconds: int) -> None:
        await self._command(b"EXPIRE", key.encode(), str(seconds).encode())

    async def close(self) -> None:
        async with self._lock:
            self._drop_connection()


class ResultCache:
    """Two-tier cache for canonical ScoredLists.

    Lookups hit the in-memory tier first; on a miss the external tier (when
    configured) is consulted and a hit is promoted into memory. Writes go to
    both tiers (write-through), with the external entry given a TTL.
    """

    def __init__(
        self,
        capacity: int = 1024,
        external: RespClient | None = None,
        ttl_seconds: int = 86400,
    ):
        self._memory = LruCache(capacity)
        self._external = external
        self._ttl = ttl_seconds
        self._external_down = False

    @property
    def enabled(self) -> bool:
        return self._memory.capacity > 0 or self._external is not None

    def _note_external_failure(self, exc: Exception) -> None:
        if not self._external_down:
            logger.warning("external cache unavailable, degrading to miss: %s", exc)
            self._external_down = True

    def _note_external_success(self) -> None:
        if self._external_down:
            logger.info("external cache recovered")
            self._external_down = False

    async def get(self, key: str) -> ScoredList | None:
        value = self._memory.get(key)
        if value is not None:
            return value
        if self._external is None:
            return None
        try:
            data = await self._external.get(key)
            self._note_external_success()
        except Exception as exc:
            self._note_external_failure(exc)
            return None
        if data is None:
            return None
        try:
            value = decode_scored_list(data)
        except Exception as exc:
            logger.warning("discarding undecodable external cache entry: %s", exc)
            return None
        self._memory.put(key, value)
        return value

    async def put(self, key: str, value: ScoredList) -> None:
        self._memory.put(key, value)
        if self._external is None:
            return
        try:
            await self._external.set(key, encode_scored_list(value))
            await self._external.expire(key, self._ttl)
            self._note_external_success()
        except Exception as exc:
            self._note_external_failure(exc)

    async def close(self) -> None:
        if self._external is not None:
            await self._external.close()
