"""Relay engine: makes services on another node locally addressable.

A relay forwards each query as its own HTTP request; the remote node's own
processors re-batch them server-side, so no bulk wire format is needed.
Forward-loop protection: every hop increments a ``relay-hops`` header, and a
relay refuses to forward once the count would exceed MAX_RELAY_HOPS.

Non-search capabilities (score, rewrite, fuse) travel over the same /query
endpoint using the relay-internal ``mode`` extension fields documented in
the README.
"""

from __future__ import annotations

import asyncio
import logging
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Sequence

import aiohttp

from .engines.base import Engine, EngineResources
from .errors import (
    ConfigError,
    EndpointUnreachable,
    RankpipeError,
    RelayHopsExceeded,
    RelayRemoteError,
    RelayTimeout,
    RelayTransportError,
)
from .model import (
    ALL_CAPABILITIES,
    EngineCapability,
    Query,
    ScoredList,
    ServiceDescriptor,
    canonicalize,
)

logger = logging.getLogger(__name__)

MAX_RELAY_HOPS = 4
HOPS_HEADER = "relay-hops"

# Hop count of the request currently being handled; set by the HTTP layer.
current_relay_hops: ContextVar[int] = ContextVar("relay_hops", default=0)


class SessionPool:
    """One aiohttp session per remote endpoint, shared by all relay engines."""

    def __init__(self, max_connections: int = 64):
        self._max_connections = max_connections
        self._sessions: dict[str, aiohttp.ClientSession] = {}

    def session(self, endpoint: str) -> aiohttp.ClientSession:
        session = self._sessions.get(endpoint)
        if session is None or session.closed:
            session = aiohttp.ClientSession(
                connector=aiohttp.TCPConnector(limit=self._max_connections)
            )
            self._sessions[endpoint] = session
        return session

    async def close(self) -> None:
        for session in self._sessions.values():
            if not session.closed:
                await session.close()
        self._sessions.clear()


@dataclass(frozen=True)
class RemoteServiceHandle:
    local_name: str
    endpoint: str
    remote_name: str
    capabilities: frozenset
    timeout_ms: float = 10000.0


def _next_hops(current: int) -> int:
    if current >= MAX_RELAY_HOPS:
        raise RelayHopsExceeded(
            f"refusing to forward: relay hop count {current} reached the cap of {MAX_RELAY_HOPS}"
        )
    return current + 1


class RelayEngine(Engine):
    # Overlapping batches are safe (plain HTTP fan-out) and necessary: with
    # serialized batches an A<->B import cycle would wedge both dispatchers
    # until timeout instead of being cut by the hop cap.
    serial_batches = False

    def __init__(self, handle: RemoteServiceHandle, pool: SessionPool):
        super().__init__(handle.local_name, handle.capabilities)
        self.handle = handle
        self._pool = pool

    def _timeout(self) -> aiohttp.ClientTimeout:
        return aiohttp.ClientTimeout(total=self.handle.timeout_ms / 1000.0)

    async def _post_query(self, body: dict, hops: int) -> dict:
        url = self.handle.endpoint.rstrip("/") + "/query"
        session = self._pool.session(self.handle.endpoint)
        headers = {HOPS_HEADER: str(_next_hops(hops))}
        try:
            async with session.post(
                url, json=body, headers=headers, timeout=self._timeout()
            ) as response:
                payload = await response.json(content_type=None)
        except asyncio.TimeoutError:
            raise RelayTimeout(
                f"no response from {self.handle.endpoint} within {self.handle.timeout_ms} ms"
            ) from None
        except aiohttp.ClientError as exc:
            raise RelayTransportError(f"{self.handle.endpoint}: {exc}") from None
        except ValueError as exc:
            raise RelayRemoteError(f"{self.handle.endpoint}: unreadable body ({exc})") from None
        if response.status != 200:
            code = payload.get("code", "?") if isinstance(payload, dict) else "?"
            detail = payload.get("detail", "") if isinstance(payload, dict) else ""
            raise RelayRemoteError(
                f"{self.handle.endpoint} returned {response.status} {code}: {detail}"
            )
        if not isinstance(payload, dict):
            raise RelayRemoteError(f"{self.handle.endpoint}: response is not an object")
        return payload

    def _decode_result(self, payload: dict) -> ScoredList:
        result = payload.get("result")
        if not isinstance(result, dict):
            raise RelayRemoteError(f"{self.handle.endpoint}: response lacks a result mapping")
        try:
            return canonicalize(ScoredList.from_result(result))
        except (RankpipeError, TypeError, ValueError) as exc:
            raise RelayRemoteError(f"{self.handle.endpoint}: bad result payload ({exc})") from None

    async def _relay_one(self, query: Query) -> ScoredList | RankpipeError:
        try:
            payload = await self._post_query(
                {"service": self.handle.remote_name, "query": query.text, "limit": query.limit},
                query.relay_hops,
            )
            return self._decode_result(payload)
        except RankpipeError as exc:
            return exc

    async def search_batch(self, queries: Sequence[Query]):
        """One concurrent remote request per query; failures stay per-query."""
        return list(await asyncio.gather(*(self._relay_one(q) for q in queries)))

    async def score_batch(self, query: Query, candidates: Sequence[tuple[str, str]]) -> ScoredList:
        payload = await self._post_query(
            {
                "service": self.handle.remote_name,
                "mode": "score",
                "query": query.text,
                "candidates": [[doc_id, text] for doc_id, text in candidates],
            },
            query.relay_hops,
        )
        return self._decode_result(payload)

    async def rewrite(self, query: Query, n: int | None = None) -> list[Query]:
        body = {"service": self.handle.remote_name, "mode": "rewrite", "query": query.text}
        if n is not None:
            body["count"] = n
        payload = await self._post_query(body, query.relay_hops)
        texts = payload.get("queries")
        if not isinstance(texts, list) or not all(isinstance(t, str) for t in texts):
            raise RelayRemoteError(f"{self.handle.endpoint}: response lacks a queries list")
        return [Query(text, query.limit, relay_hops=query.relay_hops) for text in texts]

    async def fuse(self, lists: Sequence[ScoredList]) -> ScoredList:
        payload = await self._post_query(
            {
                "service": self.handle.remote_name,
                "mode": "fuse",
                "lists": [[[doc_id, score] for doc_id, score in slist] for slist in lists],
            },
            current_relay_hops.get(),
        )
        return self._decode_result(payload)


async def import_services(
    endpoint: str, pool: SessionPool, timeout_s: float = 5.0
) -> list[RemoteServiceHandle]:
    """Discover every service a remote node offers, wrapped as relay handles."""
    url = endpoint.rstrip("/") + "/services"
    session = pool.session(endpoint)
    try:
        async with session.get(url, timeout=aiohttp.ClientTimeout(total=timeout_s)) as response:
            if response.status != 200:
                raise EndpointUnreachable(endpoint, f"/services returned {response.status}")
            listing = await response.json(content_type=None)
    except EndpointUnreachable:
        raise
    except (asyncio.TimeoutError, aiohttp.ClientError, ValueError) as exc:
        raise EndpointUnreachable(endpoint, str(exc)) from None
    if not isinstance(listing, list):
        raise EndpointUnreachable(endpoint, "/services did not return a list")
    handles = []
    for entry in listing:
        if not isinstance(entry, dict) or not isinstance(entry.get("name"), str):
            raise EndpointUnreachable(endpoint, f"bad service entry: {entry!r}")
        capabilities = set()
        for cap_name in entry.get("capabilities", ()):
            try:
                capabilities.add(EngineCapability(cap_name))
            except ValueError:
                logger.warning(
                    "import from %s: ignoring unknown capability %r on %s",
                    endpoint,
                    cap_name,
                    entry["name"],
                )
        if not capabilities:
            logger.warning(
                "import from %s: skipping %s (no usable capabilities)", endpoint, entry["name"]
            )
            continue
        handles.append(
            RemoteServiceHandle(
                local_name=entry["name"],
                endpoint=endpoint,
                remote_name=entry["name"],
                capabilities=frozenset(capabilities),
            )
        )
    return handles


def build_relay_engine(descriptor: ServiceDescriptor, resources: EngineResources) -> RelayEngine:
    """Factory for explicitly configured relay services.

    Config keys: endpoint (required), service (remote name, defaults to the
    local name), timeout_ms, capabilities (list of capability names; defaults
    to all four -- the remote still rejects what it cannot do).
    """
    config = descriptor.engine_config
    endpoint = config.get("endpoint")
    if not endpoint:
        raise ConfigError(f"service {descriptor.name!r}: relay engine needs an 'endpoint'")
    if resources.http is None:
        raise ConfigError(f"service {descriptor.name!r}: relay engine needs an HTTP session pool")
    cap_names = config.get("capabilities")
    if cap_names is None:
        capabilities = ALL_CAPABILITIES
    else:
        capabilities = frozenset(EngineCapability(name) for name in cap_names)
    handle = RemoteServiceHandle(
        local_name=descriptor.name,
        endpoint=endpoint,
        remote_name=config.get("service", descriptor.name),
        capabilities=capabilities,
        timeout_ms=float(config.get("timeout_ms", 10000.0)),
    )
    return RelayEngine(handle, resources.http)
