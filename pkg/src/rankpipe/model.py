"""Shared domain types: queries, rankings, capabilities, and node configuration.

All types here are immutable value objects; they can be shared freely across
tasks and threads.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Mapping

from .errors import ConfigError, DuplicateDocId, InvalidLimit, InvalidQuery, NonFiniteScore

DEFAULT_LIMIT = 20
DEFAULT_BATCH_SIZE = 16
DEFAULT_MAX_WAIT_MS = 50.0

# Service names must lex as a single NAME token of the pipeline grammar.
SERVICE_NAME_RE = re.compile(r"[A-Za-z0-9_.\-]+\Z")


class EngineCapability(Enum):
    SEARCH = "search"
    SCORE = "score"
    REWRITE = "rewrite"
    FUSE = "fuse"

    def __repr__(self) -> str:  # keep error messages compact
        return f"<{self.value}>"


ALL_CAPABILITIES = frozenset(EngineCapability)


def capability_from_name(name: str) -> EngineCapability:
    try:
        return EngineCapability(name)
    except ValueError:
        raise ConfigError(f"unknown capability {name!r}") from None


@dataclass(frozen=True)
class Query:
    """One search request.

    ``relay_hops`` carries how many node-to-node forwards this request has
    already made; it is propagation metadata, not part of the query identity.
    """

    text: str
    limit: int = DEFAULT_LIMIT
    relay_hops: int = field(default=0, compare=False)

    def __post_init__(self):
        if not isinstance(self.text, str):
            raise InvalidQuery("query text must be a string")
        trimmed = self.text.strip()
        if not trimmed:
            raise InvalidQuery("query text is empty")
        object.__setattr__(self, "text", trimmed)
        if not isinstance(self.limit, int) or isinstance(self.limit, bool) or self.limit < 1:
            raise InvalidQuery(f"limit must be a positive integer, got {self.limit!r}")
        if not isinstance(self.relay_hops, int) or self.relay_hops < 0:
            raise InvalidQuery("relay_hops must be a non-negative integer")


@dataclass(frozen=True)
class ScoredList:
    """An ordered ranking of (doc_id, score) pairs, the inter-stage currency."""

    entries: tuple[tuple[str, float], ...] = ()

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, float]]) -> "ScoredList":
        return cls(tuple((str(doc_id), float(score)) for doc_id, score in pairs))

    @classmethod
    def canonical(cls, pairs: Iterable[tuple[str, float]]) -> "ScoredList":
        return canonicalize(cls.from_pairs(pairs))

    @classmethod
    def from_result(cls, result: Mapping[str, float]) -> "ScoredList":
        return cls.from_pairs(result.items())

    def to_result(self) -> dict[str, float]:
        """Plain mapping in the list's order (canonical rank order when canonical)."""
        return {doc_id: score for doc_id, score in self.entries}

    def ids(self) -> tuple[str, ...]:
        return tuple(doc_id for doc_id, _ in self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __bool__(self) -> bool:
        return bool(self.entries)

    def __iter__(self) -> Iterator[tuple[str, float]]:
        return iter(self.entries)


EMPTY_SCORED_LIST = ScoredList()


def canonicalize(slist: ScoredList) -> ScoredList:
    """Sort entries by score descending, ties by doc_id ascending. Idempotent.

    Rejects duplicate ids and non-finite scores: a ranking with either is
    not cacheable or comparable.
    """
    seen: set[str] = set()
    for doc_id, score in slist.entries:
        if doc_id in seen:
            raise DuplicateDocId(f"duplicate doc_id {doc_id!r}")
        seen.add(doc_id)
        if not math.isfinite(score):
            raise NonFiniteScore(f"score for doc_id {doc_id!r} is {score!r}")
    ordered = sorted(slist.entries, key=lambda entry: (-entry[1], entry[0]))
    return ScoredList(tuple(ordered))


def truncate(slist: ScoredList, k: int) -> ScoredList:
    """First min(k, len) entries of an (assumed canonical) list."""
    if not isinstance(k, int) or isinstance(k, bool) or k < 1:
        raise InvalidLimit(f"k must be a positive integer, got {k!r}")
    return ScoredList(slist.entries[:k])


def _check_service_name(name: str) -> None:
    if not isinstance(name, str) or not SERVICE_NAME_RE.fullmatch(name):
        raise ConfigError(
            f"invalid service name {name!r}: must match [A-Za-z0-9_.-]+"
        )
    if name.isdigit():
        raise ConfigError(f"invalid service name {name!r}: must not be a pure integer")


@dataclass(frozen=True)
class ServiceDescriptor:
    """Declarative description of one hosted engine."""

    name: str
    engine_kind: str
    batch_size: int = DEFAULT_BATCH_SIZE
    max_wait_ms: float = DEFAULT_MAX_WAIT_MS
    engine_config: Mapping = field(default_factory=dict)

    def __post_init__(self):
        _check_service_name(self.name)
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            raise ConfigError(f"service {self.name!r}: batch_size must be >= 1")
        if not (isinstance(self.max_wait_ms, (int, float)) and self.max_wait_ms > 0):
            raise ConfigError(f"service {self.name!r}: max_wait_ms must be > 0")


@dataclass(frozen=True)
class CollectionDescriptor:
    name: str
    doc_path: str
    id_field: str = "id"
    text_fields: tuple[str, ...] | None = None

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name:
            raise ConfigError("collection name must be a non-empty string")


@dataclass(frozen=True)
class CacheSettings:
    """Result-cache tiers: bounded in-memory LRU plus optional external store.

    ``capacity`` 0 disables the in-memory tier; with no ``external`` address
    that disables caching entirely. ``ttl_seconds`` applies to the external
    tier only (the in-memory tier evicts by capacity).
    """

    capacity: int = 1024
    external: str | None = None
    ttl_seconds: int = 86400

    def __post_init__(self):
        if not isinstance(self.capacity, int) or self.capacity < 0:
            raise ConfigError("cache capacity must be a non-negative integer")
        if not isinstance(self.ttl_seconds, int) or self.ttl_seconds < 1:
            raise ConfigError("cache ttl_seconds must be a positive integer")


@dataclass(frozen=True)
class ServerConfig:
    """Everything a node needs to start: engines, collections, peers, listener."""

    host: str = "127.0.0.1"
    port: int = 8000
    server_imports: tuple[str, ...] = ()
    services: tuple[ServiceDescriptor, ...] = ()
    collections: tuple[CollectionDescriptor, ...] = ()
    cache: CacheSettings = field(default_factory=CacheSettings)
    import_policy: str = "warn"

    def __post_init__(self):
        if self.import_policy not in ("warn", "fail"):
            raise ConfigError("import_policy must be 'warn' or 'fail'")
        names = [s.name for s in self.services]
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise ConfigError(f"duplicate service name(s): {sorted(dupes)}")
        cnames = [c.name for c in self.collections]
        cdupes = {n for n in cnames if cnames.count(n) > 1}
        if cdupes:
            raise ConfigError(f"duplicate collection name(s): {sorted(cdupes)}")
