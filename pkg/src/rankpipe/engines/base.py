"""Engine abstraction and registry.

An Engine exposes batch-first entry points for up to four capabilities:
searching an index, scoring query/document pairs, rewriting queries, and
fusing ranked lists. Subclasses override the entry points for the
capabilities they declare; the defaults raise Unsupported.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Mapping, Sequence

from ..errors import ConfigError, Unsupported
from ..model import EngineCapability, Query, ScoredList, ServiceDescriptor

if TYPE_CHECKING:
    from ..docstore import DocumentStore
    from ..relay import SessionPool


class Engine:
    #: when True the processor never overlaps search batches to this engine;
    #: pure I/O engines (relays) may clear it to stay re-entrant
    serial_batches = True

    def __init__(self, name: str, capabilities: frozenset):
        if not capabilities:
            raise ConfigError(f"engine {name!r} declares no capabilities")
        self.name = name
        self.capabilities = frozenset(capabilities)

    def supports(self, capability: EngineCapability) -> bool:
        return capability in self.capabilities

    def _unsupported(self, capability: EngineCapability) -> Unsupported:
        return Unsupported(f"service {self.name!r} does not provide {capability.value}")

    async def search_batch(self, queries: Sequence[Query]) -> list[ScoredList]:
        """Search for each query; results come back in input order.

        Implementations with per-query failure semantics may put an exception
        instance in a slot instead of a ScoredList; the processor routes it to
        that request alone.
        """
        raise self._unsupported(EngineCapability.SEARCH)

    async def score_batch(
        self, query: Query, candidates: Sequence[tuple[str, str]]
    ) -> ScoredList:
        """Rank the given (doc_id, text) candidates for the query."""
        raise self._unsupported(EngineCapability.SCORE)

    async def rewrite(self, query: Query, n: int | None = None) -> list[Query]:
        """Produce up to n query variants; the first is always the original."""
        raise self._unsupported(EngineCapability.REWRITE)

    async def fuse(self, lists: Sequence[ScoredList]) -> ScoredList:
        """Merge several rankings into one."""
        raise self._unsupported(EngineCapability.FUSE)

    async def close(self) -> None:
        return None


@dataclass
class EngineResources:
    """What engine factories may draw on at construction time."""

    collections: Mapping[str, "DocumentStore"] = field(default_factory=dict)
    http: "SessionPool | None" = None


EngineFactory = Callable[[ServiceDescriptor, EngineResources], Engine]

_REGISTRY: dict[str, EngineFactory] = {}


def register_engine(kind: str, factory: EngineFactory, *, replace: bool = False) -> None:
    """Add an engine kind to the static registry used by config loading."""
    if kind in _REGISTRY and not replace:
        raise ConfigError(f"engine kind {kind!r} already registered")
    _REGISTRY[kind] = factory


def engine_kinds() -> tuple[str, ...]:
    return tuple(sorted(_REGISTRY))


def create_engine(descriptor: ServiceDescriptor, resources: EngineResources) -> Engine:
    factory = _REGISTRY.get(descriptor.engine_kind)
    if factory is None:
        raise ConfigError(
            f"unknown engine kind {descriptor.engine_kind!r} for service "
            f"{descriptor.name!r}; registered kinds: {', '.join(engine_kinds())}"
        )
    return factory(descriptor, resources)
