"""Reciprocal rank fusion."""

from __future__ import annotations

from typing import Sequence

from ..errors import EmptyInput
from ..model import EngineCapability, ScoredList
from .base import Engine, EngineResources

DEFAULT_RRF_KAPPA = 60


def rrf_fuse(lists: Sequence[ScoredList], kappa: float = DEFAULT_RRF_KAPPA) -> list[tuple[str, float]]:
    """fused(d) = sum over lists containing d of 1 / (kappa + rank), rank 1-based."""
    scores: dict[str, float] = {}
    for slist in lists:
        for rank, (doc_id, _score) in enumerate(slist, start=1):
            scores[doc_id] = scores.get(doc_id, 0.0) + 1.0 / (kappa + rank)
    return sorted(scores.items(), key=lambda entry: (-entry[1], entry[0]))


class RrfEngine(Engine):
    def __init__(self, name: str, kappa: float = DEFAULT_RRF_KAPPA):
        super().__init__(name, frozenset({EngineCapability.FUSE}))
        self.kappa = kappa

    async def fuse(self, lists: Sequence[ScoredList]) -> ScoredList:
        lists = list(lists)
        if not lists:
            raise EmptyInput("fuse needs at least one input list")
        return ScoredList.from_pairs(rrf_fuse(lists, self.kappa))


def build_rrf_engine(descriptor, resources: EngineResources) -> RrfEngine:
    kappa = descriptor.engine_config.get("kappa", DEFAULT_RRF_KAPPA)
    return RrfEngine(descriptor.name, kappa=kappa)
