"""Lexical reranker: BM25 over the candidate set itself."""

from __future__ import annotations

from typing import Sequence

from ..errors import EmptyCandidates
from ..model import EngineCapability, Query, ScoredList
from .base import Engine, EngineResources
from .bm25 import DEFAULT_B, DEFAULT_K1, rank_candidates


class LexicalRerankEngine(Engine):
    def __init__(self, name: str, k1: float = DEFAULT_K1, b: float = DEFAULT_B):
        super().__init__(name, frozenset({EngineCapability.SCORE}))
        self.k1 = k1
        self.b = b

    async def score_batch(self, query: Query, candidates: Sequence[tuple[str, str]]) -> ScoredList:
        if not candidates:
            raise EmptyCandidates("score_batch needs at least one candidate")
        return ScoredList.from_pairs(
            rank_candidates(query.text, list(candidates), k1=self.k1, b=self.b)
        )


def build_rerank_engine(descriptor, resources: EngineResources) -> LexicalRerankEngine:
    config = descriptor.engine_config
    return LexicalRerankEngine(
        descriptor.name,
        k1=float(config.get("k1", DEFAULT_K1)),
        b=float(config.get("b", DEFAULT_B)),
    )
