"""In-memory BM25 inverted index and the engine that serves it.

Scoring follows the Lucene-flavored variant:

    score(q, d) = sum over query term occurrences t with df(t) > 0 of
        idf(t) * tf(t,d) * (k1 + 1) / (tf(t,d) + k1 * (1 - b + b * len(d)/avgdl))
    idf(t) = ln(1 + (N - df(t) + 0.5) / (df(t) + 0.5))

with defaults k1 = 0.9 and b = 0.4. Repeated query terms contribute once per
occurrence.
"""

from __future__ import annotations

import asyncio
import math
from collections import Counter
from typing import Iterable, Sequence

from ..errors import ConfigError, EmptyCandidates
from ..model import EngineCapability, Query, ScoredList
from .base import Engine, EngineResources
from .text import text_tokens

DEFAULT_K1 = 0.9
DEFAULT_B = 0.4


class Bm25Index:
    """Immutable-after-build postings over a (doc_id, text) corpus."""

    def __init__(self, documents: Iterable[tuple[str, str]], k1: float = DEFAULT_K1, b: float = DEFAULT_B):
        if not k1 > 0:
            raise ConfigError(f"k1 must be > 0, got {k1!r}")
        if not 0 <= b <= 1:
            raise ConfigError(f"b must be in [0, 1], got {b!r}")
        self.k1 = float(k1)
        self.b = float(b)
        self.doc_ids: list[str] = []
        self.doc_lengths: list[int] = []
        self.postings: dict[str, list[tuple[int, int]]] = {}
        self._term_freqs: list[Counter] = []
        for doc_id, text in documents:
            internal = len(self.doc_ids)
            tokens = text_tokens(text)
            counts = Counter(tokens)
            self.doc_ids.append(doc_id)
            self.doc_lengths.append(len(tokens))
            self._term_freqs.append(counts)
            for term, tf in counts.items():
                self.postings.setdefault(term, []).append((internal, tf))
        self.doc_count = len(self.doc_ids)
        total = sum(self.doc_lengths)
        self.avg_doc_length = total / self.doc_count if self.doc_count else 0.0

    def df(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def idf(self, term: str) -> float:
        df = self.df(term)
        if df == 0:
            return 0.0
        return math.log(1.0 + (self.doc_count - df + 0.5) / (df + 0.5))

    def _norm(self, internal: int) -> float:
        return self.k1 * (1.0 - self.b + self.b * self.doc_lengths[internal] / self.avg_doc_length)

    def score(self, query_terms: Sequence[str], internal: int) -> float:
        """Scoring kernel for one document; absent terms contribute 0."""
        freqs = self._term_freqs[internal]
        score = 0.0
        for term in query_terms:
            tf = freqs.get(term, 0)
            if tf == 0:
                continue
            score += self.idf(term) * tf * (self.k1 + 1.0) / (tf + self._norm(internal))
        return score

    def search(self, text: str, limit: int) -> list[tuple[str, float]]:
        """Top-limit documents sharing at least one term with the query."""
        terms = text_tokens(text)
        scores: dict[int, float] = {}
        for term in terms:
            plist = self.postings.get(term)
            if not plist:
                continue
            idf = self.idf(term)
            for internal, tf in plist:
                contribution = idf * tf * (self.k1 + 1.0) / (tf + self._norm(internal))
                scores[internal] = scores.get(internal, 0.0) + contribution
        ranked = sorted(
            ((self.doc_ids[internal], score) for internal, score in scores.items()),
            key=lambda entry: (-entry[1], entry[0]),
        )
        return ranked[:limit]


def rank_candidates(
    query_text: str,
    candidates: Sequence[tuple[str, str]],
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> list[tuple[str, float]]:
    """Rank every candidate with BM25 statistics drawn from the candidate set itself.

    Keeps reranking usable on relay-fetched candidates with no index access;
    candidates sharing no query term keep score 0 and sort by id.
    """
    index = Bm25Index(candidates, k1=k1, b=b)
    terms = text_tokens(query_text)
    scored = [
        (index.doc_ids[internal], index.score(terms, internal))
        for internal in range(index.doc_count)
    ]
    scored.sort(key=lambda entry: (-entry[1], entry[0]))
    return scored


class Bm25Engine(Engine):
    """Index search plus candidate-set rescoring."""

    def __init__(self, name: str, index: Bm25Index):
        super().__init__(name, frozenset({EngineCapability.SEARCH, EngineCapability.SCORE}))
        self.index = index

    async def search_batch(self, queries: Sequence[Query]) -> list[ScoredList]:
        batch = list(queries)
        loop = asyncio.get_running_loop()
        # Scoring is pure CPU; run it off-loop so request intake stays live.
        return await loop.run_in_executor(None, self._search_all, batch)

    def _search_all(self, queries: list[Query]) -> list[ScoredList]:
        return [ScoredList.from_pairs(self.index.search(q.text, q.limit)) for q in queries]

    async def score_batch(self, query: Query, candidates: Sequence[tuple[str, str]]) -> ScoredList:
        if not candidates:
            raise EmptyCandidates("score_batch needs at least one candidate")
        pairs = rank_candidates(query.text, list(candidates), k1=self.index.k1, b=self.index.b)
        return ScoredList.from_pairs(pairs)


def build_bm25_engine(descriptor, resources: EngineResources) -> Bm25Engine:
    config = descriptor.engine_config
    collection = config.get("collection")
    if not collection:
        raise ConfigError(f"service {descriptor.name!r}: bm25 engine needs a 'collection'")
    store = resources.collections.get(collection)
    if store is None:
        raise ConfigError(
            f"service {descriptor.name!r}: unknown collection {collection!r}"
        )
    k1 = float(config.get("k1", DEFAULT_K1))
    b = float(config.get("b", DEFAULT_B))
    documents = (
        (doc_id, store.document_text(fields)) for doc_id, fields in store.iter_documents()
    )
    return Bm25Engine(descriptor.name, Bm25Index(documents, k1=k1, b=b))
