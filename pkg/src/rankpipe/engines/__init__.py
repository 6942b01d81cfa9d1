"""Built-in engines and the engine registry.

Registry keys usable in the ``engine`` field of a service config:

    bm25            index search over a configured collection (+ rescoring)
    rrf             reciprocal rank fusion
    lexical-rerank  BM25-over-candidates reranker
    variant-rewrite deterministic query-variant generator
    relay           forwards to a service on another node

New kinds are added in code via :func:`register_engine`.
"""

from .base import (
    Engine,
    EngineFactory,
    EngineResources,
    create_engine,
    engine_kinds,
    register_engine,
)
from .bm25 import Bm25Engine, Bm25Index, build_bm25_engine, rank_candidates
from .fusion import DEFAULT_RRF_KAPPA, RrfEngine, build_rrf_engine, rrf_fuse
from .rerank import LexicalRerankEngine, build_rerank_engine
from .rewrite import STOPWORDS, VariantRewriteEngine, build_rewrite_engine, query_variants


def _build_relay_engine(descriptor, resources):
    from ..relay import build_relay_engine  # deferred: relay imports engines.base

    return build_relay_engine(descriptor, resources)


register_engine("bm25", build_bm25_engine)
register_engine("rrf", build_rrf_engine)
register_engine("lexical-rerank", build_rerank_engine)
register_engine("variant-rewrite", build_rewrite_engine)
register_engine("relay", _build_relay_engine)

__all__ = [
    "Engine",
    "EngineFactory",
    "EngineResources",
    "create_engine",
    "engine_kinds",
    "register_engine",
    "Bm25Engine",
    "Bm25Index",
    "rank_candidates",
    "RrfEngine",
    "rrf_fuse",
    "DEFAULT_RRF_KAPPA",
    "LexicalRerankEngine",
    "VariantRewriteEngine",
    "query_variants",
    "STOPWORDS",
]
