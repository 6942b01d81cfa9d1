"""Deterministic query-variant generation.

Variants, in order: the original query, a lowercased copy, and a
stopword-stripped copy (original casing, fixed stopword list below).
Exact-string duplicates collapse, so an already-lowercase stopword-free
query yields fewer variants.
"""

from __future__ import annotations

from dataclasses import replace

from ..errors import InvalidLimit
from ..model import EngineCapability, Query
from .base import Engine, EngineResources

DEFAULT_VARIANTS = 3

STOPWORDS = frozenset(
    """
    a an and are as at be but by did do does for from had has have how i if in
    into is it its of on or that the their then there these they this those to
    was were what when where which who whom why will with
    """.split()
)


def query_variants(text: str) -> list[str]:
    stripped = " ".join(word for word in text.split() if word.lower() not in STOPWORDS)
    raw = [text, text.lower()]
    if stripped:
        raw.append(stripped)
    variants: list[str] = []
    for candidate in raw:
        if candidate not in variants:
            variants.append(candidate)
    return variants


class VariantRewriteEngine(Engine):
    def __init__(self, name: str, default_variants: int = DEFAULT_VARIANTS):
        super().__init__(name, frozenset({EngineCapability.REWRITE}))
        self.default_variants = default_variants

    async def rewrite(self, query: Query, n: int | None = None) -> list[Query]:
        n = self.default_variants if n is None else n
        if not isinstance(n, int) or n < 1:
            raise InvalidLimit(f"variant count must be a positive integer, got {n!r}")
        return [replace(query, text=text) for text in query_variants(query.text)[:n]]


def build_rewrite_engine(descriptor, resources: EngineResources) -> VariantRewriteEngine:
    n = int(descriptor.engine_config.get("variants", DEFAULT_VARIANTS))
    return VariantRewriteEngine(descriptor.name, default_variants=n)
