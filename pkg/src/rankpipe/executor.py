"""Walks a validated pipeline AST by orchestrating processors.

Semantics, per node:

* A service reference at the head of a pipeline searches. Interior searches
  (anything feeding a later stage or a fuser) request
  max(final limit, interior depth) documents so downstream stages have
  material to work with; the sole terminal search requests exactly the
  final limit.
* ``a >> b``: b is a scoring stage; it receives the query plus the document
  text of a's results, fetched from the collection store.
* ``e%k`` truncates e's output to its top k.
* A parallel block at the head runs every branch concurrently on the same
  query and fuses the branch outputs. With a generator, the query is first
  rewritten into sub-queries and every (sub-query, branch) pair runs
  concurrently, sub-query major, before fusing all resulting lists.
* A parallel block piped into mid-pipeline applies each branch to the
  upstream candidates as a scoring pipeline, then fuses.

Errors raised while executing a stage are tagged with that stage's canonical
substring and its position in the canonical pipeline string.
"""

from __future__ import annotations

import asyncio
from dataclasses import replace
from typing import TYPE_CHECKING

from .errors import MissingCollection, RankpipeError
from .model import Query, ScoredList, truncate
from .pipeline import Limit, Parallel, PipelineAst, Sequence, ServiceRef, unparse

if TYPE_CHECKING:
    from .server import Node

DEFAULT_INTERIOR_DEPTH = 100


class PipelineExecutor:
    def __init__(self, node: "Node"):
        self._node = node

    async def execute(
        self,
        ast: PipelineAst,
        query: Query,
        collection: str | None = None,
        depth: int = DEFAULT_INTERIOR_DEPTH,
    ) -> ScoredList:
        canonical = unparse(ast)
        return await self._exec(ast, query, collection, depth, query.limit, False, canonical)

    def _tag(self, error: RankpipeError, node: PipelineAst, canonical: str) -> None:
        if getattr(error, "stage", None) is None:
            stage = unparse(node)
            error.stage = stage
            error.stage_position = canonical.find(stage)

    async def _exec(
        self,
        node: PipelineAst,
        query: Query,
        collection: str | None,
        depth: int,
        final_limit: int,
        interior: bool,
        canonical: str,
    ) -> ScoredList:
        try:
            if isinstance(node, ServiceRef):
                limit = max(final_limit, depth) if interior else final_limit
                return await self._node.submit(node.name, replace(query, limit=limit))
            if isinstance(node, Limit):
                child = await self._exec(
                    node.child, query, collection, depth, final_limit, interior, canonical
                )
                return truncate(child, node.k)
            if isinstance(node, Sequence):
                result = await self._exec(
                    node.stages[0], query, collection, depth, final_limit, True, canonical
                )
                for stage in node.stages[1:]:
                    result = await self._apply_score(stage, result, query, collection, canonical)
                return result
            if isinstance(node, Parallel):
                sub_queries = await self._sub_queries(node, query)
                tasks = [
                    self._exec(branch, sub, collection, depth, final_limit, True, canonical)
                    for sub in sub_queries
                    for branch in node.branches
                ]
                lists = await asyncio.gather(*tasks)
                return await self._node.fuse(node.fuser, lists)
            raise TypeError(f"not a pipeline node: {node!r}")
        except RankpipeError as exc:
            self._tag(exc, node, canonical)
            raise

    async def _sub_queries(self, node: Parallel, query: Query) -> list[Query]:
        if node.generator is None:
            return [query]
        return await self._node.rewrite(node.generator, query)

    async def _apply_score(
        self,
        node: PipelineAst,
        incoming: ScoredList,
        query: Query,
        collection: str | None,
        canonical: str,
    ) -> ScoredList:
        if not incoming:
            return incoming
        try:
            if isinstance(node, ServiceRef):
                candidates = self._fetch_candidates(incoming, collection)
                return await self._node.score(node.name, query, candidates)
            if isinstance(node, Limit):
                child = await self._apply_score(node.child, incoming, query, collection, canonical)
                return truncate(child, node.k)
            if isinstance(node, Sequence):
                result = incoming
                for stage in node.stages:
                    result = await self._apply_score(stage, result, query, collection, canonical)
                return result
            if isinstance(node, Parallel):
                sub_queries = await self._sub_queries(node, query)
                tasks = [
                    self._apply_score(branch, incoming, sub, collection, canonical)
                    for sub in sub_queries
                    for branch in node.branches
                ]
                lists = await asyncio.gather(*tasks)
                return await self._node.fuse(node.fuser, lists)
            raise TypeError(f"not a pipeline node: {node!r}")
        except RankpipeError as exc:
            self._tag(exc, node, canonical)
            raise

    def _fetch_candidates(
        self, incoming: ScoredList, collection: str | None
    ) -> list[tuple[str, str]]:
        if collection is None:
            raise MissingCollection(
                "this pipeline pipes results into a scoring stage; "
                "the request must name a 'collection' to fetch document text from"
            )
        store = self._node.store(collection)
        return [
            (doc_id, store.document_text(store.get(doc_id))) for doc_id, _score in incoming
        ]
