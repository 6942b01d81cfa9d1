"""HTTP API surface and node bootstrap.

Endpoints:

    POST /query     run a search against one service or an on-the-fly pipeline
    POST /content   fetch a document's fields by (collection, id)
    GET  /services  list hosted services (local and relayed)
    GET  /health    liveness probe

Request intake never waits on engine execution: queries park in per-service
queues and responses resolve when their batch completes, so new connections
are accepted while batches run.
"""

from __future__ import annotations

import asyncio
import functools
import json
import logging
import time

from aiohttp import web

from .cache import ResultCache, RespClient, cache_key
from .config import load_config
from .docstore import DocumentStore
from .engines.base import EngineResources, create_engine
from .errors import (
    CapabilityMismatch,
    ConfigError,
    DocumentNotFound,
    EmptyCandidates,
    EmptyInput,
    EndpointUnreachable,
    EngineFailure,
    InvalidLimit,
    InvalidQuery,
    InvalidRequest,
    LexError,
    MissingCollection,
    ParseError,
    RankpipeError,
    RelayHopsExceeded,
    RelayRemoteError,
    RelayTimeout,
    RelayTransportError,
    UnknownCollection,
    UnknownService,
    Unsupported,
)
from .executor import DEFAULT_INTERIOR_DEPTH, PipelineExecutor
from .model import (
    DEFAULT_LIMIT,
    Query,
    ScoredList,
    ServerConfig,
    ServiceDescriptor,
    truncate,
)
from .pipeline import needs_documents, parse, validate
from .processor import Processor
from .relay import (
    HOPS_HEADER,
    RelayEngine,
    SessionPool,
    current_relay_hops,
    import_services,
)

logger = logging.getLogger(__name__)

NODE_KEY = web.AppKey("node")

_json_dumps = functools.partial(json.dumps, separators=(",", ":"), ensure_ascii=False)

_STATUS_BY_ERROR = {
    InvalidRequest: 400,
    InvalidQuery: 400,
    InvalidLimit: 400,
    LexError: 400,
    ParseError: 400,
    CapabilityMismatch: 400,
    MissingCollection: 400,
    Unsupported: 400,
    EmptyCandidates: 400,
    EmptyInput: 400,
    UnknownService: 404,
    UnknownCollection: 404,
    DocumentNotFound: 404,
    EngineFailure: 500,
    RelayTransportError: 502,
    RelayRemoteError: 502,
    RelayTimeout: 504,
    RelayHopsExceeded: 508,
}


class Node:
    """One gateway node: collections, engines, processors, and peers."""

    def __init__(self, config: ServerConfig):
        self.config = config
        self.http_pool = SessionPool()
        self.stores: dict[str, DocumentStore] = {}
        for descriptor in config.collections:
            try:
                self.stores[descriptor.name] = DocumentStore(
                    descriptor.name,
                    descriptor.doc_path,
                    id_field=descriptor.id_field,
                    text_fields=descriptor.text_fields,
                )
            except OSError as exc:
                raise ConfigError(
                    f"collection {descriptor.name!r}: cannot read "
                    f"{descriptor.doc_path}: {exc}"
                ) from None
        external = None
        if config.cache.external is not None:
            host, _, port = config.cache.external.rpartition(":")
            if not host or not port.isdigit():
                raise ConfigError(
                    f"cache 'external' must be 'host:port', got {config.cache.external!r}"
                )
            external = RespClient(host, int(port))
        self.cache = ResultCache(
            capacity=config.cache.capacity,
            external=external,
            ttl_seconds=config.cache.ttl_seconds,
        )
        self.processors: dict[str, Processor] = {}
        self.origins: dict[str, str] = {}
        resources = EngineResources(collections=self.stores, http=self.http_pool)
        for descriptor in config.services:
            engine = create_engine(descriptor, resources)
            self._register(descriptor, engine, origin="local")
        self.executor = PipelineExecutor(self)
        self._started = False

    def _register(self, descriptor: ServiceDescriptor, engine, origin: str) -> None:
        self.processors[descriptor.name] = Processor(descriptor, engine, self.cache)
        self.origins[descriptor.name] = origin

    async def start(self) -> None:
        if self._started:
            return
        self._started = True
        for processor in self.processors.values():
            await processor.start()
        await self.import_remote_services()

    async def import_remote_services(self) -> None:
        """Resolve server_imports; callable again later to re-import manually."""
        for endpoint in self.config.server_imports:
            try:
                handles = await import_services(endpoint, self.http_pool)
            except EndpointUnreachable as exc:
                if self.config.import_policy == "fail":
                    raise
                logger.warning("skipping import: %s", exc.detail)
                continue
            for handle in handles:
                if handle.local_name in self.processors:
                    logger.warning(
                        "service %r from %s shadowed by an existing service",
                        handle.local_name,
                        endpoint,
                    )
                    continue
                descriptor = ServiceDescriptor(
                    name=handle.local_name,
                    engine_kind="relay",
                    engine_config={"endpoint": endpoint, "service": handle.remote_name},
                )
                engine = RelayEngine(handle, self.http_pool)
                self._register(descriptor, engine, origin="relayed")
                if self._started:
                    await self.processors[handle.local_name].start()
            logger.info("imported %d service(s) from %s", len(handles), endpoint)

    async def close(self) -> None:
        for processor in self.processors.values():
            await processor.close()
            await processor.engine.close()
        await self.cache.close()
        await self.http_pool.close()
        for store in self.stores.values():
            store.close()

    def processor(self, name: str) -> Processor:
        processor = self.processors.get(name)
        if processor is None:
            raise UnknownService(name)
        return processor

    def store(self, name: str) -> DocumentStore:
        store = self.stores.get(name)
        if store is None:
            raise UnknownCollection(name)
        return store

    def capability_map(self) -> dict[str, frozenset]:
        return {name: p.capabilities for name, p in self.processors.items()}

    def services_listing(self) -> list[dict]:
        return [
            {
                "name": name,
                "capabilities": sorted(c.value for c in processor.capabilities),
                "origin": self.origins[name],
            }
            for name, processor in self.processors.items()
        ]

    async def submit(self, service: str, query: Query) -> ScoredList:
        return await self.processor(service).submit(query)

    async def score(self, service: str, query: Query, candidates) -> ScoredList:
        return await self.processor(service).score(query, candidates)

    async def fuse(self, service: str, lists) -> ScoredList:
        return await self.processor(service).fuse(lists)

    async def rewrite(self, service: str, query: Query, n: int | None = None) -> list[Query]:
        return await self.processor(service).rewrite(query, n)


def _error_body(error: RankpipeError) -> dict:
    body = {"code": error.code, "detail": error.detail}
    if isinstance(error, (LexError, ParseError)):
        body["position"] = error.position
    stage = getattr(error, "stage", None)
    if stage is not None:
        body["stage"] = stage
        body["stage_position"] = getattr(error, "stage_position", -1)
    return body


@web.middleware
async def error_middleware(request: web.Request, handler):
    try:
        return await handler(request)
    except RankpipeError as exc:
        status = _STATUS_BY_ERROR.get(type(exc), 500)
        return web.json_response(_error_body(exc), status=status, dumps=_json_dumps)


async def _read_json_object(request: web.Request) -> dict:
    try:
        body = await request.json()
    except ValueError:
        raise InvalidRequest("request body must be a JSON object") from None
    if not isinstance(body, dict):
        raise InvalidRequest("request body must be a JSON object")
    return body


def _positive_int(body: dict, key: str, default: int) -> int:
    value = body.get(key, default)
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise InvalidRequest(f"'{key}' must be a positive integer")
    return value


def _request_hops(request: web.Request) -> int:
    try:
        return max(0, int(request.headers.get(HOPS_HEADER, "0")))
    except ValueError:
        return 0


async def handle_query(request: web.Request) -> web.Response:
    node: Node = request.app[NODE_KEY]
    body = await _read_json_object(request)
    hops = _request_hops(request)
    token = current_relay_hops.set(hops)
    try:
        return await _dispatch_query(node, body, hops)
    finally:
        current_relay_hops.reset(token)


async def _dispatch_query(node: Node, body: dict, hops: int) -> web.Response:
    started = time.perf_counter()
    service = body.get("service")
    pipeline = body.get("pipeline")
    if (service is None) == (pipeline is None):
        raise InvalidRequest("exactly one of 'service' or 'pipeline' is required")
    for key, value in (("service", service), ("pipeline", pipeline)):
        if value is not None and not isinstance(value, str):
            raise InvalidRequest(f"'{key}' must be a string")

    mode = body.get("mode", "search")
    if mode != "search":
        if service is None:
            raise InvalidRequest(f"mode {mode!r} requires 'service'")
        return await _dispatch_extension(node, service, mode, body, started)

    text = body.get("query")
    if not isinstance(text, str):
        raise InvalidRequest("'query' must be a string")
    limit = _positive_int(body, "limit", DEFAULT_LIMIT)
    query = Query(text, limit, relay_hops=hops)

    if service is not None:
        result = await node.submit(service, query)
        return _query_response(result, started, service)

    ast = parse(pipeline)
    plan = validate(ast, node.capability_map())
    collection = body.get("collection")
    if collection is not None and not isinstance(collection, str):
        raise InvalidRequest("'collection' must be a string")
    depth = _positive_int(body, "depth", DEFAULT_INTERIOR_DEPTH)
    if needs_documents(ast):
        if collection is None:
            raise MissingCollection(
                "this pipeline needs document text; the request must name a 'collection'"
            )
        node.store(collection)  # fail fast on unknown collections
    elif collection is not None:
        node.store(collection)

    pipeline_component = "\x1f".join(
        ("pipeline", plan.canonical, collection or "", str(depth))
    )
    key = cache_key(pipeline_component, query.text, query.limit)
    if node.cache.enabled:
        cached = await node.cache.get(key)
        if cached is not None:
            return _query_response(cached, started, plan.canonical)
    result = truncate(await node.executor.execute(ast, query, collection, depth), query.limit)
    if node.cache.enabled:
        await node.cache.put(key, result)
    return _query_response(result, started, plan.canonical)


def _query_response(result: ScoredList, started: float, served_by: str, **extra) -> web.Response:
    payload = {
        "result": result.to_result(),
        "timing": round((time.perf_counter() - started) * 1000.0, 3),
        "served_by": served_by,
        **extra,
    }
    return web.json_response(payload, dumps=_json_dumps)


async def _dispatch_extension(
    node: Node, service: str, mode: str, body: dict, started: float
) -> web.Response:
    """Relay-internal modes carrying non-search capabilities over /query."""
    if mode == "score":
        text = body.get("query")
        if not isinstance(text, str):
            raise InvalidRequest("'query' must be a string")
        raw = body.get("candidates")
        if (
            not isinstance(raw, list)
            or not raw
            or not all(
                isinstance(pair, list)
                and len(pair) == 2
                and isinstance(pair[0], str)
                and isinstance(pair[1], str)
                for pair in raw
            )
        ):
            raise InvalidRequest("'candidates' must be a non-empty list of [id, text] pairs")
        query = Query(text, max(1, len(raw)))
        result = await node.score(service, query, [(d, t) for d, t in raw])
        return _query_response(result, started, service)
    if mode == "fuse":
        raw = body.get("lists")
        if not isinstance(raw, list) or not all(isinstance(entry, list) for entry in raw):
            raise InvalidRequest("'lists' must be a list of [[id, score], ...] lists")
        try:
            lists = [ScoredList.from_pairs(tuple(pair) for pair in entry) for entry in raw]
        except (TypeError, ValueError):
            raise InvalidRequest("'lists' entries must be [id, score] pairs") from None
        result = await node.fuse(service, lists)
        return _query_response(result, started, service)
    if mode == "rewrite":
        text = body.get("query")
        if not isinstance(text, str):
            raise InvalidRequest("'query' must be a string")
        count = body.get("count")
        if count is not None:
            count = _positive_int(body, "count", count)
        variants = await node.rewrite(service, Query(text), count)
        payload = {
            "queries": [v.text for v in variants],
            "timing": round((time.perf_counter() - started) * 1000.0, 3),
            "served_by": service,
        }
        return web.json_response(payload, dumps=_json_dumps)
    raise InvalidRequest(f"unknown mode {mode!r}")


async def handle_content(request: web.Request) -> web.Response:
    node: Node = request.app[NODE_KEY]
    body = await _read_json_object(request)
    collection = body.get("collection")
    doc_id = body.get("id")
    if not isinstance(collection, str) or not isinstance(doc_id, str):
        raise InvalidRequest("'collection' and 'id' must be strings")
    fields = node.store(collection).get(doc_id)
    return web.json_response(fields, dumps=_json_dumps)


async def handle_services(request: web.Request) -> web.Response:
    node: Node = request.app[NODE_KEY]
    return web.json_response(node.services_listing(), dumps=_json_dumps)


async def handle_health(request: web.Request) -> web.Response:
    return web.json_response({"status": "ok"}, dumps=_json_dumps)


def create_app(node: Node) -> web.Application:
    app = web.Application(middlewares=[error_middleware])
    app[NODE_KEY] = node

    async def _startup(app: web.Application) -> None:
        await node.start()

    async def _cleanup(app: web.Application) -> None:
        await node.close()

    app.on_startup.append(_startup)
    app.on_cleanup.append(_cleanup)
    app.router.add_post("/query", handle_query)
    app.router.add_post("/content", handle_content)
    app.router.add_get("/services", handle_services)
    app.router.add_get("/health", handle_health)
    return app


async def run_server(config: ServerConfig, port: int | None = None) -> None:
    node = Node(config)
    app = create_app(node)
    runner = web.AppRunner(app)
    await runner.setup()
    listen_port = port if port is not None else config.port
    site = web.TCPSite(runner, config.host, listen_port)
    await site.start()
    logger.info("serving on http://%s:%d", config.host, listen_port)
    try:
        await asyncio.Event().wait()
    finally:
        await runner.cleanup()


def serve_from_file(config_path: str, port: int | None = None) -> None:
    config = load_config(config_path)
    try:
        asyncio.run(run_server(config, port))
    except KeyboardInterrupt:
        pass
