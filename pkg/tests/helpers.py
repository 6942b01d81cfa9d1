"""Shared test fixtures: deterministic engines, node harnesses, generators."""

from __future__ import annotations

import asyncio
import hashlib
import json
import random
import socket
import subprocess
import sys
import time
import urllib.request

from aiohttp import web

from rankpipe.config import parse_config
from rankpipe.engines.base import Engine
from rankpipe.model import EngineCapability, ScoredList
from rankpipe.pipeline import Limit, Parallel, Sequence, ServiceRef
from rankpipe.server import Node, create_app

CORPUS3 = {
    "d1": "machu picchu is in peru",
    "d2": "peru has llamas",
    "d3": "where is the eiffel tower",
}


def write_jsonl(path, docs: dict[str, str], id_field: str = "id", text_field: str = "text"):
    with open(path, "w", encoding="utf-8") as handle:
        for doc_id, text in docs.items():
            handle.write(json.dumps({id_field: doc_id, text_field: text}) + "\n")
    return str(path)


def make_config(data: dict):
    return parse_config(data)


# ---------------------------------------------------------------------------
# Deterministic fixture engines


FIXTURE_POOL = 26
FIXTURE_DOC_IDS = [f"w{i:02d}" for i in range(FIXTURE_POOL)]


def fixture_doc_text(doc_id: str) -> str:
    i = int(doc_id[1:])
    return " ".join(f"word{i}" for _ in range(i + 1))


def write_fixture_collection(path):
    """26 documents (w00..w25) covering every id a fixture search can return."""
    return write_jsonl(path, {doc_id: fixture_doc_text(doc_id) for doc_id in FIXTURE_DOC_IDS})


def stable_results(text: str, limit: int) -> list[tuple[str, float]]:
    """A ranking over the w00..w25 universe derived only from the query text.

    Stable across processes (sha256-based), with a text-dependent subset of
    around 80% of the pool, already in canonical order.
    """
    pairs = []
    for doc_id in FIXTURE_DOC_IDS:
        digest = hashlib.sha256(f"{text}|{doc_id}".encode("utf-8")).digest()
        value = int.from_bytes(digest[:4], "big")
        if value % 5 == 0:
            continue
        pairs.append((doc_id, round(value / 2**32 * 10.0, 6)))
    pairs.sort(key=lambda e: (-e[1], e[0]))
    return pairs[:limit]


class RecordingEngine(Engine):
    """Search engine with a query->pairs function; records batches and times.

    ``salt`` keys the results, so two services backed by this engine return
    different rankings for the same query.
    """

    def __init__(self, name="fixture", fn=None, salt=None,
                 capabilities=(EngineCapability.SEARCH,)):
        super().__init__(name, frozenset(capabilities))
        self.salt = salt if salt is not None else name
        self.fn = fn or (lambda text, limit: stable_results(f"{self.salt}|{text}", limit))
        self.batches: list[list[str]] = []
        self.batch_limits: list[list[int]] = []
        self.invoke_times: list[float] = []

    async def search_batch(self, queries):
        self.batches.append([q.text for q in queries])
        self.batch_limits.append([q.limit for q in queries])
        self.invoke_times.append(time.monotonic())
        return [ScoredList.from_pairs(self.fn(q.text, q.limit)) for q in queries]


def salted_results(salt: str, text: str, limit: int) -> list[tuple[str, float]]:
    """What a RecordingEngine-backed service returns; for composition oracles."""
    return stable_results(f"{salt}|{text}", limit)


class SyntheticCostEngine(RecordingEngine):
    """Fixed per-batch cost regardless of batch size."""

    def __init__(self, name="synthetic", cost_s=0.1, **kwargs):
        super().__init__(name, **kwargs)
        self.cost_s = cost_s

    async def search_batch(self, queries):
        self.batches.append([q.text for q in queries])
        self.invoke_times.append(time.monotonic())
        await asyncio.sleep(self.cost_s)
        return [ScoredList.from_pairs(self.fn(q.text, q.limit)) for q in queries]


class FailingEngine(Engine):
    def __init__(self, name="broken"):
        super().__init__(name, frozenset({EngineCapability.SEARCH}))
        self.calls = 0

    async def search_batch(self, queries):
        self.calls += 1
        raise RuntimeError("kaboom")


class RecordingScorer(Engine):
    """Score engine that remembers the candidate ids it was handed."""

    def __init__(self, name="scorer"):
        super().__init__(name, frozenset({EngineCapability.SCORE}))
        self.seen: list[list[str]] = []

    async def score_batch(self, query, candidates):
        self.seen.append([doc_id for doc_id, _ in candidates])
        return ScoredList.from_pairs(
            sorted(
                ((doc_id, float(len(text))) for doc_id, text in candidates),
                key=lambda e: (-e[1], e[0]),
            )
        )


class RecordingFuser(Engine):
    """RRF fuser that also remembers how many lists it received per call."""

    def __init__(self, name="fuser", kappa=60):
        super().__init__(name, frozenset({EngineCapability.FUSE}))
        self.kappa = kappa
        self.calls: list[int] = []

    async def fuse(self, lists):
        self.calls.append(len(lists))
        scores: dict[str, float] = {}
        for slist in lists:
            for rank, (doc_id, _s) in enumerate(slist, start=1):
                scores[doc_id] = scores.get(doc_id, 0.0) + 1.0 / (self.kappa + rank)
        return ScoredList.from_pairs(sorted(scores.items(), key=lambda e: (-e[1], e[0])))


class SlowEngine(Engine):
    """Search engine that never answers within a sane relay timeout."""

    def __init__(self, name="slow", delay_s=5.0):
        super().__init__(name, frozenset({EngineCapability.SEARCH}))
        self.delay_s = delay_s

    async def search_batch(self, queries):
        await asyncio.sleep(self.delay_s)
        return [ScoredList.from_pairs([("slow", 1.0)]) for _ in queries]


# Fixture engine kinds, addressable from node configs in tests.
_FIXTURE_KINDS = {
    "fixture-search": lambda d, r: RecordingEngine(
        d.name, salt=d.engine_config.get("salt", d.name)
    ),
    "fixture-scorer": lambda d, r: RecordingScorer(d.name),
    "fixture-fuser": lambda d, r: RecordingFuser(d.name),
    "fixture-failing": lambda d, r: FailingEngine(d.name),
    "fixture-slow": lambda d, r: SlowEngine(d.name, float(d.engine_config.get("delay_s", 5.0))),
    "fixture-cost": lambda d, r: SyntheticCostEngine(
        d.name, cost_s=float(d.engine_config.get("cost_s", 0.1)),
        salt=d.engine_config.get("salt", d.name),
    ),
    "fixture-empty": lambda d, r: RecordingEngine(d.name, fn=lambda text, limit: []),
}


async def with_node(config_data: dict, body):
    """Build, start, use, and tear down a Node (no HTTP layer)."""
    node = Node(make_config(config_data))
    await node.start()
    try:
        return await body(node)
    finally:
        await node.close()


def register_fixture_engines():
    from rankpipe.engines.base import register_engine

    for kind, factory in _FIXTURE_KINDS.items():
        register_engine(kind, factory, replace=True)


register_fixture_engines()


# ---------------------------------------------------------------------------
# In-process HTTP node


class HttpNode:
    """A Node served over a real socket on an ephemeral port, in this loop."""

    def __init__(self, config):
        self.node = Node(config)
        self.runner = None
        self.url = None

    async def start(self) -> "HttpNode":
        app = create_app(self.node)
        self.runner = web.AppRunner(app)
        await self.runner.setup()
        sock = socket.socket()
        sock.bind(("127.0.0.1", 0))
        port = sock.getsockname()[1]
        site = web.SockSite(self.runner, sock)
        await site.start()
        self.url = f"http://127.0.0.1:{port}"
        return self

    async def close(self) -> None:
        if self.runner is not None:
            await self.runner.cleanup()

    async def __aenter__(self):
        return await self.start()

    async def __aexit__(self, *exc):
        await self.close()


async def post_json(session, url, body):
    async with session.post(url, json=body) as response:
        return response.status, await response.json(content_type=None)


async def get_json(session, url):
    async with session.get(url) as response:
        return response.status, await response.json(content_type=None)


# ---------------------------------------------------------------------------
# Subprocess servers (true multi-process integration)


def free_port() -> int:
    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    sock.close()
    return port


def start_server_process(config_path: str, port: int) -> subprocess.Popen:
    return subprocess.Popen(
        [sys.executable, "-m", "rankpipe", "serve", str(config_path), "--port", str(port)],
        stdout=subprocess.PIPE,
        stderr=subprocess.STDOUT,
    )


def wait_healthy(url: str, timeout_s: float = 30.0) -> None:
    deadline = time.monotonic() + timeout_s
    last_error = None
    while time.monotonic() < deadline:
        try:
            with urllib.request.urlopen(url + "/health", timeout=2) as response:
                if response.status == 200:
                    return
        except Exception as exc:
            last_error = exc
        time.sleep(0.1)
    raise TimeoutError(f"{url} never became healthy: {last_error}")


def stop_server_process(proc: subprocess.Popen) -> None:
    proc.terminate()
    try:
        proc.wait(timeout=10)
    except subprocess.TimeoutExpired:
        proc.kill()
        proc.wait(timeout=10)


# ---------------------------------------------------------------------------
# Random generators for parser testing

AST_NAMES = ["a", "b", "c", "e1", "e2", "svc-1", "x.y", "q_2", "rrf", "gen"]


def random_unit(rng: random.Random, depth: int):
    if depth <= 0 or rng.random() < 0.6:
        return ServiceRef(rng.choice(AST_NAMES))
    generator = rng.choice(AST_NAMES) if rng.random() < 0.4 else None
    branches = tuple(
        random_pipeline(rng, depth - 1) for _ in range(rng.randint(1, 3))
    )
    return Parallel(branches, rng.choice(AST_NAMES), generator)


def random_stage(rng: random.Random, depth: int):
    unit = random_unit(rng, depth)
    if rng.random() < 0.3:
        return Limit(unit, rng.randint(1, 99))
    return unit


def random_pipeline(rng: random.Random, depth: int):
    if depth <= 0 or rng.random() < 0.55:
        return random_stage(rng, depth)
    stages = tuple(random_stage(rng, depth - 1) for _ in range(rng.randint(2, 4)))
    return Sequence(stages)


_WORDISH = ("NAME", "INT")


def random_token_soup(rng: random.Random, max_len: int = 20) -> list[tuple[str, object]]:
    kinds = ["NAME", "INT", ">>", "%", "{", "}", ","]
    weights = [5, 3, 2, 2, 2, 2, 2]
    tokens = []
    for _ in range(rng.randint(1, max_len)):
        kind = rng.choices(kinds, weights)[0]
        if kind == "NAME":
            tokens.append(("NAME", rng.choice(AST_NAMES)))
        elif kind == "INT":
            tokens.append(("INT", rng.randint(0, 120)))
        else:
            tokens.append((kind, kind))
    return tokens


def render_tokens(tokens: list[tuple[str, object]], rng: random.Random | None = None) -> str:
    """Join tokens into a string, keeping word-like tokens separated."""
    parts = []
    previous = None
    for kind, value in tokens:
        if previous in _WORDISH and kind in _WORDISH:
            parts.append(" ")
        elif rng is not None and rng.random() < 0.15:
            parts.append(" ")
        parts.append(str(value))
        previous = kind
    return "".join(parts)


def lex_to_pairs(tokens) -> list[tuple[str, object]]:
    return [(t.kind, t.value) for t in tokens]
