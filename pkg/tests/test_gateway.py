import asyncio
import json

import aiohttp
import pytest

from rankpipe.config import parse_config
from rankpipe.errors import ConfigError
from rankpipe.server import Node

import helpers
import oracles

CORPUS3 = helpers.CORPUS3


def run(coro):
    return asyncio.run(coro)


def bm25_node_config(tmp_path, cache_capacity=1024):
    path = helpers.write_jsonl(tmp_path / "c1.jsonl", CORPUS3)
    return {
        "services": [
            {"name": "bm25-c1", "engine": "bm25", "config": {"collection": "c1"}},
            {"name": "rrf", "engine": "rrf"},
            {"name": "rerank", "engine": "lexical-rerank"},
        ],
        "collections": [{"name": "c1", "doc_path": path}],
        "cache": {"capacity": cache_capacity},
    }


async def with_http_node(config_data, body):
    async with helpers.HttpNode(helpers.make_config(config_data)) as http_node:
        async with aiohttp.ClientSession() as session:
            return await body(http_node, session)


# ---------------------------------------------------------------------------
# plain endpoints


def test_health(tmp_path):
    async def body(node, session):
        return await helpers.get_json(session, node.url + "/health")

    status, payload = run(with_http_node(bm25_node_config(tmp_path), body))
    assert (status, payload) == (200, {"status": "ok"})


def test_services_listing(tmp_path):
    async def body(node, session):
        return await helpers.get_json(session, node.url + "/services")

    status, listing = run(with_http_node(bm25_node_config(tmp_path), body))
    assert status == 200
    by_name = {entry["name"]: entry for entry in listing}
    assert by_name["bm25-c1"]["capabilities"] == ["score", "search"]
    assert by_name["rrf"]["capabilities"] == ["fuse"]
    assert by_name["rerank"]["capabilities"] == ["score"]
    assert all(entry["origin"] == "local" for entry in listing)


def test_services_listing_empty_node():
    async def body(node, session):
        return await helpers.get_json(session, node.url + "/services")

    status, listing = run(with_http_node({"services": [], "collections": []}, body))
    assert (status, listing) == (200, [])


# ---------------------------------------------------------------------------
# /query, service form


def test_query_service_form_matches_oracle(tmp_path):
    async def body(node, session):
        return await helpers.post_json(
            session,
            node.url + "/query",
            {"service": "bm25-c1", "query": "machu picchu", "limit": 2},
        )

    status, payload = run(with_http_node(bm25_node_config(tmp_path), body))
    assert status == 200
    assert payload["served_by"] == "bm25-c1"
    assert isinstance(payload["timing"], float)
    result = payload["result"]
    assert len(result) <= 2
    assert next(iter(result)) == "d1"
    expected = oracles.bm25_rank(CORPUS3, "machu picchu", 2)
    assert list(result.items()) == [(d, pytest.approx(s, rel=1e-9)) for d, s in expected]


def test_query_response_obeys_limit_and_default(tmp_path):
    async def body(node, session):
        _, deep = await helpers.post_json(
            session, node.url + "/query",
            {"service": "bm25-c1", "query": "peru is the", "limit": 1},
        )
        _, default = await helpers.post_json(
            session, node.url + "/query", {"service": "bm25-c1", "query": "peru is the"},
        )
        return deep, default

    deep, default = run(with_http_node(bm25_node_config(tmp_path), body))
    assert len(deep["result"]) == 1
    assert len(default["result"]) <= 20


def test_unknown_service_is_404(tmp_path):
    async def body(node, session):
        return await helpers.post_json(
            session, node.url + "/query", {"service": "nope", "query": "x"}
        )

    status, payload = run(with_http_node(bm25_node_config(tmp_path), body))
    assert status == 404
    assert payload["code"] == "UnknownService"
    assert "nope" in payload["detail"]


@pytest.mark.parametrize(
    "body_patch,code",
    [
        ({"query": "x"}, "InvalidRequest"),  # neither service nor pipeline
        ({"service": "bm25-c1", "pipeline": "rrf", "query": "x"}, "InvalidRequest"),
        ({"service": "bm25-c1"}, "InvalidRequest"),  # no query
        ({"service": "bm25-c1", "query": "x", "limit": 0}, "InvalidRequest"),
        ({"service": "bm25-c1", "query": "x", "limit": "9"}, "InvalidRequest"),
        ({"service": "bm25-c1", "query": "   "}, "InvalidQuery"),
        ({"service": "bm25-c1", "query": "x", "mode": "telepathy"}, "InvalidRequest"),
    ],
)
def test_bad_request_bodies_are_400(tmp_path, body_patch, code):
    async def body(node, session):
        return await helpers.post_json(session, node.url + "/query", body_patch)

    status, payload = run(with_http_node(bm25_node_config(tmp_path), body))
    assert status == 400
    assert payload["code"] == code


def test_non_json_body_is_400(tmp_path):
    async def body(node, session):
        async with session.post(node.url + "/query", data=b"not json") as response:
            return response.status, await response.json(content_type=None)

    status, payload = run(with_http_node(bm25_node_config(tmp_path), body))
    assert status == 400
    assert payload["code"] == "InvalidRequest"


# ---------------------------------------------------------------------------
# /query, pipeline form


def test_self_fusion_preserves_order(tmp_path):
    async def body(node, session):
        _, direct = await helpers.post_json(
            session, node.url + "/query", {"service": "bm25-c1", "query": "peru", "limit": 5}
        )
        _, fused = await helpers.post_json(
            session,
            node.url + "/query",
            {
                "pipeline": "{bm25-c1,bm25-c1}rrf",
                "collection": "c1",
                "query": "peru",
                "limit": 5,
            },
        )
        return direct, fused

    direct, fused = run(with_http_node(bm25_node_config(tmp_path), body))
    assert list(fused["result"]) == list(direct["result"])
    assert fused["served_by"] == "{bm25-c1,bm25-c1}rrf"


def test_pipeline_parse_error_carries_position(tmp_path):
    async def body(node, session):
        return await helpers.post_json(
            session, node.url + "/query", {"pipeline": "a >> ?", "query": "x"}
        )

    status, payload = run(with_http_node(bm25_node_config(tmp_path), body))
    assert status == 400
    assert payload["code"] == "LexError"
    assert payload["position"] == 5


def test_pipeline_capability_mismatch_is_400(tmp_path):
    async def body(node, session):
        return await helpers.post_json(
            session,
            node.url + "/query",
            {"pipeline": "rrf", "query": "x", "collection": "c1"},
        )

    status, payload = run(with_http_node(bm25_node_config(tmp_path), body))
    assert status == 400
    assert payload["code"] == "CapabilityMismatch"


def test_stage_failure_surfaces_stage_position_over_http(tmp_path):
    config = bm25_node_config(tmp_path)
    config["services"].append({"name": "boom", "engine": "fixture-failing"})

    async def body(node, session):
        return await helpers.post_json(
            session,
            node.url + "/query",
            {"pipeline": "{bm25-c1,boom}rrf", "collection": "c1", "query": "peru"},
        )

    status, payload = run(with_http_node(config, body))
    assert status == 500
    assert payload["code"] == "EngineFailure"
    assert payload["stage"] == "boom"
    assert payload["stage_position"] == "{bm25-c1,boom}rrf".find("boom")


def test_pipeline_needing_documents_requires_collection(tmp_path):
    async def body(node, session):
        return await helpers.post_json(
            session, node.url + "/query", {"pipeline": "bm25-c1 >> rerank", "query": "peru"}
        )

    status, payload = run(with_http_node(bm25_node_config(tmp_path), body))
    assert status == 400
    assert payload["code"] == "MissingCollection"


def test_full_pipeline_rerank_over_http(tmp_path):
    async def body(node, session):
        return await helpers.post_json(
            session,
            node.url + "/query",
            {
                "pipeline": "bm25-c1%2 >> rerank",
                "collection": "c1",
                "query": "peru",
                "limit": 5,
            },
        )

    status, payload = run(with_http_node(bm25_node_config(tmp_path), body))
    assert status == 200
    first_stage = oracles.bm25_rank(CORPUS3, "peru", 2)
    candidates = [(doc_id, CORPUS3[doc_id]) for doc_id, _ in first_stage]
    expected = oracles.bm25_rerank("peru", candidates)
    assert list(payload["result"]) == [doc_id for doc_id, _ in expected]


def test_pipeline_responses_are_deterministic_across_nodes(tmp_path):
    request = {
        "pipeline": "{bm25-c1,bm25-c1}rrf%3 >> rerank",
        "collection": "c1",
        "query": "peru is",
        "limit": 3,
    }

    async def body(node, session):
        _, payload = await helpers.post_json(session, node.url + "/query", request)
        return json.dumps(payload["result"])

    first = run(with_http_node(bm25_node_config(tmp_path), body))
    second = run(with_http_node(bm25_node_config(tmp_path), body))
    assert first == second


def test_repeated_query_served_from_cache_with_equal_result_bytes(tmp_path):
    async def body(node, session):
        _, first = await helpers.post_json(
            session, node.url + "/query", {"service": "bm25-c1", "query": "peru", "limit": 3}
        )
        invocations = node.node.processors["bm25-c1"].stats.engine_invocations
        _, second = await helpers.post_json(
            session, node.url + "/query", {"service": "bm25-c1", "query": "peru", "limit": 3}
        )
        return first, second, invocations, node.node.processors["bm25-c1"].stats

    first, second, invocations, stats = run(with_http_node(bm25_node_config(tmp_path), body))
    assert json.dumps(first["result"]) == json.dumps(second["result"])
    assert stats.engine_invocations == invocations == 1
    assert stats.cache_hits == 1


def test_concurrent_unique_queries_get_correct_answers(tmp_path):
    config = {
        "services": [{"name": "fx", "engine": "fixture-search"}],
        "collections": [],
        "cache": {"capacity": 0},
    }

    async def body(node, session):
        queries = [f"unique query {i}" for i in range(64)]
        responses = await asyncio.gather(
            *(
                helpers.post_json(
                    session, node.url + "/query", {"service": "fx", "query": q, "limit": 5}
                )
                for q in queries
            )
        )
        return queries, responses

    queries, responses = run(with_http_node(config, body))
    for query, (status, payload) in zip(queries, responses):
        assert status == 200
        expected = helpers.salted_results("fx", query, 5)
        assert list(payload["result"].items()) == expected


def test_intake_stays_live_while_engine_is_busy(tmp_path):
    config = {
        "services": [{"name": "slow", "engine": "fixture-slow", "config": {"delay_s": 0.8}}],
        "collections": [],
        "cache": {"capacity": 0},
    }

    async def body(node, session):
        slow_task = asyncio.ensure_future(
            helpers.post_json(session, node.url + "/query", {"service": "slow", "query": "x"})
        )
        await asyncio.sleep(0.2)  # the slow batch is now executing
        health_status, _ = await helpers.get_json(session, node.url + "/health")
        elapsed_ok = not slow_task.done()
        status, _ = await slow_task
        return health_status, elapsed_ok, status

    health_status, was_still_running, slow_status = run(with_http_node(config, body))
    assert health_status == 200
    assert was_still_running
    assert slow_status == 200


# ---------------------------------------------------------------------------
# /content


def test_content_round_trip(tmp_path):
    async def body(node, session):
        return await helpers.post_json(
            session, node.url + "/content", {"collection": "c1", "id": "d1"}
        )

    status, payload = run(with_http_node(bm25_node_config(tmp_path), body))
    assert status == 200
    assert payload == {"id": "d1", "text": CORPUS3["d1"]}


def test_content_unknown_document_is_404(tmp_path):
    async def body(node, session):
        return await helpers.post_json(
            session, node.url + "/content", {"collection": "c1", "id": "ghost"}
        )

    status, payload = run(with_http_node(bm25_node_config(tmp_path), body))
    assert status == 404
    assert payload["code"] == "DocumentNotFound"


def test_content_unknown_collection_is_404(tmp_path):
    async def body(node, session):
        return await helpers.post_json(
            session, node.url + "/content", {"collection": "ghost", "id": "d1"}
        )

    status, payload = run(with_http_node(bm25_node_config(tmp_path), body))
    assert status == 404
    assert payload["code"] == "UnknownCollection"


# ---------------------------------------------------------------------------
# extension modes (relay-internal)


def test_mode_score_over_http(tmp_path):
    async def body(node, session):
        return await helpers.post_json(
            session,
            node.url + "/query",
            {
                "service": "rerank",
                "mode": "score",
                "query": "peru",
                "candidates": [[d, t] for d, t in CORPUS3.items()],
            },
        )

    status, payload = run(with_http_node(bm25_node_config(tmp_path), body))
    assert status == 200
    expected = oracles.bm25_rerank("peru", list(CORPUS3.items()))
    assert list(payload["result"]) == [doc_id for doc_id, _ in expected]


def test_mode_fuse_over_http(tmp_path):
    async def body(node, session):
        return await helpers.post_json(
            session,
            node.url + "/query",
            {
                "service": "rrf",
                "mode": "fuse",
                "lists": [[["A", 9.0], ["B", 8.0], ["C", 7.0]], [["A", 5.0], ["C", 4.0]]],
            },
        )

    status, payload = run(with_http_node(bm25_node_config(tmp_path), body))
    assert status == 200
    assert list(payload["result"]) == ["A", "C", "B"]


def test_mode_rewrite_over_http(tmp_path):
    config = bm25_node_config(tmp_path)
    config["services"].append({"name": "gen", "engine": "variant-rewrite"})

    async def body(node, session):
        return await helpers.post_json(
            session,
            node.url + "/query",
            {"service": "gen", "mode": "rewrite", "query": "Where is Taiwan", "count": 3},
        )

    status, payload = run(with_http_node(config, body))
    assert status == 200
    assert payload["queries"] == ["Where is Taiwan", "where is taiwan", "Taiwan"]


# ---------------------------------------------------------------------------
# configuration and bootstrap


def test_figure_shaped_config_serves_service_and_collection(tmp_path):
    # server_imports + services + collections layout, engine kinds swapped
    # for built-ins
    path = helpers.write_jsonl(tmp_path / "neuclir.jsonl", CORPUS3)
    config = {
        "server_imports": [],
        "services": [
            {
                "name": "qwen3-neuclir",
                "engine": "bm25",
                "batch_size": 16,
                "config": {"collection": "neuclir"},
            }
        ],
        "collections": [{"name": "neuclir", "doc_path": path}],
    }

    async def body(node, session):
        q_status, q_payload = await helpers.post_json(
            session,
            node.url + "/query",
            {"service": "qwen3-neuclir", "query": "where is machu picchu", "limit": 15},
        )
        c_status, c_payload = await helpers.post_json(
            session, node.url + "/content", {"collection": "neuclir", "id": "d3"}
        )
        return q_status, q_payload, c_status, c_payload

    q_status, q_payload, c_status, c_payload = run(with_http_node(config, body))
    assert q_status == 200 and c_status == 200
    assert "result" in q_payload and len(q_payload["result"]) <= 15
    assert c_payload["text"] == CORPUS3["d3"]


def test_unknown_engine_kind_fails_startup_naming_the_key(tmp_path):
    config = parse_config(
        {"services": [{"name": "q", "engine": "Qwen3"}], "collections": []}
    )
    with pytest.raises(ConfigError) as exc:
        Node(config)
    assert "Qwen3" in exc.value.detail


def test_file_imports_is_rejected_with_pointer(tmp_path):
    with pytest.raises(ConfigError) as exc:
        parse_config({"file_imports": ["./ext.py"], "services": []})
    assert "file_imports" in exc.value.detail
    assert "register_engine" in exc.value.detail


def test_unknown_top_level_key_is_rejected():
    with pytest.raises(ConfigError) as exc:
        parse_config({"services": [], "surprise": 1})
    assert "surprise" in exc.value.detail


def test_unreadable_collection_fails_startup(tmp_path):
    config = parse_config(
        {
            "services": [],
            "collections": [{"name": "c", "doc_path": str(tmp_path / "missing.jsonl")}],
        }
    )
    with pytest.raises(ConfigError) as exc:
        Node(config)
    assert "missing.jsonl" in exc.value.detail


def test_duplicate_service_names_rejected(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(
            {
                "services": [
                    {"name": "x", "engine": "rrf"},
                    {"name": "x", "engine": "rrf"},
                ]
            }
        )
