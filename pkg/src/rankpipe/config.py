"""JSON configuration loading.

Top-level keys: ``host``, ``port``, ``server_imports``, ``services``,
``collections``, ``cache``, ``import_policy``. Anything else is rejected,
with a dedicated error for ``file_imports`` (engines are provided by the
static registry; see README).
"""

from __future__ import annotations

import json
import os
from typing import Mapping

from .errors import ConfigError
from .model import (
    CacheSettings,
    CollectionDescriptor,
    ServerConfig,
    ServiceDescriptor,
)

_TOP_LEVEL_KEYS = {
    "host",
    "port",
    "server_imports",
    "services",
    "collections",
    "cache",
    "import_policy",
}
_SERVICE_KEYS = {"name", "engine", "batch_size", "max_wait_ms", "config"}
_COLLECTION_KEYS = {"name", "doc_path", "id_field", "text_fields"}
_CACHE_KEYS = {"capacity", "external", "ttl_seconds"}


def _reject_unknown(mapping: Mapping, allowed: set, where: str) -> None:
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _parse_service(entry) -> ServiceDescriptor:
    if not isinstance(entry, Mapping):
        raise ConfigError("each service must be an object")
    _reject_unknown(entry, _SERVICE_KEYS, f"service {entry.get('name', '?')!r}")
    if "name" not in entry or "engine" not in entry:
        raise ConfigError("each service needs 'name' and 'engine'")
    return ServiceDescriptor(
        name=entry["name"],
        engine_kind=entry["engine"],
        batch_size=entry.get("batch_size", ServiceDescriptor.batch_size),
        max_wait_ms=entry.get("max_wait_ms", ServiceDescriptor.max_wait_ms),
        engine_config=dict(entry.get("config", {})),
    )


def _parse_collection(entry, base_dir: str | None) -> CollectionDescriptor:
    if not isinstance(entry, Mapping):
        raise ConfigError("each collection must be an object")
    _reject_unknown(entry, _COLLECTION_KEYS, f"collection {entry.get('name', '?')!r}")
    if "name" not in entry or "doc_path" not in entry:
        raise ConfigError("each collection needs 'name' and 'doc_path'")
    doc_path = entry["doc_path"]
    if base_dir is not None and not os.path.isabs(doc_path):
        doc_path = os.path.join(base_dir, doc_path)
    text_fields = entry.get("text_fields")
    return CollectionDescriptor(
        name=entry["name"],
        doc_path=doc_path,
        id_field=entry.get("id_field", "id"),
        text_fields=tuple(text_fields) if text_fields else None,
    )


def _parse_cache(entry) -> CacheSettings:
    if not isinstance(entry, Mapping):
        raise ConfigError("'cache' must be an object")
    _reject_unknown(entry, _CACHE_KEYS, "cache")
    external = entry.get("external")
    if external is not None and not isinstance(external, str):
        raise ConfigError("cache 'external' must be a 'host:port' string")
    return CacheSettings(
        capacity=entry.get("capacity", CacheSettings.capacity),
        external=external,
        ttl_seconds=entry.get("ttl_seconds", CacheSettings.ttl_seconds),
    )


def parse_config(data, base_dir: str | None = None) -> ServerConfig:
    if not isinstance(data, Mapping):
        raise ConfigError("configuration must be a JSON object")
    if "file_imports" in data:
        raise ConfigError(
            "'file_imports' is not supported: engines come from the static "
            "registry (extend it in code with rankpipe.engines.register_engine), "
            "or host custom engines on another node and add it to server_imports"
        )
    _reject_unknown(data, _TOP_LEVEL_KEYS, "configuration")
    server_imports = data.get("server_imports", [])
    if not isinstance(server_imports, list) or not all(
        isinstance(url, str) for url in server_imports
    ):
        raise ConfigError("'server_imports' must be a list of endpoint URLs")
    services = data.get("services", [])
    collections = data.get("collections", [])
    if not isinstance(services, list) or not isinstance(collections, list):
        raise ConfigError("'services' and 'collections' must be lists")
    port = data.get("port", ServerConfig.port)
    if not isinstance(port, int) or not (0 < port < 65536):
        raise ConfigError(f"invalid port {port!r}")
    return ServerConfig(
        host=data.get("host", ServerConfig.host),
        port=port,
        server_imports=tuple(server_imports),
        services=tuple(_parse_service(s) for s in services),
        collections=tuple(_parse_collection(c, base_dir) for c in collections),
        cache=_parse_cache(data.get("cache", {})),
        import_policy=data.get("import_policy", ServerConfig.import_policy),
    )


def load_config(path: str) -> ServerConfig:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None
    return parse_config(data, base_dir=os.path.dirname(os.path.abspath(path)))
