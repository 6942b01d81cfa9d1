"""rankpipe: an HTTP gateway for composing and serving retrieval pipelines."""

from .config import load_config, parse_config
from .model import (
    CacheSettings,
    CollectionDescriptor,
    EngineCapability,
    Query,
    ScoredList,
    ServerConfig,
    ServiceDescriptor,
    canonicalize,
    truncate,
)
from .pipeline import Limit, Parallel, Sequence, ServiceRef, parse, unparse, validate
from .server import Node, create_app, run_server

__version__ = "0.1.0"

__all__ = [
    "CacheSettings",
    "CollectionDescriptor",
    "EngineCapability",
    "Query",
    "ScoredList",
    "ServerConfig",
    "ServiceDescriptor",
    "canonicalize",
    "truncate",
    "ServiceRef",
    "Limit",
    "Sequence",
    "Parallel",
    "parse",
    "unparse",
    "validate",
    "Node",
    "create_app",
    "run_server",
    "load_config",
    "parse_config",
    "__version__",
]
