"""Exception taxonomy shared across the package.

Every error carries a ``code`` (machine-readable, stable) and a ``detail``
string; the HTTP layer maps codes onto status codes and emits both in the
response body.
"""

from __future__ import annotations


class RankpipeError(Exception):
    code = "InternalError"

    def __init__(self, detail: str = ""):
        super().__init__(detail)
        self.detail = detail


class InvalidQuery(RankpipeError):
    code = "InvalidQuery"


class InvalidRequest(RankpipeError):
    """Malformed request body or parameters."""

    code = "InvalidRequest"


class DuplicateDocId(RankpipeError):
    code = "DuplicateDocId"


class NonFiniteScore(RankpipeError):
    code = "NonFiniteScore"


class InvalidLimit(RankpipeError):
    code = "InvalidLimit"


class LexError(RankpipeError):
    """Character outside the pipeline-string token alphabet."""

    code = "LexError"

    def __init__(self, position: int, fragment: str):
        super().__init__(f"illegal character {fragment!r} at position {position}")
        self.position = position
        self.fragment = fragment


class ParseError(RankpipeError):
    """Pipeline string is malformed at ``position``; ``expected`` lists what would be legal."""

    code = "ParseError"

    def __init__(self, position: int, expected: tuple[str, ...], found: str = ""):
        suffix = f", found {found!r}" if found else ""
        super().__init__(f"expected {' or '.join(expected)} at position {position}{suffix}")
        self.position = position
        self.expected = expected
        self.found = found


class UnknownService(RankpipeError):
    code = "UnknownService"

    def __init__(self, name: str):
        super().__init__(f"no service named {name!r}")
        self.name = name


class CapabilityMismatch(RankpipeError):
    code = "CapabilityMismatch"

    def __init__(self, name: str, needed, declared):
        declared_names = sorted(c.value for c in declared)
        super().__init__(
            f"service {name!r} needs capability {needed.value!r} here "
            f"but declares {declared_names}"
        )
        self.name = name
        self.needed = needed
        self.declared = frozenset(declared)


class Unsupported(RankpipeError):
    """Engine entry point invoked for an undeclared capability."""

    code = "Unsupported"


class EngineFailure(RankpipeError):
    """Wraps an internal engine fault so the service keeps running."""

    code = "EngineFailure"


class EmptyInput(RankpipeError):
    code = "EmptyInput"


class EmptyCandidates(RankpipeError):
    code = "EmptyCandidates"


class MissingCollection(RankpipeError):
    code = "MissingCollection"


class UnknownCollection(RankpipeError):
    code = "UnknownCollection"

    def __init__(self, name: str):
        super().__init__(f"no collection named {name!r}")
        self.name = name


class DocumentNotFound(RankpipeError):
    code = "DocumentNotFound"

    def __init__(self, collection: str, doc_id: str):
        super().__init__(f"document {doc_id!r} not found in collection {collection!r}")
        self.collection = collection
        self.doc_id = doc_id


class MalformedLine(RankpipeError):
    code = "MalformedLine"

    def __init__(self, line_number: int, detail: str):
        super().__init__(f"line {line_number}: {detail}")
        self.line_number = line_number


class MissingIdField(RankpipeError):
    code = "MissingIdField"

    def __init__(self, line_number: int, id_field: str):
        super().__init__(f"line {line_number}: missing or non-string id field {id_field!r}")
        self.line_number = line_number
        self.id_field = id_field


class ConfigError(RankpipeError):
    code = "ConfigError"


class EndpointUnreachable(RankpipeError):
    code = "EndpointUnreachable"

    def __init__(self, endpoint: str, detail: str = ""):
        super().__init__(f"endpoint {endpoint} unreachable" + (f": {detail}" if detail else ""))
        self.endpoint = endpoint


class RelayTimeout(RankpipeError):
    code = "RelayTimeout"


class RelayTransportError(RankpipeError):
    code = "RelayTransportError"


class RelayRemoteError(RankpipeError):
    code = "RelayRemoteError"


class RelayHopsExceeded(RankpipeError):
    code = "RelayHopsExceeded"
