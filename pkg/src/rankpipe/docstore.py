"""Offset-indexed JSONL document stores.

A collection is one UTF-8 JSONL file: each non-empty line is a JSON object
with a string id field plus arbitrary content fields. At startup the store
scans the file once and keeps only id -> (byte offset, byte length); serving
a document is then a single positional read, never a sequential scan, and
memory stays proportional to the document count rather than the file size.

Files are assumed immutable while the server runs; re-index by restarting.
"""

from __future__ import annotations

import json
import logging
import os
from typing import Iterator

from .errors import DocumentNotFound, MalformedLine, MissingIdField

logger = logging.getLogger(__name__)


class DocumentStore:
    def __init__(
        self,
        name: str,
        path: str,
        id_field: str = "id",
        text_fields: tuple[str, ...] | None = None,
    ):
        self.name = name
        self.path = path
        self.id_field = id_field
        self.text_fields = tuple(text_fields) if text_fields else None
        self._offsets = self._build_offsets()
        self._fd = os.open(path, os.O_RDONLY)
        self._pread = os.pread  # swappable for instrumentation

    def _build_offsets(self) -> dict[str, tuple[int, int]]:
        offsets: dict[str, tuple[int, int]] = {}
        offset = 0
        with open(self.path, "rb") as handle:
            for line_number, raw in enumerate(handle, start=1):
                stripped = raw
                while stripped.endswith((b"\n", b"\r")):
                    stripped = stripped[:-1]
                if stripped.strip():
                    try:
                        obj = json.loads(stripped)
                    except ValueError as exc:
                        raise MalformedLine(line_number, f"invalid JSON ({exc})") from None
                    if not isinstance(obj, dict):
                        raise MalformedLine(line_number, "not a JSON object")
                    doc_id = obj.get(self.id_field)
                    if not isinstance(doc_id, str):
                        raise MissingIdField(line_number, self.id_field)
                    if doc_id in offsets:
                        logger.warning(
                            "collection %s: duplicate id %r at line %d; last occurrence wins",
                            self.name,
                            doc_id,
                            line_number,
                        )
                    offsets[doc_id] = (offset, len(stripped))
                offset += len(raw)
        return offsets

    def __len__(self) -> int:
        return len(self._offsets)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._offsets

    def ids(self) -> tuple[str, ...]:
        return tuple(self._offsets)

    def get(self, doc_id: str) -> dict:
        """All fields of the stored object, via one bounded positional read."""
        location = self._offsets.get(doc_id)
        if location is None:
            raise DocumentNotFound(self.name, doc_id)
        offset, length = location
        data = self._pread(self._fd, length, offset)
        return json.loads(data)

    def iter_documents(self) -> Iterator[tuple[str, dict]]:
        """(doc_id, fields) for every indexed document, duplicates already resolved."""
        for doc_id in self._offsets:
            yield doc_id, self.get(doc_id)

    def document_text(self, fields: dict) -> str:
        """Text handed to scoring engines for a document.

        Configured text_fields in order, or every string-valued field except
        the id field in file order.
        """
        if self.text_fields is not None:
            parts = [str(fields[name]) for name in self.text_fields if name in fields]
        else:
            parts = [
                value
                for name, value in fields.items()
                if name != self.id_field and isinstance(value, str)
            ]
        return " ".join(parts)

    def close(self) -> None:
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1
