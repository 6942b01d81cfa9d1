"""Deterministic text analysis shared by the lexical engines.

Tokenization is intentionally simple: lowercase, split on non-alphanumeric
runs, no stemming. Swap in a different analyzer by registering a custom
engine if you need more.
"""

from __future__ import annotations

import re

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def text_tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())
