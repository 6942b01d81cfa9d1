"""Pipeline construction strings: tokenize, parse, validate, unparse.

Grammar (whitespace between tokens is insignificant, ``%`` binds tighter
than ``>>``, and a braced group is atomic):

    pipeline := stage (">>" stage)*
    stage    := unit ("%" INT)?
    unit     := NAME | parallel
    parallel := NAME? "{" pipeline ("," pipeline)* "}" NAME

A NAME is a run of ``[A-Za-z0-9_.-]`` that is not a pure integer (pure
integers lex as INT). The optional NAME before ``{`` selects a
query-generation method; the mandatory NAME after ``}`` selects the fusion
method that merges the branch results. ``e%k`` keeps the top k documents of
``e``, and ``a >> b`` pipes ``a``'s results into ``b`` for rescoring.

Examples::

    bm25-c1
    bm25-c1%50 >> reranker
    {dense,sparse}rrf%50 >> reranker
    gen{dense,sparse%20}rrf
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import AbstractSet, Mapping, Union

from .errors import CapabilityMismatch, LexError, ParseError, UnknownService
from .model import EngineCapability

_WORD_RE = re.compile(r"[A-Za-z0-9_.\-]+")
_PUNCT = frozenset("%{},")


@dataclass(frozen=True)
class Token:
    kind: str  # one of NAME, INT, ">>", "%", "{", "}", ","
    value: object
    pos: int


def tokenize(text: str) -> list[Token]:
    """Split a pipeline string into tokens; raises LexError on anything else."""
    tokens: list[Token] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch == ">":
            if text.startswith(">>", i):
                tokens.append(Token(">>", ">>", i))
                i += 2
                continue
            raise LexError(i, ch)
        if ch in _PUNCT:
            tokens.append(Token(ch, ch, i))
            i += 1
            continue
        match = _WORD_RE.match(text, i)
        if match:
            word = match.group()
            if word.isdigit():
                tokens.append(Token("INT", int(word), i))
            else:
                tokens.append(Token("NAME", word, i))
            i = match.end()
            continue
        raise LexError(i, ch)
    return tokens


@dataclass(frozen=True)
class ServiceRef:
    name: str


@dataclass(frozen=True)
class Limit:
    child: "PipelineAst"
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("Limit.k must be >= 1")


@dataclass(frozen=True)
class Sequence:
    stages: tuple["PipelineAst", ...]

    def __post_init__(self):
        if len(self.stages) < 2:
            raise ValueError("Sequence needs at least two stages")
        if any(isinstance(s, Sequence) for s in self.stages):
            raise ValueError("Sequence must not directly nest a Sequence")


@dataclass(frozen=True)
class Parallel:
    branches: tuple["PipelineAst", ...]
    fuser: str
    generator: str | None = None

    def __post_init__(self):
        if not self.branches:
            raise ValueError("Parallel needs at least one branch")
        if not self.fuser:
            raise ValueError("Parallel needs a fuser")


PipelineAst = Union[ServiceRef, Limit, Sequence, Parallel]


class _Parser:
    """Recursive descent over the token stream; LL(2) is enough for this grammar."""

    def __init__(self, tokens: list[Token], text_length: int):
        self._tokens = tokens
        self._pos = 0
        self._end = text_length

    def _peek(self, ahead: int = 0) -> Token | None:
        idx = self._pos + ahead
        return self._tokens[idx] if idx < len(self._tokens) else None

    def _error_at(self, expected: tuple[str, ...]) -> ParseError:
        tok = self._peek()
        if tok is None:
            return ParseError(self._end, expected, "end of input")
        return ParseError(tok.pos, expected, str(tok.value))

    def _take(self, kind: str) -> Token:
        tok = self._peek()
        if tok is None or tok.kind != kind:
            raise self._error_at((kind,))
        self._pos += 1
        return tok

    def at_end(self) -> bool:
        return self._pos >= len(self._tokens)

    def pipeline(self) -> PipelineAst:
        stages = [self.stage()]
        while (tok := self._peek()) is not None and tok.kind == ">>":
            self._pos += 1
            stages.append(self.stage())
        return stages[0] if len(stages) == 1 else Sequence(tuple(stages))

    def stage(self) -> PipelineAst:
        node = self.unit()
        if (tok := self._peek()) is not None and tok.kind == "%":
            self._pos += 1
            value = self._take("INT")
            if value.value < 1:
                raise ParseError(value.pos, ("positive INT",), str(value.value))
            node = Limit(node, value.value)
        return node

    def unit(self) -> PipelineAst:
        tok = self._peek()
        if tok is None:
            raise self._error_at(("NAME", "{"))
        if tok.kind == "NAME":
            nxt = self._peek(1)
            if nxt is not None and nxt.kind == "{":
                self._pos += 1
                return self.parallel(generator=tok.value)
            self._pos += 1
            return ServiceRef(tok.value)
        if tok.kind == "{":
            return self.parallel(generator=None)
        raise self._error_at(("NAME", "{"))

    def parallel(self, generator: str | None) -> Parallel:
        self._take("{")
        branches = [self.pipeline()]
        while (tok := self._peek()) is not None and tok.kind == ",":
            self._pos += 1
            branches.append(self.pipeline())
        self._take("}")
        fuser = self._take("NAME")
        return Parallel(tuple(branches), fuser.value, generator)


def parse(text: str) -> PipelineAst:
    """Parse a pipeline string into its AST."""
    parser = _Parser(tokenize(text), len(text))
    ast = parser.pipeline()
    if not parser.at_end():
        raise parser._error_at((">>", "end of input"))
    return ast


def unparse(ast: PipelineAst) -> str:
    """Canonical whitespace-free rendering; parse(unparse(x)) == x."""
    if isinstance(ast, ServiceRef):
        return ast.name
    if isinstance(ast, Limit):
        return f"{unparse(ast.child)}%{ast.k}"
    if isinstance(ast, Sequence):
        return ">>".join(unparse(stage) for stage in ast.stages)
    if isinstance(ast, Parallel):
        inner = ",".join(unparse(branch) for branch in ast.branches)
        return f"{ast.generator or ''}{{{inner}}}{ast.fuser}"
    raise TypeError(f"not a pipeline node: {ast!r}")


def needs_documents(ast: PipelineAst) -> bool:
    """True when executing the pipeline will fetch document text (any pipe stage)."""
    if isinstance(ast, Sequence):
        return True
    if isinstance(ast, Limit):
        return needs_documents(ast.child)
    if isinstance(ast, Parallel):
        return any(needs_documents(branch) for branch in ast.branches)
    return False


@dataclass(frozen=True)
class ValidatedPlan:
    ast: PipelineAst
    canonical: str
    services: Mapping[str, frozenset]


def validate(
    ast: PipelineAst,
    capabilities: Mapping[str, AbstractSet[EngineCapability]],
) -> ValidatedPlan:
    """Resolve every service reference and check capabilities positionally.

    A stage that receives the raw query must be able to search; a stage that
    receives upstream results must be able to score; fusers must fuse and
    generators must rewrite. A parallel block inherits the context of its
    position, so its branch heads need Search at the start of a pipeline and
    Score when piped into.
    """
    referenced: dict[str, frozenset] = {}

    def check(name: str, needed: EngineCapability) -> None:
        declared = capabilities.get(name)
        if declared is None:
            raise UnknownService(name)
        referenced[name] = frozenset(declared)
        if needed not in declared:
            raise CapabilityMismatch(name, needed, declared)

    def walk(node: PipelineAst, context: EngineCapability) -> None:
        if isinstance(node, ServiceRef):
            check(node.name, context)
        elif isinstance(node, Limit):
            walk(node.child, context)
        elif isinstance(node, Sequence):
            walk(node.stages[0], context)
            for stage in node.stages[1:]:
                walk(stage, EngineCapability.SCORE)
        elif isinstance(node, Parallel):
            if node.generator is not None:
                check(node.generator, EngineCapability.REWRITE)
            for branch in node.branches:
                walk(branch, context)
            check(node.fuser, EngineCapability.FUSE)
        else:
            raise TypeError(f"not a pipeline node: {node!r}")

    walk(ast, EngineCapability.SEARCH)
    return ValidatedPlan(ast, unparse(ast), referenced)
