"""Recursive-descent parser for the function-call alpha DSL.

    expr := ident '(' expr (',' expr)* ')' | field | integer | real

Integers in window slots become :class:`Window` leaves; numbers in data
slots become :class:`Const` leaves.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from wsgp.expr.errors import (
    ArityMismatch,
    DepthExceeded,
    DslSyntaxError,
    SlotKindMismatch,
    UnknownField,
    UnknownOperator,
    WindowOutOfRange,
)
from wsgp.expr.nodes import AlphaExpr, Const, Field, Op, Window, depth
from wsgp.expr.registry import DEFAULT_REGISTRY, Registry, SlotKind

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[(),])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    start: int
    end: int


def _tokenize(source: str) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise DslSyntaxError(f"unexpected character {source[pos]!r}", (pos, pos + 1))
        kind = m.lastgroup
        if kind != "ws":
            toks.append(_Tok(kind, m.group(), m.start(), m.end()))
        pos = m.end()
    toks.append(_Tok("eof", "", len(source), len(source)))
    return toks


def _is_integer(text: str) -> bool:
    return re.fullmatch(r"[-+]?\d+", text) is not None


class _Parser:
    def __init__(self, source: str, registry: Registry):
        self.toks = _tokenize(source)
        self.i = 0
        self.registry = registry

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def take(self, kind: str, text: str | None = None) -> _Tok:
        tok = self.peek()
        if tok.kind != kind or (text is not None and tok.text != text):
            want = repr(text) if text else kind
            got = repr(tok.text) if tok.text else "end of input"
            raise DslSyntaxError(f"expected {want}, got {got}", (tok.start, tok.end))
        self.i += 1
        return tok

    def data(self) -> AlphaExpr:
        tok = self.peek()
        if tok.kind == "number":
            self.i += 1
            return Const(float(tok.text))
        if tok.kind != "ident":
            raise DslSyntaxError(
                f"expected expression, got {tok.text!r}" if tok.text else "unexpected end of input",
                (tok.start, tok.end),
            )
        self.i += 1
        if self.peek().text != "(":
            if tok.text in self.registry:
                raise ArityMismatch(f"operator {tok.text!r} used without arguments", (tok.start, tok.end))
            if tok.text not in self.registry.fields:
                raise UnknownField(f"unknown field {tok.text!r}", (tok.start, tok.end))
            return Field(tok.text)
        if tok.text not in self.registry:
            raise UnknownOperator(f"unknown operator {tok.text!r}", (tok.start, tok.end))
        spec = self.registry.get(tok.text)
        self.take("punct", "(")
        children: list[AlphaExpr] = []
        while True:
            slot = len(children)
            kind = spec.slot_kinds[slot] if slot < spec.arity else SlotKind.DATA
            children.append(self.window() if kind is SlotKind.WINDOW else self.data())
            if self.peek().text == ",":
                self.i += 1
                continue
            close = self.take("punct", ")")
            break
        if len(children) != spec.arity:
            raise ArityMismatch(
                f"{spec.name} takes {spec.arity} arguments, got {len(children)}",
                (tok.start, close.end),
            )
        return Op(spec.name, tuple(children))

    def window(self) -> Window:
        tok = self.peek()
        if tok.kind != "number" or not _is_integer(tok.text):
            raise SlotKindMismatch(f"expected integer window, got {tok.text!r}", (tok.start, tok.end))
        self.i += 1
        days = int(tok.text)
        if days not in self.registry.windows:
            raise WindowOutOfRange(
                f"window {days} outside [{self.registry.min_window}, {self.registry.max_window}]",
                (tok.start, tok.end),
            )
        return Window(days)


def parse(source: str, registry: Registry = DEFAULT_REGISTRY, max_depth: int | None = None) -> AlphaExpr:
    """Parse DSL text into a validated expression tree.

    Raises:
        DslSyntaxError, UnknownOperator, UnknownField, ArityMismatch,
        SlotKindMismatch, WindowOutOfRange, DepthExceeded. Each carries a
        ``span`` into ``source``.
    """
    p = _Parser(source, registry)
    e = p.data()
    p.take("eof")
    limit = registry.max_depth if max_depth is None else max_depth
    d = depth(e)
    if d > limit:
        raise DepthExceeded(f"depth {d} exceeds maximum {limit}", (0, len(source)))
    return e
