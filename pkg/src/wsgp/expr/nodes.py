"""Immutable expression trees, canonical printing and structure signatures."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Union

from wsgp.expr.errors import (
    ArityMismatch,
    DepthExceeded,
    SlotKindMismatch,
    UnknownField,
    UnknownOperator,
    WindowOutOfRange,
)
from wsgp.expr.registry import DEFAULT_REGISTRY, Registry, SlotKind


@dataclass(frozen=True)
class Op:
    name: str
    children: tuple["AlphaExpr", ...]

    def __str__(self) -> str:
        return to_text(self)


@dataclass(frozen=True)
class Field:
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Window:
    days: int

    def __str__(self) -> str:
        return str(self.days)


@dataclass(frozen=True)
class Const:
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError("constants must be finite")
        object.__setattr__(self, "value", float(self.value))

    def __str__(self) -> str:
        return repr(self.value)


AlphaExpr = Union[Op, Field, Window, Const]
Path = tuple[int, ...]


def to_text(e: AlphaExpr) -> str:
    """Canonical text form: no whitespace, reals always carry a '.' or exponent."""
    if isinstance(e, Op):
        return f"{e.name}({','.join(to_text(c) for c in e.children)})"
    return str(e)


def depth(e: AlphaExpr) -> int:
    """Tree depth; a lone leaf has depth 1."""
    if isinstance(e, Op):
        return 1 + max(depth(c) for c in e.children)
    return 1


def size(e: AlphaExpr) -> int:
    if isinstance(e, Op):
        return 1 + sum(size(c) for c in e.children)
    return 1


def walk(e: AlphaExpr, path: Path = ()) -> Iterator[tuple[Path, AlphaExpr]]:
    """Preorder traversal yielding ``(path, node)`` pairs."""
    yield path, e
    if isinstance(e, Op):
        for i, c in enumerate(e.children):
            yield from walk(c, path + (i,))


def node_at(e: AlphaExpr, path: Path) -> AlphaExpr:
    for i in path:
        e = e.children[i]  # type: ignore[union-attr]
    return e


def replace_at(e: AlphaExpr, path: Path, new: AlphaExpr) -> AlphaExpr:
    if not path:
        return new
    assert isinstance(e, Op)
    i = path[0]
    kids = list(e.children)
    kids[i] = replace_at(kids[i], path[1:], new)
    return Op(e.name, tuple(kids))


def fields_used(e: AlphaExpr) -> set[str]:
    return {n.name for _, n in walk(e) if isinstance(n, Field)}


@dataclass(frozen=True)
class StructureSignature:
    """Label-erased skeleton of an expression.

    Operators are encoded by their slot kinds (``d``/``w``), leaves by kind
    (``F`` field, ``W`` window, ``C`` constant).
    """

    shape: str

    def __str__(self) -> str:
        return self.shape


def _shape(e: AlphaExpr, registry: Registry) -> str:
    if isinstance(e, Op):
        kinds = "".join("d" if k is SlotKind.DATA else "w" for k in registry.get(e.name).slot_kinds)
        return f"O{kinds}({','.join(_shape(c, registry) for c in e.children)})"
    if isinstance(e, Field):
        return "F"
    if isinstance(e, Window):
        return "W"
    return "C"


def signature(e: AlphaExpr, registry: Registry = DEFAULT_REGISTRY) -> StructureSignature:
    return StructureSignature(_shape(e, registry))


def validate(e: AlphaExpr, registry: Registry = DEFAULT_REGISTRY, max_depth: int | None = None) -> None:
    """Raise a :class:`DslError` subclass if ``e`` breaks any tree invariant."""
    max_depth = registry.max_depth if max_depth is None else max_depth
    if isinstance(e, Window):
        raise SlotKindMismatch("window literal used as a data expression")
    _validate_data(e, registry)
    d = depth(e)
    if d > max_depth:
        raise DepthExceeded(f"depth {d} exceeds maximum {max_depth}")


def _validate_data(e: AlphaExpr, registry: Registry) -> None:
    if isinstance(e, Field):
        if e.name not in registry.fields:
            raise UnknownField(f"unknown field {e.name!r}")
    elif isinstance(e, Const):
        pass
    elif isinstance(e, Window):
        raise SlotKindMismatch(f"window {e.days} in a data slot")
    else:
        if e.name not in registry:
            raise UnknownOperator(f"unknown operator {e.name!r}")
        spec = registry.get(e.name)
        if len(e.children) != spec.arity:
            raise ArityMismatch(f"{e.name} takes {spec.arity} arguments, got {len(e.children)}")
        for kind, child in zip(spec.slot_kinds, e.children):
            if kind is SlotKind.WINDOW:
                if not isinstance(child, Window):
                    raise SlotKindMismatch(f"{e.name} expects a window literal")
                if child.days not in registry.windows:
                    raise WindowOutOfRange(
                        f"window {child.days} outside [{registry.min_window}, {registry.max_window}]"
                    )
            else:
                _validate_data(child, registry)
