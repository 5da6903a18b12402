"""Alpha expression language: trees, registry, parser and random generation."""

from wsgp.expr.errors import (
    ArityMismatch,
    DepthExceeded,
    DslError,
    DslSyntaxError,
    SignatureMismatch,
    SlotKindMismatch,
    UnknownField,
    UnknownOperator,
    WindowOutOfRange,
)
from wsgp.expr.generate import random_expr, random_same_structure
from wsgp.expr.nodes import (
    AlphaExpr,
    Const,
    Field,
    Op,
    StructureSignature,
    Window,
    depth,
    fields_used,
    node_at,
    replace_at,
    signature,
    size,
    to_text,
    validate,
    walk,
)
from wsgp.expr.parser import parse
from wsgp.expr.registry import (
    DEFAULT_FIELDS,
    DEFAULT_OPERATORS,
    DEFAULT_REGISTRY,
    OperatorSpec,
    OpFamily,
    Registry,
    SlotKind,
)

__all__ = [
    "AlphaExpr", "ArityMismatch", "Const", "DEFAULT_FIELDS", "DEFAULT_OPERATORS",
    "DEFAULT_REGISTRY", "DepthExceeded", "DslError", "DslSyntaxError", "Field", "Op",
    "OpFamily", "OperatorSpec", "Registry", "SignatureMismatch", "SlotKind",
    "SlotKindMismatch", "StructureSignature", "UnknownField", "UnknownOperator", "Window",
    "WindowOutOfRange", "depth", "fields_used", "node_at", "parse", "random_expr",
    "random_same_structure", "replace_at", "signature", "size", "to_text", "validate", "walk",
]
