"""Exceptions raised while parsing or validating alpha expressions."""

from __future__ import annotations


class DslError(ValueError):
    """Base class for expression errors.

    ``span`` is a ``(start, end)`` character range into the source text, or
    ``None`` when the error comes from validating an already-built tree.
    """

    def __init__(self, message: str, span: tuple[int, int] | None = None):
        self.span = span
        if span is not None:
            message = f"{message} at {span[0]}:{span[1]}"
        super().__init__(message)


class DslSyntaxError(DslError):
    pass


class UnknownOperator(DslError):
    pass


class UnknownField(DslError):
    pass


class ArityMismatch(DslError):
    pass


class SlotKindMismatch(DslError):
    """A window literal appeared in a data slot, or an expression in a window slot."""


class WindowOutOfRange(DslError):
    pass


class DepthExceeded(DslError):
    pass


class SignatureMismatch(ValueError):
    """Two expressions were expected to share a structure but do not."""
