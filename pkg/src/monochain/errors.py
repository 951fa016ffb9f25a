"""Exception hierarchy shared by every module."""
from __future__ import annotations


class MonochainError(Exception):
    """Base class for all package errors."""


class UsageError(MonochainError, ValueError):
    """Bad arguments: dimension mismatch, empty sets, violated preconditions."""


class NotFound(MonochainError, LookupError):
    """Lookup failed (unknown system name, no bracketing point, ...)."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class EscapeError(MonochainError):
    """A trajectory left the inflated domain."""

    def __init__(self, message: str, point=None):
        super().__init__(message)
        self.point = point


class NumericalError(MonochainError, ArithmeticError):
    """Non-finite values or a numerical iteration that did not converge."""


class InconclusiveError(MonochainError):
    """Too few samples behaved well enough to support an estimate."""


class StructureViolation(MonochainError):
    """An order-structure claim failed; ``witness`` holds the offending pair."""

    def __init__(self, message: str, witness=None):
        super().__init__(message)
        self.witness = witness


class DegenerateArc(MonochainError):
    """Continuation could not leave the seed: the fixed point is isolated."""
