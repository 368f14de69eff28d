"""Errors and validation diagnostics shared across the toolkit."""

from __future__ import annotations

from dataclasses import dataclass


class TropError(Exception):
    """Base class for every error this package raises deliberately."""


class TypeSyntaxError(TropError):
    """A type string could not be parsed."""

    def __init__(self, text: str, reason: str):
        super().__init__(f"bad type {text!r}: {reason}")
        self.text = text
        self.reason = reason


class UnresolvedTypedef(TropError):
    """A signature mentions a typedef name the typedef table does not define."""

    def __init__(self, name: str):
        super().__init__(f"unresolved typedef {name!r}")
        self.name = name


class CyclicTypedef(TropError):
    """The typedef table contains a resolution cycle through this name."""

    def __init__(self, name: str):
        super().__init__(f"cyclic typedef {name!r}")
        self.name = name


class SchemaViolation(TropError):
    """A facts document does not conform to the documented JSON schema."""

    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


class ReferentialIntegrity(TropError):
    """A facts collection references a key that does not exist."""

    def __init__(self, key: str, context: str = ""):
        msg = f"dangling reference {key!r}"
        if context:
            msg += f" ({context})"
        super().__init__(msg)
        self.key = key
        self.context = context


class UnitCollision(TropError):
    """Two facts databases being merged share a source-unit identifier."""

    def __init__(self, unit: str):
        super().__init__(f"unit defined on both sides of a merge: {unit!r}")
        self.unit = unit


class ParseError(TropError):
    """Restricted-C source that does not parse, with its location."""

    def __init__(self, line: int, col: int, message: str):
        super().__init__(f"{line}:{col}: {message}")
        self.line = line
        self.col = col
        self.message = message


class UnsupportedConstruct(TropError):
    """Syntactically plausible C that falls outside the restricted subset."""

    def __init__(self, line: int, description: str):
        super().__init__(f"{line}: unsupported construct: {description}")
        self.line = line
        self.description = description


class UnknownSite(TropError):
    """A call-site id that does not exist in the facts database."""

    def __init__(self, site_id: str):
        super().__init__(f"unknown call site {site_id!r}")
        self.site_id = site_id


class UnknownTarget(TropError):
    """A function key that does not exist in the facts database."""

    def __init__(self, key: str):
        super().__init__(f"unknown target function {key!r}")
        self.key = key


ERROR = "error"
WARNING = "warning"


@dataclass(frozen=True)
class Diagnostic:
    """One validation finding; ``code`` is machine readable."""

    code: str
    severity: str
    path: str
    message: str

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return f"{self.severity}: {self.code} at {self.path}: {self.message}"
