"""Canonical function-type signatures, matching policies, and 64-bit type hashes.

The canonical serialization ``ret(p1,p2[,...])`` is the stability contract for
every hash this package emits; ``docs/signature-grammar.md`` spells out the
token grammar.  Canonicalization resolves typedefs, strips qualifiers and
names, decays arrays to pointers, and then applies one of three matching
policies:

* ``strict``       -- full structural tokens.
* ``relaxed_ptr``  -- every object-pointer token collapses to ``ptr``;
                      function-pointer tokens keep their shape.
* ``arity``        -- parameter tokens become ``arg`` placeholders (count
                      preserved); the return token becomes ``ret`` unless the
                      policy is configured to keep returns, in which case the
                      relaxed form of the return token is kept so the policy
                      stays coarser than ``relaxed_ptr``.

Everything here is pure and safe to call concurrently.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Mapping, Union

from .errors import CyclicTypedef, TypeSyntaxError, UnresolvedTypedef

__all__ = [
    "TypeToken",
    "CanonicalSignature",
    "MatchKind",
    "MatchMode",
    "EdgeKind",
    "TypeHash",
    "RawType",
    "RawSignature",
    "BuiltinType",
    "RecordType",
    "TypedefRef",
    "PointerType",
    "ArrayType",
    "FunctionType",
    "parse_type_string",
    "format_type",
    "canonicalize",
    "serialize",
    "signatures_match",
    "type_hash",
    "resolve_type",
]


# ---------------------------------------------------------------------------
# Raw (pre-canonical) structural types


@dataclass(frozen=True)
class BuiltinType:
    """A builtin arithmetic/void type, stored with its canonical C spelling."""

    spelling: str


@dataclass(frozen=True)
class RecordType:
    """A struct/union/enum referenced by tag."""

    kind: str  # "struct" | "union" | "enum"
    tag: str


@dataclass(frozen=True)
class TypedefRef:
    """An unresolved typedef name; resolution happens against a typedef table."""

    name: str


@dataclass(frozen=True)
class PointerType:
    inner: "RawType"


@dataclass(frozen=True)
class ArrayType:
    """Array of ``inner``; treated as a pointer to ``inner`` when canonicalized."""

    inner: "RawType"


@dataclass(frozen=True)
class FunctionType:
    signature: "RawSignature"


RawType = Union[BuiltinType, RecordType, TypedefRef, PointerType, ArrayType, FunctionType]


@dataclass(frozen=True)
class RawSignature:
    """A structured function signature before canonicalization."""

    return_type: RawType
    params: tuple[RawType, ...]
    variadic: bool = False


# ---------------------------------------------------------------------------
# Builtin spelling normalization

_QUALIFIERS = {"const", "volatile", "restrict"}

# Multisets of declaration-specifier words -> canonical C spelling.  Word
# order in source is irrelevant ("unsigned long" == "long unsigned").
_BUILTIN_FORMS: dict[tuple[str, ...], str] = {}


def _register_builtin(spelling: str, *forms: str) -> None:
    for form in forms + (spelling,):
        _BUILTIN_FORMS[tuple(sorted(form.split()))] = spelling


_register_builtin("void")
_register_builtin("bool", "_Bool")
_register_builtin("char")
_register_builtin("signed char")
_register_builtin("unsigned char")
_register_builtin("short", "short int", "signed short", "signed short int")
_register_builtin("unsigned short", "unsigned short int")
_register_builtin("int", "signed", "signed int")
_register_builtin("unsigned int", "unsigned")
_register_builtin("long", "long int", "signed long", "signed long int")
_register_builtin("unsigned long", "unsigned long int")
_register_builtin("long long", "long long int", "signed long long", "signed long long int")
_register_builtin("unsigned long long", "unsigned long long int")
_register_builtin("float")
_register_builtin("double")
_register_builtin("long double")

#: Every word that may start or continue a builtin type spelling.
BUILTIN_WORDS = frozenset(w for form in _BUILTIN_FORMS for w in form)

# Canonical C spelling -> whitespace-free token text.
_BUILTIN_TOKENS = {
    "void": "void",
    "bool": "bool",
    "char": "char",
    "signed char": "schar",
    "unsigned char": "uchar",
    "short": "short",
    "unsigned short": "ushort",
    "int": "int",
    "unsigned int": "uint",
    "long": "long",
    "unsigned long": "ulong",
    "long long": "llong",
    "unsigned long long": "ullong",
    "float": "float",
    "double": "double",
    "long double": "ldouble",
}


def normalize_builtin_words(words: list[str]) -> str:
    """Return the canonical C spelling for a builtin word sequence."""
    key = tuple(sorted(w for w in words if w not in _QUALIFIERS))
    spelling = _BUILTIN_FORMS.get(key)
    if spelling is None:
        raise TypeSyntaxError(" ".join(words), "not a builtin type")
    return spelling


# ---------------------------------------------------------------------------
# Type-string parsing (the compact syntax used by facts files)

_TYPE_TOKEN_RE = re.compile(
    r"\s*(?:(?P<ident>[A-Za-z_][A-Za-z_0-9]*)|(?P<num>\d+)|(?P<punct>\.\.\.|[*()\[\],]))"
)


class _Cursor:
    """A small token cursor over a type string."""

    def __init__(self, text: str):
        self.text = text
        self.tokens: list[str] = []
        pos = 0
        while pos < len(text):
            m = _TYPE_TOKEN_RE.match(text, pos)
            if m is None:
                if text[pos:].strip():
                    raise TypeSyntaxError(text, f"unexpected character {text[pos:].strip()[0]!r}")
                break
            self.tokens.append(m.group(0).strip())
            pos = m.end()
        self.i = 0

    def peek(self, offset: int = 0) -> str | None:
        j = self.i + offset
        return self.tokens[j] if j < len(self.tokens) else None

    def next(self) -> str:
        tok = self.peek()
        if tok is None:
            raise TypeSyntaxError(self.text, "unexpected end of type")
        self.i += 1
        return tok

    def expect(self, tok: str) -> None:
        got = self.next()
        if got != tok:
            raise TypeSyntaxError(self.text, f"expected {tok!r}, got {got!r}")


def parse_type_string(text: str) -> RawType:
    """Parse the compact type syntax used in facts files.

    Supports builtin spellings (``unsigned long``), tagged records
    (``struct ngx_cycle_s``), typedef names, ``*`` pointer suffixes,
    ``[]``/``[N]`` array suffixes, and function-pointer declarators such as
    ``void (*)(int, long)``.  Qualifiers are discarded.
    """
    cur = _Cursor(text)
    t = _parse_type(cur)
    if cur.peek() is not None:
        raise TypeSyntaxError(text, f"trailing tokens starting at {cur.peek()!r}")
    return t


def _parse_type(cur: _Cursor) -> RawType:
    base = _parse_base(cur)
    while cur.peek() == "*":
        cur.next()
        while cur.peek() in _QUALIFIERS:
            cur.next()
        base = PointerType(base)
    if cur.peek() == "(" and cur.peek(1) == "*":
        cur.next()
        depth = 0
        while cur.peek() == "*":
            cur.next()
            depth += 1
        cur.expect(")")
        cur.expect("(")
        params, variadic = _parse_params(cur)
        cur.expect(")")
        base = FunctionType(RawSignature(base, tuple(params), variadic))
        for _ in range(depth):
            base = PointerType(base)
    while cur.peek() == "[":
        cur.next()
        if cur.peek() != "]":
            cur.next()  # array extent is irrelevant to matching
        cur.expect("]")
        base = ArrayType(base)
    return base


def _parse_base(cur: _Cursor) -> RawType:
    while cur.peek() in _QUALIFIERS:
        cur.next()
    tok = cur.peek()
    if tok is None:
        raise TypeSyntaxError(cur.text, "missing type")
    if tok in ("struct", "union", "enum"):
        kind = cur.next()
        tag = cur.next()
        if not tag[0].isalpha() and tag[0] != "_":
            raise TypeSyntaxError(cur.text, f"bad {kind} tag {tag!r}")
        return RecordType(kind, tag)
    if tok in BUILTIN_WORDS:
        words = []
        while cur.peek() in BUILTIN_WORDS or cur.peek() in _QUALIFIERS:
            words.append(cur.next())
        return BuiltinType(normalize_builtin_words(words))
    if tok[0].isalpha() or tok[0] == "_":
        return TypedefRef(cur.next())
    raise TypeSyntaxError(cur.text, f"unexpected token {tok!r}")


def _parse_params(cur: _Cursor) -> tuple[list[RawType], bool]:
    params: list[RawType] = []
    variadic = False
    if cur.peek() == ")":
        return params, variadic
    if cur.peek() == "void" and cur.peek(1) == ")":
        cur.next()
        return params, variadic
    while True:
        if cur.peek() == "...":
            cur.next()
            variadic = True
            break
        params.append(_parse_type(cur))
        if cur.peek() == ",":
            cur.next()
            continue
        break
    return params, variadic


def format_type(t: RawType) -> str:
    """Render a raw type back into the compact type syntax."""
    if isinstance(t, BuiltinType):
        return t.spelling
    if isinstance(t, RecordType):
        return f"{t.kind} {t.tag}"
    if isinstance(t, TypedefRef):
        return t.name
    if isinstance(t, ArrayType):
        return f"{format_type(t.inner)} []"
    if isinstance(t, PointerType):
        depth = 0
        inner: RawType = t
        while isinstance(inner, PointerType):
            depth += 1
            inner = inner.inner
        if isinstance(inner, FunctionType):
            return _format_fn(inner.signature, "*" * depth)
        return f"{format_type(t.inner)} *"
    if isinstance(t, FunctionType):
        return _format_fn(t.signature, "")
    raise TypeError(f"not a raw type: {t!r}")


def _format_fn(sig: RawSignature, stars: str) -> str:
    params = [format_type(p) for p in sig.params]
    if sig.variadic:
        params.append("...")
    inner = ", ".join(params) if params else "void"
    return f"{format_type(sig.return_type)} ({stars})({inner})"


# ---------------------------------------------------------------------------
# Typedef resolution


def resolve_type(t: RawType, typedefs: Mapping[str, RawType], _stack: tuple[str, ...] = ()) -> RawType:
    """Replace every typedef reference in ``t`` by its structural definition.

    Raises UnresolvedTypedef for names missing from the table and
    CyclicTypedef when resolution loops.
    """
    if isinstance(t, TypedefRef):
        if t.name in _stack:
            raise CyclicTypedef(t.name)
        target = typedefs.get(t.name)
        if target is None:
            raise UnresolvedTypedef(t.name)
        return resolve_type(target, typedefs, _stack + (t.name,))
    if isinstance(t, PointerType):
        return PointerType(resolve_type(t.inner, typedefs, _stack))
    if isinstance(t, ArrayType):
        return ArrayType(resolve_type(t.inner, typedefs, _stack))
    if isinstance(t, FunctionType):
        return FunctionType(_resolve_signature(t.signature, typedefs, _stack))
    return t


def _resolve_signature(
    sig: RawSignature, typedefs: Mapping[str, RawType], _stack: tuple[str, ...] = ()
) -> RawSignature:
    return RawSignature(
        resolve_type(sig.return_type, typedefs, _stack),
        tuple(resolve_type(p, typedefs, _stack) for p in sig.params),
        sig.variadic,
    )


# ---------------------------------------------------------------------------
# Canonical signatures


@dataclass(frozen=True)
class TypeToken:
    """One normalized type spelling; pointer depth is folded into the text."""

    text: str

    def __post_init__(self) -> None:
        if not self.text or any(c.isspace() for c in self.text):
            raise ValueError(f"invalid type token {self.text!r}")

    @property
    def pointer_depth(self) -> int:
        depth = 0
        text = self.text
        while text.startswith("ptr<") and text.endswith(">"):
            depth += 1
            text = text[4:-1]
        return depth


@dataclass(frozen=True)
class CanonicalSignature:
    """A mode-normalized signature; the unit over which hashes are defined."""

    return_token: TypeToken
    param_tokens: tuple[TypeToken, ...]
    variadic: bool = False


class MatchKind(Enum):
    STRICT = "strict"
    RELAXED_PTR = "relaxed_ptr"
    ARITY = "arity"


@dataclass(frozen=True)
class MatchMode:
    """A signature-matching policy; ``arity_include_return`` only matters for arity."""

    kind: MatchKind = MatchKind.STRICT
    arity_include_return: bool = False

    @classmethod
    def strict(cls) -> "MatchMode":
        return cls(MatchKind.STRICT)

    @classmethod
    def relaxed_ptr(cls) -> "MatchMode":
        return cls(MatchKind.RELAXED_PTR)

    @classmethod
    def arity(cls, include_return: bool = False) -> "MatchMode":
        return cls(MatchKind.ARITY, include_return)

    @classmethod
    def from_name(cls, name: str) -> "MatchMode":
        table = {
            "strict": cls.strict(),
            "relaxed_ptr": cls.relaxed_ptr(),
            "arity": cls.arity(False),
            "arity_with_return": cls.arity(True),
        }
        try:
            return table[name]
        except KeyError:
            raise ValueError(f"unknown match mode {name!r} (choose from {sorted(table)})") from None

    @property
    def name(self) -> str:
        if self.kind is MatchKind.ARITY and self.arity_include_return:
            return "arity_with_return"
        return self.kind.value


def canonicalize(
    sig: RawSignature, typedefs: Mapping[str, RawType], mode: MatchMode = MatchMode.strict()
) -> CanonicalSignature:
    """Produce the mode-normalized canonical form of a raw signature."""
    resolved = _resolve_signature(sig, typedefs)
    params = list(resolved.params)
    if len(params) == 1 and params[0] == BuiltinType("void") and not resolved.variadic:
        params = []
    if mode.kind is MatchKind.ARITY:
        if mode.arity_include_return:
            ret = _token(resolved.return_type, MatchKind.RELAXED_PTR)
        else:
            ret = TypeToken("ret")
        return CanonicalSignature(ret, tuple(TypeToken("arg") for _ in params), resolved.variadic)
    ret = _token(resolved.return_type, mode.kind)
    return CanonicalSignature(
        ret, tuple(_token(p, mode.kind) for p in params), resolved.variadic
    )


def _token(t: RawType, kind: MatchKind) -> TypeToken:
    if isinstance(t, BuiltinType):
        return TypeToken(_BUILTIN_TOKENS[t.spelling])
    if isinstance(t, RecordType):
        return TypeToken(f"{t.kind}:{t.tag}")
    if isinstance(t, ArrayType):
        return _token(PointerType(t.inner), kind)
    if isinstance(t, PointerType):
        inner = t.inner
        if isinstance(inner, ArrayType):
            inner = PointerType(inner.inner)
        if kind is MatchKind.RELAXED_PTR and not isinstance(inner, FunctionType):
            return TypeToken("ptr")
        return TypeToken(f"ptr<{_token(inner, kind).text}>")
    if isinstance(t, FunctionType):
        sub = canonicalize(t.signature, {}, MatchMode(kind))
        return TypeToken(f"fn:{serialize(sub)}")
    if isinstance(t, TypedefRef):  # pragma: no cover - resolution precedes tokenization
        raise UnresolvedTypedef(t.name)
    raise TypeError(f"not a raw type: {t!r}")


def serialize(sig: CanonicalSignature) -> str:
    """Render ``ret(p1,p2[,...])``; total and injective over canonical forms."""
    parts = [tok.text for tok in sig.param_tokens]
    if sig.variadic:
        parts.append("...")
    return f"{sig.return_token.text}({','.join(parts)})"


def signatures_match(a: CanonicalSignature, b: CanonicalSignature, mode: MatchMode | None = None) -> bool:
    """True iff two signatures, already canonical under the same mode, match.

    Matching is serialization identity, hence an equivalence relation in
    every mode; ``mode`` is accepted for call-site clarity only.
    """
    del mode
    return serialize(a) == serialize(b)


# ---------------------------------------------------------------------------
# Hashing


class EdgeKind(Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


_EDGE_PREFIX = {EdgeKind.FORWARD: b"\x01", EdgeKind.BACKWARD: b"\x02"}


@dataclass(frozen=True)
class TypeHash:
    """A 64-bit, platform-independent hash of a canonical serialization."""

    value: int
    edge_kind: EdgeKind


def type_hash(sig: CanonicalSignature, edge_kind: EdgeKind) -> TypeHash:
    """Hash a canonical signature for one edge kind.

    blake2b truncated to 64 bits over a 1-byte domain prefix (0x01 forward,
    0x02 backward) plus the UTF-8 canonical serialization.  Any fixed 64-bit
    hash would serve: the analysis depends only on equality.
    """
    digest = hashlib.blake2b(
        _EDGE_PREFIX[edge_kind] + serialize(sig).encode("utf-8"), digest_size=8
    ).digest()
    return TypeHash(int.from_bytes(digest, "big"), edge_kind)
