"""Restricted-C source extractor.

Parses the C subset documented in ``docs/restricted-c.md`` and produces a
facts database, so small programs run through the whole pipeline straight
from source text.  The subset covers typedefs, function definitions and
prototypes, global/local declarations, direct and function-pointer calls,
address-of assignments, and ``if``/``else``/``while``/``for``/``switch``
guards; anything else is rejected with a location.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import ParseError, UnsupportedConstruct
from .facts import (
    DEFAULT_SINKS,
    DirectCallEdge,
    FactsDB,
    FunctionDecl,
    GuardAnnotation,
    GuardRef,
    IndirectCallSite,
    ScopeClass,
    merge_facts,
)
from .signatures import (
    BUILTIN_WORDS,
    ArrayType,
    BuiltinType,
    FunctionType,
    PointerType,
    RawSignature,
    RawType,
    RecordType,
    TypedefRef,
    format_type,
    normalize_builtin_words,
    resolve_type,
)

__all__ = ["parse_unit", "extract_corpus", "ALLOCATORS"]

#: Calls whose result makes the receiving pointer heap-classified.
ALLOCATORS = frozenset({"malloc", "calloc", "realloc", "strdup"})

_QUALIFIERS = {"const", "volatile", "restrict"}
_KEYWORDS = (
    {
        "typedef",
        "static",
        "extern",
        "struct",
        "union",
        "enum",
        "if",
        "else",
        "while",
        "for",
        "switch",
        "case",
        "default",
        "break",
        "continue",
        "return",
        "do",
        "goto",
        "sizeof",
    }
    | _QUALIFIERS
    | set(BUILTIN_WORDS)
)


# ---------------------------------------------------------------------------
# Lexer


@dataclass(frozen=True)
class _Tok:
    kind: str  # ident | num | str | char | punct | eof
    value: str
    line: int
    col: int


_PUNCTS = [
    "...",
    "<<=",
    ">>=",
    "==",
    "!=",
    "<=",
    ">=",
    "&&",
    "||",
    "->",
    "++",
    "--",
    "+=",
    "-=",
    "*=",
    "/=",
    "%=",
    "&=",
    "|=",
    "^=",
    "<<",
    ">>",
    "(",
    ")",
    "{",
    "}",
    "[",
    "]",
    ";",
    ",",
    "*",
    "&",
    "=",
    "<",
    ">",
    "+",
    "-",
    "/",
    "%",
    "!",
    ".",
    "?",
    ":",
    "|",
    "^",
    "~",
]

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")
_NUM_RE = re.compile(r"(?:0[xX][0-9a-fA-F]+|\d+)(?:[uUlL]*)")


def _lex(source: str) -> list[_Tok]:
    toks: list[_Tok] = []
    line, col, i = 1, 1, 0
    n = len(source)

    def advance(text: str) -> None:
        nonlocal line, col
        for ch in text:
            if ch == "\n":
                line += 1
                col = 1
            else:
                col += 1

    while i < n:
        ch = source[i]
        if ch in " \t\r\n":
            advance(ch)
            i += 1
            continue
        if source.startswith("//", i):
            end = source.find("\n", i)
            end = n if end == -1 else end
            advance(source[i:end])
            i = end
            continue
        if ch == "#":
            if col != 1:
                raise ParseError(line, col, "'#' is only recognized at the start of a line")
            end = source.find("\n", i)
            end = n if end == -1 else end
            directive = source[i:end].strip()
            if not directive.startswith("#include"):
                raise UnsupportedConstruct(line, f"preprocessor directive {directive.split()[0]!r}")
            advance(source[i:end])
            i = end
            continue
        if ch == '"' or ch == "'":
            quote = ch
            j = i + 1
            while j < n and source[j] != quote:
                j += 2 if source[j] == "\\" else 1
            if j >= n:
                raise ParseError(line, col, "unterminated literal")
            text = source[i : j + 1]
            toks.append(_Tok("str" if quote == '"' else "char", text, line, col))
            advance(text)
            i = j + 1
            continue
        m = _IDENT_RE.match(source, i)
        if m:
            toks.append(_Tok("ident", m.group(0), line, col))
            advance(m.group(0))
            i = m.end()
            continue
        m = _NUM_RE.match(source, i)
        if m:
            toks.append(_Tok("num", m.group(0), line, col))
            advance(m.group(0))
            i = m.end()
            continue
        for p in _PUNCTS:
            if source.startswith(p, i):
                toks.append(_Tok("punct", p, line, col))
                advance(p)
                i += len(p)
                break
        else:
            raise ParseError(line, col, f"unexpected character {ch!r}")
    toks.append(_Tok("eof", "", line, col))
    return toks


# ---------------------------------------------------------------------------
# Expression AST (just enough structure to find calls, address-taking, and
# the identifiers a guard reads)


@dataclass(frozen=True)
class _Name:
    ident: str
    line: int
    col: int


@dataclass(frozen=True)
class _Lit:
    text: str


@dataclass(frozen=True)
class _Unary:
    op: str
    operand: object


@dataclass(frozen=True)
class _Postfix:
    op: str
    operand: object


@dataclass(frozen=True)
class _Binary:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class _Assign:
    op: str
    target: object
    value: object


@dataclass(frozen=True)
class _Call:
    callee: object
    args: tuple
    line: int
    col: int


@dataclass(frozen=True)
class _Member:
    base: object
    op: str  # "." or "->"
    fieldname: str


@dataclass(frozen=True)
class _Index:
    base: object
    index: object


@dataclass(frozen=True)
class _Cast:
    to_text: str
    operand: object


def _render(e: object) -> str:
    """Deterministic source-like text for guard expressions."""
    if isinstance(e, _Name):
        return e.ident
    if isinstance(e, _Lit):
        return e.text
    if isinstance(e, _Unary):
        inner = _render(e.operand)
        if isinstance(e.operand, (_Binary, _Assign)):
            inner = f"({inner})"
        return f"{e.op}{inner}"
    if isinstance(e, _Postfix):
        return f"{_render(e.operand)}{e.op}"
    if isinstance(e, _Binary):
        left, right = _render(e.left), _render(e.right)
        if isinstance(e.left, (_Binary, _Assign)):
            left = f"({left})"
        if isinstance(e.right, (_Binary, _Assign)):
            right = f"({right})"
        return f"{left} {e.op} {right}"
    if isinstance(e, _Assign):
        return f"{_render(e.target)} {e.op} {_render(e.value)}"
    if isinstance(e, _Call):
        return f"{_render(e.callee)}({', '.join(_render(a) for a in e.args)})"
    if isinstance(e, _Member):
        return f"{_render(e.base)}{e.op}{e.fieldname}"
    if isinstance(e, _Index):
        return f"{_render(e.base)}[{_render(e.index)}]"
    if isinstance(e, _Cast):
        return f"({e.to_text}){_render(e.operand)}"
    raise TypeError(f"not an expression node: {e!r}")


# ---------------------------------------------------------------------------
# Per-function extraction state


@dataclass
class _Var:
    name: str
    raw_type: RawType
    scope: ScopeClass


@dataclass
class _CallEvent:
    kind: str  # "direct" | "indirect"
    callee: str  # function name, or pointer variable name
    fp_signature: RawSignature | None
    guards: tuple[GuardAnnotation, ...]
    line: int
    col: int


@dataclass
class _FnInfo:
    name: str
    signature: RawSignature
    is_static: bool
    is_definition: bool
    line: int
    params: dict[str, _Var] = field(default_factory=dict)
    calls: list[_CallEvent] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Parser


class _Parser:
    def __init__(self, source: str, unit: str, sinks: Sequence[str]):
        self.toks = _lex(source)
        self.i = 0
        self.unit = unit
        self.sinks = set(sinks)
        self.typedefs: dict[str, RawType] = {}
        self.globals: dict[str, _Var] = {}
        self.functions: list[_FnInfo] = []
        self.taken_names: set[str] = set()
        # active function context
        self._fn: _FnInfo | None = None
        self._locals: list[dict[str, _Var]] = []
        self._guards: list[GuardAnnotation] = []

    # -- token plumbing ----------------------------------------------------

    def peek(self, offset: int = 0) -> _Tok:
        j = min(self.i + offset, len(self.toks) - 1)
        return self.toks[j]

    def next(self) -> _Tok:
        tok = self.toks[self.i]
        if tok.kind != "eof":
            self.i += 1
        return tok

    def expect(self, value: str) -> _Tok:
        tok = self.next()
        if tok.value != value:
            raise ParseError(tok.line, tok.col, f"expected {value!r}, got {tok.value or 'end of file'!r}")
        return tok

    def expect_ident(self) -> _Tok:
        tok = self.next()
        if tok.kind != "ident" or tok.value in _KEYWORDS:
            raise ParseError(tok.line, tok.col, f"expected identifier, got {tok.value or 'end of file'!r}")
        return tok

    # -- type grammar --------------------------------------------------------

    def at_type(self, offset: int = 0) -> bool:
        tok = self.peek(offset)
        if tok.kind != "ident":
            return False
        return (
            tok.value in BUILTIN_WORDS
            or tok.value in _QUALIFIERS
            or tok.value in ("struct", "union", "enum")
            or tok.value in self.typedefs
        )

    def parse_base_type(self) -> RawType:
        while self.peek().value in _QUALIFIERS:
            self.next()
        tok = self.peek()
        if tok.value in ("struct", "union", "enum"):
            self.next()
            tag = self.expect_ident()
            base: RawType = RecordType(tok.value, tag.value)
        elif tok.value in BUILTIN_WORDS:
            words = []
            while self.peek().value in BUILTIN_WORDS or self.peek().value in _QUALIFIERS:
                words.append(self.next().value)
            base = BuiltinType(normalize_builtin_words(words))
        elif tok.kind == "ident" and tok.value in self.typedefs:
            self.next()
            base = TypedefRef(tok.value)
        else:
            raise ParseError(tok.line, tok.col, f"expected a type, got {tok.value!r}")
        while self.peek().value in _QUALIFIERS:
            self.next()
        return base

    def parse_pointers(self, base: RawType) -> RawType:
        while self.peek().value == "*":
            self.next()
            while self.peek().value in _QUALIFIERS:
                self.next()
            base = PointerType(base)
        return base

    def parse_declarator(self, base: RawType) -> tuple[str, RawType, _Tok]:
        """One declarator: plain name, function-pointer form, or array suffixes."""
        base = self.parse_pointers(base)
        if self.peek().value == "(":
            self.next()
            self.expect("*")
            depth = 1
            while self.peek().value == "*":
                self.next()
                depth += 1
            name_tok = self.expect_ident()
            self.expect(")")
            self.expect("(")
            params, variadic = self.parse_param_types()
            self.expect(")")
            t: RawType = FunctionType(RawSignature(base, tuple(params), variadic))
            for _ in range(depth):
                t = PointerType(t)
            return name_tok.value, t, name_tok
        name_tok = self.expect_ident()
        t = base
        while self.peek().value == "[":
            self.next()
            if self.peek().value != "]":
                self.next()
            self.expect("]")
            t = ArrayType(t)
        return name_tok.value, t, name_tok

    def parse_param_declarator(self) -> tuple[str | None, RawType]:
        """One parameter: the name is optional (prototypes may omit it)."""
        base = self.parse_base_type()
        t = self.parse_pointers(base)
        name: str | None = None
        if self.peek().value == "(" and self.peek(1).value == "*":
            self.next()
            depth = 0
            while self.peek().value == "*":
                self.next()
                depth += 1
            if self.peek().kind == "ident" and self.peek().value not in _KEYWORDS:
                name = self.next().value
            self.expect(")")
            self.expect("(")
            inner, inner_variadic = self.parse_param_types()
            self.expect(")")
            t = FunctionType(RawSignature(t, tuple(inner), inner_variadic))
            for _ in range(depth):
                t = PointerType(t)
        elif self.peek().kind == "ident" and self.peek().value not in _KEYWORDS:
            name = self.next().value
        while self.peek().value == "[":
            self.next()
            if self.peek().value != "]":
                self.next()
            self.expect("]")
            t = ArrayType(t)
        return name, t

    def parse_param_list(self) -> tuple[list[tuple[str | None, RawType]], bool]:
        """The parenthesized parameter list, opening paren already consumed."""
        params: list[tuple[str | None, RawType]] = []
        variadic = False
        if self.peek().value == ")":
            return params, variadic
        if self.peek().value == "void" and self.peek(1).value == ")":
            self.next()
            return params, variadic
        while True:
            if self.peek().value == "...":
                self.next()
                variadic = True
                break
            params.append(self.parse_param_declarator())
            if self.peek().value == ",":
                self.next()
                continue
            break
        return params, variadic

    def parse_param_types(self) -> tuple[list[RawType], bool]:
        params, variadic = self.parse_param_list()
        return [t for _, t in params], variadic

    # -- top level -----------------------------------------------------------

    def parse_unit(self) -> None:
        while self.peek().kind != "eof":
            tok = self.peek()
            if tok.value == "typedef":
                self.parse_typedef()
            elif tok.value in ("static", "extern") or self.at_type():
                self.parse_top_decl()
            else:
                raise ParseError(tok.line, tok.col, f"expected a declaration, got {tok.value!r}")

    def parse_typedef(self) -> None:
        start = self.expect("typedef")
        base = self.parse_base_type()
        base = self.parse_pointers(base)
        if self.peek().value == "(":
            self.next()
            self.expect("*")
            name_tok = self.expect_ident()
            self.expect(")")
            self.expect("(")
            params, variadic = self.parse_param_types()
            self.expect(")")
            t: RawType = PointerType(FunctionType(RawSignature(base, tuple(params), variadic)))
        else:
            name_tok = self.expect_ident()
            t = base
            while self.peek().value == "[":
                self.next()
                if self.peek().value != "]":
                    self.next()
                self.expect("]")
                t = ArrayType(t)
        self.expect(";")
        if name_tok.value in self.typedefs:
            raise ParseError(start.line, start.col, f"typedef {name_tok.value!r} redefined")
        self.typedefs[name_tok.value] = t

    def parse_top_decl(self) -> None:
        is_static = False
        while self.peek().value in ("static", "extern"):
            is_static = self.next().value == "static" or is_static
        base = self.parse_base_type()
        name, t, name_tok = self.parse_declarator(base)
        if self.peek().value == "(" and not _is_function_pointer_shape(t) and not isinstance(t, ArrayType):
            self.parse_function(name, t, is_static, name_tok)
            return
        # global variable declaration(s)
        self.finish_var_decl(name, t, name_tok, scope=ScopeClass.GLOBAL, base=base)

    def finish_var_decl(
        self, name: str, t: RawType, name_tok: _Tok, scope: ScopeClass, base: RawType
    ) -> None:
        """Declarator tail: optional initializer, comma declarators, semicolon."""
        while True:
            var_scope = scope
            if self.peek().value == "=":
                self.next()
                init = self.parse_assignment()
                self.walk_expression(init)
                if (
                    scope is ScopeClass.LOCAL
                    and isinstance(t, PointerType)
                    and _is_allocation(init)
                ):
                    var_scope = ScopeClass.HEAP
            self.declare_var(_Var(name, t, var_scope), name_tok)
            if self.peek().value == ",":
                self.next()
                name, t, name_tok = self.parse_declarator(base)
                continue
            self.expect(";")
            return

    def declare_var(self, var: _Var, tok: _Tok) -> None:
        if self._fn is None:
            if var.name in self.globals:
                raise ParseError(tok.line, tok.col, f"global {var.name!r} redeclared")
            self.globals[var.name] = var
        else:
            block = self._locals[-1]
            if var.name in block:
                raise ParseError(tok.line, tok.col, f"variable {var.name!r} redeclared in this block")
            block[var.name] = var

    def parse_function(self, name: str, return_type: RawType, is_static: bool, name_tok: _Tok) -> None:
        self.expect("(")
        params, variadic = self.parse_param_list()
        self.expect(")")

        sig = RawSignature(return_type, tuple(pt for _, pt in params), variadic)
        existing = next((f for f in self.functions if f.name == name), None)
        if self.peek().value == ";":
            self.next()
            if existing is None:
                self.functions.append(
                    _FnInfo(name, sig, is_static, is_definition=False, line=name_tok.line)
                )
            return

        if existing is not None and existing.is_definition:
            raise ParseError(name_tok.line, name_tok.col, f"function {name!r} redefined")
        info = _FnInfo(name, sig, is_static or (existing is not None and existing.is_static),
                       is_definition=True, line=name_tok.line)
        for pname, ptype in params:
            if pname is not None:
                info.params[pname] = _Var(pname, ptype, ScopeClass.PARAM)
        if existing is not None:
            self.functions[self.functions.index(existing)] = info
        else:
            self.functions.append(info)

        self._fn = info
        self._locals = [dict(info.params)]
        self._guards = []
        self.expect("{")
        self.parse_block_body()
        self._fn = None
        self._locals = []

    # -- statements ------------------------------------------------------------

    def parse_block_body(self) -> None:
        """Statements up to the matching '}' (opening brace already consumed)."""
        while self.peek().value != "}":
            if self.peek().kind == "eof":
                tok = self.peek()
                raise ParseError(tok.line, tok.col, "unexpected end of file inside a block")
            self.parse_statement()
        self.expect("}")

    def parse_statement(self) -> None:
        tok = self.peek()
        if tok.value == "{":
            self.next()
            self._locals.append({})
            self.parse_block_body()
            self._locals.pop()
            return
        if tok.value == ";":
            self.next()
            return
        if tok.value == "if":
            self.parse_if()
            return
        if tok.value == "while":
            self.parse_while()
            return
        if tok.value == "for":
            self.parse_for()
            return
        if tok.value == "switch":
            self.parse_switch()
            return
        if tok.value in ("case", "default"):
            self.next()
            if tok.value == "case":
                self.parse_assignment()  # the label expression is irrelevant
            self.expect(":")
            return
        if tok.value == "do":
            raise UnsupportedConstruct(tok.line, "do/while loop")
        if tok.value == "goto":
            raise UnsupportedConstruct(tok.line, "goto")
        if tok.value in ("break", "continue"):
            self.next()
            self.expect(";")
            return
        if tok.value == "return":
            self.next()
            if self.peek().value != ";":
                expr = self.parse_expression()
                self.walk_expression(expr)
            self.expect(";")
            return
        if tok.value == "typedef":
            raise UnsupportedConstruct(tok.line, "typedef inside a function body")
        if tok.value == "static" or self.at_type():
            is_static_local = False
            while self.peek().value in ("static", "extern"):
                is_static_local = self.next().value == "static" or is_static_local
            base = self.parse_base_type()
            name, t, name_tok = self.parse_declarator(base)
            # a static local lives in global storage, so it is attacker-reachable
            scope = ScopeClass.GLOBAL if is_static_local else ScopeClass.LOCAL
            self.finish_var_decl(name, t, name_tok, scope=scope, base=base)
            return
        expr = self.parse_expression()
        self.walk_expression(expr)
        self.expect(";")

    def _parse_guard_condition(self) -> GuardAnnotation:
        self.expect("(")
        cond = self.parse_expression()
        self.expect(")")
        self.walk_expression(cond)  # calls in the condition run under outer guards only
        return GuardAnnotation(_render(cond), self.guard_refs(cond))

    def _parse_guarded_body(self, guard: GuardAnnotation) -> None:
        self._guards.append(guard)
        self._locals.append({})
        self.parse_statement()
        self._locals.pop()
        self._guards.pop()

    def parse_if(self) -> None:
        self.expect("if")
        guard = self._parse_guard_condition()
        self._parse_guarded_body(guard)
        if self.peek().value == "else":
            self.next()
            negated = GuardAnnotation(f"!({guard.expression})", guard.referenced)
            self._parse_guarded_body(negated)

    def parse_while(self) -> None:
        self.expect("while")
        guard = self._parse_guard_condition()
        self._parse_guarded_body(guard)

    def parse_for(self) -> None:
        tok = self.expect("for")
        self.expect("(")
        self._locals.append({})
        if self.peek().value != ";":
            if self.at_type():
                base = self.parse_base_type()
                name, t, name_tok = self.parse_declarator(base)
                self.finish_var_decl(name, t, name_tok, scope=ScopeClass.LOCAL, base=base)
            else:
                self.walk_expression(self.parse_expression())
                self.expect(";")
        else:
            self.next()
        if self.peek().value == ";":
            raise UnsupportedConstruct(tok.line, "for loop without a controlling expression")
        cond = self.parse_expression()
        self.walk_expression(cond)
        guard = GuardAnnotation(_render(cond), self.guard_refs(cond))
        self.expect(";")
        post = None
        if self.peek().value != ")":
            post = self.parse_expression()
        self.expect(")")
        self._guards.append(guard)
        self.parse_statement()
        if post is not None:
            self.walk_expression(post)
        self._guards.pop()
        self._locals.pop()

    def parse_switch(self) -> None:
        self.expect("switch")
        guard = self._parse_guard_condition()
        self._guards.append(guard)
        self._locals.append({})
        self.expect("{")
        self.parse_block_body()
        self._locals.pop()
        self._guards.pop()

    # -- expressions -------------------------------------------------------------

    _BINARY_LEVELS = [
        ["||"],
        ["&&"],
        ["|"],
        ["^"],
        ["&"],
        ["==", "!="],
        ["<", ">", "<=", ">="],
        ["<<", ">>"],
        ["+", "-"],
        ["*", "/", "%"],
    ]

    def parse_expression(self) -> object:
        return self.parse_assignment()

    def parse_assignment(self) -> object:
        left = self.parse_binary(0)
        tok = self.peek()
        if tok.value in ("=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^="):
            self.next()
            right = self.parse_assignment()
            return _Assign(tok.value, left, right)
        if tok.value == "?":
            raise UnsupportedConstruct(tok.line, "conditional expression")
        return left

    def parse_binary(self, level: int) -> object:
        if level >= len(self._BINARY_LEVELS):
            return self.parse_unary()
        left = self.parse_binary(level + 1)
        while self.peek().value in self._BINARY_LEVELS[level]:
            op = self.next().value
            right = self.parse_binary(level + 1)
            left = _Binary(op, left, right)
        return left

    def parse_unary(self) -> object:
        tok = self.peek()
        if tok.value in ("&", "*", "!", "-", "+", "~", "++", "--"):
            self.next()
            return _Unary(tok.value, self.parse_unary())
        if tok.value == "sizeof":
            raise UnsupportedConstruct(tok.line, "sizeof")
        if tok.value == "(" and self.at_type(1):
            self.next()
            base = self.parse_base_type()
            t = self.parse_pointers(base)
            self.expect(")")
            return _Cast(format_type(t), self.parse_unary())
        return self.parse_postfix()

    def parse_postfix(self) -> object:
        expr = self.parse_primary()
        while True:
            tok = self.peek()
            if tok.value == "(":
                self.next()
                args = []
                if self.peek().value != ")":
                    while True:
                        args.append(self.parse_assignment())
                        if self.peek().value == ",":
                            self.next()
                            continue
                        break
                self.expect(")")
                expr = _Call(expr, tuple(args), tok.line, tok.col)
            elif tok.value == "[":
                self.next()
                index = self.parse_expression()
                self.expect("]")
                expr = _Index(expr, index)
            elif tok.value in (".", "->"):
                self.next()
                fieldname = self.expect_ident().value
                expr = _Member(expr, tok.value, fieldname)
            elif tok.value in ("++", "--"):
                self.next()
                expr = _Postfix(tok.value, expr)
            else:
                return expr

    def parse_primary(self) -> object:
        tok = self.next()
        if tok.kind == "ident" and tok.value not in _KEYWORDS:
            return _Name(tok.value, tok.line, tok.col)
        if tok.kind in ("num", "str", "char"):
            return _Lit(tok.value)
        if tok.value == "(":
            expr = self.parse_expression()
            self.expect(")")
            return expr
        raise ParseError(tok.line, tok.col, f"expected an expression, got {tok.value or 'end of file'!r}")

    # -- semantic walks ------------------------------------------------------------

    def lookup_var(self, name: str) -> _Var | None:
        for block in reversed(self._locals):
            if name in block:
                return block[name]
        return self.globals.get(name)

    def walk_expression(self, e: object) -> None:
        """Record calls and address-taken occurrences in one statement's tree."""
        if isinstance(e, _Call):
            self.record_call(e)
            for arg in e.args:
                self.walk_expression(arg)
            return
        if isinstance(e, _Name):
            if self.lookup_var(e.ident) is None:
                # could be a function designator decaying to a pointer
                self.taken_names.add(e.ident)
            return
        if isinstance(e, _Unary):
            self.walk_expression(e.operand)
            return
        if isinstance(e, _Postfix):
            self.walk_expression(e.operand)
            return
        if isinstance(e, _Binary):
            self.walk_expression(e.left)
            self.walk_expression(e.right)
            return
        if isinstance(e, _Assign):
            self.walk_expression(e.target)
            self.walk_expression(e.value)
            if isinstance(e.target, _Name):
                var = self.lookup_var(e.target.ident)
                if (
                    var is not None
                    and var.scope is ScopeClass.LOCAL
                    and isinstance(var.raw_type, PointerType)
                    and _is_allocation(e.value)
                ):
                    var.scope = ScopeClass.HEAP
            return
        if isinstance(e, _Member):
            self.walk_expression(e.base)
            return
        if isinstance(e, _Index):
            self.walk_expression(e.base)
            self.walk_expression(e.index)
            return
        if isinstance(e, _Cast):
            self.walk_expression(e.operand)
            return
        # literals carry nothing

    def record_call(self, call: _Call) -> None:
        if self._fn is None:
            raise ParseError(call.line, call.col, "call outside a function body")
        callee = call.callee
        if isinstance(callee, _Unary) and callee.op == "*" and isinstance(callee.operand, _Name):
            callee = callee.operand  # (*fp)(...) calls through fp
        if not isinstance(callee, _Name):
            raise UnsupportedConstruct(call.line, f"call through expression {_render(call.callee)!r}")
        var = self.lookup_var(callee.ident)
        guards = tuple(self._guards)
        if var is None:
            self._fn.calls.append(
                _CallEvent("direct", callee.ident, None, guards, call.line, call.col)
            )
            return
        fp_sig = _pointer_signature(var.raw_type, self.typedefs)
        if fp_sig is None:
            raise UnsupportedConstruct(
                call.line, f"call through {callee.ident!r}, which is not a function pointer"
            )
        self._fn.calls.append(
            _CallEvent("indirect", callee.ident, fp_sig, guards, call.line, call.col)
        )

    def guard_refs(self, e: object) -> tuple[GuardRef, ...]:
        names: list[_Name] = []
        self._collect_guard_names(e, names)
        refs: list[GuardRef] = []
        seen: set[str] = set()
        for name in names:
            if name.ident in seen:
                continue
            seen.add(name.ident)
            var = self.lookup_var(name.ident)
            if var is not None:
                refs.append(GuardRef(name.ident, var.scope))
            elif any(f.name == name.ident for f in self.functions):
                # function designators live in (read-only) global storage
                refs.append(GuardRef(name.ident, ScopeClass.GLOBAL))
            else:
                refs.append(GuardRef(name.ident, ScopeClass.GLOBAL, declared=False))
        return tuple(refs)

    def _collect_guard_names(self, e: object, out: list[_Name]) -> None:
        if isinstance(e, _Name):
            out.append(e)
        elif isinstance(e, _Call):
            # A direct callee is code, not overwritable data, so it is not a
            # referenced identifier; a pointer-variable callee is data.
            if not isinstance(e.callee, _Name) or self.lookup_var(e.callee.ident) is not None:
                self._collect_guard_names(e.callee, out)
            for arg in e.args:
                self._collect_guard_names(arg, out)
        elif isinstance(e, _Unary):
            self._collect_guard_names(e.operand, out)
        elif isinstance(e, _Postfix):
            self._collect_guard_names(e.operand, out)
        elif isinstance(e, _Binary):
            self._collect_guard_names(e.left, out)
            self._collect_guard_names(e.right, out)
        elif isinstance(e, _Assign):
            self._collect_guard_names(e.target, out)
            self._collect_guard_names(e.value, out)
        elif isinstance(e, _Member):
            self._collect_guard_names(e.base, out)
        elif isinstance(e, _Index):
            self._collect_guard_names(e.base, out)
            self._collect_guard_names(e.index, out)
        elif isinstance(e, _Cast):
            self._collect_guard_names(e.operand, out)


def _is_allocation(e: object) -> bool:
    if isinstance(e, _Cast):
        return _is_allocation(e.operand)
    return isinstance(e, _Call) and isinstance(e.callee, _Name) and e.callee.ident in ALLOCATORS


def _is_function_pointer_shape(t: RawType) -> bool:
    while isinstance(t, PointerType):
        t = t.inner
    return isinstance(t, FunctionType)


def _pointer_signature(t: RawType, typedefs: dict[str, RawType]) -> RawSignature | None:
    """The function signature behind a function-pointer type, if it is one."""
    try:
        resolved = resolve_type(t, typedefs)
    except Exception:
        return None
    if isinstance(resolved, PointerType) and isinstance(resolved.inner, FunctionType):
        return resolved.inner.signature
    return None


# ---------------------------------------------------------------------------
# Public entry points


def parse_unit(source: str, unit: str, sink_config: Sequence[str] = DEFAULT_SINKS) -> FactsDB:
    """Extract one source unit into a facts database fragment."""
    parser = _Parser(source, unit, sink_config)
    parser.parse_unit()

    key_of = {
        f.name: (f"{unit}::{f.name}" if f.is_static else f.name) for f in parser.functions
    }

    functions = []
    sites = []
    edges = []
    for info in parser.functions:
        key = key_of[info.name]
        sink_hits: set[str] = set()
        for ev in info.calls:
            if ev.kind == "direct":
                callee_key = key_of.get(ev.callee, ev.callee)
                if ev.callee in parser.sinks:
                    sink_hits.add(ev.callee)
                edges.append(DirectCallEdge(key, callee_key, ev.guards))
            else:
                assert ev.fp_signature is not None
                sites.append(
                    IndirectCallSite(
                        id=f"{unit}:{ev.line}:{ev.col}",
                        enclosing_function=key,
                        fp_signature=ev.fp_signature,
                        location=f"{unit}:{ev.line}",
                        guards=ev.guards,
                    )
                )
        functions.append(
            FunctionDecl(
                name=info.name,
                unit=unit,
                signature=info.signature,
                is_static=info.is_static,
                is_address_taken=info.name in parser.taken_names,
                is_definition=info.is_definition,
                calls_sinks=tuple(sorted(sink_hits)),
                location=f"{unit}:{info.line}",
            )
        )

    return FactsDB.create(
        functions=functions,
        call_sites=sites,
        direct_edges=edges,
        typedefs=parser.typedefs,
        sink_config=sink_config,
    )


def extract_corpus(paths: Iterable[str], sink_config: Sequence[str] = DEFAULT_SINKS) -> FactsDB:
    """Extract and merge several source files; file order does not matter.

    The unit identifier of each fragment is the path exactly as given, so
    callers control key stability across runs.
    """
    fragments = []
    for path in paths:
        with open(path, "r", encoding="utf-8") as handle:
            source = handle.read()
        try:
            fragments.append(parse_unit(source, unit=path, sink_config=sink_config))
        except (ParseError, UnsupportedConstruct) as exc:
            raise type(exc)(*_with_file(exc, path)) from None
    merged = FactsDB.create(sink_config=sink_config)
    for fragment in sorted(fragments, key=lambda db: db.units):
        merged = merge_facts(merged, fragment)
    return merged


def _with_file(exc: ParseError | UnsupportedConstruct, path: str):
    if isinstance(exc, ParseError):
        return (exc.line, exc.col, f"{path}: {exc.message}")
    return (exc.line, f"{path}: {exc.description}")
