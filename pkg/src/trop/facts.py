"""The facts database: everything the analyses know about one codebase.

A facts file is JSON (``schema_version: 1``); ``docs/facts-schema.md`` is the
authoritative field list.  Databases are immutable after construction and are
stored in canonical order, so ``load_facts(save_facts(db)) == db`` and every
derived report is byte-stable.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, replace
from enum import Enum
from functools import cached_property
from typing import IO, Any, Iterable, Mapping

from .errors import (
    ERROR,
    WARNING,
    CyclicTypedef,
    Diagnostic,
    ReferentialIntegrity,
    SchemaViolation,
    TypeSyntaxError,
    UnitCollision,
    UnresolvedTypedef,
)
from .signatures import (
    RawSignature,
    RawType,
    canonicalize,
    format_type,
    parse_type_string,
    resolve_type,
)

__all__ = [
    "ScopeClass",
    "GuardRef",
    "GuardAnnotation",
    "FunctionDecl",
    "IndirectCallSite",
    "DirectCallEdge",
    "GroundTruthLabels",
    "FactsDB",
    "DEFAULT_SINKS",
    "SCHEMA_VERSION",
    "hash_eligible",
    "load_facts",
    "loads_facts",
    "save_facts",
    "dumps_facts",
    "merge_facts",
    "validate_facts",
    "load_labels",
    "with_sink_config",
    "external_name",
]

SCHEMA_VERSION = 1

#: Shell-spawning functions treated as sensitive by default.
DEFAULT_SINKS = ("execl", "execle", "execlp", "execv", "execve", "execvp", "system")


class ScopeClass(Enum):
    GLOBAL = "global"
    HEAP = "heap"
    LOCAL = "local"
    PARAM = "param"


@dataclass(frozen=True)
class GuardRef:
    """One identifier a guard expression reads, with its storage class.

    ``declared`` is False when the identifier had no visible declaration and
    the conservative default (global) was applied.
    """

    identifier: str
    scope: ScopeClass
    declared: bool = True


@dataclass(frozen=True)
class GuardAnnotation:
    """A conditional that lexically dominates a call; expression text is opaque."""

    expression: str
    referenced: tuple[GuardRef, ...] = ()


@dataclass(frozen=True)
class FunctionDecl:
    name: str
    unit: str
    signature: RawSignature
    is_static: bool = False
    is_address_taken: bool = False
    is_definition: bool = True
    calls_sinks: tuple[str, ...] = ()
    location: str = ""

    @property
    def key(self) -> str:
        """Graph key: static functions stay unit-qualified, others link by name."""
        return f"{self.unit}::{self.name}" if self.is_static else self.name


@dataclass(frozen=True)
class IndirectCallSite:
    id: str
    enclosing_function: str  # function key
    fp_signature: RawSignature
    location: str = ""
    guards: tuple[GuardAnnotation, ...] = ()


@dataclass(frozen=True)
class DirectCallEdge:
    caller: str  # function key
    callee: str  # function key, or bare external name
    guards: tuple[GuardAnnotation, ...] = ()


@dataclass(frozen=True)
class GroundTruthLabels:
    """Manually judged legitimate (call-site id, function key) pairs."""

    valid_pairs: frozenset[tuple[str, str]]


def external_name(callee_key: str) -> str:
    """The terminal name of a callee key (strips any unit qualifier)."""
    return callee_key.rsplit("::", 1)[-1]


@dataclass(frozen=True)
class FactsDB:
    functions: tuple[FunctionDecl, ...] = ()
    call_sites: tuple[IndirectCallSite, ...] = ()
    direct_edges: tuple[DirectCallEdge, ...] = ()
    typedefs: tuple[tuple[str, RawType], ...] = ()
    labels: GroundTruthLabels | None = None
    sink_config: tuple[str, ...] = DEFAULT_SINKS

    @classmethod
    def create(
        cls,
        functions: Iterable[FunctionDecl] = (),
        call_sites: Iterable[IndirectCallSite] = (),
        direct_edges: Iterable[DirectCallEdge] = (),
        typedefs: Mapping[str, RawType] | Iterable[tuple[str, RawType]] = (),
        labels: GroundTruthLabels | None = None,
        sink_config: Iterable[str] = DEFAULT_SINKS,
    ) -> "FactsDB":
        """Build a database in canonical order with exact duplicates removed."""
        if isinstance(typedefs, Mapping):
            typedefs = typedefs.items()
        return cls(
            functions=tuple(sorted(set(functions), key=lambda f: (f.key, f.unit, not f.is_definition))),
            call_sites=tuple(sorted(set(call_sites), key=lambda s: s.id)),
            direct_edges=tuple(sorted(set(direct_edges), key=_edge_sort_key)),
            typedefs=tuple(sorted(set(typedefs), key=lambda kv: kv[0])),
            labels=labels,
            sink_config=tuple(sorted(set(sink_config))),
        )

    # -- lookups ----------------------------------------------------------

    @cached_property
    def typedef_map(self) -> dict[str, RawType]:
        return dict(self.typedefs)

    @cached_property
    def _by_key(self) -> dict[str, tuple[FunctionDecl, ...]]:
        index: dict[str, list[FunctionDecl]] = {}
        for fn in self.functions:
            index.setdefault(fn.key, []).append(fn)
        return {k: tuple(v) for k, v in index.items()}

    @cached_property
    def _sites_by_id(self) -> dict[str, IndirectCallSite]:
        return {s.id: s for s in self.call_sites}

    def function_entries(self, key: str) -> tuple[FunctionDecl, ...]:
        return self._by_key.get(key, ())

    def resolve_function(self, key: str) -> FunctionDecl | None:
        """The definition for a key if one exists, otherwise any declaration."""
        entries = self.function_entries(key)
        for fn in entries:
            if fn.is_definition:
                return fn
        return entries[0] if entries else None

    def is_address_taken(self, key: str) -> bool:
        """True if any unit in this database takes the function's address."""
        return any(fn.is_address_taken for fn in self.function_entries(key))

    def site(self, site_id: str) -> IndirectCallSite | None:
        return self._sites_by_id.get(site_id)

    @cached_property
    def definitions(self) -> tuple[FunctionDecl, ...]:
        return tuple(fn for fn in self.functions if fn.is_definition)

    @cached_property
    def units(self) -> tuple[str, ...]:
        return tuple(sorted({fn.unit for fn in self.functions}))


def _edge_sort_key(e: DirectCallEdge):
    return (e.caller, e.callee, tuple(g.expression for g in e.guards))


def hash_eligible(fn: FunctionDecl, db: FactsDB) -> bool:
    """Whether the instrumentation emits a type hash for this function.

    Non-static functions always get one; a static function only when its
    address is taken inside its own unit (our observable proxy for "callable
    indirectly"), since nothing else can reach it through a pointer.
    """
    del db  # eligibility is decidable from the declaration itself
    if not fn.is_static:
        return True
    return fn.is_address_taken


# ---------------------------------------------------------------------------
# JSON schema


def _signature_to_json(sig: RawSignature) -> dict[str, Any]:
    out: dict[str, Any] = {
        "return": format_type(sig.return_type),
        "params": [format_type(p) for p in sig.params],
    }
    if sig.variadic:
        out["variadic"] = True
    return out


def _guard_to_json(guard: GuardAnnotation) -> dict[str, Any]:
    refs = []
    for ref in guard.referenced:
        item: dict[str, Any] = {"identifier": ref.identifier, "scope": ref.scope.value}
        if not ref.declared:
            item["declared"] = False
        refs.append(item)
    return {"expression": guard.expression, "referenced": refs}


def facts_to_json_dict(db: FactsDB) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "sinks": list(db.sink_config),
        "typedefs": {name: format_type(t) for name, t in db.typedefs},
        "functions": [
            {
                "name": fn.name,
                "unit": fn.unit,
                "signature": _signature_to_json(fn.signature),
                "static": fn.is_static,
                "address_taken": fn.is_address_taken,
                "definition": fn.is_definition,
                "calls_sinks": list(fn.calls_sinks),
                "location": fn.location,
            }
            for fn in db.functions
        ],
        "call_sites": [
            {
                "id": s.id,
                "function": s.enclosing_function,
                "signature": _signature_to_json(s.fp_signature),
                "location": s.location,
                "guards": [_guard_to_json(g) for g in s.guards],
            }
            for s in db.call_sites
        ],
        "direct_edges": [
            {
                "caller": e.caller,
                "callee": e.callee,
                "guards": [_guard_to_json(g) for g in e.guards],
            }
            for e in db.direct_edges
        ],
    }
    if db.labels is not None:
        doc["labels"] = {"valid_pairs": sorted(list(p) for p in db.labels.valid_pairs)}
    return doc


def dumps_facts(db: FactsDB) -> str:
    return json.dumps(facts_to_json_dict(db), indent=2, sort_keys=True) + "\n"


def save_facts(db: FactsDB, out: IO[str] | str) -> None:
    text = dumps_facts(db)
    if isinstance(out, str):
        with open(out, "w", encoding="utf-8") as handle:
            handle.write(text)
    else:
        out.write(text)


class _Reader:
    """Schema-checked access into a parsed JSON document."""

    def __init__(self, doc: Any):
        self.doc = doc

    @staticmethod
    def fail(path: str, reason: str) -> None:
        raise SchemaViolation(path, reason)

    @staticmethod
    def get(obj: Any, path: str, key: str, kind: type, default: Any = ...) -> Any:
        if not isinstance(obj, dict):
            _Reader.fail(path, "expected an object")
        if key not in obj:
            if default is ...:
                _Reader.fail(path, f"missing required field {key!r}")
            return default
        value = obj[key]
        if kind is float and isinstance(value, int):
            value = float(value)
        if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
            _Reader.fail(f"{path}.{key}", f"expected {kind.__name__}")
        return value


def _parse_type_at(text: Any, path: str) -> RawType:
    if not isinstance(text, str):
        _Reader.fail(path, "expected a type string")
    try:
        return parse_type_string(text)
    except TypeSyntaxError as exc:
        raise SchemaViolation(path, str(exc)) from exc


def _signature_from_json(obj: Any, path: str) -> RawSignature:
    ret = _parse_type_at(_Reader.get(obj, path, "return", str), f"{path}.return")
    raw_params = _Reader.get(obj, path, "params", list)
    params = tuple(
        _parse_type_at(p, f"{path}.params[{i}]") for i, p in enumerate(raw_params)
    )
    variadic = _Reader.get(obj, path, "variadic", bool, False)
    return RawSignature(ret, params, variadic)


def _guards_from_json(obj: Any, path: str) -> tuple[GuardAnnotation, ...]:
    guards = []
    for i, g in enumerate(_Reader.get(obj, path, "guards", list, [])):
        gpath = f"{path}.guards[{i}]"
        expression = _Reader.get(g, gpath, "expression", str)
        refs = []
        for j, r in enumerate(_Reader.get(g, gpath, "referenced", list, [])):
            rpath = f"{gpath}.referenced[{j}]"
            ident = _Reader.get(r, rpath, "identifier", str)
            scope_text = _Reader.get(r, rpath, "scope", str, "global")
            declared = _Reader.get(r, rpath, "declared", bool, True)
            if scope_text == "unknown":
                scope_text, declared = "global", False
            try:
                scope = ScopeClass(scope_text)
            except ValueError:
                _Reader.fail(f"{rpath}.scope", f"unknown scope class {scope_text!r}")
            refs.append(GuardRef(ident, scope, declared))
        guards.append(GuardAnnotation(expression, tuple(refs)))
    return tuple(guards)


def loads_facts(text: str) -> FactsDB:
    return load_facts(io.StringIO(text))


def load_facts(source: IO[str] | IO[bytes] | str) -> FactsDB:
    """Load and validate a facts file; raises on any error-level finding."""
    if isinstance(source, str):
        with open(source, "r", encoding="utf-8") as handle:
            return load_facts(handle)
    try:
        doc = json.load(source)
    except json.JSONDecodeError as exc:
        raise SchemaViolation("$", f"not valid JSON: {exc}") from exc

    version = _Reader.get(doc, "$", "schema_version", int)
    if version != SCHEMA_VERSION:
        _Reader.fail("$.schema_version", f"unsupported version {version}")

    typedefs = {}
    for name, text in _Reader.get(doc, "$", "typedefs", dict, {}).items():
        typedefs[name] = _parse_type_at(text, f"$.typedefs.{name}")

    functions = []
    for i, f in enumerate(_Reader.get(doc, "$", "functions", list, [])):
        path = f"$.functions[{i}]"
        functions.append(
            FunctionDecl(
                name=_Reader.get(f, path, "name", str),
                unit=_Reader.get(f, path, "unit", str),
                signature=_signature_from_json(
                    _Reader.get(f, path, "signature", dict), f"{path}.signature"
                ),
                is_static=_Reader.get(f, path, "static", bool, False),
                is_address_taken=_Reader.get(f, path, "address_taken", bool, False),
                is_definition=_Reader.get(f, path, "definition", bool, True),
                calls_sinks=tuple(sorted(_Reader.get(f, path, "calls_sinks", list, []))),
                location=_Reader.get(f, path, "location", str, ""),
            )
        )

    call_sites = []
    for i, s in enumerate(_Reader.get(doc, "$", "call_sites", list, [])):
        path = f"$.call_sites[{i}]"
        call_sites.append(
            IndirectCallSite(
                id=_Reader.get(s, path, "id", str),
                enclosing_function=_Reader.get(s, path, "function", str),
                fp_signature=_signature_from_json(
                    _Reader.get(s, path, "signature", dict), f"{path}.signature"
                ),
                location=_Reader.get(s, path, "location", str, ""),
                guards=_guards_from_json(s, path),
            )
        )

    direct_edges = []
    for i, e in enumerate(_Reader.get(doc, "$", "direct_edges", list, [])):
        path = f"$.direct_edges[{i}]"
        direct_edges.append(
            DirectCallEdge(
                caller=_Reader.get(e, path, "caller", str),
                callee=_Reader.get(e, path, "callee", str),
                guards=_guards_from_json(e, path),
            )
        )

    labels = None
    if "labels" in doc and doc["labels"] is not None:
        lab = doc["labels"]
        pairs = set()
        for i, pair in enumerate(_Reader.get(lab, "$.labels", "valid_pairs", list, [])):
            path = f"$.labels.valid_pairs[{i}]"
            if (
                not isinstance(pair, list)
                or len(pair) != 2
                or not all(isinstance(x, str) for x in pair)
            ):
                _Reader.fail(path, "expected a [site_id, function_key] pair")
            pairs.add((pair[0], pair[1]))
        labels = GroundTruthLabels(frozenset(pairs))

    db = FactsDB.create(
        functions=functions,
        call_sites=call_sites,
        direct_edges=direct_edges,
        typedefs=typedefs,
        labels=labels,
        sink_config=_Reader.get(doc, "$", "sinks", list, list(DEFAULT_SINKS)),
    )
    _raise_on_errors(validate_facts(db))
    return db


def load_labels(source: IO[str] | str) -> GroundTruthLabels:
    """Load a sidecar labels file: a JSON list of [site_id, function_key] pairs."""
    if isinstance(source, str):
        with open(source, "r", encoding="utf-8") as handle:
            return load_labels(handle)
    try:
        doc = json.load(source)
    except json.JSONDecodeError as exc:
        raise SchemaViolation("$", f"not valid JSON: {exc}") from exc
    if not isinstance(doc, list):
        _Reader.fail("$", "expected a list of [site_id, function_key] pairs")
    pairs = set()
    for i, pair in enumerate(doc):
        if (
            not isinstance(pair, list)
            or len(pair) != 2
            or not all(isinstance(x, str) for x in pair)
        ):
            _Reader.fail(f"$[{i}]", "expected a [site_id, function_key] pair")
        pairs.add((pair[0], pair[1]))
    return GroundTruthLabels(frozenset(pairs))


def _quoted(diag: Diagnostic) -> str:
    return diag.message.split("'")[1] if "'" in diag.message else diag.path


def _raise_on_errors(diagnostics: list[Diagnostic]) -> None:
    for diag in diagnostics:
        if diag.severity != ERROR:
            continue
        if diag.code == "CyclicTypedef":
            raise CyclicTypedef(_quoted(diag))
        if diag.code == "UnresolvedTypedef":
            raise UnresolvedTypedef(_quoted(diag))
        if diag.code == "ReferentialIntegrity":
            raise ReferentialIntegrity(_quoted(diag), diag.path)
        raise SchemaViolation(diag.path, diag.message)


# ---------------------------------------------------------------------------
# Validation


def validate_facts(db: FactsDB) -> list[Diagnostic]:
    """Check every database invariant; empty list means the database is sound."""
    out: list[Diagnostic] = []
    typedefs = db.typedef_map

    for name in sorted(typedefs):
        try:
            resolve_type(typedefs[name], typedefs)
        except CyclicTypedef as exc:
            out.append(
                Diagnostic("CyclicTypedef", ERROR, f"$.typedefs.{name}", f"cycle through '{exc.name}'")
            )
        except UnresolvedTypedef as exc:
            out.append(
                Diagnostic(
                    "UnresolvedTypedef", ERROR, f"$.typedefs.{name}", f"unresolved typedef '{exc.name}'"
                )
            )

    def check_signature(sig: RawSignature, path: str) -> None:
        try:
            canonicalize(sig, typedefs)
        except CyclicTypedef as exc:
            out.append(Diagnostic("CyclicTypedef", ERROR, path, f"cycle through '{exc.name}'"))
        except UnresolvedTypedef as exc:
            out.append(Diagnostic("UnresolvedTypedef", ERROR, path, f"unresolved typedef '{exc.name}'"))

    seen_static: set[tuple[str, str]] = set()
    seen_nonstatic_defs: set[str] = set()
    for i, fn in enumerate(db.functions):
        path = f"$.functions[{i}]"
        check_signature(fn.signature, f"{path}.signature")
        if fn.is_static:
            if (fn.name, fn.unit) in seen_static:
                out.append(
                    Diagnostic(
                        "DuplicateFunction", ERROR, path, f"static '{fn.name}' declared twice in unit '{fn.unit}'"
                    )
                )
            seen_static.add((fn.name, fn.unit))
        elif fn.is_definition:
            if fn.name in seen_nonstatic_defs:
                out.append(
                    Diagnostic("DuplicateFunction", ERROR, path, f"non-static '{fn.name}' defined twice")
                )
            seen_nonstatic_defs.add(fn.name)

    seen_sites: set[str] = set()
    for i, site in enumerate(db.call_sites):
        path = f"$.call_sites[{i}]"
        if site.id in seen_sites:
            out.append(Diagnostic("DuplicateSite", ERROR, path, f"duplicate site id '{site.id}'"))
        seen_sites.add(site.id)
        check_signature(site.fp_signature, f"{path}.signature")
        if not db.function_entries(site.enclosing_function):
            out.append(
                Diagnostic(
                    "ReferentialIntegrity",
                    ERROR,
                    f"{path}.function",
                    f"call site references missing function '{site.enclosing_function}'",
                )
            )
        out.extend(_check_guards(site.guards, path))

    for i, edge in enumerate(db.direct_edges):
        path = f"$.direct_edges[{i}]"
        if not db.function_entries(edge.caller):
            out.append(
                Diagnostic(
                    "ReferentialIntegrity",
                    ERROR,
                    f"{path}.caller",
                    f"edge caller references missing function '{edge.caller}'",
                )
            )
        # callee may legitimately be external (declared nowhere)
        out.extend(_check_guards(edge.guards, path))

    if db.labels is not None:
        for site_id, key in sorted(db.labels.valid_pairs):
            if db.site(site_id) is None:
                out.append(
                    Diagnostic(
                        "ReferentialIntegrity",
                        ERROR,
                        "$.labels",
                        f"label references missing call site '{site_id}'",
                    )
                )
            if not db.function_entries(key):
                out.append(
                    Diagnostic(
                        "ReferentialIntegrity",
                        ERROR,
                        "$.labels",
                        f"label references missing function '{key}'",
                    )
                )
    return out


def _check_guards(guards: tuple[GuardAnnotation, ...], path: str) -> list[Diagnostic]:
    out = []
    for i, guard in enumerate(guards):
        for ref in guard.referenced:
            if not ref.declared:
                out.append(
                    Diagnostic(
                        "UnknownIdentifier",
                        WARNING,
                        f"{path}.guards[{i}]",
                        f"guard references undeclared identifier '{ref.identifier}'; classified global",
                    )
                )
    return out


# ---------------------------------------------------------------------------
# Merging


def merge_facts(app: FactsDB, lib: FactsDB) -> FactsDB:
    """Union two databases, modelling the application linked with a library.

    Unit identifiers must be disjoint.  Static functions stay unit-qualified;
    labels and sink lists are unioned; the result is validated.
    """
    shared = set(app.units) & set(lib.units)
    if shared:
        raise UnitCollision(sorted(shared)[0])

    app_typedefs = app.typedef_map
    for name, t in lib.typedefs:
        existing = app_typedefs.get(name)
        if existing is not None and existing != t:
            raise SchemaViolation(
                f"$.typedefs.{name}",
                f"conflicting definitions across merge: {format_type(existing)!r} vs {format_type(t)!r}",
            )

    labels: GroundTruthLabels | None
    if app.labels is None and lib.labels is None:
        labels = None
    else:
        pairs: frozenset[tuple[str, str]] = frozenset()
        if app.labels is not None:
            pairs |= app.labels.valid_pairs
        if lib.labels is not None:
            pairs |= lib.labels.valid_pairs
        labels = GroundTruthLabels(pairs)

    merged = FactsDB.create(
        functions=app.functions + lib.functions,
        call_sites=app.call_sites + lib.call_sites,
        direct_edges=app.direct_edges + lib.direct_edges,
        typedefs={**dict(lib.typedefs), **app_typedefs},
        labels=labels,
        sink_config=app.sink_config + lib.sink_config,
    )
    _raise_on_errors(validate_facts(merged))
    return merged


def with_sink_config(db: FactsDB, sinks: Iterable[str]) -> FactsDB:
    """Re-derive ``calls_sinks`` for a new sensitive-function list.

    A function calls a sink if any of its direct callees' terminal names is in
    the new list, or if a previously recorded sink is still listed.
    """
    sink_set = set(sinks)
    callees: dict[str, set[str]] = {}
    for edge in db.direct_edges:
        callees.setdefault(edge.caller, set()).add(external_name(edge.callee))
    functions = []
    for fn in db.functions:
        hits = {s for s in fn.calls_sinks if s in sink_set}
        hits |= callees.get(fn.key, set()) & sink_set
        functions.append(replace(fn, calls_sinks=tuple(sorted(hits))))
    return FactsDB.create(
        functions=functions,
        call_sites=db.call_sites,
        direct_edges=db.direct_edges,
        typedefs=db.typedefs,
        labels=db.labels,
        sink_config=sink_set,
    )
