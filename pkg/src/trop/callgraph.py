"""Call graph over a facts database: direct calls plus type-permitted transfers.

An indirect edge (site, target) exists exactly when the target is a defined,
hash-eligible function whose canonical signature matches the site's pointer
signature under the chosen mode.  Construction is deterministic: node and
edge orders are canonical, so serialized graphs are byte-stable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable

from .facts import DirectCallEdge, FactsDB, GuardAnnotation, IndirectCallSite, hash_eligible
from .signatures import CanonicalSignature, MatchMode, canonicalize, serialize

__all__ = [
    "IndirectEdge",
    "CallGraph",
    "AdjacencyView",
    "build_graph",
    "permitted_targets",
    "adjacency",
    "graph_to_json_dict",
    "graph_to_dot",
]


@dataclass(frozen=True)
class IndirectEdge:
    site_id: str
    caller: str
    target: str
    guards: tuple[GuardAnnotation, ...] = ()


@dataclass(frozen=True)
class CallGraph:
    nodes: tuple[str, ...]
    direct_edges: tuple[DirectCallEdge, ...]
    indirect_edges: tuple[IndirectEdge, ...]
    mode: MatchMode

    @cached_property
    def collapsed(self) -> dict[str, tuple[str, ...]]:
        """Successor lists over the union of direct and indirect edges."""
        succ: dict[str, set[str]] = {node: set() for node in self.nodes}
        for edge in self.direct_edges:
            succ[edge.caller].add(edge.callee)
        for edge in self.indirect_edges:
            succ[edge.caller].add(edge.target)
        return {node: tuple(sorted(targets)) for node, targets in succ.items()}

    @cached_property
    def collapsed_pairs(self) -> frozenset[tuple[str, str]]:
        return frozenset(
            (caller, callee) for caller, callees in self.collapsed.items() for callee in callees
        )

    def has_edge(self, caller: str, callee: str) -> bool:
        return (caller, callee) in self.collapsed_pairs

    @cached_property
    def indirect_pairs(self) -> frozenset[tuple[str, str]]:
        """(site_id, target) for every permitted indirect transfer."""
        return frozenset((e.site_id, e.target) for e in self.indirect_edges)


@dataclass(frozen=True)
class AdjacencyView:
    """Boolean matrix over a sorted node ordering; multi-edges collapsed."""

    nodes: tuple[str, ...]
    matrix: tuple[tuple[int, ...], ...]

    @cached_property
    def index(self) -> dict[str, int]:
        return {node: i for i, node in enumerate(self.nodes)}

    def successors(self, node: str) -> tuple[str, ...]:
        row = self.matrix[self.index[node]]
        return tuple(self.nodes[j] for j, bit in enumerate(row) if bit)

    @property
    def edge_count(self) -> int:
        return sum(sum(row) for row in self.matrix)


def _canonical_cache(db: FactsDB, mode: MatchMode) -> dict[int, CanonicalSignature]:
    cache: dict[int, CanonicalSignature] = {}
    typedefs = db.typedef_map
    for fn in db.definitions:
        cache[id(fn)] = canonicalize(fn.signature, typedefs, mode)
    return cache


def permitted_targets(site: IndirectCallSite, db: FactsDB, mode: MatchMode) -> frozenset[str]:
    """Function keys the type check would let this site transfer to.

    Targets are definitions only: a declaration carries no code to reach, and
    external callees with unknown bodies never receive indirect edges.
    """
    typedefs = db.typedef_map
    want = serialize(canonicalize(site.fp_signature, typedefs, mode))
    out = set()
    for fn in db.definitions:
        if not hash_eligible(fn, db):
            continue
        if serialize(canonicalize(fn.signature, typedefs, mode)) == want:
            out.add(fn.key)
    return frozenset(out)


def build_graph(db: FactsDB, mode: MatchMode = MatchMode.strict()) -> CallGraph:
    """Construct the combined direct + type-permitted-indirect call graph."""
    typedefs = db.typedef_map
    canon = _canonical_cache(db, mode)
    by_serial: dict[str, list[str]] = {}
    for fn in db.definitions:
        if hash_eligible(fn, db):
            by_serial.setdefault(serialize(canon[id(fn)]), []).append(fn.key)

    indirect = []
    for site in db.call_sites:
        want = serialize(canonicalize(site.fp_signature, typedefs, mode))
        for target in sorted(by_serial.get(want, ())):
            indirect.append(IndirectEdge(site.id, site.enclosing_function, target, site.guards))

    nodes = {fn.key for fn in db.definitions}
    nodes.update(edge.callee for edge in db.direct_edges)
    nodes.update(edge.caller for edge in db.direct_edges)
    nodes.update(site.enclosing_function for site in db.call_sites)
    nodes.update(edge.target for edge in indirect)

    return CallGraph(
        nodes=tuple(sorted(nodes)),
        direct_edges=db.direct_edges,
        indirect_edges=tuple(sorted(indirect, key=lambda e: (e.site_id, e.target))),
        mode=mode,
    )


def adjacency(graph: CallGraph) -> AdjacencyView:
    """The collapsed boolean adjacency matrix the path search runs on."""
    nodes = graph.nodes
    index = {node: i for i, node in enumerate(nodes)}
    rows = [[0] * len(nodes) for _ in nodes]
    for caller, callee in graph.collapsed_pairs:
        rows[index[caller]][index[callee]] = 1
    return AdjacencyView(nodes, tuple(tuple(row) for row in rows))


# ---------------------------------------------------------------------------
# Exports


def _guard_texts(guards: Iterable[GuardAnnotation]) -> list[str]:
    return [g.expression for g in guards]


def graph_to_json_dict(graph: CallGraph) -> dict:
    return {
        "mode": graph.mode.name,
        "nodes": list(graph.nodes),
        "direct_edges": [
            {"caller": e.caller, "callee": e.callee, "guards": _guard_texts(e.guards)}
            for e in graph.direct_edges
        ],
        "indirect_edges": [
            {"site": e.site_id, "caller": e.caller, "target": e.target, "guards": _guard_texts(e.guards)}
            for e in graph.indirect_edges
        ],
    }


def graph_to_dot(graph: CallGraph) -> str:
    """Graphviz rendering: solid direct edges, dashed type-permitted edges."""
    lines = ["digraph calls {"]
    for node in graph.nodes:
        lines.append(f'  "{node}";')
    for e in graph.direct_edges:
        lines.append(f'  "{e.caller}" -> "{e.callee}";')
    for e in graph.indirect_edges:
        lines.append(f'  "{e.caller}" -> "{e.target}" [style=dashed, label={json.dumps(e.site_id)}];')
    lines.append("}")
    return "\n".join(lines) + "\n"
