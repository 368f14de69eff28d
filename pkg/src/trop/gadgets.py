"""Gadget-chain discovery over the permitted call graph.

A chain hijacks an indirect call while every transfer satisfies the type
check: the head collides with the corrupted pointer (collision gadget), the
tail reaches a sensitive function (execution gadget), and interior functions
link them (linker gadgets).  Path enumeration follows a bounded all-simple-
paths search over the collapsed adjacency view; truncation by the search
limits is always reported, never silent.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

from .callgraph import AdjacencyView, CallGraph, adjacency, build_graph
from .errors import UnknownSite
from .facts import FactsDB, GuardAnnotation, IndirectCallSite, ScopeClass, with_sink_config
from .signatures import MatchMode

__all__ = [
    "SearchLimits",
    "PathSearchResult",
    "Controllability",
    "GadgetChain",
    "ChainSearchResult",
    "GadgetCensus",
    "CGadgetScan",
    "find_e_gadgets",
    "find_c_gadgets",
    "find_candidate_paths",
    "classify_controllability",
    "screen_path",
    "find_chains",
    "gadget_census",
]


@dataclass(frozen=True)
class SearchLimits:
    """Bounds on the simple-path enumeration, which is exponential unbounded."""

    max_depth: int = 8
    max_paths: int = 10_000

    def __post_init__(self) -> None:
        if self.max_depth < 1 or self.max_paths < 1:
            raise ValueError("search limits must be positive")


@dataclass(frozen=True)
class PathSearchResult:
    paths: tuple[tuple[str, ...], ...]
    truncated: bool
    limit_hits: tuple[str, ...] = ()


class Controllability(Enum):
    UNCONSTRAINED = "unconstrained"
    GLOBALLY_CONTROLLABLE = "globally_controllable"
    BLOCKED = "blocked"


_RANK = {
    Controllability.UNCONSTRAINED: 0,
    Controllability.GLOBALLY_CONTROLLABLE: 1,
    Controllability.BLOCKED: 2,
}
_BY_RANK = {rank: c for c, rank in _RANK.items()}


@dataclass(frozen=True)
class GadgetChain:
    """One candidate hijack: entry site, simple path, and its guard screen."""

    entry_site: str
    path: tuple[str, ...]
    guards_on_path: tuple[GuardAnnotation, ...]
    controllability: Controllability
    loop_edges: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class ChainSearchResult:
    chains: tuple[GadgetChain, ...]
    truncated: bool


@dataclass(frozen=True)
class GadgetCensus:
    """Distinct functions per role across every discovered chain."""

    c_gadgets: tuple[str, ...]
    l_gadgets: tuple[str, ...]
    e_gadgets: tuple[str, ...]
    n_chains: int
    truncated: bool

    @property
    def counts(self) -> tuple[int, int, int]:
        return (len(self.c_gadgets), len(self.l_gadgets), len(self.e_gadgets))


@dataclass(frozen=True)
class CGadgetScan:
    """Permitted heads for one site, split by labels when labels exist."""

    candidates: frozenset[str]
    valid: frozenset[str] | None = None
    invalid: frozenset[str] | None = None


def find_e_gadgets(db: FactsDB, sinks: Sequence[str] | None = None) -> frozenset[str]:
    """Functions that call a configured sensitive function directly."""
    if sinks is not None:
        db = with_sink_config(db, sinks)
    if not db.sink_config:
        raise ValueError("sink configuration is empty; nothing can be an execution gadget")
    sink_set = set(db.sink_config)
    return frozenset(
        fn.key for fn in db.definitions if sink_set.intersection(fn.calls_sinks)
    )


def find_c_gadgets(site: IndirectCallSite, graph: CallGraph, db: FactsDB) -> CGadgetScan:
    """Candidate chain heads: every permitted target of the site.

    With ground-truth labels present, the candidates are also partitioned
    into the labeled-valid subset and the collision-only remainder.
    """
    if db.site(site.id) is None:
        raise UnknownSite(site.id)
    candidates = frozenset(t for s, t in graph.indirect_pairs if s == site.id)
    if db.labels is None:
        return CGadgetScan(candidates)
    valid = frozenset(t for t in candidates if (site.id, t) in db.labels.valid_pairs)
    return CGadgetScan(candidates, valid=valid, invalid=candidates - valid)


def find_candidate_paths(
    graph: CallGraph | AdjacencyView,
    cg: Iterable[str],
    eg: Iterable[str],
    limits: SearchLimits = SearchLimits(),
) -> PathSearchResult:
    """All simple paths from any collision gadget to any execution gadget.

    A head that is itself an execution gadget yields the single-node path.
    Results are canonically ordered by length, then node keys.
    """
    view = graph if isinstance(graph, AdjacencyView) else adjacency(graph)
    known = set(view.nodes)
    cg_set = sorted(set(cg) & known)
    eg_set = sorted(set(eg) & known)

    paths: list[tuple[str, ...]] = []
    hits: set[str] = set()

    def discover(current: str, goal: str, path: list[str], visited: set[str]) -> None:
        path.append(current)
        visited.add(current)
        try:
            if current == goal:
                if len(paths) >= limits.max_paths:
                    hits.add("max_paths")
                    return
                paths.append(tuple(path))
                return
            if len(path) >= limits.max_depth:
                if any(s not in visited for s in view.successors(current)):
                    hits.add("max_depth")
                return
            for nxt in view.successors(current):
                if nxt in visited:
                    continue
                if len(paths) >= limits.max_paths:
                    hits.add("max_paths")
                    return
                discover(nxt, goal, path, visited)
        finally:
            path.pop()
            visited.remove(current)

    for head in cg_set:
        for goal in eg_set:
            if "max_paths" in hits:
                break
            discover(head, goal, [], set())

    ordered = tuple(sorted(set(paths), key=lambda p: (len(p), p)))
    return PathSearchResult(ordered, truncated=bool(hits), limit_hits=tuple(sorted(hits)))


# ---------------------------------------------------------------------------
# Controllability screening


def _guard_list_rank(guards: tuple[GuardAnnotation, ...]) -> int:
    if not guards:
        return 0
    for guard in guards:
        for ref in guard.referenced:
            if ref.scope not in (ScopeClass.GLOBAL, ScopeClass.HEAP):
                return 2
    return 1


def _hop_alternatives(
    graph: CallGraph, caller: str, callee: str
) -> list[tuple[GuardAnnotation, ...]]:
    alts = [e.guards for e in graph.direct_edges if e.caller == caller and e.callee == callee]
    alts += [e.guards for e in graph.indirect_edges if e.caller == caller and e.target == callee]
    return alts


def screen_path(
    path: Sequence[str],
    graph: CallGraph,
    entry_guards: tuple[GuardAnnotation, ...] = (),
) -> tuple[Controllability, tuple[GuardAnnotation, ...]]:
    """Rank a path by the weakest set of guards an attacker must satisfy.

    Parallel edges between two functions are alternative routes; the easiest
    one counts.  The overall class is the hardest hop on the chain.
    """
    worst = _guard_list_rank(entry_guards)
    collected = list(entry_guards)
    for a, b in zip(path, path[1:]):
        alts = _hop_alternatives(graph, a, b)
        if not alts:
            raise ValueError(f"path hop {a!r} -> {b!r} has no edge in the graph")
        best = min(alts, key=lambda g: (_guard_list_rank(g), len(g), [x.expression for x in g]))
        worst = max(worst, _guard_list_rank(best))
        collected.extend(best)
    return _BY_RANK[worst], tuple(collected)


def classify_controllability(
    path: Sequence[str],
    graph: CallGraph,
    entry_guards: tuple[GuardAnnotation, ...] = (),
) -> Controllability:
    """The three-way lexical screen over a path's guards.

    unconstrained: no guards anywhere on the traversed edges;
    globally_controllable: every guard only reads global or heap data, so a
    memory overwrite outside the function can steer it; blocked: some guard
    reads only short-lived local or parameter state.
    """
    return screen_path(path, graph, entry_guards)[0]


# ---------------------------------------------------------------------------
# Chain discovery


def _loop_edges(path: Sequence[str], graph: CallGraph) -> tuple[tuple[str, str], ...]:
    """Edges from a path node back to an equal-or-earlier path node.

    Simple paths never traverse them, but they let an attacker re-enter the
    chain, so they are surfaced as metadata.
    """
    position = {node: i for i, node in enumerate(path)}
    out = []
    for u in path:
        for v in graph.collapsed.get(u, ()):
            if v in position and position[v] <= position[u]:
                out.append((u, v))
    return tuple(sorted(out))


def find_chains(
    db: FactsDB,
    mode: MatchMode = MatchMode.strict(),
    limits: SearchLimits = SearchLimits(),
    sinks: Sequence[str] | None = None,
    site_ids: Sequence[str] | None = None,
    invalid_only: bool = False,
) -> ChainSearchResult:
    """Discover gadget chains for every (or the selected) indirect call site.

    ``invalid_only`` restricts chain heads to targets outside the labeled
    valid pairs; it requires ground-truth labels.
    """
    if sinks is not None:
        db = with_sink_config(db, sinks)
    e_gadgets = find_e_gadgets(db)
    graph = build_graph(db, mode)
    view = adjacency(graph)

    if site_ids is None:
        sites = db.call_sites
    else:
        sites = []
        for site_id in site_ids:
            site = db.site(site_id)
            if site is None:
                raise UnknownSite(site_id)
            sites.append(site)

    if invalid_only and db.labels is None:
        raise ValueError("invalid_only requires ground-truth labels")

    chains: list[GadgetChain] = []
    truncated = False
    for site in sites:
        scan = find_c_gadgets(site, graph, db)
        heads = scan.invalid if invalid_only else scan.candidates
        assert heads is not None
        result = find_candidate_paths(view, heads, e_gadgets, limits)
        truncated = truncated or result.truncated
        for path in result.paths:
            controllability, guards = screen_path(path, graph, site.guards)
            chains.append(
                GadgetChain(
                    entry_site=site.id,
                    path=path,
                    guards_on_path=guards,
                    controllability=controllability,
                    loop_edges=_loop_edges(path, graph),
                )
            )
    chains.sort(key=lambda c: (c.entry_site, len(c.path), c.path))
    return ChainSearchResult(tuple(chains), truncated)


def gadget_census(
    db: FactsDB,
    mode: MatchMode = MatchMode.strict(),
    limits: SearchLimits = SearchLimits(),
    sinks: Sequence[str] | None = None,
) -> GadgetCensus:
    """Count distinct functions per gadget role over all discovered chains."""
    result = find_chains(db, mode=mode, limits=limits, sinks=sinks)
    c_set: set[str] = set()
    l_set: set[str] = set()
    e_set: set[str] = set()
    for chain in result.chains:
        c_set.add(chain.path[0])
        e_set.add(chain.path[-1])
        l_set.update(chain.path[1:-1])
    return GadgetCensus(
        c_gadgets=tuple(sorted(c_set)),
        l_gadgets=tuple(sorted(l_set)),
        e_gadgets=tuple(sorted(e_set)),
        n_chains=len(result.chains),
        truncated=result.truncated,
    )
