"""Forward-edge check simulation: would the instrumented binary allow it?

A transfer passes when the target carries a hash at all and its forward hash
equals the pointer's.  A whole chain passes when its entry transfer passes,
every hop exists in the graph (interior hops are ordinary calls the forward
check never inspects again), and the guard screen is not blocked.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .callgraph import CallGraph, build_graph
from .errors import UnknownSite, UnknownTarget
from .facts import FactsDB, hash_eligible
from .gadgets import Controllability, GadgetChain, screen_path
from .signatures import EdgeKind, MatchMode, canonicalize, type_hash

__all__ = [
    "TransferReason",
    "TransferVerdict",
    "ChainVerdict",
    "check_forward",
    "simulate_chain",
]


class TransferReason(Enum):
    HASH_MATCH = "hash_match"
    HASH_MISMATCH = "hash_mismatch"
    INELIGIBLE_TARGET = "ineligible_target"
    UNKNOWN_SITE = "unknown_site"


@dataclass(frozen=True)
class TransferVerdict:
    allowed: bool
    reason: TransferReason

    def __post_init__(self) -> None:
        if self.allowed != (self.reason is TransferReason.HASH_MATCH):
            raise ValueError("allowed must mirror reason == hash_match")


@dataclass(frozen=True)
class ChainVerdict:
    entry_verdict: TransferVerdict
    path_connected: bool
    guards_screen: Controllability
    overall: bool


def check_forward(
    site_id: str, target_key: str, db: FactsDB, mode: MatchMode = MatchMode.strict()
) -> TransferVerdict:
    """Simulate the hash comparison guarding one indirect transfer."""
    site = db.site(site_id)
    if site is None:
        raise UnknownSite(site_id)
    target = db.resolve_function(target_key)
    if target is None:
        raise UnknownTarget(target_key)
    if not target.is_definition or not hash_eligible(target, db):
        return TransferVerdict(False, TransferReason.INELIGIBLE_TARGET)
    typedefs = db.typedef_map
    wanted = type_hash(canonicalize(site.fp_signature, typedefs, mode), EdgeKind.FORWARD)
    actual = type_hash(canonicalize(target.signature, typedefs, mode), EdgeKind.FORWARD)
    if wanted == actual:
        return TransferVerdict(True, TransferReason.HASH_MATCH)
    return TransferVerdict(False, TransferReason.HASH_MISMATCH)


def simulate_chain(
    chain: GadgetChain | tuple[str, Sequence[str]],
    db: FactsDB,
    mode: MatchMode = MatchMode.strict(),
    graph: CallGraph | None = None,
) -> ChainVerdict:
    """Judge a whole chain: entry check, connectivity, and guard screen.

    Accepts a discovered chain or a bare ``(entry_site_id, path)`` pair; a
    prebuilt graph for the same (db, mode) may be passed to amortize work.
    """
    if isinstance(chain, GadgetChain):
        site_id, path = chain.entry_site, chain.path
    else:
        site_id, path = chain[0], tuple(chain[1])
    if not path:
        raise ValueError("a chain needs at least one function")
    site = db.site(site_id)
    if site is None:
        raise UnknownSite(site_id)
    for key in path:
        if db.resolve_function(key) is None:
            raise UnknownTarget(key)

    entry = check_forward(site_id, path[0], db, mode)
    if graph is None:
        graph = build_graph(db, mode)
    connected = all(graph.has_edge(a, b) for a, b in zip(path, path[1:]))
    if connected:
        screen, _ = screen_path(path, graph, site.guards)
    else:
        # a broken path cannot be steered at all; report the strongest class
        screen = Controllability.BLOCKED
    overall = entry.allowed and connected and screen is not Controllability.BLOCKED
    return ChainVerdict(entry, connected, screen, overall)
