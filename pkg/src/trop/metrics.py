"""Over-approximation metrics: collision counts, library-merge deltas, and
comparisons against externally supplied target sets.

All reports are pure functions of (facts, mode, labels) and carry enough raw
counts that every percentage is recomputable from the integers next to it.
Counts of "invalid" anything require ground-truth labels; without labels the
fields are absent rather than zero.
"""

from __future__ import annotations

from dataclasses import dataclass

from .callgraph import permitted_targets
from .errors import ReferentialIntegrity
from .facts import FactsDB, GroundTruthLabels, hash_eligible, merge_facts
from .signatures import MatchMode, canonicalize, serialize

__all__ = [
    "CollisionReport",
    "HashCoverage",
    "MergeImpactReport",
    "ComparisonReport",
    "TargetSetComparison",
    "permitted_pairs",
    "collision_metrics",
    "hash_coverage",
    "library_impact",
    "compare_target_sets",
]


def _pct(numerator: int, denominator: int) -> float | None:
    if denominator == 0:
        return None
    return 100.0 * numerator / denominator


@dataclass(frozen=True)
class CollisionReport:
    """Type-collision over-approximation counts for one facts database."""

    mode: str
    n_function_pointer_sigs: int
    n_call_sites: int
    n_functions: int
    n_functions_with_hash: int
    n_indirect_call_pairs: int
    n_sig_target_pairs: int
    has_labels: bool
    n_valid_targets: int | None = None
    n_invalid_targets: int | None = None
    n_invalid_indirect_pairs: int | None = None
    pct_invalid_targets: float | None = None
    pct_invalid_pairs: float | None = None

    @classmethod
    def from_counts(
        cls,
        n_valid_targets: int,
        n_invalid_targets: int,
        n_indirect_call_pairs: int,
        n_invalid_indirect_pairs: int,
        mode: str = "strict",
        **counts: int,
    ) -> "CollisionReport":
        """Build a report from externally known counts (no facts needed)."""
        return cls(
            mode=mode,
            n_function_pointer_sigs=counts.get("n_function_pointer_sigs", 0),
            n_call_sites=counts.get("n_call_sites", 0),
            n_functions=counts.get("n_functions", 0),
            n_functions_with_hash=counts.get("n_functions_with_hash", 0),
            n_indirect_call_pairs=n_indirect_call_pairs,
            n_sig_target_pairs=counts.get("n_sig_target_pairs", 0),
            has_labels=True,
            n_valid_targets=n_valid_targets,
            n_invalid_targets=n_invalid_targets,
            n_invalid_indirect_pairs=n_invalid_indirect_pairs,
            pct_invalid_targets=_pct(n_invalid_targets, n_valid_targets),
            pct_invalid_pairs=_pct(n_invalid_indirect_pairs, n_indirect_call_pairs),
        )


@dataclass(frozen=True)
class HashCoverage:
    n_functions: int
    n_with_hash: int
    fraction: float | None


@dataclass(frozen=True)
class MergeImpactReport:
    """Growth of an application's permitted transfers when a library joins it.

    Measured over the application's own call sites, before and after the
    merge, so the deltas isolate what the library's functions add.
    """

    targets_before: int
    targets_after: int
    pairs_before: int
    pairs_after: int

    @property
    def target_delta(self) -> int:
        return self.targets_after - self.targets_before

    @property
    def pair_delta(self) -> int:
        return self.pairs_after - self.pairs_before


@dataclass(frozen=True)
class ComparisonReport:
    """Edges a policy allows beyond the labeled ground truth.

    ``invalid_edges`` is ``total - base`` floored at zero; ``clamped`` records
    that the floor was applied (the policy misses labeled-valid edges).
    """

    base_edges: int
    total_edges: int
    invalid_edges: int
    pct_invalid: float | None
    clamped: bool = False

    @classmethod
    def from_counts(cls, base_edges: int, total_edges: int) -> "ComparisonReport":
        raw = total_edges - base_edges
        invalid = max(raw, 0)
        return cls(
            base_edges=base_edges,
            total_edges=total_edges,
            invalid_edges=invalid,
            pct_invalid=_pct(invalid, total_edges),
            clamped=raw < 0,
        )


@dataclass(frozen=True)
class TargetSetComparison:
    type_checking: ComparisonReport
    alternative: ComparisonReport


def permitted_pairs(db: FactsDB, mode: MatchMode = MatchMode.strict()) -> frozenset[tuple[str, str]]:
    """Every (site id, target key) the type check permits under the mode."""
    out = set()
    for site in db.call_sites:
        for target in permitted_targets(site, db, mode):
            out.add((site.id, target))
    return frozenset(out)


def collision_metrics(db: FactsDB, mode: MatchMode = MatchMode.strict()) -> CollisionReport:
    """Count pointers, sites, hash coverage, and (with labels) over-approximation.

    A target is valid when some labeled pair names it; it is invalid when
    some site's permitted set reaches it through a pair outside the labels,
    so one function can be both.  Invalid targets may outnumber valid ones.
    """
    typedefs = db.typedef_map
    site_serials = {
        site.id: serialize(canonicalize(site.fp_signature, typedefs, mode)) for site in db.call_sites
    }
    pairs = permitted_pairs(db, mode)
    sig_target_pairs = {(site_serials[s], t) for s, t in pairs}
    coverage = hash_coverage(db)

    base = dict(
        mode=mode.name,
        n_function_pointer_sigs=len(set(site_serials.values())),
        n_call_sites=len(db.call_sites),
        n_functions=coverage.n_functions,
        n_functions_with_hash=coverage.n_with_hash,
        n_indirect_call_pairs=len(pairs),
        n_sig_target_pairs=len(sig_target_pairs),
    )
    if db.labels is None:
        return CollisionReport(has_labels=False, **base)

    valid_pairs = db.labels.valid_pairs
    valid_targets = {t for _, t in valid_pairs}
    invalid_pairs = pairs - valid_pairs
    invalid_targets = {t for _, t in invalid_pairs}
    return CollisionReport(
        has_labels=True,
        n_valid_targets=len(valid_targets),
        n_invalid_targets=len(invalid_targets),
        n_invalid_indirect_pairs=len(invalid_pairs),
        pct_invalid_targets=_pct(len(invalid_targets), len(valid_targets)),
        pct_invalid_pairs=_pct(len(invalid_pairs), len(pairs)),
        **base,
    )


def hash_coverage(db: FactsDB) -> HashCoverage:
    """How many defined functions the instrumentation would hash at all."""
    definitions = db.definitions
    with_hash = sum(1 for fn in definitions if hash_eligible(fn, db))
    fraction = (with_hash / len(definitions)) if definitions else None
    return HashCoverage(len(definitions), with_hash, fraction)


def library_impact(
    app: FactsDB, lib: FactsDB, mode: MatchMode = MatchMode.strict()
) -> MergeImpactReport:
    """Target and pair growth for the app's sites once the library is linked in."""
    app_sites = {site.id for site in app.call_sites}
    before = {(s, t) for s, t in permitted_pairs(app, mode)}
    merged = merge_facts(app, lib)
    after = {(s, t) for s, t in permitted_pairs(merged, mode) if s in app_sites}
    return MergeImpactReport(
        targets_before=len({t for _, t in before}),
        targets_after=len({t for _, t in after}),
        pairs_before=len(before),
        pairs_after=len(after),
    )


def compare_target_sets(
    db: FactsDB,
    alt_pairs: frozenset[tuple[str, str]] | set[tuple[str, str]],
    labels: GroundTruthLabels | None = None,
    mode: MatchMode = MatchMode.strict(),
) -> TargetSetComparison:
    """Compare type-check edges and an external analysis against ground truth.

    ``alt_pairs`` is another policy's (site id, function key) edge set, e.g.
    the output of a points-to analysis.  Both reports apply the same
    ``invalid = total - base`` arithmetic.
    """
    labels = labels if labels is not None else db.labels
    if labels is None:
        raise ValueError("compare_target_sets requires ground-truth labels")
    for site_id, key in sorted(alt_pairs):
        if db.site(site_id) is None:
            raise ReferentialIntegrity(site_id, "alternative pair references unknown site")
        if not db.function_entries(key):
            raise ReferentialIntegrity(key, "alternative pair references unknown function")
    base = len(labels.valid_pairs)
    tc_total = len(permitted_pairs(db, mode))
    return TargetSetComparison(
        type_checking=ComparisonReport.from_counts(base, tc_total),
        alternative=ComparisonReport.from_counts(base, len(set(alt_pairs))),
    )
