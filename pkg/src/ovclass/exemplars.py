"""Per-class exemplar sourcing: cascade over candidate pools with tiering.

Pools are consulted in the caller-supplied order (primary synset pool,
detection boxes above a minimum area, secondary synset pool, manual alias
table). Candidates accumulate across pools; the cascade stops at the first
pool whose cumulative total reaches the full-tier threshold. Classes that
never reach the reduced threshold land in the shortfall report.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .bank import ClassEntry
from .errors import ConfigError, ValidationError

POOL_KINDS = ("in21k", "detection-box", "visualgenome", "manual-alias")

TIER_FULL = "full"
TIER_REDUCED = "reduced"
TIER_SHORTFALL = "shortfall"

DEFAULT_MIN_FULL = 40
DEFAULT_MIN_REDUCED = 10
DEFAULT_MIN_BOX_AREA = 32.0 * 32.0


@dataclass(frozen=True)
class Candidate:
    exemplar_id: str
    area: float | None = None


@dataclass
class CandidatePool:
    kind: str
    items: dict[str, list[Candidate]] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in POOL_KINDS:
            raise ConfigError(f"unknown source kind {self.kind!r}")


def apply_alias_table(aliases: dict[str, str], source: CandidatePool) -> CandidatePool:
    """Build a manual-alias pool: each class borrows the candidates listed
    under its substitute key in ``source``."""
    items: dict[str, list[Candidate]] = {}
    for class_id, substitute in aliases.items():
        borrowed = source.items.get(substitute, [])
        items[class_id] = list(borrowed)
    return CandidatePool(kind="manual-alias", items=items)


@dataclass
class CatalogEntry:
    class_id: str
    tier: str
    source: str | None
    exemplars: list[tuple[str, str]]  # (exemplar id, source tag)
    counts_per_source: dict[str, int]
    duplicates_dropped: int = 0

    @property
    def count(self) -> int:
        return len(self.exemplars)


@dataclass
class ExemplarCatalog:
    min_full: int
    min_reduced: int
    entries: dict[str, CatalogEntry] = field(default_factory=dict)

    def shortfall_report(self) -> list[dict]:
        report = []
        for class_id in sorted(self.entries):
            entry = self.entries[class_id]
            if entry.tier == TIER_SHORTFALL:
                report.append({
                    "class": class_id,
                    "count": entry.count,
                    "counts_per_source": dict(entry.counts_per_source),
                })
        return report

    def to_json(self) -> str:
        payload = {
            "min_full": self.min_full,
            "min_reduced": self.min_reduced,
            "classes": {
                cid: {
                    "tier": e.tier,
                    "source": e.source,
                    "count": e.count,
                    "counts_per_source": e.counts_per_source,
                    "duplicates_dropped": e.duplicates_dropped,
                    "exemplars": [{"id": x, "source": s} for x, s in e.exemplars],
                }
                for cid, e in sorted(self.entries.items())
            },
            "shortfall": self.shortfall_report(),
        }
        return json.dumps(payload, sort_keys=True, indent=2)


def catalog_from_json(text: str) -> ExemplarCatalog:
    obj = json.loads(text)
    catalog = ExemplarCatalog(min_full=obj["min_full"], min_reduced=obj["min_reduced"])
    for cid, e in obj["classes"].items():
        catalog.entries[cid] = CatalogEntry(
            class_id=cid, tier=e["tier"], source=e["source"],
            exemplars=[(x["id"], x["source"]) for x in e["exemplars"]],
            counts_per_source=dict(e["counts_per_source"]),
            duplicates_dropped=e.get("duplicates_dropped", 0))
    return catalog


def resolve_exemplars(vocab: list[ClassEntry], pools: list[CandidatePool],
                      min_full: int = DEFAULT_MIN_FULL,
                      min_reduced: int = DEFAULT_MIN_REDUCED,
                      min_box_area: float = DEFAULT_MIN_BOX_AREA) -> ExemplarCatalog:
    """Resolve the exemplar catalog for every vocabulary class.

    Within one pool candidates are ordered lexicographically by exemplar id;
    duplicate ids already accumulated from earlier pools are dropped and
    counted. Detection-box candidates must carry an area and survive only if
    strictly larger than ``min_box_area``.
    """
    if min_full < min_reduced:
        raise ConfigError("min_full must be >= min_reduced")
    for pool in pools:
        if pool.kind not in POOL_KINDS:
            raise ConfigError(f"unknown source kind {pool.kind!r}")

    catalog = ExemplarCatalog(min_full=min_full, min_reduced=min_reduced)
    for entry in vocab:
        chosen: list[tuple[str, str]] = []
        seen_ids: set[str] = set()
        counts: dict[str, int] = {}
        duplicates = 0
        completing_source: str | None = None
        for pool in pools:
            candidates = sorted(pool.items.get(entry.id, []),
                                key=lambda c: c.exemplar_id)
            for cand in candidates:
                if pool.kind == "detection-box":
                    if cand.area is None:
                        raise ValidationError(
                            f"detection-box candidate {cand.exemplar_id!r} for "
                            f"{entry.id!r} carries no box area")
                    if cand.area <= min_box_area:
                        continue
                if cand.exemplar_id in seen_ids:
                    duplicates += 1
                    continue
                seen_ids.add(cand.exemplar_id)
                chosen.append((cand.exemplar_id, pool.kind))
                counts[pool.kind] = counts.get(pool.kind, 0) + 1
            if counts.get(pool.kind, 0) > 0:
                completing_source = pool.kind
            if len(chosen) >= min_full:
                break
        if len(chosen) >= min_full:
            tier = TIER_FULL
        elif len(chosen) >= min_reduced:
            tier = TIER_REDUCED
        else:
            tier = TIER_SHORTFALL
        catalog.entries[entry.id] = CatalogEntry(
            class_id=entry.id, tier=tier,
            source=completing_source if chosen else None,
            exemplars=chosen, counts_per_source=counts,
            duplicates_dropped=duplicates)
    return catalog
