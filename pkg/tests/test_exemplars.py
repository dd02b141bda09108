import numpy as np
import pytest

from ovclass.bank import ClassEntry
from ovclass.errors import ConfigError, ValidationError
from ovclass.exemplars import (Candidate, CandidatePool, apply_alias_table,
                               catalog_from_json, resolve_exemplars)


def _vocab(*ids):
    return [ClassEntry(i, i, bucket="common") for i in ids]


def _pool(kind, **items):
    return CandidatePool(kind=kind, items={
        cid: [Candidate(x) if isinstance(x, str) else Candidate(*x) for x in cands]
        for cid, cands in items.items()
    })


def test_primary_pool_alone_reaches_full_tier():
    pool = _pool("in21k", wolf=[f"ex{i:03d}" for i in range(45)])
    catalog = resolve_exemplars(_vocab("wolf"), [pool])
    entry = catalog.entries["wolf"]
    assert entry.tier == "full"
    assert entry.count == 45
    assert entry.source == "in21k"


def test_detection_boxes_reach_reduced_tier():
    boxes = _pool("detection-box", wolf=[(f"box{i:02d}", 40.0 * 40.0) for i in range(12)])
    catalog = resolve_exemplars(_vocab("wolf"), [_pool("in21k"), boxes])
    entry = catalog.entries["wolf"]
    assert entry.tier == "reduced"
    assert entry.count == 12
    assert entry.source == "detection-box"


def test_three_candidates_is_shortfall_with_report():
    pool = _pool("in21k", wolf=["a", "b", "c"])
    catalog = resolve_exemplars(_vocab("wolf"), [pool])
    entry = catalog.entries["wolf"]
    assert entry.tier == "shortfall"
    report = catalog.shortfall_report()
    assert report == [{"class": "wolf", "count": 3,
                       "counts_per_source": {"in21k": 3}}]


def test_small_boxes_never_enter_catalog():
    boxes = _pool("detection-box", wolf=[
        ("tiny", 32.0 * 32.0),        # exactly at threshold: excluded
        ("small", 10.0),
        ("big", 33.0 * 33.0),
    ])
    catalog = resolve_exemplars(_vocab("wolf"), [boxes])
    ids = [x for x, _ in catalog.entries["wolf"].exemplars]
    assert ids == ["big"]


def test_cascade_accumulates_across_sources():
    primary = _pool("in21k", wolf=[f"p{i:02d}" for i in range(30)])
    boxes = _pool("detection-box", wolf=[(f"b{i:02d}", 2000.0) for i in range(15)])
    catalog = resolve_exemplars(_vocab("wolf"), [primary, boxes])
    entry = catalog.entries["wolf"]
    assert entry.tier == "full"
    assert entry.count == 45
    assert entry.counts_per_source == {"in21k": 30, "detection-box": 15}
    assert entry.source == "detection-box"


def test_full_tier_stops_consulting_later_pools():
    primary = _pool("in21k", wolf=[f"p{i:02d}" for i in range(40)])
    secondary = _pool("visualgenome", wolf=["never-used"])
    catalog = resolve_exemplars(_vocab("wolf"), [primary, secondary])
    entry = catalog.entries["wolf"]
    assert entry.count == 40
    assert "visualgenome" not in entry.counts_per_source


def test_duplicates_are_dropped_and_counted():
    primary = _pool("in21k", wolf=["a", "b"])
    secondary = _pool("visualgenome", wolf=["b", "c"])
    catalog = resolve_exemplars(_vocab("wolf"), [primary, secondary])
    entry = catalog.entries["wolf"]
    assert [x for x, _ in entry.exemplars] == ["a", "b", "c"]
    assert entry.duplicates_dropped == 1


def test_candidates_sorted_lexicographically_within_pool():
    pool = _pool("in21k", wolf=["zeta", "alpha", "mid"])
    catalog = resolve_exemplars(_vocab("wolf"), [pool])
    assert [x for x, _ in catalog.entries["wolf"].exemplars] == ["alpha", "mid", "zeta"]


def test_unknown_source_kind_rejected():
    with pytest.raises(ConfigError):
        CandidatePool(kind="scraped", items={})


def test_detection_candidate_without_area_rejected():
    boxes = CandidatePool(kind="detection-box", items={"wolf": [Candidate("x")]})
    with pytest.raises(ValidationError):
        resolve_exemplars(_vocab("wolf"), [boxes])


def test_manual_alias_borrows_from_substitute():
    source = _pool("in21k", anklet_sock=[f"s{i:02d}" for i in range(11)])
    alias = apply_alias_table({"anklet": "anklet_sock"}, source)
    catalog = resolve_exemplars(_vocab("anklet"), [_pool("in21k"), alias])
    entry = catalog.entries["anklet"]
    assert entry.tier == "reduced"
    assert entry.source == "manual-alias"
    assert entry.count == 11


def test_counts_equal_attached_identifiers():
    rng = np.random.Generator(np.random.PCG64(3))
    pools = [
        _pool("in21k", **{f"c{i}": [f"p{i}_{j}" for j in range(int(rng.integers(0, 60)))]
                          for i in range(8)}),
        _pool("visualgenome", **{f"c{i}": [f"v{i}_{j}" for j in range(int(rng.integers(0, 20)))]
                                 for i in range(8)}),
    ]
    catalog = resolve_exemplars(_vocab(*[f"c{i}" for i in range(8)]), pools)
    for entry in catalog.entries.values():
        assert entry.count == len(entry.exemplars)
        assert entry.count == sum(entry.counts_per_source.values())


_TIER_RANK = {"shortfall": 0, "reduced": 1, "full": 2}


def test_monotonicity_under_random_pool_augmentation():
    """Adding candidates to any pool never lowers any class's tier."""
    rng = np.random.Generator(np.random.PCG64(99))
    vocab = _vocab(*[f"c{i}" for i in range(6)])
    base_items = {f"c{i}": [f"p{i}_{j}" for j in range(int(rng.integers(0, 45)))]
                  for i in range(6)}
    base = [_pool("in21k", **base_items),
            _pool("visualgenome", **{f"c{i}": [f"v{i}_{j}" for j in range(int(rng.integers(0, 15)))]
                                     for i in range(6)})]
    before = resolve_exemplars(vocab, base)
    for trial in range(100):
        grown = [CandidatePool(kind=p.kind, items={c: list(v) for c, v in p.items.items()})
                 for p in base]
        pool_idx = int(rng.integers(0, len(grown)))
        class_id = f"c{int(rng.integers(0, 6))}"
        extra = [Candidate(f"extra{trial}_{j}") for j in range(int(rng.integers(1, 20)))]
        grown[pool_idx].items.setdefault(class_id, []).extend(extra)
        after = resolve_exemplars(vocab, grown)
        for cid in before.entries:
            assert (_TIER_RANK[after.entries[cid].tier]
                    >= _TIER_RANK[before.entries[cid].tier]), cid


def test_catalog_json_round_trip():
    pool = _pool("in21k", wolf=[f"e{i:02d}" for i in range(12)])
    catalog = resolve_exemplars(_vocab("wolf"), [pool])
    clone = catalog_from_json(catalog.to_json())
    assert clone.entries["wolf"].tier == "reduced"
    assert clone.entries["wolf"].exemplars == catalog.entries["wolf"].exemplars
