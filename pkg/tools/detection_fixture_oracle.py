#!/usr/bin/env python3
"""Brute-force oracle for the detection fixtures.

Recomputes every fixture's metrics from first principles (its own IoU,
its own greedy matcher, recall comparisons in exact rational arithmetic)
and writes the expected values JSON consumed by the test suite:

    python tools/detection_fixture_oracle.py

The only imports from the package are the fixture *data* definitions; all
evaluation logic here is independent of ovclass.average_precision.
"""

from __future__ import annotations

import json
import os
import sys
from fractions import Fraction

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from ovclass.synthetic import _CASES  # noqa: E402  (fixture data only)

DEFAULT_THRESHOLDS = tuple((50 + 5 * i) / 100 for i in range(10))


def oracle_iou(a, b) -> float:
    ax0, ay0, ax1, ay1 = a[0], a[1], a[0] + a[2], a[1] + a[3]
    bx0, by0, bx1, by1 = b[0], b[1], b[0] + b[2], b[1] + b[3]
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a[2] * a[3] + b[2] * b[3] - inter)


def oracle_match(dets, gts, threshold):
    """Greedy matching by descending score (ties by input order); each
    detection takes the unmatched same-image ground truth of highest IoU
    at or above the threshold."""
    ranked = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    taken = [False] * len(gts)
    flags = []
    for i in ranked:
        det = dets[i]
        best, best_iou = None, 0.0
        for gi, gt in enumerate(gts):
            if taken[gi] or gt.image_id != det.image_id:
                continue
            overlap = oracle_iou(det.box, gt.box)
            if overlap >= threshold and overlap > best_iou:
                best, best_iou = gi, overlap
        if best is None:
            flags.append(False)
        else:
            taken[best] = True
            flags.append(True)
    return flags


def oracle_ap(flags, n_gt) -> float:
    """101-point interpolated AP with exact rational recall comparisons."""
    if not flags:
        return 0.0
    precisions = []
    recalls = []
    tp = 0
    for rank, hit in enumerate(flags, start=1):
        tp += 1 if hit else 0
        precisions.append(np.float64(tp) / np.float64(rank))
        recalls.append(Fraction(tp, n_gt))
    total = np.zeros(101, dtype=np.float64)
    for i in range(101):
        point = Fraction(i, 100)
        feasible = [p for p, r in zip(precisions, recalls) if r >= point]
        total[i] = max(feasible) if feasible else 0.0
    return float(np.mean(total))


def evaluate_case(dets, gts, vocab, thresholds):
    classes = sorted({g.class_id for g in gts})
    per_class = {}
    per_class_at = {t: {} for t in thresholds}
    for cid in classes:
        class_gts = [g for g in gts if g.class_id == cid]
        class_dets = [d for d in dets if d.class_id == cid]
        aps = []
        for t in thresholds:
            flags = oracle_match(class_dets, class_gts, t)
            ap = oracle_ap(flags, len(class_gts))
            per_class_at[t][cid] = ap
            aps.append(ap)
        per_class[cid] = float(np.mean(aps))

    def mean_over(table):
        return float(np.mean([table[c] for c in sorted(table)])) if table else None

    result = {
        "per_class": per_class,
        "mAP": mean_over(per_class),
        "AP50": None,
        "AP75": None,
        "APr": None, "APc": None, "APf": None, "APr-w": None, "APr-z": None,
    }
    for probe, key in ((0.5, "AP50"), (0.75, "AP75")):
        hit = [t for t in thresholds if abs(t - probe) < 1e-9]
        if hit:
            result[key] = mean_over(per_class_at[hit[0]])
    by_id = {e.id: e for e in vocab}
    groups = {"rare": [], "common": [], "frequent": [], "rare-w": [], "rare-z": []}
    for cid in sorted(per_class):
        entry = by_id[cid]
        groups[entry.bucket].append(per_class[cid])
        if entry.bucket == "rare":
            groups["rare-w" if entry.weak else "rare-z"].append(per_class[cid])
    for key, out in (("rare", "APr"), ("common", "APc"), ("frequent", "APf"),
                     ("rare-w", "APr-w"), ("rare-z", "APr-z")):
        if groups[key]:
            result[out] = float(np.mean(groups[key]))
    return result


def main():
    expected = {}
    for case_id, builder in sorted(_CASES.items()):
        dets, gts, vocab, thresholds = builder()
        bands = DEFAULT_THRESHOLDS if thresholds is None else tuple(thresholds)
        expected[case_id] = evaluate_case(dets, gts, vocab, bands)
        expected[case_id]["thresholds"] = list(bands)
    out_path = os.path.join(os.path.dirname(__file__), "..", "src", "ovclass",
                            "data", "detection_fixture_expected.json")
    os.makedirs(os.path.dirname(out_path), exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(expected, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {out_path} ({len(expected)} cases)")


if __name__ == "__main__":
    main()
