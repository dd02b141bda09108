"""Box average precision with greedy IoU matching and 101-point interpolation.

Follows the familiar detection-benchmark convention: per class and IoU
threshold, detections are consumed in descending score order (ties by
insertion order) and greedily matched to the unmatched ground-truth box of
highest IoU at or above the threshold. Classes without ground truth are
excluded from averages (federated convention) unless explicitly included
as zeros.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .bank import ClassEntry
from .errors import ValidationError

DEFAULT_IOU_THRESHOLDS = tuple((50 + 5 * i) / 100 for i in range(10))
_RECALL_POINTS = np.linspace(0.0, 1.0, 101)


@dataclass(frozen=True)
class DetectionRecord:
    image_id: str
    class_id: str
    box: tuple[float, float, float, float]  # x, y, w, h in pixels
    score: float

    def __post_init__(self):
        x, y, w, h = self.box
        if w <= 0 or h <= 0:
            raise ValidationError(f"detection box must have positive size, got {self.box}")
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"detection score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class GroundTruthBox:
    image_id: str
    class_id: str
    box: tuple[float, float, float, float]

    def __post_init__(self):
        x, y, w, h = self.box
        if w <= 0 or h <= 0:
            raise ValidationError(f"ground-truth box must have positive size, got {self.box}")


def iou(box_a: tuple[float, float, float, float],
        box_b: tuple[float, float, float, float]) -> float:
    """Intersection over union of two (x, y, w, h) boxes."""
    ax, ay, aw, ah = box_a
    bx, by, bw, bh = box_b
    ix = max(ax, bx)
    iy = max(ay, by)
    ix2 = min(ax + aw, bx + bw)
    iy2 = min(ay + ah, by + bh)
    iw = max(0.0, ix2 - ix)
    ih = max(0.0, iy2 - iy)
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


@dataclass
class EvalResult:
    """AP and retrieval metrics with frequency-bucket grouping.

    Bucket values are NaN when the bucket has no evaluated classes.
    """

    map: float = float("nan")
    ap50: float = float("nan")
    ap75: float = float("nan")
    ap_rare: float = float("nan")
    ap_common: float = float("nan")
    ap_frequent: float = float("nan")
    ap_rare_weak: float = float("nan")
    ap_rare_zero: float = float("nan")
    per_class: dict[str, float] = field(default_factory=dict)
    thresholds: tuple[float, ...] = DEFAULT_IOU_THRESHOLDS
    top1: float | None = None
    top5: float | None = None

    def to_json(self) -> str:
        def clean(v):
            if v is None:
                return None
            return None if isinstance(v, float) and np.isnan(v) else float(v)

        payload = {
            "mAP": clean(self.map),
            "AP50": clean(self.ap50),
            "AP75": clean(self.ap75),
            "APr": clean(self.ap_rare),
            "APc": clean(self.ap_common),
            "APf": clean(self.ap_frequent),
            "APr-w": clean(self.ap_rare_weak),
            "APr-z": clean(self.ap_rare_zero),
            "per_class": {k: clean(v) for k, v in sorted(self.per_class.items())},
            "thresholds": list(self.thresholds),
            "top1": clean(self.top1),
            "top5": clean(self.top5),
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    def table(self) -> str:
        def fmt(v):
            if v is None or (isinstance(v, float) and np.isnan(v)):
                return "   n/a"
            return f"{100 * v:6.2f}"

        header = f"{'APr':>7} {'APc':>7} {'APf':>7} {'mAP':>7} {'AP50':>7} {'AP75':>7}"
        row = " ".join(fmt(v) for v in (self.ap_rare, self.ap_common, self.ap_frequent,
                                        self.map, self.ap50, self.ap75))
        lines = [header, row]
        if self.top1 is not None:
            lines.append(f"top-1 {100 * self.top1:.2f}  top-5 {100 * (self.top5 or 0):.2f}")
        return "\n".join(lines)


def _average_precision(matched_flags: list[bool], n_gt: int) -> float:
    """AP from per-detection match flags (already sorted by rank)."""
    if n_gt == 0:
        raise ValidationError("AP undefined without ground truth")
    if not matched_flags:
        return 0.0
    tp = np.cumsum([1.0 if m else 0.0 for m in matched_flags])
    fp = np.cumsum([0.0 if m else 1.0 for m in matched_flags])
    recalls = tp / n_gt
    precisions = tp / (tp + fp)
    interpolated = np.zeros(101, dtype=np.float64)
    for i, r in enumerate(_RECALL_POINTS):
        mask = recalls >= r - 1e-12
        interpolated[i] = precisions[mask].max() if mask.any() else 0.0
    return float(np.mean(interpolated))


def _match_class(dets: list[tuple[int, DetectionRecord]],
                 gts: list[GroundTruthBox], threshold: float) -> list[bool]:
    order = sorted(range(len(dets)), key=lambda i: (-dets[i][1].score, dets[i][0]))
    gt_by_image: dict[str, list[int]] = {}
    for gi, gt in enumerate(gts):
        gt_by_image.setdefault(gt.image_id, []).append(gi)
    used: set[int] = set()
    flags: list[bool] = []
    for i in order:
        det = dets[i][1]
        best_iou = 0.0
        best_gt = -1
        for gi in gt_by_image.get(det.image_id, []):
            if gi in used:
                continue
            overlap = iou(det.box, gts[gi].box)
            if overlap >= threshold and overlap > best_iou:
                best_iou = overlap
                best_gt = gi
        if best_gt >= 0:
            used.add(best_gt)
            flags.append(True)
        else:
            flags.append(False)
    return flags


def compute_ap(detections: list[DetectionRecord], groundtruth: list[GroundTruthBox],
               iou_thresholds: tuple[float, ...] | list[float] = DEFAULT_IOU_THRESHOLDS,
               vocab: list[ClassEntry] | None = None,
               include_zero_gt: bool = False) -> EvalResult:
    """Evaluate detections against ground truth.

    ``vocab`` supplies frequency buckets and the weakly-supervised split; when
    omitted, classes are taken from the ground truth and bucket metrics are
    NaN. ``include_zero_gt`` counts vocabulary classes without ground truth
    as AP 0 instead of excluding them.
    """
    thresholds = tuple(iou_thresholds)
    if not thresholds or any(not (0.0 < t <= 1.0) for t in thresholds):
        raise ValidationError(f"IoU thresholds must lie in (0, 1]: {thresholds}")
    known_images = {gt.image_id for gt in groundtruth}
    gt_classes = {gt.class_id for gt in groundtruth}
    if vocab is not None:
        known_classes = {e.id for e in vocab}
        missing = gt_classes - known_classes
        if missing:
            raise ValidationError(f"ground truth for classes outside vocabulary: {sorted(missing)[:5]}")
    else:
        known_classes = gt_classes | {d.class_id for d in detections}
    for det in detections:
        if det.class_id not in known_classes:
            raise ValidationError(f"detection references unknown class {det.class_id!r}")
        if det.image_id not in known_images:
            raise ValidationError(f"detection references unknown image {det.image_id!r}")

    dets_by_class: dict[str, list[tuple[int, DetectionRecord]]] = {}
    for idx, det in enumerate(detections):
        dets_by_class.setdefault(det.class_id, []).append((idx, det))
    gts_by_class: dict[str, list[GroundTruthBox]] = {}
    for gt in groundtruth:
        gts_by_class.setdefault(gt.class_id, []).append(gt)

    evaluated_classes = sorted(gts_by_class)
    if include_zero_gt:
        evaluated_classes = sorted(known_classes)

    per_class: dict[str, float] = {}
    per_class_at: dict[float, dict[str, float]] = {t: {} for t in thresholds}
    for class_id in evaluated_classes:
        gts = gts_by_class.get(class_id, [])
        dets = dets_by_class.get(class_id, [])
        if not gts:
            per_class[class_id] = 0.0
            for t in thresholds:
                per_class_at[t][class_id] = 0.0
            continue
        ap_per_threshold = []
        for t in thresholds:
            flags = _match_class(dets, gts, t)
            ap_t = _average_precision(flags, len(gts))
            per_class_at[t][class_id] = ap_t
            ap_per_threshold.append(ap_t)
        per_class[class_id] = float(np.mean(ap_per_threshold))

    result = EvalResult(per_class=per_class, thresholds=thresholds)
    if per_class:
        result.map = float(np.mean([per_class[c] for c in sorted(per_class)]))
    for probe, attr in ((0.5, "ap50"), (0.75, "ap75")):
        hits = [t for t in thresholds if abs(t - probe) < 1e-9]
        if hits and per_class:
            table = per_class_at[hits[0]]
            setattr(result, attr, float(np.mean([table[c] for c in sorted(table)])))

    if vocab is not None and per_class:
        buckets: dict[str, list[float]] = {"rare": [], "common": [], "frequent": []}
        rare_weak: list[float] = []
        rare_zero: list[float] = []
        by_id = {e.id: e for e in vocab}
        for class_id in sorted(per_class):
            entry = by_id.get(class_id)
            if entry is None:
                continue
            buckets[entry.bucket].append(per_class[class_id])
            if entry.bucket == "rare":
                (rare_weak if entry.weak else rare_zero).append(per_class[class_id])
        if buckets["rare"]:
            result.ap_rare = float(np.mean(buckets["rare"]))
        if buckets["common"]:
            result.ap_common = float(np.mean(buckets["common"]))
        if buckets["frequent"]:
            result.ap_frequent = float(np.mean(buckets["frequent"]))
        if rare_weak:
            result.ap_rare_weak = float(np.mean(rare_weak))
        if rare_zero:
            result.ap_rare_zero = float(np.mean(rare_zero))
    return result


# ---------------------------------------------------------------------------
# JSONL interfaces
# ---------------------------------------------------------------------------

def load_detections(path: str) -> list[DetectionRecord]:
    return [
        DetectionRecord(obj["image"], obj["class"], tuple(obj["box"]), obj["score"])
        for obj in _read_jsonl(path, required=("image", "class", "box", "score"))
    ]


def load_groundtruth(path: str) -> list[GroundTruthBox]:
    return [
        GroundTruthBox(obj["image"], obj["class"], tuple(obj["box"]))
        for obj in _read_jsonl(path, required=("image", "class", "box"))
    ]


def _read_jsonl(path: str, required: tuple[str, ...]) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            for key in required:
                if key not in obj:
                    raise ValidationError(f"{path}:{lineno}: missing field {key!r}")
            if len(obj["box"]) != 4:
                raise ValidationError(f"{path}:{lineno}: box must have 4 entries")
            rows.append(obj)
    return rows


def detections_to_jsonl(detections: list[DetectionRecord]) -> str:
    lines = [
        json.dumps({"image": d.image_id, "class": d.class_id,
                    "box": list(d.box), "score": d.score}, sort_keys=True)
        for d in detections
    ]
    return "\n".join(lines) + ("\n" if lines else "")
