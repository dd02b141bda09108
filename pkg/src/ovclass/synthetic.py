"""Deterministic generators for desk-scale fixtures and benchmarks.

Cluster banks place one unit-norm random center per class and perturb it
with Gaussian noise before re-normalizing, yielding well-separated classes
whose difficulty is controlled by the noise scale. Detection fixtures are
hand-constructed scenarios whose expected metric values were produced by
the standalone brute-force oracle in ``tools/detection_fixture_oracle.py``
and checked in beside the package.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .average_precision import DetectionRecord, GroundTruthBox
from .bank import ClassEntry, EmbeddingBank
from .errors import ValidationError


@dataclass(frozen=True)
class ClusterSpec:
    n_classes: int = 50
    dimension: int = 32
    per_class: int = 20
    noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.dimension < 2:
            raise ValidationError("cluster dimension must be at least 2")
        if self.n_classes < 1 or self.per_class < 1:
            raise ValidationError("class and per-class counts must be positive")
        if self.noise < 0:
            raise ValidationError("noise must be non-negative")


def _class_id(i: int) -> str:
    return f"class{i:03d}"


def _perturb(center: np.ndarray, noise: float, rng: np.random.Generator,
             count: int) -> np.ndarray:
    if noise == 0.0:
        return np.tile(center, (count, 1))
    pts = center[None, :] + noise * rng.standard_normal((count, center.size))
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def gen_cluster_bank(spec: ClusterSpec) -> EmbeddingBank:
    """One bank with ``per_class`` unit embeddings around each class center."""
    bank, _ = gen_cluster_split(spec, n_query=0)
    return bank


def gen_cluster_split(spec: ClusterSpec, n_query: int) -> tuple[EmbeddingBank, EmbeddingBank]:
    """Training bank plus a held-out query bank drawn around the same centers."""
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    train = EmbeddingBank(dimension=spec.dimension)
    queries = EmbeddingBank(dimension=spec.dimension)
    for i in range(spec.n_classes):
        center = rng.standard_normal(spec.dimension)
        center /= np.linalg.norm(center)
        cid = _class_id(i)
        for row in _perturb(center, spec.noise, rng, spec.per_class):
            train.add(cid, row.astype(np.float32))
        if n_query > 0:
            for row in _perturb(center, spec.noise, rng, n_query):
                queries.add(cid, row.astype(np.float32))
    return train, queries


def benchmark_spec() -> ClusterSpec:
    """The 50-class desk benchmark: well-separated unit clusters in 32-D."""
    return ClusterSpec(n_classes=50, dimension=32, per_class=20, noise=0.05, seed=42)


def benchmark_train_config():
    """Training recipe for the desk benchmark.

    The contrastive temperature is raised to 0.1 here: the production
    default (0.02) is tuned for millions of images across thousands of
    classes and over-sharpens the map on 50 tight clusters, hurting
    held-out retrieval.
    """
    from .training import TrainConfig

    return TrainConfig(k_max=5, temperature=0.1, queue_capacity=64,
                       queue_slots_per_iteration=25, batch_size=25,
                       epochs=30, learning_rate=1e-3, seed=7)


def benchmark_aggregator_config():
    from .aggregator import AggregatorConfig

    return AggregatorConfig(blocks=2, dim=32, mlp_dim=128, heads=4, seed=7)


def cluster_vocabulary(spec: ClusterSpec) -> list[ClassEntry]:
    """A vocabulary for a cluster bank; every fifth class is tagged rare."""
    entries = []
    for i in range(spec.n_classes):
        bucket = "rare" if i % 5 == 0 else ("common" if i % 5 in (1, 2) else "frequent")
        entries.append(ClassEntry(id=_class_id(i), name=f"synthetic class {i}",
                                  synset=None, bucket=bucket, weak=i % 2 == 0))
    return entries


# ---------------------------------------------------------------------------
# detection fixtures
# ---------------------------------------------------------------------------

def _case_perfect():
    gt = [
        GroundTruthBox("img0", "cat", (0, 0, 10, 10)),
        GroundTruthBox("img0", "dog", (20, 20, 8, 8)),
        GroundTruthBox("img1", "cat", (5, 5, 12, 6)),
    ]
    dets = [
        DetectionRecord("img0", "cat", (0, 0, 10, 10), 0.9),
        DetectionRecord("img0", "dog", (20, 20, 8, 8), 0.8),
        DetectionRecord("img1", "cat", (5, 5, 12, 6), 0.95),
    ]
    vocab = [ClassEntry("cat", "cat", bucket="frequent"),
             ClassEntry("dog", "dog", bucket="rare")]
    return dets, gt, vocab, None


def _case_half():
    # Higher-scored detection misses entirely; the hit comes second.
    gt = [GroundTruthBox("img0", "cat", (0, 0, 10, 10))]
    dets = [
        DetectionRecord("img0", "cat", (100, 100, 10, 10), 0.9),
        DetectionRecord("img0", "cat", (0, 0, 10, 10), 0.8),
    ]
    vocab = [ClassEntry("cat", "cat", bucket="common")]
    return dets, gt, vocab, None


def _case_buckets():
    # Two rare + two frequent classes with engineered per-class APs.
    gt = [
        GroundTruthBox("img0", "r1", (0, 0, 10, 10)),
        GroundTruthBox("img0", "r2", (0, 0, 10, 10)),
        GroundTruthBox("img0", "f1", (0, 0, 10, 10)),
        GroundTruthBox("img0", "f2", (0, 0, 10, 10)),
    ]
    dets = [
        DetectionRecord("img0", "r1", (0, 0, 10, 10), 0.9),
        DetectionRecord("img0", "r2", (50, 50, 10, 10), 0.9),
        DetectionRecord("img0", "r2", (0, 0, 10, 10), 0.8),
        DetectionRecord("img0", "f1", (0, 0, 10, 10), 0.7),
    ]
    vocab = [
        ClassEntry("r1", "r1", bucket="rare", weak=True),
        ClassEntry("r2", "r2", bucket="rare", weak=False),
        ClassEntry("f1", "f1", bucket="frequent"),
        ClassEntry("f2", "f2", bucket="frequent"),
    ]
    return dets, gt, vocab, None


def _case_empty():
    gt = [GroundTruthBox("img0", "cat", (0, 0, 10, 10))]
    vocab = [ClassEntry("cat", "cat", bucket="rare")]
    return [], gt, vocab, None


def _case_sevenths():
    # IoU((0,0,2,2), (1,1,2,2)) = 1/7: matched at 1/7, unmatched just above.
    gt = [GroundTruthBox("img0", "cat", (0, 0, 2, 2))]
    dets = [DetectionRecord("img0", "cat", (1, 1, 2, 2), 0.9)]
    vocab = [ClassEntry("cat", "cat", bucket="common")]
    return dets, gt, vocab, (1.0 / 7.0, 0.15)


def _case_crowded():
    # Multiple detections compete for two overlapping ground-truth boxes.
    gt = [
        GroundTruthBox("img0", "cat", (0, 0, 10, 10)),
        GroundTruthBox("img0", "cat", (5, 0, 10, 10)),
        GroundTruthBox("img1", "cat", (0, 0, 4, 4)),
    ]
    dets = [
        DetectionRecord("img0", "cat", (1, 0, 10, 10), 0.95),
        DetectionRecord("img0", "cat", (4, 0, 10, 10), 0.90),
        DetectionRecord("img0", "cat", (0, 0, 3, 3), 0.85),
        DetectionRecord("img1", "cat", (0, 0, 4, 5), 0.80),
        DetectionRecord("img1", "cat", (2, 2, 4, 4), 0.60),
    ]
    vocab = [ClassEntry("cat", "cat", bucket="frequent")]
    return dets, gt, vocab, None


_CASES = {
    "perfect": _case_perfect,
    "half": _case_half,
    "buckets": _case_buckets,
    "empty": _case_empty,
    "sevenths": _case_sevenths,
    "crowded": _case_crowded,
}


def fixture_case_ids() -> list[str]:
    return sorted(_CASES)


def _expected_values() -> dict:
    data = resources.files("ovclass").joinpath("data/detection_fixture_expected.json")
    return json.loads(data.read_text(encoding="utf-8"))


def gen_detection_fixture(case_id: str):
    """Return (detections, groundtruth, vocab, thresholds, expected metrics).

    ``expected`` maps metric names to oracle-computed values; ``thresholds``
    is None for the standard 0.50:0.05:0.95 band.
    """
    if case_id not in _CASES:
        raise KeyError(f"unknown detection fixture {case_id!r}")
    dets, gt, vocab, thresholds = _CASES[case_id]()
    expected = _expected_values()[case_id]
    return dets, gt, vocab, thresholds, expected
