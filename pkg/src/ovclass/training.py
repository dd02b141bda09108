"""Offline contrastive training of the aggregator.

Each step samples a batch of distinct classes; for every class two disjoint
exemplar sets of size k (k drawn uniformly from [1, K]) are aggregated. The
set-A outputs are anchors, the same-class set-B outputs are positives, and
the negatives are the other classes' set-B outputs plus queue entries of
other classes. Queue entries are constants: no gradient flows into history.
After the optimizer step the set-B outputs are pushed into the ring queue.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .aggregator import AggregatorConfig, AggregatorModel, aggregate_graph, init_model
from .bank import ClassEntry, EmbeddingBank, atomic_write_bytes
from .errors import ConfigError, NonFiniteError, ValidationError
from .optim import AdamWConfig, AdamWState, adamw_step

_MASK_OFFSET = -1.0e9  # additive mask; exp underflows to exactly zero


@dataclass
class TrainConfig:
    k_max: int = 5
    temperature: float = 0.02
    queue_capacity: int = 4096
    queue_slots_per_iteration: int = 512
    batch_size: int = 512
    epochs: int = 10
    learning_rate: float = 2e-4
    weight_decay: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.queue_slots_per_iteration > self.queue_capacity:
            raise ConfigError("queue slots per iteration cannot exceed capacity")
        if self.batch_size < 2:
            raise ConfigError("batch size must be at least 2")
        if self.k_max < 1:
            raise ConfigError("k_max must be at least 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        obj = json.loads(text)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown training config fields: {sorted(unknown)}")
        return cls(**obj)

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


class SamplePair(NamedTuple):
    set_a: np.ndarray
    set_b: np.ndarray
    disjoint: bool


def sample_training_pair(bank: EmbeddingBank, class_id: str, k: int,
                         rng: np.random.Generator) -> SamplePair:
    """Draw two size-k exemplar sets for one class.

    Disjoint when the class has at least 2k records; otherwise both sets are
    drawn with replacement and the pair is flagged.
    """
    if class_id not in bank.records:
        raise KeyError(f"class {class_id!r} not in bank")
    matrix = bank.embeddings(class_id)
    n = matrix.shape[0]
    if n == 0:
        raise ValidationError(f"class {class_id!r} has no embeddings")
    if k < 1:
        raise ValidationError("k must be at least 1")
    if n >= 2 * k:
        perm = rng.permutation(n)
        return SamplePair(matrix[perm[:k]], matrix[perm[k:2 * k]], True)
    idx_a = rng.integers(0, n, size=k)
    idx_b = rng.integers(0, n, size=k)
    return SamplePair(matrix[idx_a], matrix[idx_b], False)


def info_nce_loss(anchor: np.ndarray, positive: np.ndarray,
                  negatives: np.ndarray | list[np.ndarray],
                  temperature: float) -> float:
    """Contrastive loss for one anchor, computed with max-subtraction."""
    if temperature <= 0:
        raise ConfigError("temperature must be positive")
    a = np.asarray(anchor, dtype=np.float64)
    p = np.asarray(positive, dtype=np.float64)
    negs = np.asarray(negatives, dtype=np.float64)
    if negs.ndim == 1:
        negs = negs.reshape(1, -1) if negs.size else negs.reshape(0, a.size)
    if negs.shape[0] == 0:
        raise ConfigError("InfoNCE needs at least one negative")
    for name, vec in (("anchor", a), ("positive", p)):
        if abs(np.linalg.norm(vec) - 1.0) > 1e-4:
            raise ValidationError(f"{name} is not unit-norm")
    norms = np.linalg.norm(negs, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-4):
        raise ValidationError("negatives must be unit-norm")
    logits = np.concatenate(([a @ p], negs @ a)) / temperature
    m = logits.max()
    return float(m + np.log(np.exp(logits - m).sum()) - logits[0])


class NegativeQueue:
    """Fixed-capacity ring of (class id, unit embedding) set slots.

    New entries overwrite the slots at the write cursor onward, replacing
    the oldest content first; the cursor wraps modulo capacity.
    """

    def __init__(self, capacity: int, dim: int, max_push: int | None = None):
        if capacity < 1:
            raise ConfigError("queue capacity must be positive")
        self.capacity = capacity
        self.dim = dim
        self.max_push = capacity if max_push is None else max_push
        self.embeddings = np.zeros((capacity, dim), dtype=np.float32)
        self.class_ids: list[str | None] = [None] * capacity
        self.cursor = 0
        self.fill = 0

    def negatives_excluding(self, class_id: str) -> np.ndarray:
        """Stored embeddings whose class differs from ``class_id``."""
        keep = [i for i in range(self.fill if self.fill < self.capacity else self.capacity)
                if self.class_ids[i] is not None and self.class_ids[i] != class_id]
        return self.embeddings[keep] if keep else np.zeros((0, self.dim), dtype=np.float32)

    def snapshot(self) -> tuple[np.ndarray, list[str]]:
        filled = [i for i in range(self.capacity) if self.class_ids[i] is not None]
        ids = [self.class_ids[i] for i in filled]
        return self.embeddings[filled].copy(), ids  # type: ignore[return-value]


def queue_push(queue: NegativeQueue, entries: list[tuple[str, np.ndarray]]) -> None:
    if len(entries) > queue.max_push:
        raise ValidationError(
            f"cannot push {len(entries)} entries; at most {queue.max_push} per iteration")
    if len(entries) > queue.capacity:
        raise ValidationError("push larger than queue capacity")
    for class_id, emb in entries:
        vec = np.asarray(emb, dtype=np.float32)
        if vec.shape != (queue.dim,):
            raise ValidationError(f"queue entry for {class_id!r} has shape {vec.shape}")
        if abs(float(np.linalg.norm(vec)) - 1.0) > 1e-5:
            raise ValidationError(f"queue entry for {class_id!r} is not unit-norm")
        queue.embeddings[queue.cursor] = vec
        queue.class_ids[queue.cursor] = class_id
        queue.cursor = (queue.cursor + 1) % queue.capacity
        queue.fill = min(queue.fill + 1, queue.capacity)


@dataclass
class TrainReport:
    seed: int
    config: dict
    epoch_losses: list[float] = field(default_factory=list)
    final_loss: float = float("nan")
    steps: int = 0
    replacement_pairs: int = 0
    wall_clock_seconds: float = 0.0

    def to_json(self, include_timing: bool = False) -> str:
        payload = {
            "seed": self.seed,
            "config": self.config,
            "epoch_losses": self.epoch_losses,
            "final_loss": self.final_loss,
            "steps": self.steps,
            "replacement_pairs": self.replacement_pairs,
        }
        if include_timing:
            payload["wall_clock_seconds"] = self.wall_clock_seconds
        return json.dumps(payload, sort_keys=True, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "mean_loss"])
        for epoch, loss in enumerate(self.epoch_losses, start=1):
            writer.writerow([epoch, f"{loss:.6f}"])
        return buf.getvalue()


def batch_contrastive_loss(anchors: ad.Tensor, positives: ad.Tensor,
                           class_ids: list[str], queue: NegativeQueue,
                           temperature: float) -> ad.Tensor:
    """Mean InfoNCE over a batch of anchor/positive pairs.

    ``anchors`` and ``positives`` are (B, d) with distinct classes per row.
    Queue entries sharing the anchor's class are masked out additively.
    """
    if len(set(class_ids)) != len(class_ids):
        raise ValidationError("batch classes must be distinct")
    inv_t = 1.0 / temperature
    batch_logits = ad.scale(ad.matmul(anchors, ad.transpose(positives)), inv_t)
    pos = ad.diagonal(batch_logits)
    queue_matrix, queue_ids = queue.snapshot()
    if queue_matrix.shape[0] > 0:
        q = ad.constant(queue_matrix.astype(anchors.data.dtype))
        queue_logits = ad.scale(ad.matmul(anchors, ad.transpose(q)), inv_t)
        same_class = np.asarray(queue_ids, dtype=object)[None, :] == \
            np.asarray(class_ids, dtype=object)[:, None]
        mask = np.where(same_class, _MASK_OFFSET, 0.0).astype(anchors.data.dtype)
        queue_logits = ad.add(queue_logits, ad.constant(mask))
        all_logits = ad.concat([batch_logits, queue_logits], axis=1)
    else:
        all_logits = batch_logits
    lse = ad.logsumexp_rows(all_logits)
    return ad.tmean(ad.sub(lse, pos))


def train(config: TrainConfig, bank: EmbeddingBank,
          vocab: list[ClassEntry] | None = None,
          aggregator_config: AggregatorConfig | None = None,
          model: AggregatorModel | None = None,
          checkpoint_callback=None) -> tuple[AggregatorModel, TrainReport]:
    """Train the aggregator on an embedding bank.

    Deterministic given the seed; single-threaded. ``checkpoint_callback``
    (if given) is invoked with the model after every epoch.
    """
    if vocab is not None:
        class_ids = sorted(e.id for e in vocab if e.id in bank.records)
    else:
        class_ids = bank.classes()
    if len(class_ids) < config.batch_size:
        raise ConfigError(
            f"bank covers {len(class_ids)} classes; batch size {config.batch_size} needs at least that many")
    if config.batch_size > config.queue_slots_per_iteration:
        raise ConfigError("batch outputs per step exceed the queue update quantum")

    if model is None:
        if aggregator_config is None:
            aggregator_config = AggregatorConfig(dim=bank.dimension, seed=config.seed)
        model = init_model(aggregator_config)
    if model.config.dim != bank.dimension:
        raise ConfigError(
            f"bank dimension {bank.dimension} != model dimension {model.config.dim}")

    rng = np.random.Generator(np.random.PCG64(config.seed))
    queue = NegativeQueue(config.queue_capacity, bank.dimension,
                          max_push=config.queue_slots_per_iteration)
    opt_state = AdamWState.for_params(model.params, AdamWConfig(
        lr=config.learning_rate, weight_decay=config.weight_decay))
    report = TrainReport(seed=config.seed, config=config.to_dict())
    started = time.perf_counter()

    step_index = 0
    for _ in range(config.epochs):
        order = rng.permutation(len(class_ids))
        epoch_losses: list[float] = []
        for start in range(0, len(order), config.batch_size):
            chunk = [class_ids[i] for i in order[start:start + config.batch_size]]
            if len(chunk) < 2:
                continue
            step_index += 1
            anchors_rows: list[ad.Tensor] = []
            positives_rows: list[ad.Tensor] = []
            model.params.zero_grad()
            for cid in chunk:
                k = int(rng.integers(1, config.k_max + 1))
                pair = sample_training_pair(bank, cid, k, rng)
                if not pair.disjoint:
                    report.replacement_pairs += 1
                try:
                    anchors_rows.append(
                        aggregate_graph(model.params, ad.constant(pair.set_a), model.config))
                    positives_rows.append(
                        aggregate_graph(model.params, ad.constant(pair.set_b), model.config))
                except NonFiniteError as exc:
                    raise NonFiniteError(
                        exc.op, f"step {step_index}, class {cid!r}") from exc
            anchors = ad.concat(anchors_rows, axis=0)
            positives = ad.concat(positives_rows, axis=0)
            try:
                loss = batch_contrastive_loss(anchors, positives, chunk, queue,
                                              config.temperature)
            except NonFiniteError as exc:
                raise NonFiniteError(exc.op, f"step {step_index}") from exc
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise NonFiniteError("loss", f"step {step_index}")
            loss.backward()
            adamw_step(model.params, opt_state, model.params.gradients())
            queue_push(queue, [(cid, row.data[0]) for cid, row in zip(chunk, positives_rows)])
            epoch_losses.append(loss_value)
        report.epoch_losses.append(float(np.mean(epoch_losses)) if epoch_losses else float("nan"))
        if checkpoint_callback is not None:
            checkpoint_callback(model)
    report.steps = step_index
    report.final_loss = report.epoch_losses[-1] if report.epoch_losses else 0.0
    report.wall_clock_seconds = time.perf_counter() - started
    return model, report


def write_report(report: TrainReport, json_path: str | None = None,
                 csv_path: str | None = None) -> None:
    if json_path:
        atomic_write_bytes(json_path, report.to_json().encode("utf-8"))
    if csv_path:
        atomic_write_bytes(csv_path, report.to_csv().encode("utf-8"))
