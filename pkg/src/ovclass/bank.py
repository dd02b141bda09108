"""Embedding banks, classifier banks, and class vocabularies.

Binary formats (all integers little-endian):

* Embedding bank, magic ``OVEB``, version 1: header = magic, u16 version,
  u32 dimension, u32 class count; then per class (sorted by class id):
  u16-length-prefixed UTF-8 class id, u32 record count, and per record a
  u8 source tag, u16 augmentation index, and dimension float32 values.
* Classifier bank, magic ``OVCB``, version 1: same header; per class:
  length-prefixed id, u8 modality tag, u16-length-prefixed UTF-8
  provenance note, and dimension float32 values.

Writers emit classes in sorted id order so equal banks serialize to
identical bytes. Vocabularies are JSON lines with fields
``id, name, synset, bucket, weak``.
"""

from __future__ import annotations

import io
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import BankCorruptionError, BankFormatError, ValidationError

SOURCE_TAGS = ("in21k", "detection-box", "visualgenome", "manual-alias", "synthetic")
MODALITIES = ("text", "vision-agg", "vision-mean", "multimodal")
FREQUENCY_BUCKETS = ("rare", "common", "frequent")

_BANK_MAGIC = b"OVEB"
_CLS_MAGIC = b"OVCB"
_VERSION = 1


def atomic_write_bytes(path: str, payload: bytes) -> None:
    """Write via a temp file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# vocabulary
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassEntry:
    id: str
    name: str
    synset: str | None = None
    bucket: str = "common"
    weak: bool = False

    def __post_init__(self):
        if not self.id:
            raise ValidationError("class id must be nonempty")
        if self.bucket not in FREQUENCY_BUCKETS:
            raise ValidationError(f"unknown frequency bucket {self.bucket!r}")


def load_vocabulary(path: str) -> list[ClassEntry]:
    entries: list[ClassEntry] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            for key in ("id", "name", "bucket"):
                if key not in obj:
                    raise ValidationError(f"{path}:{lineno}: missing field {key!r}")
            entry = ClassEntry(id=obj["id"], name=obj["name"], synset=obj.get("synset"),
                               bucket=obj["bucket"], weak=bool(obj.get("weak", False)))
            if entry.id in seen:
                raise ValidationError(f"{path}:{lineno}: duplicate class id {entry.id!r}")
            seen.add(entry.id)
            entries.append(entry)
    return entries


def save_vocabulary(entries: list[ClassEntry], path: str) -> None:
    lines = []
    for e in entries:
        lines.append(json.dumps({"id": e.id, "name": e.name, "synset": e.synset,
                                 "bucket": e.bucket, "weak": e.weak}, sort_keys=True))
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


# ---------------------------------------------------------------------------
# embedding bank
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BankRecord:
    embedding: np.ndarray
    source: str = "synthetic"
    augmentation: int = 0


@dataclass
class EmbeddingBank:
    dimension: int
    records: dict[str, list[BankRecord]] = field(default_factory=dict)

    def add(self, class_id: str, embedding: np.ndarray, source: str = "synthetic",
            augmentation: int = 0) -> None:
        arr = np.asarray(embedding, dtype=np.float32)
        if arr.shape != (self.dimension,):
            raise ValidationError(
                f"embedding for {class_id!r} has shape {arr.shape}, expected ({self.dimension},)")
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f"non-finite embedding for class {class_id!r}")
        if source not in SOURCE_TAGS:
            raise ValidationError(f"unknown source tag {source!r}")
        if augmentation < 0 or augmentation > 0xFFFF:
            raise ValidationError(f"augmentation index {augmentation} out of range")
        self.records.setdefault(class_id, []).append(
            BankRecord(arr, source, augmentation))

    def classes(self) -> list[str]:
        return sorted(self.records)

    def embeddings(self, class_id: str) -> np.ndarray:
        recs = self.records.get(class_id)
        if recs is None:
            raise KeyError(f"class {class_id!r} not in bank")
        return np.stack([r.embedding for r in recs])

    def n_records(self) -> int:
        return sum(len(v) for v in self.records.values())

    def validate(self) -> None:
        for class_id, recs in self.records.items():
            for i, rec in enumerate(recs):
                if rec.embedding.shape != (self.dimension,):
                    raise ValidationError(
                        f"class {class_id!r} record {i}: dimension mismatch")
                if not np.all(np.isfinite(rec.embedding)):
                    raise ValidationError(
                        f"class {class_id!r} record {i}: non-finite value")


def _encode_class_id(class_id: str) -> bytes:
    raw = class_id.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValidationError(f"class id too long: {class_id[:32]!r}...")
    return struct.pack("<H", len(raw)) + raw


def save_bank(bank: EmbeddingBank, path: str) -> None:
    bank.validate()
    buf = io.BytesIO()
    buf.write(_BANK_MAGIC)
    buf.write(struct.pack("<HII", _VERSION, bank.dimension, len(bank.records)))
    for class_id in sorted(bank.records):
        recs = bank.records[class_id]
        buf.write(_encode_class_id(class_id))
        buf.write(struct.pack("<I", len(recs)))
        for rec in recs:
            buf.write(struct.pack("<BH", SOURCE_TAGS.index(rec.source), rec.augmentation))
            buf.write(rec.embedding.astype("<f4").tobytes())
    atomic_write_bytes(path, buf.getvalue())


class _Reader:
    def __init__(self, payload: bytes, path: str):
        self.payload = payload
        self.offset = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.payload):
            raise BankCorruptionError(f"{self.path}: truncated while reading {what}")
        chunk = self.payload[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def done(self) -> bool:
        return self.offset == len(self.payload)


def load_bank(path: str) -> EmbeddingBank:
    with open(path, "rb") as fh:
        payload = fh.read()
    r = _Reader(payload, path)
    magic = r.take(4, "magic")
    if magic != _BANK_MAGIC:
        raise BankFormatError(f"{path}: bad magic {magic!r}, expected {_BANK_MAGIC!r}")
    version, dimension, n_classes = r.unpack("<HII", "header")
    if version != _VERSION:
        raise BankFormatError(f"{path}: unsupported version {version}")
    if dimension == 0:
        raise BankFormatError(f"{path}: zero dimension")
    bank = EmbeddingBank(dimension=dimension)
    for _ in range(n_classes):
        (id_len,) = r.unpack("<H", "class id length")
        class_id = r.take(id_len, "class id").decode("utf-8")
        (n_recs,) = r.unpack("<I", f"record count for {class_id!r}")
        recs: list[BankRecord] = []
        for i in range(n_recs):
            tag, aug = r.unpack("<BH", f"record header {class_id!r}[{i}]")
            if tag >= len(SOURCE_TAGS):
                raise BankCorruptionError(f"{path}: unknown source tag {tag} in {class_id!r}[{i}]")
            raw = r.take(4 * dimension, f"embedding {class_id!r}[{i}]")
            vec = np.frombuffer(raw, dtype="<f4").astype(np.float32)
            if not np.all(np.isfinite(vec)):
                raise ValidationError(f"{path}: non-finite value in class {class_id!r} record {i}")
            recs.append(BankRecord(vec, SOURCE_TAGS[tag], aug))
        if class_id in bank.records:
            raise BankCorruptionError(f"{path}: duplicate class {class_id!r}")
        bank.records[class_id] = recs
    if not r.done():
        raise BankCorruptionError(f"{path}: {len(payload) - r.offset} trailing bytes")
    return bank


# ---------------------------------------------------------------------------
# classifier bank
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassifierEntry:
    vector: np.ndarray
    modality: str
    note: str = ""


@dataclass
class ClassifierBank:
    dimension: int
    entries: dict[str, ClassifierEntry] = field(default_factory=dict)

    def add(self, class_id: str, vector: np.ndarray, modality: str, note: str = "") -> None:
        arr = np.asarray(vector, dtype=np.float32)
        if arr.shape != (self.dimension,):
            raise ValidationError(
                f"classifier for {class_id!r} has shape {arr.shape}, expected ({self.dimension},)")
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f"non-finite classifier for class {class_id!r}")
        if modality not in MODALITIES:
            raise ValidationError(f"unknown modality {modality!r}")
        if modality == "multimodal" and float(np.linalg.norm(arr)) > 2.0 + 1e-6:
            raise ValidationError(f"multimodal classifier for {class_id!r} has norm > 2")
        self.entries[class_id] = ClassifierEntry(arr, modality, note)

    def classes(self) -> list[str]:
        return sorted(self.entries)

    def matrix(self) -> tuple[np.ndarray, list[str]]:
        """Classifier vectors stacked row-wise, classes in sorted id order."""
        ids = self.classes()
        if not ids:
            raise ValidationError("classifier bank is empty")
        return np.stack([self.entries[c].vector for c in ids]), ids


def save_classifier_bank(bank: ClassifierBank, path: str) -> None:
    buf = io.BytesIO()
    buf.write(_CLS_MAGIC)
    buf.write(struct.pack("<HII", _VERSION, bank.dimension, len(bank.entries)))
    for class_id in sorted(bank.entries):
        entry = bank.entries[class_id]
        buf.write(_encode_class_id(class_id))
        buf.write(struct.pack("<B", MODALITIES.index(entry.modality)))
        note = entry.note.encode("utf-8")
        if len(note) > 0xFFFF:
            raise ValidationError(f"provenance note too long for {class_id!r}")
        buf.write(struct.pack("<H", len(note)) + note)
        buf.write(entry.vector.astype("<f4").tobytes())
    atomic_write_bytes(path, buf.getvalue())


def load_classifier_bank(path: str) -> ClassifierBank:
    with open(path, "rb") as fh:
        payload = fh.read()
    r = _Reader(payload, path)
    magic = r.take(4, "magic")
    if magic != _CLS_MAGIC:
        raise BankFormatError(f"{path}: bad magic {magic!r}, expected {_CLS_MAGIC!r}")
    version, dimension, n_classes = r.unpack("<HII", "header")
    if version != _VERSION:
        raise BankFormatError(f"{path}: unsupported version {version}")
    bank = ClassifierBank(dimension=dimension)
    for _ in range(n_classes):
        (id_len,) = r.unpack("<H", "class id length")
        class_id = r.take(id_len, "class id").decode("utf-8")
        (tag,) = r.unpack("<B", f"modality tag for {class_id!r}")
        if tag >= len(MODALITIES):
            raise BankCorruptionError(f"{path}: unknown modality tag {tag}")
        (note_len,) = r.unpack("<H", "note length")
        note = r.take(note_len, "note").decode("utf-8")
        raw = r.take(4 * dimension, f"classifier {class_id!r}")
        vec = np.frombuffer(raw, dtype="<f4").astype(np.float32)
        if not np.all(np.isfinite(vec)):
            raise ValidationError(f"{path}: non-finite classifier for {class_id!r}")
        bank.entries[class_id] = ClassifierEntry(vec, MODALITIES[tag], note)
    if not r.done():
        raise BankCorruptionError(f"{path}: {len(payload) - r.offset} trailing bytes")
    return bank


def classifier_bank_to_json(bank: ClassifierBank) -> str:
    """Human-inspectable JSON export of a classifier bank."""
    payload = {
        "dimension": bank.dimension,
        "classes": {
            cid: {
                "modality": e.modality,
                "note": e.note,
                "vector": [float(v) for v in e.vector],
            }
            for cid, e in sorted(bank.entries.items())
        },
    }
    return json.dumps(payload, sort_keys=True, indent=2)
