"""Writer for the classifier library's embedding-bank wire format.

Format (all integers little-endian): magic ``OVEB``, u16 version (1),
u32 dimension, u32 class count; per class in sorted id order: u16-length
UTF-8 class id, u32 record count; per record: u8 source tag, u16
augmentation index, dimension float32 values.
"""

from __future__ import annotations

import io
import os
import struct
import tempfile

import numpy as np

SOURCE_TAGS = ("in21k", "detection-box", "visualgenome", "manual-alias", "synthetic")

_MAGIC = b"OVEB"
_VERSION = 1


class BankWriter:
    def __init__(self, dimension: int):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self._records: dict[str, list[tuple[int, int, np.ndarray]]] = {}

    def add(self, class_id: str, embedding: np.ndarray, source: str = "synthetic",
            augmentation: int = 0) -> None:
        vec = np.asarray(embedding, dtype=np.float32)
        if vec.shape != (self.dimension,):
            raise ValueError(
                f"embedding for {class_id!r} has shape {vec.shape}, expected ({self.dimension},)")
        if not np.all(np.isfinite(vec)):
            raise ValueError(f"non-finite embedding for {class_id!r}")
        if source not in SOURCE_TAGS:
            raise ValueError(f"unknown source tag {source!r}")
        if not 0 <= augmentation <= 0xFFFF:
            raise ValueError(f"augmentation index {augmentation} out of range")
        self._records.setdefault(class_id, []).append(
            (SOURCE_TAGS.index(source), augmentation, vec))

    def n_records(self) -> int:
        return sum(len(v) for v in self._records.values())

    def write(self, path: str) -> None:
        buf = io.BytesIO()
        buf.write(_MAGIC)
        buf.write(struct.pack("<HII", _VERSION, self.dimension, len(self._records)))
        for class_id in sorted(self._records):
            raw_id = class_id.encode("utf-8")
            buf.write(struct.pack("<H", len(raw_id)) + raw_id)
            records = self._records[class_id]
            buf.write(struct.pack("<I", len(records)))
            for tag, aug, vec in records:
                buf.write(struct.pack("<BH", tag, aug))
                buf.write(vec.astype("<f4").tobytes())
        payload = buf.getvalue()
        directory = os.path.dirname(os.path.abspath(path))
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(payload)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
