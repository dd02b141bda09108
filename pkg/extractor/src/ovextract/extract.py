"""Embedding extraction: description texts or augmentation jobs to banks.

Requests are batched; items are processed and written in deterministic
input order. Dimension drift between batches aborts the run since a bank
has a single dimension.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

from .bankio import BankWriter
from .descriptions import fill_embeddings, read_description_lines
from .images import (DEFAULT_ENCODER_SIZE, AugmentationJob, apply_job,
                     encode_pixels, load_jobs)

_IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".ppm")


class DimensionDriftError(Exception):
    """The encoder returned a different dimension mid-run."""


@dataclass
class ExtractionReport:
    encoded: int = 0
    skipped: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({"encoded": self.encoded, "skipped": self.skipped},
                          indent=2, sort_keys=True)


def extract_text_embeddings(descriptions_path: str, client,
                            out_jsonl: str | None = None,
                            out_bank: str | None = None,
                            batch_size: int = 64) -> ExtractionReport:
    """Embed description texts; write the completed JSONL and/or a bank."""
    rows = read_description_lines(descriptions_path)
    report = ExtractionReport()
    lines: list[str] = []
    writer: BankWriter | None = None
    for start in range(0, len(rows), batch_size):
        chunk = rows[start:start + batch_size]
        filled = fill_embeddings(chunk, client)
        lines.extend(filled)
        for line in filled:
            obj = json.loads(line)
            vec = np.asarray(obj["embedding"], dtype=np.float32)
            if writer is None:
                writer = BankWriter(dimension=vec.shape[0])
            elif vec.shape[0] != writer.dimension:
                raise DimensionDriftError(
                    f"encoder returned dim {vec.shape[0]}, expected {writer.dimension}")
            writer.add(obj["class"], vec, source="synthetic", augmentation=0)
            report.encoded += 1
    if out_jsonl:
        _write_lines(out_jsonl, lines)
    if out_bank:
        if writer is None:
            raise ValueError("no descriptions to embed")
        writer.write(out_bank)
    return report


def _find_image(images_dir: str, exemplar_id: str) -> str | None:
    base = os.path.join(images_dir, exemplar_id)
    if os.path.exists(base):
        return base
    for ext in _IMAGE_EXTENSIONS:
        if os.path.exists(base + ext):
            return base + ext
    return None


def extract_image_embeddings(jobs_path: str, images_dir: str, client,
                             out_bank: str, source: str = "in21k",
                             encoder_size: int = DEFAULT_ENCODER_SIZE,
                             batch_size: int = 64) -> ExtractionReport:
    """Execute augmentation jobs and encode the results into a bank.

    Missing or unreadable images are skipped and reported; every encoded
    record keeps its job's class and variant index.
    """
    jobs = load_jobs(jobs_path)
    report = ExtractionReport()
    writer: BankWriter | None = None
    pending: list[tuple[AugmentationJob, bytes]] = []

    def flush():
        nonlocal writer
        if not pending:
            return
        vectors = client.embed_image_bytes([blob for _, blob in pending])
        for (job, _), vec in zip(pending, vectors):
            if writer is None:
                writer = BankWriter(dimension=vec.shape[0])
            elif vec.shape[0] != writer.dimension:
                raise DimensionDriftError(
                    f"encoder returned dim {vec.shape[0]}, expected {writer.dimension}")
            writer.add(job.class_id, vec, source=source, augmentation=job.variant)
            report.encoded += 1
        pending.clear()

    for job in jobs:
        path = _find_image(images_dir, job.exemplar_id)
        if path is None:
            report.skipped.append({"exemplar": job.exemplar_id, "class": job.class_id,
                                   "reason": "image not found"})
            continue
        try:
            with Image.open(path) as img:
                processed = apply_job(img, job, target_size=encoder_size)
        except (OSError, UnidentifiedImageError) as exc:
            report.skipped.append({"exemplar": job.exemplar_id, "class": job.class_id,
                                   "reason": f"unreadable: {exc}"})
            continue
        pending.append((job, encode_pixels(processed)))
        if len(pending) >= batch_size:
            flush()
    flush()
    if writer is None:
        raise ValueError("no jobs produced any encodable images")
    writer.write(out_bank)
    return report


def _write_lines(path: str, lines: list[str]) -> None:
    payload = ("\n".join(lines) + "\n") if lines else ""
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(payload)
    os.replace(tmp, path)
