"""Prompt rendering, description ingestion, and text classifiers.

A text classifier is the plain mean of the description embeddings for a
class; no normalization happens here (normalization is applied at fusion or
scoring time).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

DEFAULT_PROMPT_PATTERN = "What does a(n) {class name} look like?"
DEFAULT_DESCRIPTIONS_PER_CLASS = 10

# Leading-phoneme exceptions to the vowel-letter article rule. Matching is
# by prefix of the first word, lowercased.
_AN_PREFIXES = ("hour", "honest", "honor", "heir", "x-ray")
_A_PREFIXES = ("uni", "use", "user", "usu", "one", "euro", "eu", "ewe", "uku", "ute")
_VOWELS = "aeiou"
# Letters whose spoken names start with a vowel sound ("ef", "aitch" is not,
# "em", "ex", ...): relevant when a class name leads with a bare letter.
_VOWEL_NAME_LETTERS = set("aefhilmnorsx")


@dataclass(frozen=True)
class PromptTemplate:
    """Prompt pattern with a single ``{class name}`` slot and an optional
    ``a(n)`` article marker resolved per class name."""

    pattern: str = DEFAULT_PROMPT_PATTERN

    def __post_init__(self):
        if self.pattern.count("{class name}") != 1:
            raise ValidationError("template must contain exactly one {class name} slot")


def choose_article(class_name: str) -> str:
    """Pick "a" or "an" from the leading letters of the class name."""
    word = class_name.strip().lower().split()[0]
    head = word.rstrip(".,;:")
    if any(head.startswith(p) for p in _AN_PREFIXES):
        return "an"
    if any(head.startswith(p) for p in _A_PREFIXES):
        return "a"
    if len(head) == 1 or (len(head) > 1 and not head[1].isalpha() and head[1] != "-"):
        return "an" if head[0] in _VOWEL_NAME_LETTERS else "a"
    return "an" if head[0] in _VOWELS else "a"


def render_prompt(template: PromptTemplate, class_name: str) -> str:
    if not class_name or not class_name.strip():
        raise ValidationError("class name must be nonempty")
    text = template.pattern
    if "a(n)" in text:
        text = text.replace("a(n)", choose_article(class_name))
    return text.replace("{class name}", class_name)


@dataclass
class DescriptionSet:
    class_id: str
    texts: list[str] = field(default_factory=list)
    embeddings: list[np.ndarray | None] = field(default_factory=list)
    target_count: int = DEFAULT_DESCRIPTIONS_PER_CLASS

    @property
    def count(self) -> int:
        return len(self.texts)

    def embedding_matrix(self) -> np.ndarray:
        vecs = [e for e in self.embeddings if e is not None]
        if len(vecs) != len(self.embeddings):
            raise ValidationError(
                f"class {self.class_id!r} has descriptions without embeddings")
        if not vecs:
            raise ValidationError(f"class {self.class_id!r} has no descriptions")
        return np.stack(vecs)


def ingest_descriptions(path: str,
                        target_count: int = DEFAULT_DESCRIPTIONS_PER_CLASS
                        ) -> dict[str, DescriptionSet]:
    """Read a descriptions JSONL file and group lines per class.

    Each line is ``{"class": str, "text": str, "embedding": [floats]|null}``.
    Duplicate texts are retained; the generator may repeat itself.
    """
    sets: dict[str, DescriptionSet] = {}
    dimension: int | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            if "class" not in obj:
                raise ValidationError(f"{path}:{lineno}: missing 'class' field")
            if "text" not in obj and "description" not in obj:
                raise ValidationError(f"{path}:{lineno}: missing 'text' field")
            text = obj.get("text", obj.get("description"))
            if not isinstance(text, str) or not text:
                raise ValidationError(f"{path}:{lineno}: description text must be a nonempty string")
            emb = obj.get("embedding")
            vec: np.ndarray | None = None
            if emb is not None:
                vec = np.asarray(emb, dtype=np.float32)
                if vec.ndim != 1:
                    raise ValidationError(f"{path}:{lineno}: embedding must be a flat list")
                if not np.all(np.isfinite(vec)):
                    raise ValidationError(f"{path}:{lineno}: non-finite embedding value")
                if dimension is None:
                    dimension = vec.shape[0]
                elif vec.shape[0] != dimension:
                    raise ValidationError(
                        f"{path}:{lineno}: embedding dimension {vec.shape[0]} != {dimension}")
            ds = sets.setdefault(obj["class"], DescriptionSet(obj["class"], target_count=target_count))
            ds.texts.append(text)
            ds.embeddings.append(vec)
    return sets


def build_text_classifier(embeddings: list[np.ndarray] | np.ndarray) -> np.ndarray:
    """Mean of the description embeddings; raw encodings, no normalization."""
    if isinstance(embeddings, np.ndarray):
        matrix = embeddings
    else:
        if not embeddings:
            raise ValidationError("cannot build a classifier from zero embeddings")
        dims = {np.asarray(e).shape for e in embeddings}
        if len(dims) != 1 or len(next(iter(dims))) != 1:
            raise ValidationError(f"mixed embedding shapes {sorted(dims)}")
        matrix = np.stack([np.asarray(e) for e in embeddings])
    if matrix.ndim != 2 or matrix.shape[0] == 0:
        raise ValidationError("expected a nonempty (count, dim) embedding matrix")
    return matrix.astype(np.float64).mean(axis=0)
