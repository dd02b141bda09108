"""Generate class descriptions through a text endpoint.

Prompts follow the shared rule: "What does a(n) {class name} look like?"
with the article chosen from the leading letters (vowel rule plus a small
exception table). Output is the descriptions JSONL the classifier builder
ingests; classes whose endpoint calls fail after retries are recorded as
incomplete instead of aborting the batch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .endpoints import RateLimitedError

DEFAULT_PROMPT_PATTERN = "What does a(n) {class name} look like?"

_AN_PREFIXES = ("hour", "honest", "honor", "heir", "x-ray")
_A_PREFIXES = ("uni", "use", "user", "usu", "one", "euro", "eu", "ewe", "uku", "ute")
_VOWELS = "aeiou"
_VOWEL_NAME_LETTERS = set("aefhilmnorsx")


def choose_article(class_name: str) -> str:
    word = class_name.strip().lower().split()[0]
    head = word.rstrip(".,;:")
    if any(head.startswith(p) for p in _AN_PREFIXES):
        return "an"
    if any(head.startswith(p) for p in _A_PREFIXES):
        return "a"
    if len(head) == 1 or (len(head) > 1 and not head[1].isalpha() and head[1] != "-"):
        return "an" if head[0] in _VOWEL_NAME_LETTERS else "a"
    return "an" if head[0] in _VOWELS else "a"


def render_prompt(class_name: str, pattern: str = DEFAULT_PROMPT_PATTERN) -> str:
    if not class_name.strip():
        raise ValueError("class name must be nonempty")
    text = pattern
    if "a(n)" in text:
        text = text.replace("a(n)", choose_article(class_name))
    return text.replace("{class name}", class_name)


def load_vocabulary_names(path: str) -> list[tuple[str, str]]:
    """Read (class id, display name) pairs from the vocabulary JSONL."""
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "id" not in obj or "name" not in obj:
                raise ValueError(f"{path}:{lineno}: vocabulary line needs id and name")
            pairs.append((obj["id"], obj["name"]))
    return pairs


@dataclass
class GenerationReport:
    requested: int = 0
    completed: int = 0
    incomplete: dict[str, str] = field(default_factory=dict)
    empty_retries: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "requested": self.requested,
            "completed": self.completed,
            "incomplete": self.incomplete,
            "empty_retries": sorted(self.empty_retries),
        }, indent=2, sort_keys=True)


def generate_descriptions(vocab: list[tuple[str, str]], client, n: int = 10,
                          temperature: float = 0.7,
                          pattern: str = DEFAULT_PROMPT_PATTERN
                          ) -> tuple[list[str], GenerationReport]:
    """Produce descriptions JSONL lines, one per generated description.

    An all-empty completion batch is retried once; classes still failing
    (or rate-limited past the retry budget) are reported as incomplete.
    """
    lines: list[str] = []
    report = GenerationReport(requested=len(vocab))
    for class_id, name in vocab:
        prompt = render_prompt(name, pattern)
        try:
            texts = client.complete(prompt, n, temperature)
            if all(not t.strip() for t in texts):
                report.empty_retries.append(class_id)
                texts = client.complete(prompt, n, temperature)
        except RateLimitedError as exc:
            report.incomplete[class_id] = str(exc)
            continue
        kept = [t.strip() for t in texts if t.strip()]
        if not kept:
            report.incomplete[class_id] = "empty completions after retry"
            continue
        for text in kept:
            lines.append(json.dumps({"class": class_id, "text": text,
                                     "embedding": None}, sort_keys=True))
        report.completed += 1
    return lines, report


def read_description_lines(path: str) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "class" not in obj or "text" not in obj:
                raise ValueError(f"{path}:{lineno}: needs class and text fields")
            rows.append(obj)
    return rows


def fill_embeddings(rows: list[dict], client) -> list[str]:
    """Embed every description text and return completed JSONL lines."""
    vectors = client.embed_texts([r["text"] for r in rows])
    lines = []
    for row, vec in zip(rows, vectors):
        lines.append(json.dumps({"class": row["class"], "text": row["text"],
                                 "embedding": [float(v) for v in vec]},
                                sort_keys=True))
    return lines
