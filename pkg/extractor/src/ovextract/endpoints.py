"""Endpoint clients: text generation and embedding extraction.

Real clients speak a plain JSON-over-HTTP protocol with retry and
exponential backoff on transient failures (rate limits, 5xx, timeouts).
Mock clients are fully offline and deterministic so the test suite and CI
never need credentials or a network.

Secrets are only ever read from the environment variable named in the
config; they are never written to any output file.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import time
from dataclasses import dataclass

import numpy as np
import requests


class EndpointError(Exception):
    """Terminal endpoint failure (bad config, non-retryable response)."""


class RateLimitedError(EndpointError):
    """Raised after retries on a transient condition are exhausted."""


@dataclass
class EndpointConfig:
    text_url: str = ""
    text_model: str = ""
    embedding_url: str = ""
    embedding_model: str = ""
    api_key_env: str = "OVEXTRACT_API_KEY"
    timeout_seconds: float = 30.0
    max_retries: int = 3
    backoff_seconds: float = 1.0

    @classmethod
    def from_json_file(cls, path: str) -> "EndpointConfig":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise EndpointError(f"unknown endpoint config fields: {sorted(unknown)}")
        return cls(**obj)

    def api_key(self) -> str:
        key = os.environ.get(self.api_key_env, "")
        if not key:
            raise EndpointError(
                f"API key environment variable {self.api_key_env!r} is not set")
        return key


_TRANSIENT_STATUS = {429, 500, 502, 503, 504}


def _with_retries(call, max_retries: int, backoff: float, sleep=time.sleep):
    """Run ``call`` with exponential backoff on transient failures."""
    last = None
    for attempt in range(max_retries + 1):
        if attempt > 0:
            sleep(backoff * (2 ** (attempt - 1)))
        try:
            return call()
        except (requests.ConnectionError, requests.Timeout) as exc:
            last = exc
        except requests.HTTPError as exc:
            status = exc.response.status_code if exc.response is not None else 0
            if status not in _TRANSIENT_STATUS:
                raise EndpointError(f"endpoint returned {status}") from exc
            last = exc
    raise RateLimitedError(f"retries exhausted: {last}")


class HttpTextClient:
    """Text-completion client for a JSON endpoint.

    Request: ``{"model", "prompt", "n", "temperature"}``; response:
    ``{"choices": [{"text": ...}, ...]}``.
    """

    def __init__(self, config: EndpointConfig, session=None, sleep=time.sleep):
        self.config = config
        self.session = session or requests.Session()
        self._sleep = sleep

    def complete(self, prompt: str, n: int, temperature: float) -> list[str]:
        def call():
            resp = self.session.post(
                self.config.text_url,
                json={"model": self.config.text_model, "prompt": prompt,
                      "n": n, "temperature": temperature},
                headers={"Authorization": f"Bearer {self.config.api_key()}"},
                timeout=self.config.timeout_seconds)
            resp.raise_for_status()
            return [choice["text"] for choice in resp.json()["choices"]]

        return _with_retries(call, self.config.max_retries,
                             self.config.backoff_seconds, self._sleep)


class HttpEmbeddingClient:
    """Embedding client for a JSON endpoint.

    Request: ``{"model", "input": [...]}``; response:
    ``{"data": [{"embedding": [...]}, ...]}``.
    """

    def __init__(self, config: EndpointConfig, session=None, sleep=time.sleep):
        self.config = config
        self.session = session or requests.Session()
        self._sleep = sleep

    def _post(self, payload_input) -> np.ndarray:
        def call():
            resp = self.session.post(
                self.config.embedding_url,
                json={"model": self.config.embedding_model, "input": payload_input},
                headers={"Authorization": f"Bearer {self.config.api_key()}"},
                timeout=self.config.timeout_seconds)
            resp.raise_for_status()
            rows = [d["embedding"] for d in resp.json()["data"]]
            return np.asarray(rows, dtype=np.float32)

        return _with_retries(call, self.config.max_retries,
                             self.config.backoff_seconds, self._sleep)

    def embed_texts(self, texts: list[str]) -> np.ndarray:
        return self._post(list(texts))

    def embed_image_bytes(self, blobs: list[bytes]) -> np.ndarray:
        import base64

        return self._post([base64.b64encode(b).decode("ascii") for b in blobs])


# ---------------------------------------------------------------------------
# offline mocks
# ---------------------------------------------------------------------------

_SUBJECT_RE = re.compile(r"What does an? (.+?) look like\?")

_MOCK_SHAPES = (
    "A {name} is a {adj} object with {feature}.",
    "A {name} typically looks {adj} and has {feature}.",
    "A {name} is usually described as {adj}, featuring {feature}.",
    "Most {name}s appear {adj} with {feature}.",
    "A {name} is a {adj} thing distinguished by {feature}.",
)
_MOCK_ADJECTIVES = ("rounded", "elongated", "compact", "patterned", "smooth",
                    "angular", "glossy", "textured")
_MOCK_FEATURES = ("a distinctive outline", "visible ridges", "a uniform color",
                  "contrasting markings", "a layered surface", "symmetric parts")


def _seed_from(text: str, extra: int = 0) -> int:
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") ^ extra


class MockTextClient:
    """Deterministic canned completions shaped like LLM class descriptions."""

    def __init__(self, seed: int = 0, fail_classes: set[str] | None = None,
                 empty_once_classes: set[str] | None = None):
        self.seed = seed
        self.fail_classes = fail_classes or set()
        self.empty_once_classes = set(empty_once_classes or set())

    def complete(self, prompt: str, n: int, temperature: float) -> list[str]:
        match = _SUBJECT_RE.search(prompt)
        name = match.group(1) if match else prompt.strip("? .")
        if name in self.fail_classes:
            raise RateLimitedError(f"mock rate limit for {name!r}")
        if name in self.empty_once_classes:
            self.empty_once_classes.discard(name)
            return [""] * n
        rng = np.random.Generator(np.random.PCG64(_seed_from(name, self.seed)))
        spread = max(1, int(round(temperature * 10)))
        out = []
        for i in range(n):
            shape = _MOCK_SHAPES[int(rng.integers(0, min(len(_MOCK_SHAPES), spread)))]
            out.append(shape.format(
                name=name,
                adj=_MOCK_ADJECTIVES[int(rng.integers(0, len(_MOCK_ADJECTIVES)))],
                feature=_MOCK_FEATURES[int(rng.integers(0, len(_MOCK_FEATURES)))]))
        return out


class MockEmbeddingClient:
    """Deterministic unit embeddings derived from content hashes.

    Identical input bytes always map to identical vectors, which is what
    makes identity-augmentation round trips bit-exact.
    """

    def __init__(self, dim: int = 512, seed: int = 0):
        self.dim = dim
        self.seed = seed

    def _vector(self, payload: bytes) -> np.ndarray:
        digest = hashlib.sha256(payload + self.seed.to_bytes(8, "little")).digest()
        rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))
        v = rng.standard_normal(self.dim)
        return (v / np.linalg.norm(v)).astype(np.float32)

    def embed_texts(self, texts: list[str]) -> np.ndarray:
        return np.stack([self._vector(t.encode("utf-8")) for t in texts]) \
            if texts else np.zeros((0, self.dim), dtype=np.float32)

    def embed_image_bytes(self, blobs: list[bytes]) -> np.ndarray:
        return np.stack([self._vector(b) for b in blobs]) \
            if blobs else np.zeros((0, self.dim), dtype=np.float32)
