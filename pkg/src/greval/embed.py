"""Embedding providers, a persistent embedding cache, and cosine similarity.

Triples are embedded element by element (subject, relation and object
separately) and combined by element-wise sum, or by concatenation when
relation direction must be preserved.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import threading
import time
import zlib
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np
import requests

from .core import EmbeddingMode, Triple

logger = logging.getLogger(__name__)


class EmbeddingError(RuntimeError):
    """Provider failure; ``text`` names the input that could not be embedded."""

    def __init__(self, message: str, text: str | None = None) -> None:
        super().__init__(message)
        self.text = text


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    values: np.ndarray
    provider_id: str = ""

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise ValueError("embedding must be a non-empty 1-D vector")
        if not np.all(np.isfinite(values)):
            raise ValueError("embedding contains non-finite values")
        if not np.any(values):
            raise ValueError("all-zero embedding")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return int(self.values.size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingVector):
            return NotImplemented
        return self.provider_id == other.provider_id and np.array_equal(self.values, other.values)

    def __hash__(self) -> int:
        return hash((self.provider_id, self.values.tobytes()))


@runtime_checkable
class EmbeddingProvider(Protocol):
    provider_id: str
    dim: int

    def embed_batch(self, texts: Sequence[str]) -> list[EmbeddingVector]: ...


def cosine_similarity(u: EmbeddingVector | np.ndarray, v: EmbeddingVector | np.ndarray) -> float:
    a = u.values if isinstance(u, EmbeddingVector) else np.asarray(u, dtype=np.float64)
    b = v.values if isinstance(v, EmbeddingVector) else np.asarray(v, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    aa = float(np.dot(a, a))
    bb = float(np.dot(b, b))
    if aa == 0.0 or bb == 0.0:
        raise ValueError("cosine similarity undefined for a zero vector")
    # dot/sqrt(aa*bb) is exactly 1.0 for identical vectors; dot/(|a||b|) is not always
    sim = float(np.dot(a, b)) / math.sqrt(aa * bb)
    return min(1.0, max(-1.0, sim))


_TOKEN = re.compile(r"[^\W_]+")


class HashEmbeddingProvider:
    """Deterministic offline provider for tests and dry runs.

    Each lowercased word maps to a Gaussian vector seeded from a SHA-256 of
    the word; a text embeds as the unit-normalised sum of its word vectors, so
    texts sharing words are similar and identical texts are identical.
    """

    def __init__(self, dim: int = 64, seed: int = 0) -> None:
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.seed = seed
        self.provider_id = f"hash-bow-v1/d{dim}/s{seed}"
        self.calls = 0

    def _word_vector(self, word: str) -> np.ndarray:
        digest = hashlib.sha256(f"{self.seed}\x00{word}".encode("utf-8")).digest()
        rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))
        return rng.standard_normal(self.dim)

    def embed_one(self, text: str) -> EmbeddingVector:
        words = _TOKEN.findall(text.lower()) or [text]
        total = np.zeros(self.dim)
        for w in words:
            total += self._word_vector(w)
        norm = np.linalg.norm(total)
        if norm == 0.0:
            raise EmbeddingError("zero embedding", text)
        return EmbeddingVector(total / norm, self.provider_id)

    def embed_batch(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        self.calls += 1
        return [self.embed_one(t) for t in texts]


class HttpEmbeddingProvider:
    """OpenAI-compatible ``/embeddings`` endpoint with retry and backoff.

    Batches are sent concurrently up to ``max_parallel`` requests.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str | None = "OPENAI_API_KEY",
        timeout: float = 60.0,
        max_parallel: int = 4,
        batch_size: int = 256,
        retries: int = 4,
        backoff: float = 1.0,
        dim: int | None = None,
        session: requests.Session | None = None,
    ) -> None:
        self.url = base_url.rstrip("/") + "/embeddings"
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.max_parallel = max(1, max_parallel)
        self.batch_size = max(1, batch_size)
        self.retries = retries
        self.backoff = backoff
        self.dim = dim or 0
        self.provider_id = f"http:{model}"
        self.session = session or requests.Session()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env)
            if key:
                headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, batch: Sequence[str]) -> list[EmbeddingVector]:
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                resp = self.session.post(
                    self.url,
                    json={"model": self.model, "input": list(batch)},
                    headers=self._headers(),
                    timeout=self.timeout,
                )
                if resp.status_code == 429 or resp.status_code >= 500:
                    raise requests.HTTPError(f"HTTP {resp.status_code}", response=resp)
                resp.raise_for_status()
                data = sorted(resp.json()["data"], key=lambda d: d["index"])
                vectors = [EmbeddingVector(d["embedding"], self.provider_id) for d in data]
                if len(vectors) != len(batch):
                    raise EmbeddingError(f"expected {len(batch)} embeddings, got {len(vectors)}", batch[0])
                return vectors
            except (requests.RequestException, KeyError, ValueError) as exc:
                last = exc
                status = getattr(getattr(exc, "response", None), "status_code", None)
                if status is not None and 400 <= status < 500 and status != 429:
                    break
                if attempt < self.retries:
                    delay = self.backoff * 2**attempt
                    retry_after = getattr(getattr(exc, "response", None), "headers", {}).get("Retry-After")
                    if retry_after and retry_after.isdigit():
                        delay = max(delay, float(retry_after))
                    time.sleep(delay)
        raise EmbeddingError(f"embedding request failed: {last}", batch[0] if batch else None)

    def embed_batch(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        batches = [texts[i : i + self.batch_size] for i in range(0, len(texts), self.batch_size)]
        with ThreadPoolExecutor(max_workers=self.max_parallel) as pool:
            results = list(pool.map(self._post, batches))
        out = [v for batch in results for v in batch]
        if out and not self.dim:
            self.dim = out[0].dim
        return out


class EmbeddingCache:
    """Append-only JSON Lines cache keyed by (provider_id, exact text).

    Each record carries a CRC of its values. Records that fail to decode or
    verify are ignored, so the text is fetched again and a fresh record is
    appended; the most recent valid record for a key wins.
    """

    def __init__(self, path: str | Path | None = None) -> None:
        self.path = Path(path) if path is not None else None
        self._index: dict[tuple[str, str], np.ndarray] = {}
        self._lock = threading.Lock()
        self.corrupt_records = 0
        if self.path is not None and self.path.exists():
            self._load()

    @staticmethod
    def _crc(values: list[float]) -> int:
        return zlib.crc32(json.dumps(values).encode("ascii"))

    def _load(self) -> None:
        assert self.path is not None
        with self.path.open("r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    values = rec["values"]
                    if len(values) != rec["dim"] or self._crc(values) != rec["crc"]:
                        raise ValueError("checksum or dim mismatch")
                    vec = EmbeddingVector(values, rec["provider"]).values
                except (ValueError, KeyError, TypeError) as exc:
                    self.corrupt_records += 1
                    logger.warning("embedding cache %s line %d ignored: %s", self.path, lineno, exc)
                    continue
                self._index[(rec["provider"], rec["text"])] = vec

    def get(self, provider_id: str, text: str) -> EmbeddingVector | None:
        values = self._index.get((provider_id, text))
        return None if values is None else EmbeddingVector(values, provider_id)

    def put_many(self, items: Sequence[tuple[str, EmbeddingVector]]) -> None:
        with self._lock:
            lines = []
            for text, vec in items:
                self._index[(vec.provider_id, text)] = vec.values
                values = vec.values.tolist()
                rec = {"provider": vec.provider_id, "text": text, "dim": vec.dim, "values": values, "crc": self._crc(values)}
                lines.append(json.dumps(rec, ensure_ascii=False) + "\n")
            if self.path is not None and lines:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.writelines(lines)

    def __len__(self) -> int:
        return len(self._index)


def cached_embed(
    texts: Sequence[str],
    provider: EmbeddingProvider,
    cache: EmbeddingCache | None = None,
) -> list[EmbeddingVector]:
    """Embed texts, serving repeats from the cache and batching the misses."""
    if cache is None:
        cache = EmbeddingCache()
    out: list[EmbeddingVector | None] = [cache.get(provider.provider_id, t) for t in texts]
    misses: list[str] = []
    seen: set[str] = set()
    for text, vec in zip(texts, out):
        if vec is None and text not in seen:
            seen.add(text)
            misses.append(text)
    if misses:
        fetched = provider.embed_batch(misses)
        if len(fetched) != len(misses):
            raise EmbeddingError(f"provider returned {len(fetched)} vectors for {len(misses)} texts")
        cache.put_many(list(zip(misses, fetched)))
        by_text = dict(zip(misses, fetched))
        out = [vec if vec is not None else by_text[t] for t, vec in zip(texts, out)]
    return out  # type: ignore[return-value]


def combine(parts: Sequence[EmbeddingVector], mode: EmbeddingMode | str) -> EmbeddingVector:
    mode = EmbeddingMode(mode)
    provider_id = parts[0].provider_id
    if mode is EmbeddingMode.SUM:
        # subject + object first: commutative, so swapping them is exactly invariant
        values = (parts[0].values + parts[2].values) + parts[1].values
    else:
        values = np.concatenate([p.values for p in parts])
    return EmbeddingVector(values, provider_id)


def triple_embedding(
    t: Triple,
    mode: EmbeddingMode | str,
    provider: EmbeddingProvider,
    cache: EmbeddingCache | None = None,
) -> EmbeddingVector:
    try:
        parts = cached_embed(list(t), provider, cache)
    except EmbeddingError as exc:
        raise EmbeddingError(f"could not embed triple {t.text()!r}: {exc}", exc.text) from exc
    return combine(parts, mode)


def embed_triples(
    triples: Sequence[Triple],
    mode: EmbeddingMode | str,
    provider: EmbeddingProvider,
    cache: EmbeddingCache | None = None,
) -> list[EmbeddingVector]:
    """Embed many triples with one provider round-trip for all their elements."""
    if not triples:
        return []
    texts = [part for t in triples for part in t]
    vectors = cached_embed(texts, provider, cache)
    return [combine(vectors[3 * i : 3 * i + 3], mode) for i in range(len(triples))]


def relation_embeddings(
    triples: Sequence[Triple],
    provider: EmbeddingProvider,
    cache: EmbeddingCache | None = None,
) -> list[EmbeddingVector]:
    return cached_embed([t.relation for t in triples], provider, cache)
