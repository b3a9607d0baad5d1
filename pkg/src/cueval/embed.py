"""Embedding providers and vector similarity for the scoring engine.

The scoring math never talks to a neural model directly. It consumes
vectors through a provider, which can be a deterministic feature-hash
embedder (tests, offline runs), a precomputed JSONL store, or a remote
embedding service.
"""

from __future__ import annotations

import json
import math
import threading
import urllib.error
import urllib.request
from pathlib import Path

import numpy as np

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_U64_MASK = 0xFFFFFFFFFFFFFFFF

DEFAULT_DIMS = 256


class EmbeddingError(Exception):
    """Base class for embedding failures."""


class FileStoreMissError(EmbeddingError):
    """Raised when a file-store provider has no vector for a text."""

    def __init__(self, text: str):
        super().__init__(f"no stored embedding for text: {text!r}")
        self.text = text


class RemoteEmbeddingError(EmbeddingError):
    """Raised on remote transport failures or malformed responses."""

    def __init__(self, text: str, reason: str):
        super().__init__(f"remote embedding failed for {text!r}: {reason}")
        self.text = text
        self.reason = reason


def normalize_text(text: str) -> str:
    """Lowercase and collapse every whitespace run to a single space."""
    return " ".join(text.lower().split())


def fnv1a64(data: bytes) -> int:
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _U64_MASK
    return h


def _unit(vec: np.ndarray) -> np.ndarray:
    # Components of hash vectors are exact small integers, so the norm is
    # the correctly rounded sqrt of an exact sum and the result is
    # bit-stable across platforms.
    norm = math.sqrt(float(np.dot(vec, vec)))
    if norm == 0.0:
        return vec
    return vec / norm


def hash_embed(text: str, dims: int = DEFAULT_DIMS) -> np.ndarray:
    """Signed character-trigram feature hashing, L2-normalized.

    Deterministic stand-in for a learned embedder: every trigram of the
    normalized text is hashed with 64-bit FNV-1a, bucketed mod ``dims``,
    and accumulated with sign taken from the hash's top bit. Strings
    shorter than three characters hash as a single gram; the empty string
    maps to the zero vector.
    """
    if dims < 8:
        raise ValueError(f"dims must be >= 8, got {dims}")
    normalized = normalize_text(text)
    vec = np.zeros(dims, dtype=np.float64)
    if normalized:
        if len(normalized) < 3:
            grams = [normalized]
        else:
            grams = [normalized[i : i + 3] for i in range(len(normalized) - 2)]
        for gram in grams:
            h = fnv1a64(gram.encode("utf-8"))
            if (h >> 63) == 0:
                vec[h % dims] += 1.0
            else:
                vec[h % dims] -= 1.0
    return _unit(vec)


def cosine(u, v) -> float:
    """Cosine similarity in [-1, 1]; 0.0 when either vector is all-zero."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return min(1.0, max(-1.0, float(np.dot(u, v)) / (nu * nv)))


class EmbeddingProvider:
    """Caching text-to-vector source.

    Subclasses implement ``_compute`` for cache misses. The cache key is
    the normalized text, so case and whitespace variants share a vector.
    Cache writes are synchronized; concurrent lookups are safe.
    """

    mode = "abstract"

    def __init__(self, dims: int):
        if dims < 1:
            raise ValueError("dims must be positive")
        self.dims = dims
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def embed(self, text: str) -> np.ndarray:
        key = normalize_text(text)
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        raw = np.asarray(self._compute(key), dtype=np.float64)
        if raw.shape != (self.dims,):
            raise EmbeddingError(
                f"provider returned shape {raw.shape}, expected ({self.dims},) for {key!r}"
            )
        if not np.all(np.isfinite(raw)):
            raise EmbeddingError(f"provider returned non-finite components for {key!r}")
        vec = _unit(raw)
        vec.setflags(write=False)
        with self._lock:
            return self._cache.setdefault(key, vec)

    def _compute(self, normalized_text: str) -> np.ndarray:
        raise NotImplementedError


def embed_text(provider: EmbeddingProvider, text: str) -> np.ndarray:
    """Embed ``text`` through ``provider`` (normalized, cached, unit norm)."""
    return provider.embed(text)


class HashEmbeddingProvider(EmbeddingProvider):
    """Fully offline provider backed by :func:`hash_embed`."""

    mode = "hash"

    def __init__(self, dims: int = DEFAULT_DIMS):
        if dims < 8:
            raise ValueError(f"dims must be >= 8, got {dims}")
        super().__init__(dims)

    def _compute(self, normalized_text: str) -> np.ndarray:
        return hash_embed(normalized_text, self.dims)


class FileStoreProvider(EmbeddingProvider):
    """Provider backed by a JSONL store of {"text", "vector"} records.

    The whole store is loaded eagerly; texts absent from the store raise
    :class:`FileStoreMissError`. Duplicate texts (after normalization)
    are an ingestion error.
    """

    mode = "file-store"

    def __init__(self, path: str | Path, dims: int | None = None):
        self.path = Path(path)
        store: dict[str, np.ndarray] = {}
        with self.path.open("r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise EmbeddingError(f"{self.path}:{lineno}: invalid JSON: {exc}") from exc
                if not isinstance(row, dict) or "text" not in row or "vector" not in row:
                    raise EmbeddingError(
                        f"{self.path}:{lineno}: expected object with 'text' and 'vector'"
                    )
                key = normalize_text(str(row["text"]))
                if key in store:
                    raise EmbeddingError(f"{self.path}:{lineno}: duplicate text {key!r}")
                store[key] = np.asarray(row["vector"], dtype=np.float64)
        if dims is None:
            if not store:
                raise EmbeddingError(f"{self.path}: empty store and no dims given")
            dims = len(next(iter(store.values())))
        for key, vec in store.items():
            if vec.shape != (dims,):
                raise EmbeddingError(
                    f"{self.path}: vector for {key!r} has {vec.shape[0]} dims, expected {dims}"
                )
        super().__init__(dims)
        self._store = store

    def _compute(self, normalized_text: str) -> np.ndarray:
        try:
            return self._store[normalized_text]
        except KeyError:
            raise FileStoreMissError(normalized_text) from None


class RemoteEmbeddingProvider(EmbeddingProvider):
    """Provider calling an HTTP embedding service.

    Each miss issues ``POST <endpoint>`` with body ``{"texts": [text]}``
    and expects ``{"embeddings": [[...]]}`` with positional
    correspondence. Non-2xx responses, transport failures, and length
    mismatches raise :class:`RemoteEmbeddingError` naming the text.
    """

    mode = "remote-service"

    def __init__(self, endpoint: str, dims: int, timeout_ms: int = 10_000):
        super().__init__(dims)
        self.endpoint = endpoint
        self.timeout_ms = timeout_ms

    def _compute(self, normalized_text: str) -> np.ndarray:
        body = json.dumps({"texts": [normalized_text]}).encode("utf-8")
        request = urllib.request.Request(
            self.endpoint, data=body, headers={"Content-Type": "application/json"}
        )
        try:
            with urllib.request.urlopen(request, timeout=self.timeout_ms / 1000.0) as resp:
                payload = resp.read()
        except urllib.error.HTTPError as exc:
            raise RemoteEmbeddingError(normalized_text, f"HTTP {exc.code}") from exc
        except (urllib.error.URLError, OSError) as exc:
            raise RemoteEmbeddingError(normalized_text, str(exc)) from exc
        try:
            parsed = json.loads(payload)
            embeddings = parsed["embeddings"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise RemoteEmbeddingError(normalized_text, f"malformed response: {exc}") from exc
        if not isinstance(embeddings, list) or len(embeddings) != 1:
            raise RemoteEmbeddingError(
                normalized_text,
                f"expected 1 embedding, got {len(embeddings) if isinstance(embeddings, list) else type(embeddings).__name__}",
            )
        return np.asarray(embeddings[0], dtype=np.float64)
