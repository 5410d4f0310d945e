"""Sentence embedding backends.

Two interchangeable backends produce fixed-dimension float32 vectors:

* ``HashEmbedder`` — a fully deterministic, offline feature-hashing
  embedder (character bigrams through 64-bit FNV-1a). It needs no model
  weights, is a pure function of its inputs, and still gives
  lexical-overlap-sensitive similarity, which is what the retrieval
  tests and offline demos need.
* ``RemoteEmbedder`` — an HTTP client for a real sentence embedding
  service (POST ``{"input": [...], "model": ...}`` returning
  ``{"data": [{"index": i, "embedding": [...]}]}``).

Both are immutable after construction and safe for concurrent use.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import httpx
import numpy as np

from .errors import (
    CountMismatchError,
    DimensionMismatchError,
    MalformedResponseError,
    TransportError,
)

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64_MASK = 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class EmbedderConfig:
    """Settings shared by both backends.

    ``dim`` is fixed at 64 for the hash backend unless overridden; a
    remote endpoint dictates its own dimension, which must be declared
    here so mismatches are caught. ``endpoint`` selects the backend:
    None means hash, a URL means remote.
    """

    dim: int = 64
    normalize: bool = True
    endpoint: Optional[str] = None
    batch_size: int = 32
    model_name: str = "hash-bigram-v1"
    timeout_s: float = 30.0
    max_retries: int = 3
    backoff_s: float = 0.1

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_retries < 1:
            raise ValueError(f"max_retries must be >= 1, got {self.max_retries}")


@lru_cache(maxsize=1 << 16)
def _fnv1a64(bigram: str) -> int:
    """64-bit FNV-1a hash of the bigram's UTF-8 bytes."""
    h = _FNV_OFFSET
    for byte in bigram.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & _U64_MASK
    return h


def hash_embed(text: str, dim: int, normalize: bool = True) -> np.ndarray:
    """Embed text by feature-hashing its character bigrams.

    Each overlapping Unicode-character bigram is hashed with 64-bit
    FNV-1a over its UTF-8 bytes; the hash modulo ``dim`` picks a bucket
    and the hash's top bit picks the sign (+1 when clear). The bucket
    accumulates the sign, and the result is L2-normalized unless it is
    all zeros. Texts with fewer than two characters embed to the zero
    vector.

    Returns a float32 vector of length ``dim``.
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    acc = np.zeros(dim, dtype=np.float64)
    for i in range(len(text) - 1):
        h = _fnv1a64(text[i : i + 2])
        sign = 1.0 if (h >> 63) == 0 else -1.0
        acc[h % dim] += sign
    if normalize:
        norm = math.sqrt(float(np.dot(acc, acc)))
        if norm > 0.0:
            acc /= norm
    return acc.astype(np.float32)


class HashEmbedder:
    """Deterministic offline backend: feature hashing of character bigrams."""

    def __init__(self, dim: int = 64, normalize: bool = True):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.dim = dim
        self.normalize = normalize

    @property
    def tag(self) -> str:
        return f"hash-bigram-v1:dim={self.dim}:norm={str(self.normalize).lower()}"

    def embed_one(self, text: str) -> np.ndarray:
        return hash_embed(text, self.dim, self.normalize)

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        """Embed texts in order; returns a (len(texts), dim) float32 matrix."""
        out = np.zeros((len(texts), self.dim), dtype=np.float32)
        for i, text in enumerate(texts):
            out[i] = hash_embed(text, self.dim, self.normalize)
        return out


class RemoteEmbedder:
    """Client for a remote embedding endpoint.

    Requests are batched in ``config.batch_size`` chunks and results are
    reassembled by the per-request ``index`` field, so output order always
    matches input order. Transient transport failures and 5xx responses
    are retried up to ``config.max_retries`` total attempts per batch.

    A custom ``httpx.Client`` may be injected for testing (mock transports,
    in-process ASGI apps); the embedder closes only clients it created.
    """

    def __init__(self, config: EmbedderConfig, client: Optional[httpx.Client] = None):
        if not config.endpoint:
            raise ValueError("RemoteEmbedder requires config.endpoint")
        self.config = config
        self._owns_client = client is None
        self._client = client or httpx.Client(timeout=config.timeout_s)

    @property
    def dim(self) -> int:
        return self.config.dim

    @property
    def tag(self) -> str:
        return f"remote:{self.config.model_name}:dim={self.config.dim}"

    def close(self) -> None:
        if self._owns_client:
            self._client.close()

    def embed_one(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        """Embed texts in order. An empty input returns an empty matrix
        without any network call."""
        if not texts:
            return np.zeros((0, self.config.dim), dtype=np.float32)
        rows: list[np.ndarray] = []
        for start in range(0, len(texts), self.config.batch_size):
            batch = list(texts[start : start + self.config.batch_size])
            rows.extend(self._embed_batch(batch))
        return np.stack(rows)

    def _embed_batch(self, batch: list[str]) -> list[np.ndarray]:
        payload = {"input": batch, "model": self.config.model_name}
        data = self._post_with_retries(payload)
        entries = data.get("data")
        if not isinstance(entries, list):
            raise MalformedResponseError("response has no 'data' list")
        if len(entries) != len(batch):
            raise CountMismatchError(
                f"requested {len(batch)} embeddings, got {len(entries)}"
            )
        slots: list[Optional[np.ndarray]] = [None] * len(batch)
        for entry in entries:
            try:
                index = entry["index"]
                values = entry["embedding"]
            except (TypeError, KeyError) as exc:
                raise MalformedResponseError(f"bad data entry: {entry!r}") from exc
            if not isinstance(index, int) or not 0 <= index < len(batch) or slots[index] is not None:
                raise MalformedResponseError(f"bad or duplicate index {index!r}")
            vec = np.asarray(values, dtype=np.float32)
            if vec.ndim != 1 or vec.shape[0] != self.config.dim:
                raise DimensionMismatchError(
                    f"endpoint returned dim {vec.shape[-1] if vec.ndim else 0}, "
                    f"expected {self.config.dim}"
                )
            slots[index] = vec
        return [slot for slot in slots if slot is not None]

    def _post_with_retries(self, payload: dict) -> dict:
        last_error: Exception | None = None
        for attempt in range(1, self.config.max_retries + 1):
            try:
                response = self._client.post(self.config.endpoint, json=payload)
            except httpx.HTTPError as exc:
                last_error = exc
            else:
                if response.status_code >= 500:
                    last_error = TransportError(f"server returned {response.status_code}")
                elif response.status_code >= 400:
                    raise TransportError(f"server returned {response.status_code}")
                else:
                    try:
                        return response.json()
                    except ValueError as exc:
                        raise MalformedResponseError("response body is not JSON") from exc
            if attempt < self.config.max_retries and self.config.backoff_s > 0:
                time.sleep(self.config.backoff_s * (2 ** (attempt - 1)))
        raise TransportError(f"embedding request failed after {self.config.max_retries} attempts: {last_error}")


def make_embedder(config: EmbedderConfig, client: Optional[httpx.Client] = None):
    """Build the backend the config selects: remote when an endpoint is set."""
    if config.endpoint:
        return RemoteEmbedder(config, client=client)
    return HashEmbedder(dim=config.dim, normalize=config.normalize)


def embed(text: str, config: EmbedderConfig, client: Optional[httpx.Client] = None) -> np.ndarray:
    """Embed a single text with the backend selected by ``config``."""
    return make_embedder(config, client=client).embed_one(text)


def remote_embed(
    texts: Sequence[str], config: EmbedderConfig, client: Optional[httpx.Client] = None
) -> list[np.ndarray]:
    """Embed texts through the remote endpoint, order-preserved."""
    embedder = RemoteEmbedder(config, client=client)
    try:
        return list(embedder.embed_many(texts))
    finally:
        embedder.close()
