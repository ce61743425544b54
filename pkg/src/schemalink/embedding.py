"""Embedding providers and cosine similarity.

Two providers ship here: a deterministic offline hashing embedder used for
tests and air-gapped runs, and a generic HTTP adapter for remote embedding
services. Both satisfy the same small contract: a ``name``, a ``dimension``,
and ``embed_batch(texts) -> vectors``.
"""

from __future__ import annotations

import hashlib
import math
import os
import re
from typing import Protocol, Sequence

import numpy as np
import requests

from .errors import DimensionMismatchError, ProviderTransportError

# Published hashing seed: changing it invalidates every stored index.
HASH_EMBED_SEED = b"schemalink.hash-embed.v1"

_TOKEN_RE = re.compile(r"[a-z0-9_]+")


class EmbeddingProvider(Protocol):
    name: str
    dimension: int

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]: ...


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric characters, keeping underscores."""
    return _TOKEN_RE.findall(text.lower())


def hash_embed(text: str, dimension: int) -> np.ndarray:
    """Deterministic bag-of-tokens embedding.

    Each token is hashed to a bucket in [0, dimension) with a +/-1 sign drawn
    from a second hash byte; token counts accumulate and the result is
    L2-normalized. Texts with no tokens embed to the zero vector.
    """
    if dimension < 8:
        raise ValueError("dimension must be >= 8")
    vec = np.zeros(dimension, dtype=np.float64)
    for token in tokenize(text):
        bucket, sign = _token_slot(token, dimension)
        vec[bucket] += sign
    norm = math.sqrt(float(np.dot(vec, vec)))
    if norm == 0.0:
        return vec
    return vec / norm


def _token_slot(token: str, dimension: int) -> tuple[int, float]:
    digest = hashlib.sha256(HASH_EMBED_SEED + token.encode("utf-8")).digest()
    bucket = int.from_bytes(digest[:8], "big") % dimension
    sign = 1.0 if digest[8] & 1 else -1.0
    return bucket, sign


def cosine_similarity(u, v) -> float:
    """Cosine of the angle between u and v; 0.0 if either vector is zero."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.shape} vs {v.shape}")
    nu = math.sqrt(float(np.dot(u, u)))
    nv = math.sqrt(float(np.dot(v, v)))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def embed_batch(provider: EmbeddingProvider, texts: Sequence[str]) -> list[np.ndarray]:
    """Embed texts through a provider, validating shape and order.

    Raises DimensionMismatchError if the provider returns vectors whose
    length differs from its declared dimension.
    """
    if not texts:
        raise ValueError("texts must be non-empty")
    if any(not t for t in texts):
        raise ValueError("every text must be non-empty")
    vectors = provider.embed_batch(texts)
    if len(vectors) != len(texts):
        raise ProviderTransportError(
            f"provider '{provider.name}' returned {len(vectors)} vectors for {len(texts)} texts",
            retryable=False,
        )
    out = []
    for vec in vectors:
        arr = np.asarray(vec, dtype=np.float64)
        if arr.ndim != 1 or arr.shape[0] != provider.dimension:
            raise DimensionMismatchError(
                f"provider '{provider.name}' returned a vector of length {arr.shape} "
                f"but declares dimension {provider.dimension}"
            )
        out.append(arr)
    return out


class HashEmbeddingProvider:
    """Stateless deterministic provider backed by hash_embed."""

    def __init__(self, dimension: int = 256):
        self.dimension = dimension
        self.name = f"hash-{dimension}"

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        return [hash_embed(text, self.dimension) for text in texts]


class RemoteEmbeddingProvider:
    """HTTP adapter: POST {"texts": [...]} -> {"vectors": [[...], ...]}."""

    def __init__(
        self,
        endpoint: str,
        dimension: int,
        api_token: str | None = None,
        name: str = "remote-embedder",
        timeout: float = 30.0,
        max_retries: int = 2,
        session: requests.Session | None = None,
    ):
        self.endpoint = endpoint
        self.dimension = dimension
        self.api_token = api_token
        self.name = name
        self.timeout = timeout
        self.max_retries = max_retries
        self._session = session or requests.Session()

    @classmethod
    def from_env(cls, dimension: int, **kwargs) -> "RemoteEmbeddingProvider":
        endpoint = os.environ.get("SCHEMALINK_EMBED_URL")
        if not endpoint:
            raise ProviderTransportError(
                "SCHEMALINK_EMBED_URL is not set", retryable=False
            )
        token = os.environ.get("SCHEMALINK_EMBED_TOKEN")
        return cls(endpoint, dimension, api_token=token, **kwargs)

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        headers = {}
        if self.api_token:
            headers["Authorization"] = f"Bearer {self.api_token}"
        last_error: Exception | None = None
        for _ in range(self.max_retries + 1):
            try:
                resp = self._session.post(
                    self.endpoint,
                    json={"texts": list(texts)},
                    headers=headers,
                    timeout=self.timeout,
                )
                resp.raise_for_status()
                payload = resp.json()
                vectors = payload["vectors"]
                return [np.asarray(vec, dtype=np.float64) for vec in vectors]
            except (requests.RequestException, KeyError, ValueError) as exc:
                last_error = exc
        raise ProviderTransportError(
            f"embedding endpoint {self.endpoint} failed after "
            f"{self.max_retries + 1} attempts: {last_error}"
        ) from last_error
