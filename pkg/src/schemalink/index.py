"""Entity vector index with per-type partitions, persistence, and BM25.

The vector index is exact (flat) search: corpora stay small enough that
brute-force cosine ranking is both fast and required for reproducibility.
The index is write-once; rebuild it when the catalog changes.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .catalog import EntityType, SchemaEntity
from .embedding import EmbeddingProvider, embed_batch, tokenize
from .errors import IndexBuildError, IndexFileError

INDEX_FORMAT_VERSION = 1
EMBED_BATCH_SIZE = 256


@dataclass(frozen=True)
class RetrievalHit:
    """One (query, entity) match with its raw and calibrated scores."""

    entity_id: str
    entity_type: EntityType
    database: str
    table: str
    column: str | None
    query_text: str
    raw_score: float
    calibrated_score: float

    def with_calibrated(self, score: float) -> "RetrievalHit":
        return replace(self, calibrated_score=score)


class EntityIndex:
    """Embedded schema entities, partitioned by entity type. Read-only once built."""

    def __init__(
        self,
        dimension: int,
        provider_name: str,
        entities: list[SchemaEntity],
        vectors: list[np.ndarray],
    ):
        self.dimension = dimension
        self.provider_name = provider_name
        self.entities = entities
        self.vectors = vectors
        # Norms are precomputed so a query costs one dot product per entity;
        # the arithmetic stays identical to cosine_similarity on raw vectors.
        self._norms = [math.sqrt(float(np.dot(v, v))) for v in vectors]
        self.partitions: dict[EntityType, list[int]] = {}
        for i, entity in enumerate(entities):
            self.partitions.setdefault(entity.entity_type, []).append(i)

    def __len__(self) -> int:
        return len(self.entities)

    def entity_types(self) -> list[EntityType]:
        return [t for t in EntityType if t in self.partitions]

    def partition_sizes(self) -> dict[str, int]:
        return {t.value: len(idx) for t, idx in self.partitions.items()}

    def query(
        self,
        text: str,
        entity_type: EntityType | str,
        k: int,
        provider: EmbeddingProvider,
    ) -> list[RetrievalHit]:
        """Top-k entities of one type by cosine to the query embedding.

        Ties break by ascending entity_id; fewer than k hits come back when
        the partition is smaller. Calibrated score starts equal to raw score.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        entity_type = EntityType(entity_type)
        indices = self.partitions.get(entity_type, [])
        if not indices:
            return []
        query_vec = embed_batch(provider, [text])[0]
        if query_vec.shape[0] != self.dimension:
            raise IndexBuildError(
                f"query embedding dimension {query_vec.shape[0]} does not match "
                f"index dimension {self.dimension}"
            )
        query_norm = math.sqrt(float(np.dot(query_vec, query_vec)))
        scored = []
        for i in indices:
            norm = self._norms[i]
            if norm == 0.0 or query_norm == 0.0:
                score = 0.0
            else:
                score = float(np.dot(self.vectors[i], query_vec)) / (norm * query_norm)
            scored.append((score, self.entities[i]))
        scored.sort(key=lambda item: (-item[0], item[1].entity_id))
        hits = []
        for score, entity in scored[:k]:
            hits.append(
                RetrievalHit(
                    entity_id=entity.entity_id,
                    entity_type=entity.entity_type,
                    database=entity.database,
                    table=entity.table,
                    column=entity.column,
                    query_text=text,
                    raw_score=score,
                    calibrated_score=score,
                )
            )
        return hits


def build_index(
    entities: Sequence[SchemaEntity],
    provider: EmbeddingProvider,
    batch_size: int = EMBED_BATCH_SIZE,
) -> EntityIndex:
    """Embed every entity and assemble the index."""
    if not entities:
        raise IndexBuildError("cannot build an index from zero entities")
    seen: set[str] = set()
    for entity in entities:
        if entity.entity_id in seen:
            raise IndexBuildError(f"duplicate entity_id '{entity.entity_id}'")
        seen.add(entity.entity_id)
    vectors: list[np.ndarray] = []
    entity_list = list(entities)
    for start in range(0, len(entity_list), batch_size):
        batch = entity_list[start : start + batch_size]
        vectors.extend(embed_batch(provider, [e.text for e in batch]))
    return EntityIndex(
        dimension=provider.dimension,
        provider_name=provider.name,
        entities=entity_list,
        vectors=vectors,
    )


# ---------------------------------------------------------------------------
# Persistence: one header line, then a checksummed JSON payload.
# ---------------------------------------------------------------------------

def save_index(index: EntityIndex, path: str | Path) -> None:
    payload = json.dumps(
        {
            "entities": [
                {
                    "entity_id": e.entity_id,
                    "database": e.database,
                    "table": e.table,
                    "column": e.column,
                    "entity_type": e.entity_type.value,
                    "text": e.text,
                }
                for e in index.entities
            ],
            "vectors": [vec.tolist() for vec in index.vectors],
        }
    ).encode("utf-8")
    header = json.dumps(
        {
            "version": INDEX_FORMAT_VERSION,
            "dimension": index.dimension,
            "provider": index.provider_name,
            "entity_count": len(index.entities),
            "checksum": hashlib.sha256(payload).hexdigest(),
        }
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8") + b"\n" + payload)


def load_index(path: str | Path) -> EntityIndex:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IndexFileError(f"cannot read index file {path}: {exc}") from exc
    newline = raw.find(b"\n")
    if newline < 0:
        raise IndexFileError(f"index file {path} is truncated (no header)")
    try:
        header = json.loads(raw[:newline])
    except json.JSONDecodeError as exc:
        raise IndexFileError(f"index file {path} has a corrupt header") from exc
    version = header.get("version")
    if version != INDEX_FORMAT_VERSION:
        raise IndexFileError(
            f"index file {path} has version {version!r}, expected {INDEX_FORMAT_VERSION}"
        )
    payload = raw[newline + 1 :]
    checksum = hashlib.sha256(payload).hexdigest()
    if checksum != header.get("checksum"):
        raise IndexFileError(f"index file {path} failed its checksum (truncated or corrupt)")
    body = json.loads(payload)
    entities = [
        SchemaEntity(
            entity_id=e["entity_id"],
            database=e["database"],
            table=e["table"],
            column=e["column"],
            entity_type=EntityType(e["entity_type"]),
            text=e["text"],
        )
        for e in body["entities"]
    ]
    vectors = [np.asarray(vec, dtype=np.float64) for vec in body["vectors"]]
    dimension = int(header["dimension"])
    for vec in vectors:
        if vec.shape[0] != dimension:
            raise IndexFileError(f"index file {path} has a vector of wrong length")
    if len(entities) != header.get("entity_count") or len(vectors) != len(entities):
        raise IndexFileError(f"index file {path} entity count does not match header")
    return EntityIndex(
        dimension=dimension,
        provider_name=header.get("provider", "unknown"),
        entities=entities,
        vectors=vectors,
    )


# ---------------------------------------------------------------------------
# Okapi BM25 over table-as-document corpora (lexical baseline).
# ---------------------------------------------------------------------------

class Bm25Index:
    """Okapi BM25 with word or character-shingle tokenization."""

    def __init__(
        self,
        docs: Sequence[tuple[str, str]],
        tokenizer: str = "word",
        shingle_k: int = 4,
        k1: float = 1.2,
        b: float = 0.75,
    ):
        if not docs:
            raise ValueError("docs must be non-empty")
        if tokenizer not in ("word", "char_shingle"):
            raise ValueError(f"unknown tokenizer '{tokenizer}'")
        if tokenizer == "char_shingle" and shingle_k < 2:
            raise ValueError("shingle_k must be >= 2")
        if k1 <= 0 or not 0 <= b <= 1:
            raise ValueError("require k1 > 0 and 0 <= b <= 1")
        self.tokenizer = tokenizer
        self.shingle_k = shingle_k
        self.k1 = k1
        self.b = b
        self.doc_ids = [doc_id for doc_id, _ in docs]
        self._term_freqs = [Counter(self._tokens(text)) for _, text in docs]
        self.doc_lens = [sum(tf.values()) for tf in self._term_freqs]
        self.avgdl = sum(self.doc_lens) / len(docs)
        df: Counter = Counter()
        for tf in self._term_freqs:
            df.update(tf.keys())
        n = len(docs)
        self.idf = {
            term: math.log(1.0 + (n - count + 0.5) / (count + 0.5))
            for term, count in df.items()
        }

    def _tokens(self, text: str) -> list[str]:
        if self.tokenizer == "word":
            return tokenize(text)
        lowered = text.lower()
        k = self.shingle_k
        if len(lowered) <= k:
            return [lowered]
        return [lowered[i : i + k] for i in range(len(lowered) - k + 1)]

    def score(self, text: str, doc_index: int) -> float:
        tf = self._term_freqs[doc_index]
        dl = self.doc_lens[doc_index]
        total = 0.0
        for term in self._tokens(text):
            idf = self.idf.get(term)
            freq = tf.get(term, 0)
            if idf is None or freq == 0:
                continue
            denom = freq + self.k1 * (1.0 - self.b + self.b * dl / self.avgdl)
            total += idf * freq * (self.k1 + 1.0) / denom
        return total


def bm25_build(docs: Sequence[tuple[str, str]], **kwargs) -> Bm25Index:
    return Bm25Index(docs, **kwargs)


def bm25_query(index: Bm25Index, text: str, k: int) -> list[tuple[str, float]]:
    """Rank all documents for the query; descending score, ties by doc_id."""
    scored = [
        (index.score(text, i), doc_id) for i, doc_id in enumerate(index.doc_ids)
    ]
    scored.sort(key=lambda item: (-item[0], item[1]))
    return [(doc_id, score) for score, doc_id in scored[:k]]
