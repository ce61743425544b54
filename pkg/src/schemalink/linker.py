"""Inference-time schema linking pipeline.

One link run decomposes the question into keywords, fans retrieval out over
every (query, entity type) pair, aggregates calibrated hits into a ranked
table list under the table budget, and renders the candidate schema for the
downstream prediction prompt.
"""

from __future__ import annotations

import logging
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Protocol, Sequence

from .calibration import (
    CalibrationWeights,
    apply_entropy_calibration,
    apply_type_weights,
    auc,
    entity_type_weights,
    recall_curve,
)
from .catalog import EntityType, SchemaCatalog, TableSelection, render_schema
from .embedding import EmbeddingProvider
from .errors import CalibrationError, SchemalinkError
from .index import EntityIndex, RetrievalHit
from .llm import TextModelProvider
from .metrics import count_tokens
from .nlq import KeywordSet, extract_keywords, fallback_keywords

logger = logging.getLogger(__name__)

DEFAULT_PER_QUERY_TOP_K = 100
DEFAULT_TABLE_BUDGET = 50

# Render-slot names per column-level entity type.
_COLUMN_FIELD_BY_TYPE = {
    EntityType.COLUMN_ALIAS: "alias",
    EntityType.COLUMN_DESCRIPTION: "description",
    EntityType.VALUE_DESCRIPTION: "value_description",
}


@dataclass
class PipelineConfig:
    """Knobs for one linking run; see the config file format in the README."""

    per_query_top_k: int = DEFAULT_PER_QUERY_TOP_K
    table_budget: int = DEFAULT_TABLE_BUDGET
    enabled_types: tuple[EntityType, ...] | None = None  # None: all types in the index
    keyword_source: str = "fallback"  # "llm" | "fallback"
    entropy_calibration: bool = False
    entropy_alpha: float = 1.0
    include_table_descriptions: bool = True
    append_keywords_to_question: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.per_query_top_k < 1:
            raise ValueError("per_query_top_k must be >= 1")
        if self.table_budget < 1:
            raise ValueError("table_budget must be >= 1")
        if self.keyword_source not in ("llm", "fallback"):
            raise ValueError(f"unknown keyword_source '{self.keyword_source}'")
        if self.enabled_types is not None:
            self.enabled_types = tuple(EntityType(t) for t in self.enabled_types)

    def to_dict(self) -> dict:
        return {
            "per_query_top_k": self.per_query_top_k,
            "table_budget": self.table_budget,
            "enabled_types": None
            if self.enabled_types is None
            else [t.value for t in self.enabled_types],
            "keyword_source": self.keyword_source,
            "entropy_calibration": self.entropy_calibration,
            "entropy_alpha": self.entropy_alpha,
            "include_table_descriptions": self.include_table_descriptions,
            "append_keywords_to_question": self.append_keywords_to_question,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config field(s): {sorted(unknown)}")
        kwargs = dict(raw)
        if kwargs.get("enabled_types") is not None:
            kwargs["enabled_types"] = tuple(EntityType(t) for t in kwargs["enabled_types"])
        return cls(**kwargs)


@dataclass
class TableCandidate:
    """One ranked table with its score, support, and the hits behind it."""

    database: str
    table: str
    score: float
    support: int
    best_hits: dict[str, RetrievalHit] = field(default_factory=dict)

    @property
    def qualified(self) -> str:
        return f"{self.database}.{self.table}"


@dataclass
class LinkAccounting:
    stage_seconds: dict[str, float] = field(default_factory=dict)
    query_count: int = 0
    hit_count: int = 0
    schema_tokens: int = 0

    def to_dict(self) -> dict:
        return {
            "stage_seconds": dict(self.stage_seconds),
            "query_count": self.query_count,
            "hit_count": self.hit_count,
            "schema_tokens": self.schema_tokens,
        }


@dataclass
class LinkResult:
    question: str
    keywords: KeywordSet
    candidates: list[TableCandidate]
    filtered_hits: list[RetrievalHit]
    candidate_schema: str
    accounting: LinkAccounting

    def table_ranking(self) -> list[str]:
        return [c.qualified for c in self.candidates]


class TrainingRecord(Protocol):
    question: str
    gold_tables: frozenset[str]


# ---------------------------------------------------------------------------
# Retrieval fan-out
# ---------------------------------------------------------------------------

def retrieve_all(
    keywords: KeywordSet,
    index: EntityIndex,
    config: PipelineConfig,
    embedder: EmbeddingProvider,
) -> list[RetrievalHit]:
    """Top-k hits for every (query, enabled entity type) pair.

    The same entity may appear once per query; deduplication happens during
    aggregation. A failure while retrieving the question itself is fatal,
    keyword failures only log a warning and drop that query.
    """
    queries = keywords.queries(config.append_keywords_to_question)
    types = _enabled_types(index, config)
    tasks = [(query, etype) for query in queries for etype in types]

    def run(task: tuple[str, EntityType]) -> list[RetrievalHit]:
        query, etype = task
        try:
            return index.query(query, etype, config.per_query_top_k, embedder)
        except SchemalinkError:
            if query == keywords.question:
                raise
            logger.warning("retrieval failed for keyword %r (%s); skipping", query, etype.value)
            return []

    if config.workers > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(task) for task in tasks]
    return [hit for hits in results for hit in hits]


def _enabled_types(index: EntityIndex, config: PipelineConfig) -> list[EntityType]:
    available = index.entity_types()
    if config.enabled_types is None:
        return available
    return [t for t in available if t in config.enabled_types]


# ---------------------------------------------------------------------------
# Aggregation into a table ranking
# ---------------------------------------------------------------------------

def rank_tables(
    hits: Sequence[RetrievalHit],
    weights: CalibrationWeights | None,
    config: PipelineConfig,
) -> list[TableCandidate]:
    """Aggregate hits into at most table_budget ranked tables.

    Scores are calibrated (optional entropy pass, then type weights), each
    entity keeps its best calibrated score across queries, and a table scores
    the max over its entities. Ties break by support (distinct retrieved
    (entity, query) pairs), then ascending "db.table" name.
    """
    if not hits:
        return []
    if config.entropy_calibration:
        hits = apply_entropy_calibration(hits, config.entropy_alpha)
    hits = apply_type_weights(hits, weights)

    best: dict[str, RetrievalHit] = {}
    support: dict[tuple[str, str], set[tuple[str, str]]] = {}
    for hit in hits:
        current = best.get(hit.entity_id)
        if current is None or hit.calibrated_score > current.calibrated_score:
            best[hit.entity_id] = hit
        support.setdefault((hit.database, hit.table), set()).add(
            (hit.entity_id, hit.query_text)
        )

    candidates: dict[tuple[str, str], TableCandidate] = {}
    for hit in best.values():
        key = (hit.database, hit.table)
        candidate = candidates.get(key)
        if candidate is None:
            candidate = TableCandidate(
                database=hit.database,
                table=hit.table,
                score=hit.calibrated_score,
                support=len(support[key]),
            )
            candidates[key] = candidate
        candidate.best_hits[hit.entity_id] = hit
        if hit.calibrated_score > candidate.score:
            candidate.score = hit.calibrated_score
    ranked = sorted(
        candidates.values(), key=lambda c: (-c.score, -c.support, c.qualified)
    )
    return ranked[: config.table_budget]


def filtered_entities(candidates: Sequence[TableCandidate]) -> list[RetrievalHit]:
    """Best hit per retained entity, in candidate rank order."""
    out: list[RetrievalHit] = []
    for candidate in candidates:
        out.extend(sorted(candidate.best_hits.values(), key=lambda h: h.entity_id))
    return out


# ---------------------------------------------------------------------------
# Candidate schema construction
# ---------------------------------------------------------------------------

def build_candidate_schema(
    catalog: SchemaCatalog,
    candidates: Sequence[TableCandidate],
    config: PipelineConfig,
) -> str:
    """Render the retained entities of the ranked tables as schema text.

    Only columns with at least one retained hit appear; a table with only
    table-level hits renders with an empty column list. Optional column
    fields appear only when the matching entity was retained.
    """
    selections = []
    for candidate in candidates:
        table = catalog.table(candidate.database, candidate.table)
        hit_columns: set[str] = set()
        column_fields: dict[str, set[str]] = {}
        has_description_hit = False
        for hit in candidate.best_hits.values():
            if hit.entity_type == EntityType.TABLE_DESCRIPTION:
                has_description_hit = True
            if hit.column is None:
                continue
            hit_columns.add(hit.column)
            fields = column_fields.setdefault(hit.column, set())
            slot = _COLUMN_FIELD_BY_TYPE.get(hit.entity_type)
            if slot:
                fields.add(slot)
        ordered_columns = [c.name for c in table.columns if c.name in hit_columns]
        selections.append(
            TableSelection(
                database=candidate.database,
                table=candidate.table,
                columns=ordered_columns,
                column_fields=column_fields,
                include_description=(
                    has_description_hit and config.include_table_descriptions
                ),
            )
        )
    return render_schema(catalog, selections)


# ---------------------------------------------------------------------------
# Full link
# ---------------------------------------------------------------------------

def link(
    question: str,
    index: EntityIndex,
    catalog: SchemaCatalog,
    weights: CalibrationWeights | None,
    config: PipelineConfig,
    embedder: EmbeddingProvider,
    keyword_model: TextModelProvider | None = None,
) -> LinkResult:
    """Run the full linking pipeline for one question."""
    accounting = LinkAccounting()

    start = time.perf_counter()
    keywords = _keywords_for(question, config, keyword_model)
    accounting.stage_seconds["keywords"] = time.perf_counter() - start

    start = time.perf_counter()
    hits = retrieve_all(keywords, index, config, embedder)
    accounting.stage_seconds["retrieve"] = time.perf_counter() - start
    accounting.query_count = len(keywords.queries(config.append_keywords_to_question))
    accounting.hit_count = len(hits)

    start = time.perf_counter()
    candidates = rank_tables(hits, weights, config)
    accounting.stage_seconds["rank"] = time.perf_counter() - start

    start = time.perf_counter()
    schema = build_candidate_schema(catalog, candidates, config)
    accounting.stage_seconds["render"] = time.perf_counter() - start
    accounting.schema_tokens = count_tokens(schema)

    return LinkResult(
        question=question,
        keywords=keywords,
        candidates=candidates,
        filtered_hits=filtered_entities(candidates),
        candidate_schema=schema,
        accounting=accounting,
    )


def _keywords_for(
    question: str, config: PipelineConfig, keyword_model: TextModelProvider | None
) -> KeywordSet:
    if config.keyword_source == "llm":
        if keyword_model is None:
            logger.warning("keyword_source is 'llm' but no model given; using fallback")
            return fallback_keywords(question)
        return extract_keywords(question, keyword_model)
    return fallback_keywords(question)


# ---------------------------------------------------------------------------
# Weight calibration over training questions
# ---------------------------------------------------------------------------

def training_rankings(
    index: EntityIndex,
    keyword_sets: Sequence[KeywordSet],
    gold_sets: Sequence[frozenset[str] | set[str]],
    entity_type: EntityType,
    config: PipelineConfig,
    embedder: EmbeddingProvider,
    n_max: int,
) -> list[tuple[list[str], set[str]]]:
    """Rank tables for each question using a single entity type, uncalibrated."""
    single = replace(config, enabled_types=(entity_type,), table_budget=n_max)
    rankings = []
    for keywords, gold in zip(keyword_sets, gold_sets):
        hits = retrieve_all(keywords, index, single, embedder)
        candidates = rank_tables(hits, None, single)
        rankings.append(([c.qualified for c in candidates], set(gold)))
    return rankings


def calibrate_weights(
    index: EntityIndex,
    records: Sequence[TrainingRecord],
    config: PipelineConfig,
    embedder: EmbeddingProvider,
    keyword_model: TextModelProvider | None = None,
    n_max: int = DEFAULT_TABLE_BUDGET,
    sample_count: int = 200,
    seed: int = 0,
) -> CalibrationWeights:
    """Compute per-type weights from training questions with gold tables.

    Each type is scored by the AUC of its single-type table recall curve,
    mirroring inference behavior. Falls back to uniform weights when every
    AUC is zero. Sampling beyond sample_count is deterministic in the seed.
    """
    if not records:
        raise CalibrationError("no training records given")
    records = list(records)
    if len(records) > sample_count:
        records = random.Random(seed).sample(records, sample_count)
    keyword_sets = [_keywords_for(r.question, config, keyword_model) for r in records]
    gold_sets = [frozenset(r.gold_tables) for r in records]
    types = _enabled_types(index, config)
    aucs: dict[EntityType, float] = {}
    for etype in types:
        rankings = training_rankings(
            index, keyword_sets, gold_sets, etype, config, embedder, n_max
        )
        aucs[etype] = auc(recall_curve(rankings, n_max, entity_type=etype))
    try:
        return entity_type_weights(
            aucs, n_max=n_max, training_sample_count=len(records)
        )
    except CalibrationError:
        logger.warning("all AUC values are zero; falling back to uniform weights")
        weights = CalibrationWeights.uniform(types)
        weights.aucs = aucs
        weights.n_max = n_max
        weights.training_sample_count = len(records)
        return weights
