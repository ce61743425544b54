"""Benchmark datasets, the evaluation harness, and baseline retrievers.

Datasets are line-delimited JSON records (one question with its gold tables
per line). The harness runs one retrieval method over a dataset and produces
a report with macro Recall@N, schema-token accounting, entity usage, an
optional execution-accuracy hook, and a cost estimate.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from . import __version__
from .calibration import WEIGHTS_FORMAT_VERSION, CalibrationWeights
from .catalog import SchemaCatalog, render_table_schema
from .embedding import EmbeddingProvider, cosine_similarity, embed_batch
from .errors import DatasetError, PredictionParseError
from .index import INDEX_FORMAT_VERSION, Bm25Index, EntityIndex, bm25_query
from .linker import PipelineConfig, link
from .llm import TextModelProvider, generate_sql, predict_tables
from .metrics import DEFAULT_PRICES, count_tokens, estimate_cost, recall_at_n
from .prompts import SQL_GENERATION, TABLE_PREDICTION

logger = logging.getLogger(__name__)

METHODS = ("rasl_retriever", "rasl_full", "bm25_tabledoc", "dense_tabledoc")


@dataclass(frozen=True)
class BenchmarkRecord:
    question_id: str
    question: str
    gold_tables: frozenset[str]
    gold_sql: str | None = None


def load_dataset(path: str | Path) -> list[BenchmarkRecord]:
    """Read one JSON record per line: question_id, question, gold_tables[, gold_sql]."""
    records = []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DatasetError(f"cannot read dataset {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
            record = BenchmarkRecord(
                question_id=str(raw["question_id"]),
                question=raw["question"],
                gold_tables=frozenset(raw["gold_tables"]),
                gold_sql=raw.get("gold_sql"),
            )
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DatasetError(f"bad dataset record at {path}:{lineno}: {exc}") from exc
        if not record.gold_tables:
            raise DatasetError(f"empty gold_tables at {path}:{lineno}")
        records.append(record)
    if not records:
        raise DatasetError(f"dataset {path} has no records")
    return records


def save_dataset(records: Sequence[BenchmarkRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            doc = {
                "question_id": r.question_id,
                "question": r.question,
                "gold_tables": sorted(r.gold_tables),
            }
            if r.gold_sql is not None:
                doc["gold_sql"] = r.gold_sql
            fh.write(json.dumps(doc) + "\n")


def rows_equal_multiset(expected: Sequence, actual: Sequence) -> bool:
    """Order-insensitive row multiset equality (the shipped comparator)."""

    def normalize(rows):
        return Counter(
            tuple(row) if isinstance(row, (list, tuple)) else (row,) for row in rows
        )

    return normalize(expected) == normalize(actual)


@dataclass
class QuestionResult:
    question_id: str
    ranking: list[str]
    recalls: dict[int, float]
    prediction_tokens: int = 0
    generation_tokens: int = 0
    execution_match: bool | None = None


@dataclass
class EvalReport:
    method: str
    at: list[int]
    question_count: int
    macro_recall: dict[int, float]
    per_question: list[QuestionResult]
    schema_tokens: dict[str, int]
    entity_usage: dict[str, float] | None
    execution_accuracy: float | None
    cost: dict[str, float]
    config: dict
    versions: dict

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "at": self.at,
            "question_count": self.question_count,
            "macro_recall": {str(n): v for n, v in self.macro_recall.items()},
            "per_question": [
                {
                    "question_id": q.question_id,
                    "ranking": q.ranking,
                    "recalls": {str(n): v for n, v in q.recalls.items()},
                    "prediction_tokens": q.prediction_tokens,
                    "generation_tokens": q.generation_tokens,
                    "execution_match": q.execution_match,
                }
                for q in self.per_question
            ],
            "schema_tokens": self.schema_tokens,
            "entity_usage": self.entity_usage,
            "execution_accuracy": self.execution_accuracy,
            "cost": self.cost,
            "config": self.config,
            "versions": self.versions,
        }


def save_report(report: EvalReport, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8"
    )


def run_benchmark(
    catalog: SchemaCatalog,
    records: Sequence[BenchmarkRecord],
    method: str,
    config: PipelineConfig,
    embedder: EmbeddingProvider,
    index: EntityIndex | None = None,
    weights: CalibrationWeights | None = None,
    keyword_model: TextModelProvider | None = None,
    main_model: TextModelProvider | None = None,
    at: Sequence[int] = (5, 15, 50),
    budget_matched: bool = False,
    bm25_tokenizer: str = "word",
    bm25_shingle_k: int = 4,
    executor: Callable[[str, str], list] | None = None,
    comparator: Callable[[Sequence, Sequence], bool] = rows_equal_multiset,
    dialect_instruction: str = "",
) -> EvalReport:
    """Evaluate one retrieval method over a dataset.

    Table-as-document baselines treat each table's full rendered schema as one
    document. ``budget_matched`` truncates baseline rankings at the schema
    token budget an equivalent retriever-only link run would have used, so
    comparisons share a context budget. With an ``executor``, rasl_full also
    generates SQL and reports execution accuracy against gold_sql rows.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method '{method}', expected one of {METHODS}")
    if method in ("rasl_retriever", "rasl_full") and index is None:
        raise ValueError(f"method '{method}' requires an entity index")
    if method == "rasl_full" and main_model is None:
        raise ValueError("method 'rasl_full' requires a main model for prediction")
    _validate_gold(catalog, records)
    at = sorted(set(at))

    table_docs = None
    bm25 = None
    doc_vectors = None
    if method in ("bm25_tabledoc", "dense_tabledoc"):
        table_docs = [
            (name, render_table_schema(catalog, *name.split(".", 1)))
            for name in catalog.table_names()
        ]
        if method == "bm25_tabledoc":
            bm25 = Bm25Index(table_docs, tokenizer=bm25_tokenizer, shingle_k=bm25_shingle_k)
        else:
            doc_vectors = embed_batch(embedder, [text for _, text in table_docs])

    per_question: list[QuestionResult] = []
    usage_sums: dict[str, float] = {}
    usage_counts = 0
    tokens_by_role = {"keyword-model": 0, "main-model": 0, "embedder": 0}
    full_entities = index.entities if index is not None else []
    executed = 0
    matched = 0

    for record in records:
        prediction_tokens = 0
        generation_tokens = 0
        execution_match = None

        if method in ("rasl_retriever", "rasl_full"):
            result = link(
                record.question, index, catalog, weights, config, embedder, keyword_model
            )
            ranking = result.table_ranking()
            prediction_tokens = result.accounting.schema_tokens
            tokens_by_role["embedder"] += sum(
                count_tokens(q)
                for q in result.keywords.queries(config.append_keywords_to_question)
            )
            if config.keyword_source == "llm":
                tokens_by_role["keyword-model"] += count_tokens(record.question)
            usage = _usage_for(result.filtered_hits, full_entities)
            for key, value in usage.items():
                usage_sums[key] = usage_sums.get(key, 0.0) + value
            usage_counts += 1

            if method == "rasl_full":
                allowed = {(c.database, c.table) for c in result.candidates}
                tokens_by_role["main-model"] += count_tokens(result.candidate_schema)
                try:
                    prediction = predict_tables(
                        result.candidate_schema or "(no candidates)",
                        record.question,
                        main_model,
                        allowed=allowed,
                    )
                    ranking = prediction.qualified_names()
                except PredictionParseError:
                    logger.warning(
                        "prediction unparseable for %s; keeping retriever ranking",
                        record.question_id,
                    )
                full_schema = render_table_schema_list(catalog, ranking)
                generation_tokens = count_tokens(full_schema)
                if executor is not None and record.gold_sql and full_schema:
                    tokens_by_role["main-model"] += generation_tokens
                    execution_match = _execution_match(
                        full_schema, record, main_model, executor, comparator,
                        dialect_instruction,
                    )
                    executed += 1
                    matched += 1 if execution_match else 0
        elif method == "bm25_tabledoc":
            ranked = bm25_query(bm25, record.question, k=len(table_docs))
            ranking = [doc_id for doc_id, _ in ranked]
        else:  # dense_tabledoc
            query_vec = embed_batch(embedder, [record.question])[0]
            scored = [
                (cosine_similarity(vec, query_vec), doc_id)
                for (doc_id, _), vec in zip(table_docs, doc_vectors)
            ]
            scored.sort(key=lambda item: (-item[0], item[1]))
            ranking = [doc_id for _, doc_id in scored]
            tokens_by_role["embedder"] += count_tokens(record.question)

        if budget_matched and method in ("bm25_tabledoc", "dense_tabledoc"):
            budget_result = link(
                record.question, index, catalog, weights, config, embedder, keyword_model
            )
            ranking = _truncate_to_budget(
                ranking, dict(table_docs), budget_result.accounting.schema_tokens
            )

        recalls = {n: recall_at_n(ranking, set(record.gold_tables), n) for n in at}
        per_question.append(
            QuestionResult(
                question_id=record.question_id,
                ranking=ranking[: max(at)],
                recalls=recalls,
                prediction_tokens=prediction_tokens,
                generation_tokens=generation_tokens,
                execution_match=execution_match,
            )
        )

    macro = {
        n: sum(q.recalls[n] for q in per_question) / len(per_question) for n in at
    }
    prediction_total = sum(q.prediction_tokens for q in per_question)
    generation_total = sum(q.generation_tokens for q in per_question)
    return EvalReport(
        method=method,
        at=list(at),
        question_count=len(per_question),
        macro_recall=macro,
        per_question=per_question,
        schema_tokens={
            "prediction": prediction_total,
            "generation": generation_total,
            "total": prediction_total + generation_total,
        },
        entity_usage=(
            {k: v / usage_counts for k, v in sorted(usage_sums.items())}
            if usage_counts
            else None
        ),
        execution_accuracy=(matched / executed) if executed else None,
        cost={
            "total": estimate_cost(tokens_by_role),
            "tokens_by_role": dict(tokens_by_role),
            "prices_per_1k": dict(DEFAULT_PRICES),
        },
        config=config.to_dict(),
        versions={
            "schemalink": __version__,
            "index_format": INDEX_FORMAT_VERSION,
            "weights_format": WEIGHTS_FORMAT_VERSION,
            "prompts": [TABLE_PREDICTION, SQL_GENERATION],
        },
    )


def render_table_schema_list(catalog: SchemaCatalog, qualified_names: Sequence[str]) -> str:
    """Full schemas for a ranked table list (input to SQL generation)."""
    from .catalog import render_schema, TableSelection

    selections = []
    for name in qualified_names:
        database, _, table = name.partition(".")
        selections.append(TableSelection(database=database, table=table))
    return render_schema(catalog, selections)


def _usage_for(filtered_hits, full_entities) -> dict[str, float]:
    from .metrics import entity_usage

    if not full_entities:
        return {}
    return entity_usage(filtered_hits, full_entities)


def _validate_gold(catalog: SchemaCatalog, records: Sequence[BenchmarkRecord]) -> None:
    known = set(catalog.table_names())
    for record in records:
        missing = record.gold_tables - known
        if missing:
            raise DatasetError(
                f"gold table(s) {sorted(missing)} for question "
                f"'{record.question_id}' are not in the catalog"
            )


def _truncate_to_budget(
    ranking: Sequence[str], docs_by_id: dict[str, str], budget: int
) -> list[str]:
    """Keep adding whole table docs until the token budget is reached."""
    kept = []
    total = 0
    for doc_id in ranking:
        kept.append(doc_id)
        total += count_tokens(docs_by_id[doc_id])
        if total >= budget:
            break
    return kept


def _execution_match(
    full_schema: str,
    record: BenchmarkRecord,
    main_model: TextModelProvider,
    executor: Callable[[str, str], list],
    comparator: Callable[[Sequence, Sequence], bool],
    dialect_instruction: str,
) -> bool:
    database = sorted(record.gold_tables)[0].split(".", 1)[0]
    try:
        gold_rows = list(executor(database, record.gold_sql))
        result = generate_sql(
            full_schema,
            record.question,
            main_model,
            dialect_instruction=dialect_instruction,
            executor=executor,
        )
        if result.rows is None:
            return False
        return comparator(gold_rows, result.rows)
    except Exception as exc:  # any failure counts as a miss, not an abort
        logger.warning("execution check failed for %s: %s", record.question_id, exc)
        return False
