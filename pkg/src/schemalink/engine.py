"""High-level orchestration shared by the CLI and the HTTP service.

An engine bundles the pieces a linking deployment holds in memory between
requests: the catalog, its entity index, optional calibration weights, a
pipeline config, and the providers. Index directories are self-contained
(index + catalog copy), so an engine can be resurrected from disk alone.
"""

from __future__ import annotations

import json
import logging
from dataclasses import replace
from pathlib import Path

from .calibration import CalibrationWeights, load_weights
from .catalog import SchemaCatalog, catalog_to_document, parse_catalog
from .embedding import EmbeddingProvider, HashEmbeddingProvider
from .errors import IndexFileError, PredictionParseError
from .evaluation import render_table_schema_list
from .index import EntityIndex, load_index, save_index
from .linker import LinkResult, PipelineConfig, link
from .llm import (
    ScriptedStubProvider,
    SqlResult,
    TablePrediction,
    TextModelProvider,
    generate_sql,
    predict_tables,
)

logger = logging.getLogger(__name__)

INDEX_FILE = "index.json"
CATALOG_FILE = "catalog.json"


class LinkEngine:
    def __init__(
        self,
        catalog: SchemaCatalog,
        index: EntityIndex,
        weights: CalibrationWeights | None = None,
        config: PipelineConfig | None = None,
        embedder: EmbeddingProvider | None = None,
        keyword_model: TextModelProvider | None = None,
        main_model: TextModelProvider | None = None,
    ):
        self.catalog = catalog
        self.index = index
        self.weights = weights
        self.config = config or PipelineConfig()
        self.embedder = embedder or HashEmbeddingProvider(index.dimension)
        self.keyword_model = keyword_model
        self.main_model = main_model or ScriptedStubProvider()

    @classmethod
    def from_dir(
        cls,
        index_dir: str | Path,
        weights_path: str | Path | None = None,
        **kwargs,
    ) -> "LinkEngine":
        index_dir = Path(index_dir)
        index = load_index(index_dir / INDEX_FILE)
        catalog_path = index_dir / CATALOG_FILE
        try:
            catalog = parse_catalog(catalog_path.read_bytes())
        except OSError as exc:
            raise IndexFileError(
                f"index directory {index_dir} has no readable {CATALOG_FILE}: {exc}"
            ) from exc
        weights = load_weights(weights_path) if weights_path else None
        return cls(catalog=catalog, index=index, weights=weights, **kwargs)

    def save(self, index_dir: str | Path) -> list[Path]:
        """Write the index and a catalog copy; returns the written paths."""
        index_dir = Path(index_dir)
        index_dir.mkdir(parents=True, exist_ok=True)
        index_path = index_dir / INDEX_FILE
        catalog_path = index_dir / CATALOG_FILE
        save_index(self.index, index_path)
        catalog_path.write_text(
            json.dumps(catalog_to_document(self.catalog), indent=2) + "\n",
            encoding="utf-8",
        )
        return [index_path, catalog_path]

    def with_config(self, **overrides) -> PipelineConfig:
        overrides = {k: v for k, v in overrides.items() if v is not None}
        return replace(self.config, **overrides) if overrides else self.config

    def link(self, question: str, **config_overrides) -> LinkResult:
        config = self.with_config(**config_overrides)
        return link(
            question,
            self.index,
            self.catalog,
            self.weights,
            config,
            self.embedder,
            self.keyword_model,
        )

    def predict(
        self, question: str, result: LinkResult | None = None, **config_overrides
    ) -> tuple[LinkResult, TablePrediction]:
        """Link (unless a result is supplied) and run table prediction over it.

        Falls back to the retriever ranking when the prediction reply cannot
        be parsed, so callers always get a usable table list.
        """
        if result is None:
            result = self.link(question, **config_overrides)
        if not result.candidates:
            return result, TablePrediction(tables=[])
        allowed = {(c.database, c.table) for c in result.candidates}
        try:
            prediction = predict_tables(
                result.candidate_schema, question, self.main_model, allowed=allowed
            )
        except PredictionParseError:
            logger.warning("table prediction unparseable; using retriever ranking")
            from .llm import PredictedTable

            prediction = TablePrediction(
                tables=[
                    PredictedTable(c.database, c.table, i + 1)
                    for i, c in enumerate(result.candidates)
                ]
            )
        return result, prediction

    def sql(
        self,
        question: str,
        dialect_instruction: str = "",
        executor=None,
        max_corrections: int = 3,
        **config_overrides,
    ) -> tuple[LinkResult, TablePrediction, SqlResult]:
        """Full pipeline: link, predict tables, generate SQL over full schemas."""
        result, prediction = self.predict(question, **config_overrides)
        tables = prediction.qualified_names() or result.table_ranking()
        schema_text = render_table_schema_list(self.catalog, tables)
        sql_result = generate_sql(
            schema_text or "(no schema retrieved)",
            question,
            self.main_model,
            dialect_instruction=dialect_instruction,
            executor=executor,
            max_corrections=max_corrections,
        )
        return result, prediction, sql_result

    def info(self) -> dict:
        return {
            "dimension": self.index.dimension,
            "provider": self.index.provider_name,
            "entity_count": len(self.index),
            "partitions": self.index.partition_sizes(),
            "databases": len(self.catalog.databases),
            "tables": len(self.catalog.table_names()),
            "weights_loaded": self.weights is not None,
        }
