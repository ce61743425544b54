"""FastAPI service wrapping the linking engine.

The service holds one engine (catalog + index + weights + providers) in
application state. It can start empty and be populated through
POST /index/build, or be created around a preloaded engine (see the CLI's
``serve`` command). Package errors map to HTTP 400/409 with a stable
machine-readable category.
"""

from __future__ import annotations

import logging

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..catalog import ALL_ENTITY_TYPES, EntityType, decompose, parse_catalog
from ..embedding import HashEmbeddingProvider, RemoteEmbeddingProvider
from ..engine import LinkEngine
from ..errors import SchemalinkError
from ..evaluation import METHODS, BenchmarkRecord, run_benchmark
from ..index import build_index
from ..linker import calibrate_weights
from ..nlq import extract_keywords, fallback_keywords
from . import models

logger = logging.getLogger(__name__)


def create_app(engine: LinkEngine | None = None) -> FastAPI:
    app = FastAPI(title="schemalink", version=__version__)
    app.state.engine = engine

    @app.exception_handler(SchemalinkError)
    async def schemalink_error_handler(request: Request, exc: SchemalinkError):
        return JSONResponse(
            status_code=400,
            content={"error": {"category": exc.category, "message": str(exc)}},
        )

    def require_engine() -> LinkEngine:
        if app.state.engine is None:
            raise HTTPException(
                status_code=409,
                detail="no index loaded; POST /index/build or start with --index",
            )
        return app.state.engine

    @app.get("/health", response_model=models.HealthResponse)
    def health():
        return models.HealthResponse(
            status="ok", version=__version__, index_loaded=app.state.engine is not None
        )

    @app.get("/index/info", response_model=models.IndexInfoResponse)
    def index_info():
        return models.IndexInfoResponse(**require_engine().info())

    @app.post("/index/build", response_model=models.BuildIndexResponse)
    def index_build(request: models.BuildIndexRequest):
        catalog = parse_catalog(request.catalog)
        if request.entity_types:
            types = {EntityType(v) for v in request.entity_types}
        else:
            types = set(ALL_ENTITY_TYPES)
        entities = decompose(catalog, types)
        if not entities:
            raise HTTPException(status_code=400, detail="catalog produced no entities")
        if request.provider.kind == "hash":
            embedder = HashEmbeddingProvider(request.provider.dimension)
        elif request.provider.kind == "remote":
            embedder = RemoteEmbeddingProvider.from_env(request.provider.dimension)
        else:
            raise HTTPException(
                status_code=400, detail=f"unknown provider kind '{request.provider.kind}'"
            )
        index = build_index(entities, embedder)
        previous = app.state.engine
        app.state.engine = LinkEngine(
            catalog=catalog,
            index=index,
            embedder=embedder,
            keyword_model=previous.keyword_model if previous else None,
            main_model=previous.main_model if previous else None,
        )
        return models.BuildIndexResponse(
            entity_count=len(index),
            partitions=index.partition_sizes(),
            dimension=index.dimension,
            provider=index.provider_name,
        )

    @app.post("/keywords", response_model=models.KeywordsResponse)
    def keywords(request: models.KeywordsRequest):
        engine = require_engine()
        source = request.source or engine.config.keyword_source
        if source == "llm" and engine.keyword_model is not None:
            ks = extract_keywords(request.question, engine.keyword_model)
        else:
            ks = fallback_keywords(request.question)
        return models.KeywordsResponse(
            question=ks.question, keywords=list(ks.keywords), source=ks.source
        )

    @app.post("/link", response_model=models.LinkResponse)
    def link_question(request: models.LinkRequest):
        engine = require_engine()
        result = engine.link(request.question, **request.as_config_kwargs())
        return _link_response(result)

    @app.post("/tables/predict", response_model=models.PredictResponse)
    def predict(request: models.LinkRequest):
        engine = require_engine()
        result, prediction = engine.predict(
            request.question, **request.as_config_kwargs()
        )
        return models.PredictResponse(
            question=result.question,
            keywords=list(result.keywords.keywords),
            tables=[
                models.PredictedTableModel(
                    database=t.database, table=t.table, rank=t.rank
                )
                for t in prediction.tables
            ],
            candidate_schema=result.candidate_schema,
            thinking=prediction.thinking,
        )

    @app.post("/sql", response_model=models.SqlResponse)
    def sql(request: models.SqlRequest):
        engine = require_engine()
        overrides = request.as_config_kwargs()
        result, prediction, sql_result = engine.sql(
            request.question,
            dialect_instruction=request.dialect_instruction,
            max_corrections=request.max_corrections,
            **overrides,
        )
        return models.SqlResponse(
            question=result.question,
            database=sql_result.database,
            sql=sql_result.sql,
            correction_rounds=sql_result.correction_rounds,
            attempts=[
                models.SqlAttemptModel(database=a.database, sql=a.sql, error=a.error)
                for a in sql_result.attempts
            ],
            predicted_tables=[
                models.PredictedTableModel(
                    database=t.database, table=t.table, rank=t.rank
                )
                for t in prediction.tables
            ],
        )

    @app.post("/calibrate", response_model=models.CalibrateResponse)
    def calibrate(request: models.CalibrateRequest):
        engine = require_engine()
        records = [
            BenchmarkRecord(
                question_id=r.question_id or str(i),
                question=r.question,
                gold_tables=frozenset(r.gold_tables),
            )
            for i, r in enumerate(request.records)
        ]
        weights = calibrate_weights(
            engine.index,
            records,
            engine.config,
            engine.embedder,
            keyword_model=engine.keyword_model,
            n_max=request.n_max,
            sample_count=request.sample_count,
            seed=request.seed,
        )
        if request.adopt:
            engine.weights = weights
        return models.CalibrateResponse(
            weights={t.value: w for t, w in weights.weights.items()},
            aucs={t.value: a for t, a in weights.aucs.items()},
            n_max=weights.n_max,
            training_sample_count=weights.training_sample_count,
        )

    @app.post("/eval")
    def evaluate(request: models.EvalRequest) -> dict:
        engine = require_engine()
        if request.method not in METHODS:
            raise HTTPException(
                status_code=400,
                detail=f"unknown method '{request.method}', expected one of {list(METHODS)}",
            )
        records = [
            BenchmarkRecord(
                question_id=r.question_id or str(i),
                question=r.question,
                gold_tables=frozenset(r.gold_tables),
            )
            for i, r in enumerate(request.records)
        ]
        report = run_benchmark(
            engine.catalog,
            records,
            request.method,
            engine.config,
            engine.embedder,
            index=engine.index,
            weights=engine.weights,
            keyword_model=engine.keyword_model,
            main_model=engine.main_model,
            at=request.at,
            budget_matched=request.budget_matched,
            bm25_tokenizer=request.bm25_tokenizer,
            bm25_shingle_k=request.bm25_shingle_k,
        )
        return report.to_dict()

    return app


def _link_response(result) -> models.LinkResponse:
    return models.LinkResponse(
        question=result.question,
        keywords=list(result.keywords.keywords),
        keyword_source=result.keywords.source,
        tables=[
            models.TableCandidateModel(
                database=c.database, table=c.table, score=c.score, support=c.support
            )
            for c in result.candidates
        ],
        candidate_schema=result.candidate_schema,
        accounting=models.AccountingModel(**result.accounting.to_dict()),
    )
