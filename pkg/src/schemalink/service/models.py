"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str
    index_loaded: bool


class ProviderSpec(BaseModel):
    kind: str = "hash"  # "hash" | "remote" (remote reads endpoint from env)
    dimension: int = 256


class BuildIndexRequest(BaseModel):
    catalog: dict
    entity_types: Optional[list[str]] = None
    provider: ProviderSpec = Field(default_factory=ProviderSpec)


class BuildIndexResponse(BaseModel):
    entity_count: int
    partitions: dict[str, int]
    dimension: int
    provider: str


class IndexInfoResponse(BaseModel):
    dimension: int
    provider: str
    entity_count: int
    partitions: dict[str, int]
    databases: int
    tables: int
    weights_loaded: bool


class KeywordsRequest(BaseModel):
    question: str
    source: Optional[str] = None  # "llm" | "fallback"; None follows the config


class KeywordsResponse(BaseModel):
    question: str
    keywords: list[str]
    source: str


class LinkOverrides(BaseModel):
    """Per-request pipeline overrides; unset fields keep the engine config."""

    top_tables: Optional[int] = Field(default=None, ge=1)
    per_query_top_k: Optional[int] = Field(default=None, ge=1)
    entity_types: Optional[list[str]] = None
    keyword_source: Optional[str] = None
    entropy_calibration: Optional[bool] = None
    entropy_alpha: Optional[float] = None
    include_table_descriptions: Optional[bool] = None
    append_keywords_to_question: Optional[bool] = None

    def as_config_kwargs(self) -> dict:
        return {
            "table_budget": self.top_tables,
            "per_query_top_k": self.per_query_top_k,
            "enabled_types": tuple(self.entity_types) if self.entity_types else None,
            "keyword_source": self.keyword_source,
            "entropy_calibration": self.entropy_calibration,
            "entropy_alpha": self.entropy_alpha,
            "include_table_descriptions": self.include_table_descriptions,
            "append_keywords_to_question": self.append_keywords_to_question,
        }


class LinkRequest(LinkOverrides):
    question: str


class TableCandidateModel(BaseModel):
    database: str
    table: str
    score: float
    support: int


class AccountingModel(BaseModel):
    stage_seconds: dict[str, float]
    query_count: int
    hit_count: int
    schema_tokens: int


class LinkResponse(BaseModel):
    question: str
    keywords: list[str]
    keyword_source: str
    tables: list[TableCandidateModel]
    candidate_schema: str
    accounting: AccountingModel


class PredictedTableModel(BaseModel):
    database: str
    table: str
    rank: int


class PredictResponse(BaseModel):
    question: str
    keywords: list[str]
    tables: list[PredictedTableModel]
    candidate_schema: str
    thinking: str = ""


class SqlRequest(LinkRequest):
    dialect_instruction: str = ""
    max_corrections: int = Field(default=3, ge=0)


class SqlAttemptModel(BaseModel):
    database: str
    sql: str
    error: Optional[str] = None


class SqlResponse(BaseModel):
    question: str
    database: str
    sql: str
    correction_rounds: int
    attempts: list[SqlAttemptModel]
    predicted_tables: list[PredictedTableModel]


class TrainingRecordModel(BaseModel):
    question_id: str = ""
    question: str
    gold_tables: list[str]


class CalibrateRequest(BaseModel):
    records: list[TrainingRecordModel]
    n_max: int = Field(default=50, ge=1)
    sample_count: int = Field(default=200, ge=1)
    seed: int = 0
    adopt: bool = True  # install the weights on the engine for later links


class CalibrateResponse(BaseModel):
    weights: dict[str, float]
    aucs: dict[str, float]
    n_max: int
    training_sample_count: int


class EvalRequest(BaseModel):
    records: list[TrainingRecordModel]
    method: str
    at: list[int] = Field(default_factory=lambda: [5, 15, 50])
    budget_matched: bool = False
    bm25_tokenizer: str = "word"
    bm25_shingle_k: int = Field(default=4, ge=2)


class ErrorDetail(BaseModel):
    category: str
    message: str


class ErrorResponse(BaseModel):
    error: ErrorDetail
