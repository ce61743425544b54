"""Text-model providers and the LLM-backed pipeline steps.

Three steps ride on one provider contract (``complete(messages) -> text``):
table prediction over a candidate schema, table-description synthesis, and
SQL generation with an execution-feedback self-correction loop. Parsers are
strict about the target tag block and lenient about surrounding prose.
"""

from __future__ import annotations

import copy
import logging
import os
import re
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol, Sequence

import requests

from . import prompts
from .catalog import SchemaCatalog, render_table_schema
from .errors import (
    DescriptionSynthesisError,
    PredictionParseError,
    ProviderTransportError,
    SqlParseError,
)

logger = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.0
DEFAULT_MAX_TOKENS = 4096
DEFAULT_MAX_CORRECTIONS = 3

Message = dict


class TextModelProvider(Protocol):
    name: str

    def complete(self, messages: Sequence[Message]) -> str: ...


class ScriptedStubProvider:
    """Offline deterministic provider for tests and air-gapped runs.

    The reply for a call is the value of the first script key found as a
    substring of the last user message; otherwise the fixed default reply.
    All calls are recorded on ``.calls`` for assertions.
    """

    DEFAULT_REPLY = "<thinking>\nNo scripted reply matched this request.\n</thinking>"

    def __init__(
        self,
        script: dict[str, str] | None = None,
        default_reply: str | None = None,
        name: str = "stub",
    ):
        self.script = dict(script or {})
        self.default_reply = self.DEFAULT_REPLY if default_reply is None else default_reply
        self.name = name
        self.calls: list[list[Message]] = []

    def complete(self, messages: Sequence[Message]) -> str:
        self.calls.append(copy.deepcopy(list(messages)))
        last_user = next(
            (m["content"] for m in reversed(messages) if m.get("role") == "user"), ""
        )
        for key, reply in self.script.items():
            if key in last_user:
                return reply
        return self.default_reply


class RemoteChatProvider:
    """HTTP adapter for a chat endpoint.

    Request: {"model", "messages", "temperature", "max_tokens"};
    response: {"content"}. Endpoint and token come from configuration or the
    SCHEMALINK_CHAT_URL / SCHEMALINK_CHAT_TOKEN environment variables.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_token: str | None = None,
        temperature: float = DEFAULT_TEMPERATURE,
        max_tokens: int = DEFAULT_MAX_TOKENS,
        name: str | None = None,
        timeout: float = 120.0,
        max_retries: int = 2,
        session: requests.Session | None = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_token = api_token
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.name = name or f"remote:{model}"
        self.timeout = timeout
        self.max_retries = max_retries
        self._session = session or requests.Session()

    @classmethod
    def from_env(cls, model: str, **kwargs) -> "RemoteChatProvider":
        endpoint = os.environ.get("SCHEMALINK_CHAT_URL")
        if not endpoint:
            raise ProviderTransportError("SCHEMALINK_CHAT_URL is not set", retryable=False)
        token = os.environ.get("SCHEMALINK_CHAT_TOKEN")
        return cls(endpoint, model, api_token=token, **kwargs)

    def complete(self, messages: Sequence[Message]) -> str:
        headers = {}
        if self.api_token:
            headers["Authorization"] = f"Bearer {self.api_token}"
        body = {
            "model": self.model,
            "messages": list(messages),
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        last_error: Exception | None = None
        for _ in range(self.max_retries + 1):
            try:
                resp = self._session.post(
                    self.endpoint, json=body, headers=headers, timeout=self.timeout
                )
                resp.raise_for_status()
                return resp.json()["content"]
            except (requests.RequestException, KeyError, ValueError) as exc:
                last_error = exc
        raise ProviderTransportError(
            f"chat endpoint {self.endpoint} failed after {self.max_retries + 1} "
            f"attempts: {last_error}"
        ) from last_error


# ---------------------------------------------------------------------------
# Table prediction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PredictedTable:
    database: str
    table: str
    rank: int

    @property
    def qualified(self) -> str:
        return f"{self.database}.{self.table}"


@dataclass
class TablePrediction:
    tables: list[PredictedTable]
    thinking: str = ""

    def qualified_names(self) -> list[str]:
        return [t.qualified for t in self.tables]


def predict_tables(
    candidate_schema: str,
    question: str,
    provider: TextModelProvider,
    allowed: set[tuple[str, str]] | None = None,
) -> TablePrediction:
    """Ask the model to rank candidate tables by relevance to the question.

    Predictions outside ``allowed`` are dropped with a warning (hallucination
    guard). An empty but well-formed reply is a valid empty prediction; a
    reply with no ranked-table block raises after one retry.
    """
    if not candidate_schema:
        raise ValueError("candidate_schema must be non-empty")
    prompt = prompts.render(prompts.TABLE_PREDICTION, SCHEMA=candidate_schema, QUESTION=question)
    messages = [{"role": "user", "content": prompt}]
    reply = ""
    for attempt in range(2):
        reply = provider.complete(messages)
        parsed = parse_table_prediction(reply)
        if parsed is None:
            logger.warning("table prediction reply unparseable (attempt %d)", attempt + 1)
            continue
        if allowed is not None:
            kept = []
            for entry in parsed.tables:
                if (entry.database, entry.table) in allowed:
                    kept.append(entry)
                else:
                    logger.warning(
                        "dropping predicted table '%s' not in the candidate set",
                        entry.qualified,
                    )
            parsed.tables = _normalize_ranks(kept)
        return parsed
    raise PredictionParseError(
        f"no <relevant_tables> block found after retry; last reply began: {reply[:200]!r}"
    )


def parse_table_prediction(reply: str) -> TablePrediction | None:
    """Parse the first <relevant_tables> block; None when absent."""
    block = _first_tag_body(reply, "relevant_tables")
    if block is None:
        return None
    entries: list[tuple[int, int, PredictedTable]] = []
    order = 0
    for db_match in re.finditer(
        r"<database\s+name=\"([^\"]*)\"\s*>(.*?)</database>", block, re.DOTALL
    ):
        database = db_match.group(1).strip()
        for tbl_match in re.finditer(
            r"<table\s+rank=\"(\d+)\"\s*>(.*?)</table>", db_match.group(2), re.DOTALL
        ):
            rank = int(tbl_match.group(1))
            table = tbl_match.group(2).strip()
            if rank < 1 or not table or not database:
                continue
            entries.append((rank, order, PredictedTable(database, table, rank)))
            order += 1
    entries.sort(key=lambda item: (item[0], item[1]))
    seen: set[tuple[str, str]] = set()
    tables = []
    for _, _, entry in entries:
        key = (entry.database, entry.table)
        if key in seen:
            continue
        seen.add(key)
        tables.append(entry)
    return TablePrediction(
        tables=_normalize_ranks(tables),
        thinking=(_first_tag_body(reply, "thinking") or "").strip(),
    )


def _normalize_ranks(tables: list[PredictedTable]) -> list[PredictedTable]:
    ranks = [t.rank for t in tables]
    if all(a < b for a, b in zip(ranks, ranks[1:])):
        return tables
    return [replace(t, rank=i + 1) for i, t in enumerate(tables)]


# ---------------------------------------------------------------------------
# Table description synthesis
# ---------------------------------------------------------------------------

def synthesize_table_description(table_schema_text: str, provider: TextModelProvider) -> str:
    """Generate a semantic description for one rendered table schema."""
    if not table_schema_text:
        raise ValueError("table_schema_text must be non-empty")
    prompt = prompts.render(prompts.TABLE_DESCRIPTION, TABLE_SCHEMA=table_schema_text)
    messages = [{"role": "user", "content": prompt}]
    reply = ""
    for attempt in range(2):
        reply = provider.complete(messages)
        body = _first_tag_body(reply, "description")
        if body is not None and body.strip():
            return body.strip()
        logger.warning("description reply missing <description> (attempt %d)", attempt + 1)
    raise DescriptionSynthesisError(
        f"no <description> block found after retry; last reply began: {reply[:200]!r}"
    )


def describe_catalog(
    catalog: SchemaCatalog,
    provider: TextModelProvider,
    only_missing: bool = True,
) -> SchemaCatalog:
    """Fill in table descriptions across a catalog via synthesis.

    Tables whose synthesis fails are left unchanged (with a warning) so one
    bad reply does not abort a long build. Returns a new catalog; the input
    is not mutated.
    """
    new_catalog = copy.deepcopy(catalog)
    for db in new_catalog.databases:
        for tbl in db.tables:
            if only_missing and tbl.description:
                continue
            schema_text = render_table_schema(catalog, db.name, tbl.name)
            try:
                tbl.description = synthesize_table_description(schema_text, provider)
            except DescriptionSynthesisError as exc:
                logger.warning(
                    "description synthesis failed for %s.%s: %s", db.name, tbl.name, exc
                )
    return new_catalog


# ---------------------------------------------------------------------------
# SQL generation with self-correction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SqlAttempt:
    database: str
    sql: str
    error: str | None = None


@dataclass
class SqlResult:
    database: str
    sql: str
    correction_rounds: int
    attempts: list[SqlAttempt] = field(default_factory=list)
    rows: list | None = None


def generate_sql(
    schema_text: str,
    question: str,
    provider: TextModelProvider,
    dialect_instruction: str = "",
    executor: Callable[[str, str], list] | None = None,
    max_corrections: int = DEFAULT_MAX_CORRECTIONS,
) -> SqlResult:
    """Generate SQL for a question over the given schema text.

    With an executor, failed or empty executions trigger follow-up messages
    describing the problem (same conversation, same system framing) until the
    query returns rows or max_corrections is exhausted; the last attempt is
    returned either way. Without an executor exactly one round runs and the
    SQL comes back unvalidated.
    """
    if not schema_text:
        raise ValueError("schema_text must be non-empty")
    prompt = prompts.render(
        prompts.SQL_GENERATION,
        DIALECT_INSTRUCTION=dialect_instruction,
        DATABASE_SCHEMA=schema_text,
        QUESTION=question,
    )
    messages: list[Message] = [{"role": "user", "content": prompt}]
    attempts: list[SqlAttempt] = []
    corrections = 0
    while True:
        reply, database, sql = _complete_and_parse_sql(provider, messages)
        rows: list | None = None
        error: str | None = None
        if executor is not None:
            try:
                rows = list(executor(database, sql))
            except Exception as exc:  # executor failures drive the loop
                error = str(exc)
            else:
                if not rows:
                    error = "the output table is empty"
        attempts.append(SqlAttempt(database=database, sql=sql, error=error))
        if executor is None or error is None or corrections >= max_corrections:
            return SqlResult(
                database=database,
                sql=sql,
                correction_rounds=corrections,
                attempts=attempts,
                rows=rows,
            )
        corrections += 1
        messages.append({"role": "assistant", "content": reply})
        messages.append({"role": "user", "content": _correction_message(error)})


def _correction_message(error: str) -> str:
    if error == "the output table is empty":
        return (
            "The previous SQL query executed successfully but the output table "
            "is empty. Reconsider the question and provide a corrected query in "
            "the same XML format."
        )
    return (
        f"The previous SQL query failed with the following error:\n{error}\n"
        "Fix the query and answer again in the same XML format."
    )


def _complete_and_parse_sql(
    provider: TextModelProvider, messages: list[Message]
) -> tuple[str, str, str]:
    reply = ""
    for attempt in range(2):
        reply = provider.complete(messages)
        parsed = parse_sql_reply(reply)
        if parsed is not None:
            return reply, parsed[0], parsed[1]
        logger.warning("sql reply unparseable (attempt %d)", attempt + 1)
    raise SqlParseError(
        f"no <database>/<sql_query> blocks found after retry; last reply began: {reply[:200]!r}"
    )


def parse_sql_reply(reply: str) -> tuple[str, str] | None:
    """Extract (database, sql) from the first well-formed blocks; None if absent."""
    database = _first_tag_body(reply, "database")
    sql = _first_tag_body(reply, "sql_query")
    if database is None or sql is None or not sql.strip():
        return None
    return database.strip(), sql.strip()


def _first_tag_body(text: str, tag: str) -> str | None:
    match = re.search(rf"<{tag}>(.*?)</{tag}>", text, re.DOTALL)
    return match.group(1) if match else None
