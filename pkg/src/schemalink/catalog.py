"""Catalog parsing, schema-entity decomposition, and schema text rendering.

A catalog document describes databases, tables, columns, and their metadata.
Tables and columns are decomposed into typed semantic entities (one entity per
populated metadata field) which downstream modules embed and retrieve. The
renderer emits the XML-ish schema text format consumed by the LLM prompts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .errors import CatalogError, UnknownTableError

CATALOG_FORMAT_VERSION = 1


class EntityType(str, Enum):
    """One category of schema metadata, table-level or column-level."""

    TABLE_NAME = "table_name"
    TABLE_ALIAS = "table_alias"
    TABLE_DESCRIPTION = "table_description"
    COLUMN_NAME = "column_name"
    COLUMN_ALIAS = "column_alias"
    COLUMN_DESCRIPTION = "column_description"
    VALUE_DESCRIPTION = "value_description"

    @property
    def level(self) -> str:
        return "table" if self in TABLE_LEVEL_TYPES else "column"


TABLE_LEVEL_TYPES = (
    EntityType.TABLE_NAME,
    EntityType.TABLE_ALIAS,
    EntityType.TABLE_DESCRIPTION,
)
COLUMN_LEVEL_TYPES = (
    EntityType.COLUMN_NAME,
    EntityType.COLUMN_ALIAS,
    EntityType.COLUMN_DESCRIPTION,
    EntityType.VALUE_DESCRIPTION,
)
ALL_ENTITY_TYPES = TABLE_LEVEL_TYPES + COLUMN_LEVEL_TYPES


@dataclass
class ColumnDef:
    name: str
    data_type: str
    alias: str | None = None
    description: str | None = None
    value_description: str | None = None


@dataclass
class TableDef:
    name: str
    columns: list[ColumnDef]
    alias: str | None = None
    description: str | None = None

    def column(self, name: str) -> ColumnDef | None:
        for col in self.columns:
            if col.name == name:
                return col
        return None


@dataclass(frozen=True)
class ForeignKey:
    table: str
    column: str
    ref_table: str
    ref_column: str

    def render(self) -> str:
        return f"{self.table}.{self.column}={self.ref_table}.{self.ref_column}"


@dataclass
class DatabaseDef:
    name: str
    tables: list[TableDef]
    foreign_keys: list[ForeignKey] = field(default_factory=list)

    def table(self, name: str) -> TableDef | None:
        for tbl in self.tables:
            if tbl.name == name:
                return tbl
        return None


@dataclass
class SchemaCatalog:
    """Validated catalog. Treated as immutable after construction."""

    databases: list[DatabaseDef]

    def database(self, name: str) -> DatabaseDef | None:
        for db in self.databases:
            if db.name == name:
                return db
        return None

    def table(self, database: str, table: str) -> TableDef:
        db = self.database(database)
        tbl = db.table(table) if db else None
        if tbl is None:
            raise UnknownTableError(
                f"table '{database}.{table}' is not in the catalog; "
                "rebuild the index from the current catalog if they have drifted"
            )
        return tbl

    def table_names(self) -> list[str]:
        return [f"{db.name}.{tbl.name}" for db in self.databases for tbl in db.tables]


@dataclass(frozen=True)
class SchemaEntity:
    """One (owner, entity type, text) unit extracted from the catalog."""

    entity_id: str
    database: str
    table: str
    column: str | None
    entity_type: EntityType
    text: str


def _entity_id(database: str, table: str, column: str | None, kind: EntityType) -> str:
    return f"{database}|{table}|{column or ''}|{kind.value}"


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def parse_catalog(document: bytes | str | Mapping) -> SchemaCatalog:
    """Parse and validate a catalog document (bytes, JSON text, or dict).

    Raises CatalogError with the path of the offending element on malformed
    input, duplicate names, or dangling foreign keys.
    """
    if isinstance(document, (bytes, str)):
        try:
            raw = json.loads(document)
        except json.JSONDecodeError as exc:
            raise CatalogError(f"catalog document is not valid JSON: {exc}") from exc
    else:
        raw = document
    if not isinstance(raw, Mapping):
        raise CatalogError("catalog document must be a JSON object")
    version = raw.get("version")
    if version != CATALOG_FORMAT_VERSION:
        raise CatalogError(
            f"unsupported catalog version {version!r}, expected {CATALOG_FORMAT_VERSION}"
        )
    databases_raw = raw.get("databases")
    if not isinstance(databases_raw, list):
        raise CatalogError("'databases' must be a list", path="databases")

    databases: list[DatabaseDef] = []
    seen_dbs: set[str] = set()
    for i, db_raw in enumerate(databases_raw):
        db_path = f"databases[{i}]"
        name = _require_name(db_raw, db_path)
        if name in seen_dbs:
            raise CatalogError(f"duplicate database name '{name}'", path=db_path)
        seen_dbs.add(name)
        databases.append(_parse_database(db_raw, name, db_path))
    return SchemaCatalog(databases=databases)


def _require_name(raw, path: str) -> str:
    if not isinstance(raw, Mapping):
        raise CatalogError("expected an object", path=path)
    name = raw.get("name")
    if not isinstance(name, str) or not name:
        raise CatalogError("missing or empty 'name'", path=path)
    return name


def _parse_database(raw: Mapping, name: str, path: str) -> DatabaseDef:
    tables_raw = raw.get("tables")
    if not isinstance(tables_raw, list):
        raise CatalogError("'tables' must be a list", path=f"{path}.tables")
    tables: list[TableDef] = []
    seen_tables: set[str] = set()
    for j, tbl_raw in enumerate(tables_raw):
        tbl_path = f"{path}.tables[{j}]"
        tbl_name = _require_name(tbl_raw, tbl_path)
        if tbl_name in seen_tables:
            raise CatalogError(f"duplicate table name '{tbl_name}'", path=tbl_path)
        seen_tables.add(tbl_name)
        tables.append(_parse_table(tbl_raw, tbl_name, tbl_path))
    db = DatabaseDef(name=name, tables=tables)

    fks_raw = raw.get("foreign_keys", [])
    if not isinstance(fks_raw, list):
        raise CatalogError("'foreign_keys' must be a list", path=f"{path}.foreign_keys")
    for k, fk_raw in enumerate(fks_raw):
        fk_path = f"{path}.foreign_keys[{k}]"
        db.foreign_keys.append(_parse_foreign_key(fk_raw, db, fk_path))
    return db


def _parse_table(raw: Mapping, name: str, path: str) -> TableDef:
    columns_raw = raw.get("columns")
    if not isinstance(columns_raw, list) or not columns_raw:
        raise CatalogError("'columns' must be a non-empty list", path=f"{path}.columns")
    columns: list[ColumnDef] = []
    seen: set[str] = set()
    for k, col_raw in enumerate(columns_raw):
        col_path = f"{path}.columns[{k}]"
        col_name = _require_name(col_raw, col_path)
        if col_name in seen:
            raise CatalogError(f"duplicate column name '{col_name}'", path=col_path)
        seen.add(col_name)
        data_type = col_raw.get("data_type")
        if not isinstance(data_type, str) or not data_type:
            raise CatalogError("missing or empty 'data_type'", path=col_path)
        columns.append(
            ColumnDef(
                name=col_name,
                data_type=data_type,
                alias=_opt_text(col_raw, "alias", col_path),
                description=_opt_text(col_raw, "description", col_path),
                value_description=_opt_text(col_raw, "value_description", col_path),
            )
        )
    return TableDef(
        name=name,
        columns=columns,
        alias=_opt_text(raw, "alias", path),
        description=_opt_text(raw, "description", path),
    )


def _opt_text(raw: Mapping, key: str, path: str) -> str | None:
    value = raw.get(key)
    if value is None:
        return None
    if not isinstance(value, str):
        raise CatalogError(f"'{key}' must be a string", path=f"{path}.{key}")
    return value


def _parse_foreign_key(raw, db: DatabaseDef, path: str) -> ForeignKey:
    if not isinstance(raw, str) or "=" not in raw:
        raise CatalogError(
            f"foreign key {raw!r} must look like 't1.c1=t2.c2'", path=path
        )
    left, _, right = raw.partition("=")
    endpoints = []
    for side in (left.strip(), right.strip()):
        table, sep, column = side.rpartition(".")
        if not sep or not table or not column:
            raise CatalogError(
                f"foreign key endpoint {side!r} must look like 'table.column'", path=path
            )
        endpoints.append((table, column))
    for table, column in endpoints:
        tbl = db.table(table)
        if tbl is None or tbl.column(column) is None:
            raise CatalogError(
                f"foreign key '{raw}' references unknown column '{table}.{column}'",
                path=path,
            )
    (t1, c1), (t2, c2) = endpoints
    return ForeignKey(table=t1, column=c1, ref_table=t2, ref_column=c2)


def catalog_to_document(catalog: SchemaCatalog) -> dict:
    """Serialize a catalog back to the document format (inverse of parse)."""
    databases = []
    for db in catalog.databases:
        tables = []
        for tbl in db.tables:
            columns = []
            for col in tbl.columns:
                col_doc: dict = {"name": col.name, "data_type": col.data_type}
                if col.alias is not None:
                    col_doc["alias"] = col.alias
                if col.description is not None:
                    col_doc["description"] = col.description
                if col.value_description is not None:
                    col_doc["value_description"] = col.value_description
                columns.append(col_doc)
            tbl_doc: dict = {"name": tbl.name, "columns": columns}
            if tbl.alias is not None:
                tbl_doc["alias"] = tbl.alias
            if tbl.description is not None:
                tbl_doc["description"] = tbl.description
            tables.append(tbl_doc)
        databases.append(
            {
                "name": db.name,
                "tables": tables,
                "foreign_keys": [fk.render() for fk in db.foreign_keys],
            }
        )
    return {"version": CATALOG_FORMAT_VERSION, "databases": databases}


# ---------------------------------------------------------------------------
# Decomposition
# ---------------------------------------------------------------------------

def decompose(
    catalog: SchemaCatalog, enabled_types: Iterable[EntityType]
) -> list[SchemaEntity]:
    """Split the catalog into semantic entities, one per populated field.

    Table-name entity text is database-qualified ("db.table"); every other
    entity text is the source field verbatim. Absent or blank metadata yields
    no entity. Output order is deterministic: catalog order, table-level
    types before column-level types.
    """
    enabled = set(enabled_types)
    if not enabled:
        raise ValueError("enabled_types must be non-empty")
    entities: list[SchemaEntity] = []

    def add(database: str, table: str, column: str | None, kind: EntityType, text: str | None):
        if kind not in enabled or text is None or not text.strip():
            return
        entities.append(
            SchemaEntity(
                entity_id=_entity_id(database, table, column, kind),
                database=database,
                table=table,
                column=column,
                entity_type=kind,
                text=text,
            )
        )

    for db in catalog.databases:
        for tbl in db.tables:
            add(db.name, tbl.name, None, EntityType.TABLE_NAME, f"{db.name}.{tbl.name}")
            add(db.name, tbl.name, None, EntityType.TABLE_ALIAS, tbl.alias)
            add(db.name, tbl.name, None, EntityType.TABLE_DESCRIPTION, tbl.description)
            for col in tbl.columns:
                add(db.name, tbl.name, col.name, EntityType.COLUMN_NAME, col.name)
                add(db.name, tbl.name, col.name, EntityType.COLUMN_ALIAS, col.alias)
                add(db.name, tbl.name, col.name, EntityType.COLUMN_DESCRIPTION, col.description)
                add(db.name, tbl.name, col.name, EntityType.VALUE_DESCRIPTION, col.value_description)
    return entities


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

@dataclass
class TableSelection:
    """One table to render, with optional column and per-column field filters.

    ``columns=None`` renders every column; an explicit list (possibly empty)
    restricts the schema block to those columns. ``column_fields`` maps a
    column name to the subset of optional fields ("alias", "description",
    "value_description") to keep; ``None`` keeps all populated fields.
    ``include_description=None`` defers to the renderer's global flag.
    """

    database: str
    table: str
    columns: Sequence[str] | None = None
    column_fields: Mapping[str, set[str]] | None = None
    include_description: bool | None = None


def render_schema(
    catalog: SchemaCatalog,
    selection: Sequence[TableSelection | tuple],
    include_descriptions: bool = True,
) -> str:
    """Render the selected tables as schema text.

    Databases appear in order of first selection, tables in selection order
    within each database. Foreign keys render only when both endpoint tables
    are selected, so the emitted schema is self-contained. Empty selection
    renders the empty string.
    """
    selections = [
        sel if isinstance(sel, TableSelection) else TableSelection(sel[0], sel[1])
        for sel in selection
    ]
    if not selections:
        return ""

    by_db: dict[str, list[TableSelection]] = {}
    for sel in selections:
        catalog.table(sel.database, sel.table)  # raises UnknownTableError
        by_db.setdefault(sel.database, []).append(sel)

    blocks = []
    for db_name, sels in by_db.items():
        db = catalog.database(db_name)
        selected_tables = {sel.table for sel in sels}
        lines = [f"<db>{db_name}", ""]
        for sel in sels:
            lines.extend(_render_table(catalog.table(db_name, sel.table), sel, include_descriptions))
            lines.append("")
        fk_lines = [
            fk.render()
            for fk in db.foreign_keys
            if fk.table in selected_tables and fk.ref_table in selected_tables
        ]
        if fk_lines:
            lines.append("<foreign_keys>")
            lines.extend(fk_lines)
            lines.append("</foreign_keys>")
            lines.append("")
        lines.append("</db>")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def render_table_schema(catalog: SchemaCatalog, database: str, table: str) -> str:
    """Render a single table with all metadata (input to description synthesis)."""
    return render_schema(catalog, [TableSelection(database, table)])


def _render_table(tbl: TableDef, sel: TableSelection, include_descriptions: bool) -> list[str]:
    lines = [f"<table>{tbl.name}"]
    want_desc = include_descriptions if sel.include_description is None else sel.include_description
    if want_desc and tbl.description:
        lines.extend(["<desc>", tbl.description, "</desc>", ""])

    if sel.columns is None:
        columns = tbl.columns
    else:
        by_name = {c.name: c for c in tbl.columns}
        missing = [name for name in sel.columns if name not in by_name]
        if missing:
            raise UnknownTableError(
                f"column(s) {missing} not in table '{sel.database}.{sel.table}'; "
                "rebuild the index from the current catalog if they have drifted"
            )
        columns = [by_name[name] for name in sel.columns]

    lines.append("<schema>")
    for col in columns:
        fields = None if sel.column_fields is None else sel.column_fields.get(col.name, set())
        lines.append(_render_column(col, fields))
    lines.append("</schema>")
    lines.append("</table>")
    return lines


def _render_column(col: ColumnDef, fields: set[str] | None) -> str:
    def keep(name: str) -> bool:
        return fields is None or name in fields

    parts = [f"{col.name}:{col.data_type}"]
    if col.alias and keep("alias"):
        parts.append(col.alias)
    if col.description and keep("description"):
        parts.append(f"Column description: {col.description}")
    if col.value_description and keep("value_description"):
        parts.append(f"Value description: {col.value_description}")
    return f"({', '.join(parts)}),"
