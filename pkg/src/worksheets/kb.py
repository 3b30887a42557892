"""Knowledge backend: typed tables, a conjunctive query subset, and translators.

The query language is deliberately small: single table, conjunction of
column/op/value filters, optional projection and limit. Free-text columns are
returned verbatim for the response layer to summarize.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Protocol

from .errors import (
    KbError,
    TableParseError,
    TranslationFailure,
    UnknownColumnError,
    UnknownTableError,
)
from .spec import KBColumn, KBSchema, TaskSpec
from .values import parse_date, quote

FILTER_OPS = ("=", "!=", "<", "<=", ">", ">=", "ANY")

LIST_DELIMITER = "|"


@dataclass(frozen=True)
class QueryFilter:
    column: str
    op: str
    value: Any

    def serialize(self) -> str:
        rendered = _sql_value(self.value)
        if self.op == "ANY":
            return f"{rendered} = ANY ({self.column})"
        return f"{self.column} {self.op} {rendered}"


@dataclass(frozen=True)
class StructuredQuery:
    table: str
    filters: tuple[QueryFilter, ...] = ()
    projection: tuple[str, ...] | None = None  # None means all columns
    limit: int | None = None

    def serialize(self) -> str:
        cols = ", ".join(self.projection) if self.projection else "*"
        text = f"SELECT {cols} FROM {self.table}"
        if self.filters:
            text += " WHERE " + " AND ".join(f.serialize() for f in self.filters)
        if self.limit is not None:
            text += f" LIMIT {self.limit}"
        return text


def _sql_value(value: Any) -> str:
    if isinstance(value, bool):
        return "TRUE" if value else "FALSE"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, dt.date):
        return quote(value.isoformat())
    return quote(str(value))


def query_from_dict(doc: dict) -> StructuredQuery:
    filters = tuple(
        QueryFilter(f["column"], f.get("op", "="), f["value"]) for f in doc.get("filters", [])
    )
    projection = tuple(doc["projection"]) if doc.get("projection") else None
    return StructuredQuery(doc["table"], filters, projection, doc.get("limit"))


def query_to_dict(q: StructuredQuery) -> dict:
    return {
        "table": q.table,
        "filters": [{"column": f.column, "op": f.op, "value": f.value} for f in q.filters],
        "projection": list(q.projection) if q.projection else None,
        "limit": q.limit,
    }


# --- tables -------------------------------------------------------------------------


@dataclass
class Table:
    schema: KBSchema
    rows: list[dict]


class KnowledgeStore:
    """Immutable-after-load set of tables, safe for concurrent reads."""

    def __init__(self, tables: dict[str, Table] | None = None):
        self.tables: dict[str, Table] = tables or {}

    def add(self, table: Table) -> None:
        self.tables[table.schema.name] = table

    def table(self, name: str) -> Table:
        if name not in self.tables:
            raise UnknownTableError(f"unknown table {name!r}")
        return self.tables[name]


def _parse_cell(raw: str, column: KBColumn, row_idx: int) -> Any:
    text = raw.strip()
    if text == "" and column.column_type not in ("str", "free_text", "list_of_str"):
        return None
    try:
        if column.column_type in ("str", "free_text"):
            return raw
        if column.column_type == "int":
            return int(text)
        if column.column_type == "float":
            return float(text)
        if column.column_type == "bool":
            lowered = text.lower()
            if lowered in ("true", "yes", "1"):
                return True
            if lowered in ("false", "no", "0"):
                return False
            raise ValueError(text)
        if column.column_type == "date":
            return parse_date(text)
        if column.column_type == "list_of_str":
            return [part.strip() for part in raw.split(LIST_DELIMITER) if part.strip()]
    except ValueError as exc:
        raise TableParseError(
            f"cannot read {column.column_type} cell {raw!r}", row_idx, column.name
        ) from exc
    raise TableParseError(f"unsupported column type {column.column_type!r}", row_idx, column.name)


def load_table(schema: KBSchema, source: str | Path) -> Table:
    """Load a CSV with a typed `name:type` header matching the schema."""
    path = Path(source)
    if not path.exists():
        raise TableParseError(f"missing data file {path}", 0)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        raise TableParseError("data file has no header", 0)
    header = [cell.strip() for cell in rows[0]]
    expected = [f"{c.name}:{c.column_type}" for c in schema.columns]
    if header != expected:
        raise TableParseError(
            f"header {header!r} does not match schema ({', '.join(expected)})", 1
        )
    out: list[dict] = []
    for idx, raw in enumerate(rows[1:], start=2):
        if not any(cell.strip() for cell in raw):
            continue
        if len(raw) != len(schema.columns):
            raise TableParseError(
                f"expected {len(schema.columns)} cells, found {len(raw)}", idx
            )
        row = {
            col.name: _parse_cell(cell, col, idx) for col, cell in zip(schema.columns, raw)
        }
        out.append(row)
    return Table(schema, out)


def load_store(spec: TaskSpec, kb_dir: str | Path) -> KnowledgeStore:
    store = KnowledgeStore()
    for schema in spec.kb_schemas:
        store.add(load_table(schema, Path(kb_dir) / schema.source))
    return store


# --- execution ----------------------------------------------------------------------


def validate_query(q: StructuredQuery, schema: KBSchema) -> None:
    for f in q.filters:
        column = schema.column(f.column)
        if column is None:
            raise UnknownColumnError(f"table {q.table!r} has no column {f.column!r}")
        if f.op not in FILTER_OPS:
            raise KbError(f"unsupported operator {f.op!r}")
        if f.op == "ANY" and column.column_type != "list_of_str":
            raise KbError(f"ANY applies only to list columns, not {column.column_type}")
        _check_filter_value(f, column)
    for col in q.projection or ():
        if schema.column(col) is None:
            raise UnknownColumnError(f"table {q.table!r} has no column {col!r}")


def _check_filter_value(f: QueryFilter, column: KBColumn) -> None:
    value = f.value
    if f.op == "ANY":
        if not isinstance(value, str):
            raise KbError(f"ANY comparison against {column.name} needs a string value")
        return
    expected = {
        "str": str,
        "free_text": str,
        "int": (int, float),
        "float": (int, float),
        "bool": bool,
        "date": (dt.date, str),
        "list_of_str": str,
    }[column.column_type]
    if isinstance(value, bool) and column.column_type in ("int", "float"):
        raise KbError(f"filter value {value!r} does not fit {column.column_type} column {column.name}")
    if not isinstance(value, expected):
        raise KbError(f"filter value {value!r} does not fit {column.column_type} column {column.name}")
    if f.op not in ("=", "!=") and column.column_type == "bool":
        raise KbError(f"ordering comparison on boolean column {column.name}")


def _filter_matches(f: QueryFilter, row: dict, column: KBColumn) -> bool:
    cell = row.get(f.column)
    if cell is None:
        return False
    if f.op == "ANY":
        return isinstance(cell, list) and f.value in cell
    value = f.value
    if column.column_type == "date" and isinstance(value, str):
        try:
            value = parse_date(value)
        except ValueError:
            return False
    if column.column_type == "list_of_str":
        cell_cmp: Any = LIST_DELIMITER.join(cell)
    else:
        cell_cmp = cell
    try:
        if f.op == "=":
            return cell_cmp == value
        if f.op == "!=":
            return cell_cmp != value
        if f.op == "<":
            return cell_cmp < value
        if f.op == "<=":
            return cell_cmp <= value
        if f.op == ">":
            return cell_cmp > value
        if f.op == ">=":
            return cell_cmp >= value
    except TypeError:
        return False
    raise KbError(f.op)


def execute_query(q: StructuredQuery, store: KnowledgeStore) -> list[dict]:
    """Rows matching every filter, projected and limited, in source order."""
    table = store.table(q.table)
    validate_query(q, table.schema)
    out: list[dict] = []
    for row in table.rows:
        if all(_filter_matches(f, row, table.schema.column(f.column)) for f in q.filters):
            if q.projection:
                out.append({c: row.get(c) for c in q.projection})
            else:
                out.append(dict(row))
            if q.limit is not None and len(out) >= q.limit:
                break
    return out


# --- translation ---------------------------------------------------------------------


@dataclass(frozen=True)
class TranslationResult:
    kind: str  # query | needs_info | no_answer
    query: StructuredQuery | None = None
    missing_slot: str | None = None
    question: str | None = None

    @classmethod
    def of_query(cls, q: StructuredQuery) -> "TranslationResult":
        return cls("query", query=q)

    @classmethod
    def needs(cls, slot: str, question: str) -> "TranslationResult":
        return cls("needs_info", missing_slot=slot, question=question)

    @classmethod
    def no_answer(cls) -> "TranslationResult":
        return cls("no_answer")


class Translator(Protocol):
    def translate(self, nl: str, spec: TaskSpec) -> TranslationResult: ...


class TableTranslator:
    """Deterministic exact-match translator, the test double for live NL-to-query."""

    def __init__(self, mapping: dict[str, dict]):
        self.mapping = mapping

    @classmethod
    def from_file(cls, path: str | Path) -> "TableTranslator":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def translate(self, nl: str, spec: TaskSpec) -> TranslationResult:
        entry = self.mapping.get(nl.strip())
        if entry is None:
            return TranslationResult.no_answer()
        if entry.get("needs"):
            return TranslationResult.needs(
                entry["needs"].get("slot", "detail"),
                entry["needs"].get("question", "Could you give me more detail?"),
            )
        if entry.get("no_answer"):
            return TranslationResult.no_answer()
        return TranslationResult.of_query(query_from_dict(entry["query"]))


class LLMTranslator:
    """Asks a chat endpoint to produce the structured query as JSON."""

    SYSTEM = (
        "You translate one natural-language question into a JSON query for the "
        "given tables. Reply with a single JSON object: "
        '{"table": ..., "filters": [{"column": ..., "op": ..., "value": ...}], '
        '"projection": null, "limit": null} or {"no_answer": true} or '
        '{"needs": {"slot": ..., "question": ...}}. Operators: = != < <= > >= ANY.'
    )

    def __init__(self, client):
        self.client = client  # semparse.HttpChatClient

    def translate(self, nl: str, spec: TaskSpec) -> TranslationResult:
        tables = "\n".join(
            f"{s.name}({', '.join(f'{c.name}: {c.column_type}' for c in s.columns)})"
            for s in spec.kb_schemas
        )
        raw = self.client.complete(
            [
                {"role": "system", "content": self.SYSTEM},
                {"role": "user", "content": f"Tables:\n{tables}\n\nQuestion: {nl}"},
            ]
        )
        try:
            doc = json.loads(_strip_fences(raw))
        except json.JSONDecodeError as exc:
            raise TranslationFailure(f"translator returned non-JSON: {raw[:200]!r}") from exc
        if doc.get("no_answer"):
            return TranslationResult.no_answer()
        if doc.get("needs"):
            return TranslationResult.needs(
                doc["needs"].get("slot", "detail"), doc["needs"].get("question", "")
            )
        try:
            return TranslationResult.of_query(query_from_dict(doc))
        except (KeyError, TypeError) as exc:
            raise TranslationFailure(f"translator returned a malformed query: {doc!r}") from exc


def _strip_fences(text: str) -> str:
    text = text.strip()
    if text.startswith("```"):
        lines = [ln for ln in text.splitlines() if not ln.strip().startswith("```")]
        return "\n".join(lines).strip()
    return text


class KnowledgeBackend:
    """What the policy sees: translate questions, execute validated queries."""

    def __init__(self, spec: TaskSpec, store: KnowledgeStore, translator: Translator):
        self.spec = spec
        self.store = store
        self.translator = translator

    def translate(self, nl: str) -> TranslationResult:
        result = self.translator.translate(nl, self.spec)
        if result.kind == "query" and result.query is not None:
            schema = self.spec.schema(result.query.table)
            if schema is None:
                raise TranslationFailure(f"translator chose unknown table {result.query.table!r}")
            validate_query(result.query, schema)
        return result

    def execute(self, q: StructuredQuery) -> list[dict]:
        return execute_query(q, self.store)
