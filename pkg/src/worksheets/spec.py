"""Task specifications: worksheets, fields, KB schemas, and the API registry.

The canonical interchange format is a single JSON document (see `load_spec`).
A CSV importer accepts the spreadsheet layout used for authoring, with one
header row and `WS:<name>` boundary rows introducing each worksheet.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass
from typing import Any, Iterable

from . import exprlang
from .errors import (
    BadExpressionError,
    CycleError,
    DuplicateNameError,
    HeaderMismatchError,
    SchemaError,
    UnknownTypeError,
)

SCALAR_TYPES = ("str", "int", "float", "bool", "date", "time")
COLUMN_TYPES = ("str", "int", "float", "bool", "date", "list_of_str", "free_text")

#: Reserved per-instance boolean that grants pending confirmations when set true.
CONFIRM_FIELD = "confirm"
#: Reserved per-instance pseudo-field holding the worksheet's result value.
RESULT_FIELD = "result"

#: Synthesized KB-worksheet field names, in lifecycle order.
KB_FIELDS = ("nl_query", "structured_query", "kb_result")


@dataclass(frozen=True)
class FieldType:
    base: str  # str int float bool date time enum ws kb
    arg: str | None = None

    def __str__(self) -> str:
        return f"{self.base}({self.arg})" if self.arg else self.base


_TYPE_RE = re.compile(r"^(\w+)\s*\(\s*([^()]+?)\s*\)$")


def parse_field_type(text: str) -> FieldType:
    text = text.strip()
    match = _TYPE_RE.match(text)
    if match:
        base, arg = match.group(1).lower(), match.group(2)
        if base in ("enum", "ws", "kb"):
            return FieldType(base, arg)
        raise UnknownTypeError(f"unknown parameterized type {text!r}")
    lowered = text.lower()
    if lowered in SCALAR_TYPES:
        return FieldType(lowered)
    raise UnknownTypeError(f"unknown field type {text!r}")


@dataclass(frozen=True)
class FieldSpec:
    name: str
    field_type: FieldType
    description: str = ""
    predicate: exprlang.Expr | None = None
    predicate_source: str | None = None
    is_input: bool = True
    dont_ask: bool = False
    required: bool = False
    confirm: bool = False
    actions: exprlang.ActionBlock | None = None
    actions_source: str | None = None


@dataclass(frozen=True)
class WorksheetSpec:
    name: str
    fields: tuple[FieldSpec, ...]
    predicate: exprlang.Expr | None = None
    predicate_source: str | None = None
    ws_action: exprlang.ActionBlock | None = None
    ws_action_source: str | None = None
    greeting: exprlang.ActionBlock | None = None
    greeting_source: str | None = None
    kind: str = "task"  # task | kb

    def field(self, name: str) -> FieldSpec | None:
        for f in self.fields:
            if f.name == name:
                return f
        return None

    @property
    def var_base(self) -> str:
        return "answer" if self.kind == "kb" else snake_case(self.name)


@dataclass(frozen=True)
class KBColumn:
    name: str
    column_type: str


@dataclass(frozen=True)
class KBSchema:
    name: str
    columns: tuple[KBColumn, ...]
    source: str

    def column(self, name: str) -> KBColumn | None:
        for c in self.columns:
            if c.name == name:
                return c
        return None


@dataclass(frozen=True)
class ApiParam:
    name: str
    field_type: FieldType


@dataclass(frozen=True)
class ApiDecl:
    name: str
    params: tuple[ApiParam, ...]
    returns: FieldType
    host: str | None = None
    stub: dict | None = None


@dataclass(frozen=True)
class SpecStats:
    worksheets: int
    fields: int
    dbs: int
    predicates: int
    actions: int

    def as_tuple(self) -> tuple[int, int, int, int, int]:
        return (self.worksheets, self.fields, self.dbs, self.predicates, self.actions)


@dataclass(frozen=True)
class TaskSpec:
    name: str
    worksheets: tuple[WorksheetSpec, ...]
    kb_schemas: tuple[KBSchema, ...]
    apis: tuple[ApiDecl, ...]
    enum_domains: dict[str, tuple[str, ...]]

    def worksheet(self, name: str) -> WorksheetSpec | None:
        for ws in self.worksheets:
            if ws.name == name:
                return ws
        return None

    def schema(self, name: str) -> KBSchema | None:
        for s in self.kb_schemas:
            if s.name == name:
                return s
        return None

    def api(self, name: str) -> ApiDecl | None:
        for a in self.apis:
            if a.name == name:
                return a
        return None

    @property
    def task_worksheets(self) -> tuple[WorksheetSpec, ...]:
        return tuple(ws for ws in self.worksheets if ws.kind == "task")

    @property
    def top_level(self) -> WorksheetSpec:
        referenced = _referenced_ws_names(self)
        for ws in self.task_worksheets:
            if ws.predicate is None and ws.name not in referenced:
                return ws
        raise SchemaError(f"spec {self.name!r} has no top-level worksheet")

    def kb_worksheet_for(self, schema_name: str) -> WorksheetSpec:
        ws = self.worksheet(kb_worksheet_name(schema_name))
        if ws is None:
            raise SchemaError(f"no KB-worksheet for schema {schema_name!r}")
        return ws

    def stats(self) -> SpecStats:
        """Authoring statistics: (worksheets, fields, dbs, predicates, actions)."""
        task = self.task_worksheets
        n_fields = sum(len(ws.fields) for ws in task)
        n_preds = sum(1 for ws in task if ws.predicate is not None)
        n_preds += sum(1 for ws in task for f in ws.fields if f.predicate is not None)
        n_actions = sum(1 for ws in task if ws.ws_action is not None)
        n_actions += sum(1 for ws in task if ws.greeting is not None)
        n_actions += sum(1 for ws in task for f in ws.fields if f.actions is not None)
        return SpecStats(len(task), n_fields, len(self.kb_schemas), n_preds, n_actions)


def snake_case(name: str) -> str:
    out = re.sub(r"(?<=[a-z0-9])(?=[A-Z])|(?<=[A-Z])(?=[A-Z][a-z])", "_", name)
    return out.lower()


def pascal_case(name: str) -> str:
    return "".join(part.capitalize() for part in re.split(r"[_\s]+", name) if part)


def kb_worksheet_name(schema_name: str) -> str:
    return f"{pascal_case(schema_name)}KB"


def _propose_targets(stmts) -> set[str]:
    out: set[str] = set()
    for stmt in stmts:
        if isinstance(stmt, exprlang.ProposeStmt):
            out.add(stmt.ws_name)
        elif isinstance(stmt, exprlang.IfStmt):
            out |= _propose_targets(stmt.body)
    return out


def _referenced_ws_names(spec: TaskSpec) -> set[str]:
    """Worksheets reachable from others: ws-typed fields and propose targets."""
    referenced: set[str] = set()
    for ws in spec.task_worksheets:
        for f in ws.fields:
            if f.field_type.base == "ws":
                referenced.add(f.field_type.arg or "")
            if f.actions is not None:
                referenced |= _propose_targets(f.actions.statements)
        for block in (ws.ws_action, ws.greeting):
            if block is not None:
                referenced |= _propose_targets(block.statements)
    return referenced


# --- loading -----------------------------------------------------------------------------


def _parse_expr_cell(source: Any, where: str) -> tuple[exprlang.Expr | None, str | None]:
    if source in (None, ""):
        return None, None
    if not isinstance(source, str):
        raise BadExpressionError(f"{where}: expression must be a string")
    try:
        return exprlang.parse_expr(source), source
    except exprlang.ExprSyntaxError as exc:
        raise BadExpressionError(f"{where}: {exc}") from exc


def _parse_actions_cell(source: Any, where: str) -> tuple[exprlang.ActionBlock | None, str | None]:
    if source in (None, ""):
        return None, None
    if not isinstance(source, str):
        raise BadExpressionError(f"{where}: actions must be a string")
    try:
        block = exprlang.parse_actions(source)
    except Exception as exc:
        raise BadExpressionError(f"{where}: {exc}") from exc
    return (block if block.statements else None), source


def load_spec(document: dict, host_functions: dict | None = None) -> TaskSpec:
    """Validate a canonical JSON document and return an immutable TaskSpec.

    KB-worksheets are synthesized here, one per schema, each with the three
    lifecycle fields (NL query, structured query, result).
    """
    if not isinstance(document, dict):
        raise SchemaError("spec document must be a JSON object")
    name = document.get("name")
    if not name or not isinstance(name, str):
        raise SchemaError("spec document needs a 'name'")

    raw_worksheets = document.get("worksheets") or []
    if not raw_worksheets:
        raise SchemaError(f"spec {name!r} declares zero worksheets")

    enum_domains: dict[str, tuple[str, ...]] = {}
    for enum_name, domain in (document.get("enums") or {}).items():
        values = tuple(str(v) for v in domain)
        if not values:
            raise SchemaError(f"enum {enum_name!r} has an empty value set")
        enum_domains[enum_name] = values

    kb_schemas: list[KBSchema] = []
    for raw in document.get("kb_schemas") or []:
        columns = []
        seen_cols: set[str] = set()
        for col in raw.get("columns") or []:
            col_name = col.get("name")
            col_type = (col.get("type") or "").lower()
            if not col_name:
                raise SchemaError(f"schema {raw.get('name')!r} has an unnamed column")
            if col_name in seen_cols:
                raise DuplicateNameError(f"schema {raw.get('name')!r}: duplicate column {col_name!r}")
            if col_type not in COLUMN_TYPES:
                raise UnknownTypeError(f"schema {raw.get('name')!r}: unknown column type {col_type!r}")
            seen_cols.add(col_name)
            columns.append(KBColumn(col_name, col_type))
        if not columns:
            raise SchemaError(f"schema {raw.get('name')!r} has no columns")
        source = raw.get("source")
        if not source or not isinstance(source, str):
            raise SchemaError(f"schema {raw.get('name')!r} needs exactly one source file")
        kb_schemas.append(KBSchema(raw["name"], tuple(columns), source))
    if len({s.name for s in kb_schemas}) != len(kb_schemas):
        raise DuplicateNameError(f"spec {name!r} has duplicate schema names")

    apis: list[ApiDecl] = []
    for raw in document.get("apis") or []:
        api_name = raw.get("name")
        if not api_name:
            raise SchemaError("api declaration needs a name")
        params = tuple(
            ApiParam(p["name"], parse_field_type(p.get("type", "str")))
            for p in raw.get("params") or []
        )
        returns = parse_field_type(raw.get("returns", "str"))
        host = raw.get("host")
        stub = raw.get("stub")
        if host is None and stub is None:
            raise SchemaError(f"api {api_name!r} needs a 'host' or 'stub' binding")
        if host is not None and host_functions is not None and host not in host_functions:
            raise SchemaError(f"api {api_name!r}: host function {host!r} not registered")
        if stub is not None and "result" not in stub and "error" not in stub:
            raise SchemaError(f"api {api_name!r}: stub needs a 'result' template or 'error'")
        apis.append(ApiDecl(api_name, params, returns, host, stub))
    if len({a.name for a in apis}) != len(apis):
        raise DuplicateNameError(f"spec {name!r} has duplicate api names")

    worksheets: list[WorksheetSpec] = []
    for raw_ws in raw_worksheets:
        ws_name = raw_ws.get("name")
        if not ws_name:
            raise SchemaError(f"spec {name!r}: worksheet without a name")
        predicate, predicate_src = _parse_expr_cell(raw_ws.get("predicate"), f"{ws_name}.predicate")
        ws_action, ws_action_src = _parse_actions_cell(raw_ws.get("ws_action"), f"{ws_name}.ws_action")
        greeting, greeting_src = _parse_actions_cell(raw_ws.get("greeting"), f"{ws_name}.greeting")
        fields: list[FieldSpec] = []
        seen: set[str] = set()
        for raw_field in raw_ws.get("fields") or []:
            field_name = raw_field.get("name")
            if not field_name:
                raise SchemaError(f"worksheet {ws_name!r}: field without a name")
            if field_name in seen:
                raise DuplicateNameError(f"worksheet {ws_name!r}: duplicate field {field_name!r}")
            if field_name in (RESULT_FIELD,):
                raise SchemaError(f"worksheet {ws_name!r}: field name {field_name!r} is reserved")
            seen.add(field_name)
            ftype = parse_field_type(raw_field.get("type", "str"))
            fpred, fpred_src = _parse_expr_cell(
                raw_field.get("predicate"), f"{ws_name}.{field_name}.predicate"
            )
            factions, factions_src = _parse_actions_cell(
                raw_field.get("actions"), f"{ws_name}.{field_name}.actions"
            )
            dont_ask = bool(raw_field.get("dont_ask", False))
            required = bool(raw_field.get("required", False))
            if dont_ask and required:
                raise SchemaError(
                    f"worksheet {ws_name!r}: field {field_name!r} cannot be both "
                    "required and dont_ask (it could never be filled on demand)"
                )
            fields.append(
                FieldSpec(
                    name=field_name,
                    field_type=ftype,
                    description=str(raw_field.get("description", "")),
                    predicate=fpred,
                    predicate_source=fpred_src,
                    is_input=bool(raw_field.get("input", True)),
                    dont_ask=dont_ask,
                    required=required,
                    confirm=bool(raw_field.get("confirm", False)),
                    actions=factions,
                    actions_source=factions_src,
                )
            )
        worksheets.append(
            WorksheetSpec(
                name=ws_name,
                fields=tuple(fields),
                predicate=predicate,
                predicate_source=predicate_src,
                ws_action=ws_action,
                ws_action_source=ws_action_src,
                greeting=greeting,
                greeting_source=greeting_src,
                kind="task",
            )
        )

    names = [ws.name for ws in worksheets]
    if len(set(names)) != len(names):
        raise DuplicateNameError(f"spec {name!r} has duplicate worksheet names")

    # synthesize one KB-worksheet per schema
    for schema in kb_schemas:
        worksheets.append(_synthesize_kb_worksheet(schema))

    spec = TaskSpec(
        name=name,
        worksheets=tuple(worksheets),
        kb_schemas=tuple(kb_schemas),
        apis=tuple(apis),
        enum_domains=enum_domains,
    )
    _validate(spec)
    return spec


def _synthesize_kb_worksheet(schema: KBSchema) -> WorksheetSpec:
    fields = (
        FieldSpec("nl_query", FieldType("str"), "The self-contained question", dont_ask=True),
        FieldSpec("structured_query", FieldType("str"), "The structured query", is_input=False, dont_ask=True),
        FieldSpec("kb_result", FieldType("str"), "The query result", is_input=False, dont_ask=True),
    )
    return WorksheetSpec(name=kb_worksheet_name(schema.name), fields=fields, kind="kb")


def _validate(spec: TaskSpec) -> None:
    ws_names = {ws.name for ws in spec.worksheets}
    schema_names = {s.name for s in spec.kb_schemas}

    for ws in spec.task_worksheets:
        for f in ws.fields:
            if f.field_type.base == "enum":
                domain = spec.enum_domains.get(f.field_type.arg or "")
                if not domain:
                    raise SchemaError(
                        f"{ws.name}.{f.name}: enum {f.field_type.arg!r} is not declared"
                    )
            elif f.field_type.base == "ws":
                if f.field_type.arg not in ws_names:
                    raise SchemaError(
                        f"{ws.name}.{f.name}: unknown worksheet {f.field_type.arg!r}"
                    )
            elif f.field_type.base == "kb":
                if f.field_type.arg not in schema_names:
                    raise SchemaError(f"{ws.name}.{f.name}: unknown schema {f.field_type.arg!r}")

    _check_acyclic(spec)

    referenced = _referenced_ws_names(spec)
    roots = [
        ws.name
        for ws in spec.task_worksheets
        if ws.predicate is None and ws.name not in referenced
    ]
    if len(roots) != 1:
        raise SchemaError(
            f"spec {spec.name!r} needs exactly one top-level worksheet "
            f"(unpredicated and unreferenced); found {roots or 'none'}"
        )

    _type_check(spec)


def _check_acyclic(spec: TaskSpec) -> None:
    graph = {
        ws.name: [
            f.field_type.arg
            for f in ws.fields
            if f.field_type.base == "ws" and f.field_type.arg
        ]
        for ws in spec.task_worksheets
    }
    state: dict[str, int] = {}  # 1 = visiting, 2 = done

    def visit(node: str, trail: list[str]) -> None:
        mark = state.get(node)
        if mark == 2:
            return
        if mark == 1:
            cycle = " -> ".join(trail + [node])
            raise CycleError(f"worksheet reference cycle: {cycle}")
        state[node] = 1
        for nxt in graph.get(node, []):
            visit(nxt, trail + [node])
        state[node] = 2

    for start in graph:
        visit(start, [])


def _make_resolver(spec: TaskSpec, enclosing: WorksheetSpec):
    by_var = {ws.var_base: ws for ws in spec.worksheets}

    def field_type_name(f: FieldSpec) -> str:
        base = f.field_type.base
        if base == "enum":
            return "str"
        if base in ("ws", "kb"):
            return "any"
        return base

    def resolve(var: str | None, field_name: str) -> str:
        if var is None:
            if field_name == RESULT_FIELD:
                return "any"
            if field_name == CONFIRM_FIELD:
                return "bool"
            f = enclosing.field(field_name)
            if f is not None:
                return field_type_name(f)
            for ws in spec.worksheets:
                f = ws.field(field_name)
                if f is not None:
                    return field_type_name(f)
            raise exprlang.UnknownReferenceError(
                f"unknown field {field_name!r} (worksheet {enclosing.name})"
            )
        ws = by_var.get(var)
        if ws is None:
            raise exprlang.UnknownReferenceError(f"unknown worksheet variable {var!r}")
        if field_name == RESULT_FIELD:
            return "any"
        if field_name == CONFIRM_FIELD:
            return "bool"
        f = ws.field(field_name)
        if f is None:
            raise exprlang.UnknownReferenceError(f"{var} has no field {field_name!r}")
        return field_type_name(f)

    return resolve


def _type_check(spec: TaskSpec) -> None:
    api_names = {a.name for a in spec.apis}
    ws_names = {ws.name for ws in spec.task_worksheets}
    for ws in spec.task_worksheets:
        resolve = _make_resolver(spec, ws)

        def check_pred(expr: exprlang.Expr | None, where: str) -> None:
            if expr is None:
                return
            try:
                exprlang.check_predicate(expr, resolve)
            except (exprlang.TypeMismatchError, exprlang.UnknownReferenceError) as exc:
                raise BadExpressionError(f"{where}: {exc}") from exc

        def check_block(block: exprlang.ActionBlock | None, where: str) -> None:
            if block is None:
                return
            try:
                _check_stmts(block.statements, resolve, ws, api_names, ws_names, spec)
            except (exprlang.TypeMismatchError, exprlang.UnknownReferenceError) as exc:
                raise BadExpressionError(f"{where}: {exc}") from exc

        check_pred(ws.predicate, f"{ws.name}.predicate")
        check_block(ws.ws_action, f"{ws.name}.ws_action")
        check_block(ws.greeting, f"{ws.name}.greeting")
        for f in ws.fields:
            check_pred(f.predicate, f"{ws.name}.{f.name}.predicate")
            check_block(f.actions, f"{ws.name}.{f.name}.actions")


def _check_stmts(stmts, resolve, ws: WorksheetSpec, api_names, ws_names, spec: TaskSpec) -> None:
    for stmt in stmts:
        if isinstance(stmt, exprlang.SayStmt):
            exprlang.check_expr(stmt.text, resolve)
        elif isinstance(stmt, exprlang.ProposeStmt):
            if stmt.ws_name not in ws_names:
                raise exprlang.UnknownReferenceError(f"propose of unknown worksheet {stmt.ws_name!r}")
            target = spec.worksheet(stmt.ws_name)
            for key, expr in stmt.pairs:
                if target is not None and target.field(key) is None:
                    raise exprlang.UnknownReferenceError(
                        f"propose({stmt.ws_name}): no field {key!r}"
                    )
                exprlang.check_expr(expr, resolve)
        elif isinstance(stmt, exprlang.CallStmt):
            if stmt.api not in api_names:
                raise exprlang.UnknownReferenceError(f"call of unknown api {stmt.api!r}")
            api = spec.api(stmt.api)
            declared = {p.name for p in api.params} if api else set()
            for key, expr in stmt.kwargs:
                if key not in declared:
                    raise exprlang.TypeMismatchError(f"{stmt.api}() has no parameter {key!r}")
                exprlang.check_expr(expr, resolve)
            if stmt.target and stmt.target != RESULT_FIELD and ws.field(stmt.target) is None:
                raise exprlang.UnknownReferenceError(
                    f"call target {stmt.target!r} is not a field of {ws.name}"
                )
        elif isinstance(stmt, exprlang.AssignStmt):
            if stmt.field != RESULT_FIELD and ws.field(stmt.field) is None:
                raise exprlang.UnknownReferenceError(
                    f"assignment target {stmt.field!r} is not a field of {ws.name}"
                )
            exprlang.check_expr(stmt.value, resolve)
        elif isinstance(stmt, exprlang.IfStmt):
            exprlang.check_predicate(stmt.cond, resolve)
            _check_stmts(stmt.body, resolve, ws, api_names, ws_names, spec)


# --- emitting ------------------------------------------------------------------------------


def emit_spec(spec: TaskSpec) -> dict:
    """Inverse of load_spec: canonical document (synthesized KB-worksheets omitted)."""
    return {
        "name": spec.name,
        "worksheets": [
            {
                "name": ws.name,
                "predicate": ws.predicate_source,
                "ws_action": ws.ws_action_source,
                "greeting": ws.greeting_source,
                "fields": [
                    {
                        "predicate": f.predicate_source,
                        "input": f.is_input,
                        "type": str(f.field_type),
                        "name": f.name,
                        "description": f.description,
                        "dont_ask": f.dont_ask,
                        "required": f.required,
                        "confirm": f.confirm,
                        "actions": f.actions_source,
                    }
                    for f in ws.fields
                ],
            }
            for ws in spec.task_worksheets
        ],
        "kb_schemas": [
            {
                "name": s.name,
                "source": s.source,
                "columns": [{"name": c.name, "type": c.column_type} for c in s.columns],
            }
            for s in spec.kb_schemas
        ],
        "apis": [
            {
                "name": a.name,
                "params": [{"name": p.name, "type": str(p.field_type)} for p in a.params],
                "returns": str(a.returns),
                **({"host": a.host} if a.host else {}),
                **({"stub": a.stub} if a.stub is not None else {}),
            }
            for a in spec.apis
        ],
        "enums": {k: list(v) for k, v in spec.enum_domains.items()},
    }


# --- sheet import ----------------------------------------------------------------------------

SHEET_COLUMNS = (
    "predicate",
    "input",
    "type",
    "name",
    "description",
    "dont_ask",
    "required",
    "confirmation",
    "actions",
)

_HEADER_ALIASES = {
    "predicate": "predicate",
    "input": "input",
    "type": "type",
    "name": "name",
    "description": "description",
    "dont_ask": "dont_ask",
    "don't ask": "dont_ask",
    "dont ask": "dont_ask",
    "required": "required",
    "confirmation": "confirmation",
    "confirm": "confirmation",
    "actions": "actions",
}

_TRUTHY = {"true", "yes", "y", "1", "x"}
_FALSY = {"", "false", "no", "n", "0"}


def _cell_bool(cell: str, where: str) -> bool:
    lowered = cell.strip().lower()
    if lowered in _TRUTHY:
        return True
    if lowered in _FALSY:
        return False
    raise SchemaError(f"{where}: cannot read boolean cell {cell!r}")


def _sheet_type(cell: str, field_name: str) -> str:
    text = cell.strip()
    if not text:
        raise UnknownTypeError(f"field {field_name!r} has an empty type cell")
    match = _TYPE_RE.match(text)
    if match and match.group(1).lower() in ("enum", "ws", "kb"):
        return f"{match.group(1).lower()}({match.group(2)})"
    lowered = text.lower()
    if lowered in SCALAR_TYPES:
        return lowered
    if lowered == "ws":
        # bare WS infers the target worksheet from the field name
        return f"ws({pascal_case(field_name)})"
    raise UnknownTypeError(f"field {field_name!r}: unknown type cell {cell!r}")


def import_sheet(rows: Iterable[list[str]], name: str = "imported") -> dict:
    """Translate spreadsheet rows into a canonical spec document.

    The first row must be the header; worksheet boundaries are rows whose
    first cell is `WS:<name>` (second cell: predicate, third: WS action).
    """
    rows = [list(r) for r in rows]
    if not rows:
        raise HeaderMismatchError("sheet has no header row")
    header = [(_HEADER_ALIASES.get(c.strip().lower())) for c in rows[0]]
    if None in header or tuple(header) != SHEET_COLUMNS:
        raise HeaderMismatchError(
            f"sheet header must be {','.join(SHEET_COLUMNS)}; found {rows[0]!r}"
        )

    worksheets: list[dict] = []
    current: dict | None = None
    for idx, row in enumerate(rows[1:], start=2):
        if not any(cell.strip() for cell in row):
            continue
        row = row + [""] * (len(SHEET_COLUMNS) - len(row))
        first = row[0].strip()
        if first.upper().startswith("WS:"):
            current = {
                "name": first[3:].strip(),
                "predicate": row[1].strip() or None,
                "ws_action": row[2].strip() or None,
                "fields": [],
            }
            worksheets.append(current)
            continue
        if current is None:
            raise SchemaError(f"row {idx}: field row before any WS:<name> boundary row")
        cells = dict(zip(SHEET_COLUMNS, row))
        field_name = cells["name"].strip()
        if not field_name:
            raise SchemaError(f"row {idx}: field row without a name")
        current["fields"].append(
            {
                "predicate": cells["predicate"].strip() or None,
                "input": not cells["input"].strip() or _cell_bool(cells["input"], f"row {idx} input"),
                "type": _sheet_type(cells["type"], field_name),
                "name": field_name,
                "description": cells["description"].strip(),
                "dont_ask": _cell_bool(cells["dont_ask"], f"row {idx} dont_ask"),
                "required": _cell_bool(cells["required"], f"row {idx} required"),
                "confirm": _cell_bool(cells["confirmation"], f"row {idx} confirmation"),
                "actions": cells["actions"].strip() or None,
            }
        )
    return {"name": name, "worksheets": worksheets, "kb_schemas": [], "apis": [], "enums": {}}


def import_sheet_csv(text: str, name: str = "imported") -> dict:
    return import_sheet(list(csv.reader(io.StringIO(text))), name=name)


# --- prompt rendering ---------------------------------------------------------------------------


def describe_field(spec: TaskSpec, f: FieldSpec) -> str:
    """Field description as shown to users and the parser (enum options appended)."""
    desc = f.description
    if f.field_type.base == "enum":
        options = ", ".join(spec.enum_domains.get(f.field_type.arg or "", ()))
        tail = f"Options are: {options}"
        desc = f"{desc.rstrip('.')}. {tail}" if desc else tail
    return desc


def render_for_prompt(spec: TaskSpec) -> str:
    """Deterministic constructor-style rendering of every task worksheet."""
    blocks: list[str] = []
    for ws in spec.task_worksheets:
        params = ", ".join(f.name for f in ws.fields)
        lines = [f"{ws.name}({params})"]
        for f in ws.fields:
            lines.append(f"  {f.name} ({f.field_type}): {describe_field(spec, f)}")
        blocks.append("\n".join(lines))
    if spec.kb_schemas:
        lines = ['answer(question: str): query the databases with a self-contained question']
        for s in spec.kb_schemas:
            cols = ", ".join(f"{c.name}: {c.column_type}" for c in s.columns)
            lines.append(f"  database {s.name}({cols})")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"
