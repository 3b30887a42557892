"""Dialogue state: live worksheet instances and the parser's update language.

An instance's slot can hold a concrete value, a reference to another instance
(`VarRefValue`), the EMPTY sentinel, or the REFUSED sentinel ("NA" on the
wire). References to other instances resolve lazily: a ws-typed slot counts
as filled once the referenced instance completes, a kb-typed slot once a
result row has been composed into it.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field as dc_field
from typing import Any

from .errors import (
    DanglingReferenceError,
    UnknownFieldError,
    UnknownReferenceError,
    UnknownVarError,
    ValueTypeError,
)
from .spec import CONFIRM_FIELD, RESULT_FIELD, FieldSpec, TaskSpec, WorksheetSpec
from .values import (
    EMPTY,
    REFUSAL_TOKEN,
    REFUSED,
    Sentinel,
    VarRefValue,
    parse_date,
    parse_time,
    render_value,
)

NOT_NEEDED = "not_needed"
PENDING = "pending"
GRANTED = "granted"


@dataclass
class FieldSlot:
    value: Any = EMPTY
    resolved: Any = EMPTY  # composed value for ws/kb references
    newly_filled: bool = False
    confirmed: str = NOT_NEEDED
    action_done: bool = False
    provenance: str = "user"  # user | computed | composed


@dataclass
class WorksheetInstance:
    var_name: str
    spec_ref: str
    slots: dict[str, FieldSlot]
    kind: str = "task"
    result: Any = EMPTY
    completed: bool = False
    created_turn: int = 0

    def slot(self, name: str) -> FieldSlot | None:
        return self.slots.get(name)


@dataclass
class DialogueState:
    instances: list[WorksheetInstance] = dc_field(default_factory=list)
    turn_index: int = 0
    last_agent_utterance: str = ""
    last_user_utterance: str = ""
    pending_acts: list = dc_field(default_factory=list)

    def find_var(self, name: str) -> WorksheetInstance | None:
        for inst in self.instances:
            if inst.var_name == name:
                return inst
        return None

    def var_names(self) -> set[str]:
        return {inst.var_name for inst in self.instances}

    def instances_of(self, ws_name: str) -> list[WorksheetInstance]:
        return [inst for inst in self.instances if inst.spec_ref == ws_name]


# --- update statements ------------------------------------------------------------


@dataclass(frozen=True)
class VarToken:
    """Reference to an instance by var name inside a statement value."""

    name: str


@dataclass(frozen=True)
class TempRef:
    """Reference to an instance created earlier in the same statement batch."""

    idx: int


@dataclass(frozen=True)
class Assign:
    var: str
    field: str
    value: Any  # literal | VarToken | TempRef


@dataclass(frozen=True)
class Construct:
    var: str | None
    ws_name: str
    pairs: tuple[tuple[str, Any], ...]
    temp_idx: int | None = None


@dataclass(frozen=True)
class Query:
    text: str
    var: str | None = None
    temp_idx: int | None = None


UpdateStatement = Assign | Construct | Query


@dataclass
class ApplyReport:
    applied: list[tuple[str, str, Any]] = dc_field(default_factory=list)
    rejected: list[tuple[str, str]] = dc_field(default_factory=list)  # (stmt text, reason)
    created: list[str] = dc_field(default_factory=list)

    def reject(self, stmt_text: str, reason: str) -> None:
        self.rejected.append((stmt_text, reason))


# --- instance construction ----------------------------------------------------------


def make_instance(spec: TaskSpec, ws: WorksheetSpec, var_name: str, turn: int) -> WorksheetInstance:
    slots = {}
    for f in ws.fields:
        slots[f.name] = FieldSlot()
    return WorksheetInstance(
        var_name=var_name, spec_ref=ws.name, slots=slots, kind=ws.kind, created_turn=turn
    )


def fresh_var_name(state: DialogueState, base: str, explicit: str | None = None) -> str:
    taken = state.var_names()
    if explicit and explicit not in taken:
        return explicit
    if base not in taken:
        return base
    i = 1
    while f"{base}_{i}" in taken:
        i += 1
    return f"{base}_{i}"


def add_instance(
    state: DialogueState,
    spec: TaskSpec,
    ws: WorksheetSpec,
    explicit_var: str | None = None,
) -> WorksheetInstance:
    var = fresh_var_name(state, ws.var_base, explicit_var)
    inst = make_instance(spec, ws, var, state.turn_index)
    state.instances.append(inst)
    return inst


def ensure_top_level(state: DialogueState, spec: TaskSpec) -> WorksheetInstance:
    top = spec.top_level
    existing = state.instances_of(top.name)
    if existing:
        return existing[0]
    return add_instance(state, spec, top)


# --- filled / refused semantics -------------------------------------------------------


def slot_filled(state: DialogueState, field_spec: FieldSpec, slot: FieldSlot) -> bool:
    v = slot.value
    if v is EMPTY or v is REFUSED:
        return False
    if isinstance(v, VarRefValue):
        if field_spec.field_type.base == "ws":
            src = state.find_var(v.name)
            return src is not None and src.completed
        return slot.resolved is not EMPTY
    return True


def slot_display_value(slot: FieldSlot) -> Any:
    """Value as shown in snapshots (references stay symbolic)."""
    return slot.value


def slot_eval_value(state: DialogueState, slot: FieldSlot) -> Any:
    """Value as seen by expressions: references yield their composed value."""
    v = slot.value
    if isinstance(v, VarRefValue):
        if slot.resolved is not EMPTY:
            return slot.resolved
        src = state.find_var(v.name)
        if src is not None and src.result is not EMPTY:
            return src.result
        return EMPTY
    return v


# --- expression scopes ------------------------------------------------------------------


class GlobalScope:
    """Resolves bare names against the first instance declaring them."""

    def __init__(self, state: DialogueState, spec: TaskSpec):
        self.state = state
        self.spec = spec

    def _locate(self, var: str | None, field: str) -> tuple[WorksheetInstance | None, FieldSpec | None]:
        if var is not None:
            inst = self.state.find_var(var)
            if inst is None:
                ws = next(
                    (w for w in self.spec.worksheets if w.var_base == var), None
                )
                if ws is None:
                    raise UnknownReferenceError(f"unknown variable {var!r}")
                if field != RESULT_FIELD and field != CONFIRM_FIELD and ws.field(field) is None:
                    raise UnknownReferenceError(f"{var} has no field {field!r}")
                return None, ws.field(field)
            return inst, self._field_of(inst, field)
        for inst in self.state.instances:
            ws = self.spec.worksheet(inst.spec_ref)
            if ws and ws.field(field) is not None:
                return inst, ws.field(field)
        for ws in self.spec.worksheets:
            if ws.field(field) is not None:
                return None, ws.field(field)
        if field in (RESULT_FIELD, CONFIRM_FIELD):
            return None, None
        raise UnknownReferenceError(f"unknown field {field!r}")

    def _field_of(self, inst: WorksheetInstance, field: str) -> FieldSpec | None:
        ws = self.spec.worksheet(inst.spec_ref)
        if field in (RESULT_FIELD, CONFIRM_FIELD):
            return None
        fs = ws.field(field) if ws else None
        if fs is None:
            raise UnknownReferenceError(f"{inst.var_name} has no field {field!r}")
        return fs

    def lookup(self, var: str | None, field: str) -> Any:
        inst, _fs = self._locate(var, field)
        if inst is None:
            return EMPTY
        if field == RESULT_FIELD:
            return inst.result
        if field == CONFIRM_FIELD and field not in inst.slots:
            return EMPTY
        slot = inst.slot(field)
        return slot_eval_value(self.state, slot) if slot else EMPTY

    def is_filled(self, var: str | None, field: str) -> bool:
        inst, fs = self._locate(var, field)
        if inst is None:
            return False
        if field == RESULT_FIELD:
            return inst.result is not EMPTY
        slot = inst.slot(field)
        if slot is None:
            return False
        if fs is None:
            return slot.value is not EMPTY and slot.value is not REFUSED
        return slot_filled(self.state, fs, slot)

    def is_refused(self, var: str | None, field: str) -> bool:
        inst, _fs = self._locate(var, field)
        if inst is None:
            return False
        slot = inst.slot(field)
        return slot is not None and slot.value is REFUSED


class InstanceScope(GlobalScope):
    """Bare names resolve against the enclosing instance first."""

    def __init__(self, state: DialogueState, spec: TaskSpec, instance: WorksheetInstance):
        super().__init__(state, spec)
        self.instance = instance
        self.ws = spec.worksheet(instance.spec_ref)

    def _locate(self, var, field):
        if var is None:
            if field == RESULT_FIELD or field == CONFIRM_FIELD:
                return self.instance, None
            if self.ws and self.ws.field(field) is not None:
                return self.instance, self.ws.field(field)
        return super()._locate(var, field)

    def lookup(self, var: str | None, field: str) -> Any:
        if var is None and field == RESULT_FIELD:
            return self.instance.result
        return super().lookup(var, field)


class ActionScope(InstanceScope):
    """InstanceScope plus assignment, used when running action blocks."""

    def assign(self, field: str, value: Any) -> None:
        if field == RESULT_FIELD:
            self.instance.result = value
            return
        fs = self.ws.field(field) if self.ws else None
        if fs is None:
            raise UnknownFieldError(f"{self.instance.var_name} has no field {field!r}")
        set_slot_value(self.state, self.spec, self.instance, fs, value, provenance="computed")


# --- value coercion -----------------------------------------------------------------------


def coerce_value(
    spec: TaskSpec,
    state: DialogueState,
    instance: WorksheetInstance,
    field_spec: FieldSpec,
    value: Any,
) -> Any:
    """Coerce a raw statement value to the field's declared type.

    Raises ValueTypeError when the value cannot be represented; the caller
    records a rejection and the turn continues.
    """
    if value is None or value is EMPTY:
        return EMPTY
    if value is REFUSED or (isinstance(value, str) and value == REFUSAL_TOKEN):
        return REFUSED
    base = field_spec.field_type.base

    if isinstance(value, VarRefValue):
        target = state.find_var(value.name)
        if target is None:
            raise ValueTypeError(f"unknown variable {value.name!r}")
        if base == "ws":
            if target.spec_ref != field_spec.field_type.arg:
                raise ValueTypeError(
                    f"{field_spec.name} expects a {field_spec.field_type.arg} instance, "
                    f"got {target.spec_ref}"
                )
            return value
        if base == "kb":
            if target.kind != "kb":
                raise ValueTypeError(f"{field_spec.name} expects a query result reference")
            return value
        raise ValueTypeError(f"{field_spec.name} ({base}) cannot hold a reference")

    if base == "str":
        if isinstance(value, str):
            return value
        if isinstance(value, (int, float, bool)):
            return render_value(value).strip("'")
        raise ValueTypeError(f"{field_spec.name} expects a string")
    if base == "int":
        if isinstance(value, bool):
            raise ValueTypeError(f"{field_spec.name} expects an integer")
        if isinstance(value, int):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
        if isinstance(value, str) and value.strip().lstrip("-").isdigit():
            return int(value.strip())
        raise ValueTypeError(f"{field_spec.name} expects an integer, got {value!r}")
    if base == "float":
        if isinstance(value, bool):
            raise ValueTypeError(f"{field_spec.name} expects a number")
        if isinstance(value, (int, float)):
            return float(value)
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError as exc:
                raise ValueTypeError(f"{field_spec.name} expects a number, got {value!r}") from exc
        raise ValueTypeError(f"{field_spec.name} expects a number")
    if base == "bool":
        if isinstance(value, bool):
            return value
        if isinstance(value, str):
            lowered = value.strip().lower()
            if lowered in ("true", "yes"):
                return True
            if lowered in ("false", "no"):
                return False
        raise ValueTypeError(f"{field_spec.name} expects a boolean, got {value!r}")
    if base == "date":
        if isinstance(value, dt.datetime):
            return value.date()
        if isinstance(value, dt.date):
            return value
        if isinstance(value, str):
            try:
                return parse_date(value)
            except ValueError as exc:
                raise ValueTypeError(f"{field_spec.name} expects a date, got {value!r}") from exc
        raise ValueTypeError(f"{field_spec.name} expects a date")
    if base == "time":
        if isinstance(value, dt.time):
            return value
        if isinstance(value, str):
            try:
                return parse_time(value)
            except ValueError as exc:
                raise ValueTypeError(f"{field_spec.name} expects a time, got {value!r}") from exc
        raise ValueTypeError(f"{field_spec.name} expects a time")
    if base == "enum":
        domain = spec.enum_domains.get(field_spec.field_type.arg or "", ())
        if not isinstance(value, str):
            raise ValueTypeError(f"{field_spec.name} expects one of {list(domain)}")
        for option in domain:
            if option.lower() == value.strip().lower():
                return option
        raise ValueTypeError(
            f"{field_spec.name}: {value!r} is not one of {list(domain)}"
        )
    if base == "kb":
        if isinstance(value, dict):
            return value
        if isinstance(value, str):
            picked = _pick_kb_row(state, instance, field_spec, value)
            return picked if picked is not None else value
        raise ValueTypeError(f"{field_spec.name} expects a result row or selection")
    if base == "ws":
        raise ValueTypeError(
            f"{field_spec.name} expects a {field_spec.field_type.arg} instance"
        )
    raise ValueTypeError(f"unsupported field type {base}")


def _pick_kb_row(
    state: DialogueState,
    instance: WorksheetInstance,
    field_spec: FieldSpec,
    selection: str,
) -> dict | None:
    """Resolve a user's textual pick against the referenced query's rows."""
    slot = instance.slot(field_spec.name)
    rows: list[dict] = []
    if slot is not None and isinstance(slot.value, VarRefValue):
        src = state.find_var(slot.value.name)
        if src is not None and isinstance(src.result, list):
            rows = [r for r in src.result if isinstance(r, dict)]
    if not rows:
        for src in reversed(state.instances):
            if src.kind == "kb" and isinstance(src.result, list):
                rows = [r for r in src.result if isinstance(r, dict)]
                if rows:
                    break
    if not rows:
        return None
    text = selection.strip()
    if text.isdigit():
        idx = int(text)
        if 1 <= idx <= len(rows):
            return rows[idx - 1]
    for row in rows:
        first = next(iter(row.values()), None)
        if isinstance(first, str) and first.lower() == text.lower():
            return row
    return None


def set_slot_value(
    state: DialogueState,
    spec: TaskSpec,
    instance: WorksheetInstance,
    field_spec: FieldSpec,
    raw_value: Any,
    provenance: str = "user",
) -> FieldSlot:
    """Coerce and store a value, maintaining confirmation/action bookkeeping."""
    value = coerce_value(spec, state, instance, field_spec, raw_value)
    slot = instance.slots.setdefault(field_spec.name, FieldSlot())
    changed = value != slot.value if not isinstance(value, Sentinel) else value is not slot.value
    slot.value = value
    slot.provenance = provenance
    if value is EMPTY:
        slot.newly_filled = False
        slot.confirmed = NOT_NEEDED
        slot.action_done = False
        slot.resolved = EMPTY
        return slot
    slot.newly_filled = True
    if changed:
        slot.action_done = False
        slot.resolved = EMPTY
    if value is REFUSED:
        slot.confirmed = NOT_NEEDED
    elif field_spec.confirm:
        if changed or slot.confirmed == NOT_NEEDED:
            slot.confirmed = PENDING
    return slot


def grant_confirmations(instance: WorksheetInstance) -> None:
    for slot in instance.slots.values():
        if slot.confirmed == PENDING:
            slot.confirmed = GRANTED


# --- applying updates --------------------------------------------------------------------------


def stmt_to_text(stmt: UpdateStatement) -> str:
    def render(v: Any) -> str:
        if isinstance(v, VarToken):
            return v.name
        if isinstance(v, TempRef):
            return f"<new #{v.idx}>"
        return render_value(v)

    if isinstance(stmt, Assign):
        return f"{stmt.var}.{stmt.field} = {render(stmt.value)}"
    if isinstance(stmt, Construct):
        args = ", ".join(f"{k}={render(v)}" for k, v in stmt.pairs)
        prefix = f"{stmt.var} = " if stmt.var else ""
        return f"{prefix}{stmt.ws_name}({args})"
    if isinstance(stmt, Query):
        prefix = f"{stmt.var} = " if stmt.var else ""
        return f'{prefix}answer("{stmt.text}")'
    raise TypeError(stmt)


def apply_updates(
    state: DialogueState,
    spec: TaskSpec,
    stmts: list[UpdateStatement],
) -> ApplyReport:
    """Apply parser output to the state; rejections are recorded, not raised.

    Two passes: constructors and queries create their instances first, so
    statements may reference instances introduced later in the same batch
    (snapshots and LLM output both do this).
    """
    report = ApplyReport()
    state.turn_index += 1
    temp_map: dict[int, str] = {}
    instances: dict[int, WorksheetInstance] = {}
    failed: set[int] = set()

    def resolve_value(value: Any) -> Any:
        if isinstance(value, TempRef):
            name = temp_map.get(value.idx)
            if name is None:
                raise UnknownVarError(f"unresolved constructor reference #{value.idx}")
            return VarRefValue(name)
        if isinstance(value, VarToken):
            if state.find_var(value.name) is None:
                raise UnknownVarError(f"unknown variable {value.name!r}")
            return VarRefValue(value.name)
        return value

    for i, stmt in enumerate(stmts):
        try:
            if isinstance(stmt, Construct):
                instances[i] = _ensure_construct_instance(state, spec, stmt, temp_map, report)
            elif isinstance(stmt, Query):
                _apply_query(state, spec, stmt, temp_map, report)
        except (UnknownVarError, UnknownFieldError, ValueTypeError) as exc:
            report.reject(stmt_to_text(stmt), str(exc))
            failed.add(i)

    for i, stmt in enumerate(stmts):
        if i in failed:
            continue
        try:
            if isinstance(stmt, Construct):
                inst = instances[i]
                ws = spec.worksheet(inst.spec_ref)
                _apply_pairs(state, spec, inst, ws, stmt.pairs, resolve_value, report)
            elif isinstance(stmt, Assign):
                _apply_assign(state, spec, stmt, resolve_value, report)
        except (UnknownVarError, UnknownFieldError, ValueTypeError) as exc:
            report.reject(stmt_to_text(stmt), str(exc))
    return report


def _apply_pairs(state, spec, inst, ws, pairs, resolve_value, report) -> None:
    for key, raw in pairs:
        fs = ws.field(key)
        text = f"{inst.var_name}.{key} = {render_value(raw) if not isinstance(raw, (VarToken, TempRef)) else '...'}"
        if fs is None and key == CONFIRM_FIELD:
            _apply_confirm(state, spec, inst, raw, report)
            continue
        if fs is None:
            report.reject(text, f"{ws.name} has no field {key!r}")
            continue
        try:
            value = resolve_value(raw)
            set_slot_value(state, spec, inst, fs, value)
            report.applied.append((inst.var_name, key, inst.slots[key].value))
        except (UnknownVarError, ValueTypeError) as exc:
            report.reject(text, str(exc))


def _apply_confirm(state, spec, inst, raw, report) -> None:
    truthy = raw is True or (isinstance(raw, str) and raw.strip().lower() in ("true", "yes"))
    if truthy:
        grant_confirmations(inst)
    report.applied.append((inst.var_name, CONFIRM_FIELD, truthy))


def _ensure_construct_instance(
    state, spec, stmt: Construct, temp_map, report
) -> WorksheetInstance:
    ws = spec.worksheet(stmt.ws_name)
    if ws is None:
        raise UnknownVarError(f"unknown worksheet {stmt.ws_name!r}")
    existing = state.find_var(stmt.var) if stmt.var else None
    if existing is not None:
        if existing.spec_ref != stmt.ws_name:
            raise ValueTypeError(
                f"{stmt.var!r} is a {existing.spec_ref}, not a {stmt.ws_name}"
            )
        inst = existing
    else:
        inst = add_instance(state, spec, ws, stmt.var)
        report.created.append(inst.var_name)
    if stmt.temp_idx is not None:
        temp_map[stmt.temp_idx] = inst.var_name
    return inst


def _apply_assign(state, spec, stmt: Assign, resolve_value, report) -> None:
    if stmt.var == "":
        inst = _newest_declaring(state, spec, stmt.field)
        if inst is None:
            raise UnknownVarError(f"no instance has a field named {stmt.field!r}")
    else:
        inst = state.find_var(stmt.var)
    if inst is None:
        inst = _recover_instance(state, spec, stmt.var, stmt.field, report)
        if inst is None:
            raise UnknownVarError(f"unknown variable {stmt.var!r}")
    ws = spec.worksheet(inst.spec_ref)
    if stmt.field == RESULT_FIELD:
        inst.result = resolve_value(stmt.value)
        if inst.kind == "kb" and (slot := inst.slot("kb_result")) is not None:
            slot.value = inst.result
        report.applied.append((inst.var_name, RESULT_FIELD, inst.result))
        return
    fs = ws.field(stmt.field) if ws else None
    if fs is None and stmt.field == CONFIRM_FIELD:
        _apply_confirm(state, spec, inst, stmt.value, report)
        return
    if fs is None:
        raise UnknownFieldError(f"{inst.var_name} has no field {stmt.field!r}")
    value = resolve_value(stmt.value)
    set_slot_value(state, spec, inst, fs, value)
    report.applied.append((inst.var_name, stmt.field, inst.slots[stmt.field].value))


def _newest_declaring(state, spec, field: str) -> WorksheetInstance | None:
    for inst in reversed(state.instances):
        ws = spec.worksheet(inst.spec_ref)
        if ws is not None and ws.field(field) is not None:
            return inst
    return None


def _recover_instance(state, spec, var: str, field: str, report) -> WorksheetInstance | None:
    """Recover from a parser addressing an instance by its holder field name.

    `course_2_details.course_name = 'X'` creates a Course instance and links
    it into the single empty ws-typed slot named `course_2_details`.
    """
    for holder in state.instances:
        ws = spec.worksheet(holder.spec_ref)
        if ws is None:
            continue
        fs = ws.field(var)
        if fs is None or fs.field_type.base != "ws":
            continue
        slot = holder.slot(var)
        if slot is None or slot.value is not EMPTY:
            continue
        target_ws = spec.worksheet(fs.field_type.arg or "")
        if target_ws is None or target_ws.field(field) is None:
            continue
        inst = add_instance(state, spec, target_ws)
        report.created.append(inst.var_name)
        set_slot_value(state, spec, holder, fs, VarRefValue(inst.var_name))
        report.applied.append((holder.var_name, var, holder.slots[var].value))
        return inst
    return None


def _apply_query(state, spec, stmt: Query, temp_map, report) -> None:
    if not spec.kb_schemas:
        raise ValueTypeError("no knowledge base is configured for this task")
    if stmt.var:
        existing = state.find_var(stmt.var)
        if existing is not None:
            if existing.kind == "kb" and _nl_query_of(existing) == stmt.text:
                if stmt.temp_idx is not None:
                    temp_map[stmt.temp_idx] = existing.var_name
                return  # idempotent replay of the same query
    default_ws = spec.kb_worksheet_for(spec.kb_schemas[0].name)
    inst = add_instance(state, spec, default_ws, stmt.var)
    report.created.append(inst.var_name)
    fs = default_ws.field("nl_query")
    set_slot_value(state, spec, inst, fs, stmt.text)
    report.applied.append((inst.var_name, "nl_query", stmt.text))
    if stmt.temp_idx is not None:
        temp_map[stmt.temp_idx] = inst.var_name


def _nl_query_of(inst: WorksheetInstance) -> str | None:
    slot = inst.slot("nl_query")
    if slot is None or isinstance(slot.value, Sentinel):
        return None
    return slot.value


# --- snapshots & composition ----------------------------------------------------------------------


def snapshot_for_prompt(state: DialogueState, spec: TaskSpec) -> str:
    """Render instances as constructor statements (the prompt's State block)."""
    lines: list[str] = []
    for inst in state.instances:
        if inst.kind == "kb":
            nl = _nl_query_of(inst) or ""
            lines.append(f"{inst.var_name} = answer({render_value(nl)})")
        else:
            parts = []
            for name, slot in inst.slots.items():
                if slot.value is EMPTY:
                    continue
                parts.append(f"{name} = {render_value(slot_display_value(slot))}")
            lines.append(f"{inst.var_name} = {inst.spec_ref}({', '.join(parts)})")
        if inst.result is not EMPTY:
            lines.append(f"{inst.var_name}.result = {render_value(inst.result)}")
    return "\n".join(lines)


def resolve_composition(
    state: DialogueState, spec: TaskSpec
) -> list[tuple[WorksheetInstance, str, str]]:
    """Assignments ready to perform: (target instance, field, source var).

    A reference is ready once its source has a non-EMPTY result; kb references
    additionally wait for an unambiguous (single-row) result, since choosing
    among rows belongs to the user.
    """
    ready: list[tuple[WorksheetInstance, str, str]] = []
    for inst in state.instances:
        ws = spec.worksheet(inst.spec_ref)
        if ws is None:
            continue
        for f in ws.fields:
            slot = inst.slot(f.name)
            if slot is None or not isinstance(slot.value, VarRefValue):
                continue
            if slot.resolved is not EMPTY:
                continue
            src = state.find_var(slot.value.name)
            if src is None:
                raise DanglingReferenceError(
                    f"{inst.var_name}.{f.name} references unknown {slot.value.name!r}"
                )
            if src.result is EMPTY:
                continue
            if f.field_type.base == "kb" and isinstance(src.result, list) and len(src.result) != 1:
                continue
            ready.append((inst, f.name, src.var_name))
    return ready


def apply_composition(
    state: DialogueState, spec: TaskSpec, assignments: list[tuple[WorksheetInstance, str, str]]
) -> None:
    for inst, field_name, src_var in assignments:
        src = state.find_var(src_var)
        slot = inst.slot(field_name)
        if src is None or slot is None:
            continue
        value = src.result
        if isinstance(value, list) and len(value) == 1:
            value = value[0]
        slot.resolved = value
        slot.provenance = "composed"
        slot.newly_filled = True
        ws = spec.worksheet(inst.spec_ref)
        fs = ws.field(field_name) if ws else None
        if fs is not None and fs.confirm:
            slot.confirmed = PENDING


def clear_turn_flags(state: DialogueState) -> None:
    for inst in state.instances:
        for slot in inst.slots.values():
            slot.newly_filled = False


# --- equality & fingerprints ------------------------------------------------------------------------


def _json_value(value: Any) -> Any:
    if value is EMPTY:
        return {"__sentinel__": "EMPTY"}
    if value is REFUSED:
        return {"__sentinel__": "REFUSED"}
    if isinstance(value, VarRefValue):
        return {"__ref__": value.name}
    if isinstance(value, dt.datetime):
        return {"__datetime__": value.isoformat()}
    if isinstance(value, dt.date):
        return {"__date__": value.isoformat()}
    if isinstance(value, dt.time):
        return {"__time__": value.strftime("%H:%M:%S")}
    if isinstance(value, (list, tuple)):
        return [_json_value(v) for v in value]
    if isinstance(value, dict):
        return {k: _json_value(v) for k, v in value.items()}
    return value


def state_fingerprint(state: DialogueState) -> str:
    """Canonical JSON of the full state, including per-slot bookkeeping."""
    doc = {
        "turn_index": state.turn_index,
        "instances": [
            {
                "var": inst.var_name,
                "ws": inst.spec_ref,
                "kind": inst.kind,
                "result": _json_value(inst.result),
                "completed": inst.completed,
                "slots": {
                    name: {
                        "value": _json_value(slot.value),
                        "resolved": _json_value(slot.resolved),
                        "newly_filled": slot.newly_filled,
                        "confirmed": slot.confirmed,
                        "action_done": slot.action_done,
                        "provenance": slot.provenance,
                    }
                    for name, slot in inst.slots.items()
                },
            }
            for inst in state.instances
        ],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def states_structurally_equal(a: DialogueState, b: DialogueState) -> bool:
    return state_fingerprint(a) == state_fingerprint(b)


def snapshot_equal(a: DialogueState, b: DialogueState) -> bool:
    """Equality over what snapshots carry: instances, field values, results.

    Bookkeeping flags and the derived KB lifecycle slots are not compared.
    """

    def shape(state: DialogueState):
        out = []
        for inst in state.instances:
            if inst.kind == "kb":
                slots = {"nl_query": _json_value(inst.slots.get("nl_query", FieldSlot()).value)}
            else:
                slots = {n: _json_value(s.value) for n, s in inst.slots.items()}
            out.append((inst.var_name, inst.spec_ref, slots, _json_value(inst.result)))
        return out

    return shape(a) == shape(b)
