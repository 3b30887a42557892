"""The deterministic agent policy: state in, dialogue acts out.

Each turn runs, in order: knowledge-query handling, result reporting, field
actions for newly populated fields, worksheet completion plus result
composition (iterated to a fixpoint), and finally the single AskAct for the
next missing field. Emitted act order is always reports, says, confirmations,
proposals, then at most one ask.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

from . import exprlang, state as st
from .apis import ApiRegistry
from .errors import (
    ApiFailure,
    KbError,
    StubFailure,
    TranslationFailure,
)
from .kb import KnowledgeBackend, TranslationResult
from .spec import FieldSpec, TaskSpec, describe_field
from .values import EMPTY, REFUSED, VarRefValue, render_value


# --- dialogue acts -------------------------------------------------------------------


@dataclass(frozen=True)
class AskAct:
    var: str
    field: str
    description: str = ""

    def canonical_str(self) -> str:
        return f"AskField({self.var}, {self.field})"

    def prompt_str(self) -> str:
        return f"AskField({self.var}, {self.field}, {self.description})"


@dataclass(frozen=True)
class ReportAct:
    var: str
    result: Any

    def canonical_str(self) -> str:
        return f"Report({self.var}, {self.var}.result)"

    def prompt_str(self) -> str:
        return self.canonical_str()


@dataclass(frozen=True)
class ConfirmationAct:
    var: str
    pairs: tuple[tuple[str, Any], ...]

    def canonical_str(self) -> str:
        inner = ", ".join(f"{k}={render_value(v)}" for k, v in self.pairs)
        return f"Confirm({self.var}, {inner})"

    def prompt_str(self) -> str:
        return self.canonical_str()


@dataclass(frozen=True)
class SayAct:
    text: str

    def canonical_str(self) -> str:
        return f"Say({json.dumps(self.text)})"

    def prompt_str(self) -> str:
        return self.canonical_str()


@dataclass(frozen=True)
class ProposeAct:
    ws_name: str
    pairs: tuple[tuple[str, Any], ...]

    def canonical_str(self) -> str:
        inner = ", ".join(f"{k}={render_value(v)}" for k, v in self.pairs)
        return f"Propose({self.ws_name}, {inner})" if inner else f"Propose({self.ws_name})"

    def prompt_str(self) -> str:
        return self.canonical_str()


DialogueAct = AskAct | ReportAct | ConfirmationAct | SayAct | ProposeAct


@dataclass(frozen=True)
class ExecutionRecord:
    kind: str  # api | db
    name: str
    params: tuple[tuple[str, Any], ...] = ()
    query: str | None = None
    result: Any = None
    var: str | None = None  # owning instance, when the call came from one

    def canonical_str(self) -> str:
        if self.kind == "db":
            return self.query or ""
        inner = ", ".join(f"{k}={render_value(v)}" for k, v in self.params)
        return f"{self.name}({inner})"


@dataclass
class PolicyOutcome:
    acts: list[DialogueAct]
    executions: list[ExecutionRecord]
    state: st.DialogueState


# --- helpers -------------------------------------------------------------------------


def instance_active(state: st.DialogueState, spec: TaskSpec, inst: st.WorksheetInstance) -> bool:
    ws = spec.worksheet(inst.spec_ref)
    if ws is None:
        return False
    if ws.predicate is None:
        return True
    return exprlang.eval_predicate(ws.predicate, st.GlobalScope(state, spec))


def field_active(
    state: st.DialogueState, spec: TaskSpec, inst: st.WorksheetInstance, fs: FieldSpec
) -> bool:
    if fs.predicate is None:
        return True
    return exprlang.eval_predicate(fs.predicate, st.InstanceScope(state, spec, inst))


def _askable_reason(
    state: st.DialogueState, spec: TaskSpec, inst: st.WorksheetInstance, fs: FieldSpec
) -> str | None:
    """Why this field should be asked now, or None.

    References defer asking: a ws-typed link means the child instance will be
    driven to completion on its own, a kb-typed link waits for the query; only
    an ambiguous (multi-row) result turns the kb field back into a question.
    """
    slot = inst.slot(fs.name)
    if slot is None:
        return None
    if not fs.required or fs.dont_ask or not fs.is_input:
        return None
    if slot.value is REFUSED:
        return None
    if not field_active(state, spec, inst, fs):
        return None
    if st.slot_filled(state, fs, slot):
        return None
    if isinstance(slot.value, VarRefValue):
        src = state.find_var(slot.value.name)
        if fs.field_type.base == "ws":
            return None  # the child instance carries its own asks
        if src is None or src.result is EMPTY:
            return None  # query still pending
        if isinstance(src.result, list) and len(src.result) != 1 and slot.resolved is EMPTY:
            return "choice"
        return None
    return "empty"


def select_ask(
    state: st.DialogueState, spec: TaskSpec
) -> tuple[st.WorksheetInstance, FieldSpec] | None:
    """First askable field in the dialogue's natural order.

    Instances are visited oldest first, fields in declaration order; a
    ws-typed reference to an incomplete child descends into that child before
    the parent's later fields, so a half-filled sub-form finishes first.
    """
    visited: set[str] = set()

    def scan(inst: st.WorksheetInstance) -> tuple[st.WorksheetInstance, FieldSpec] | None:
        if inst.var_name in visited or inst.completed or inst.kind == "kb":
            return None
        visited.add(inst.var_name)
        if not instance_active(state, spec, inst):
            return None
        ws = spec.worksheet(inst.spec_ref)
        if ws is None:
            return None
        for fs in ws.fields:
            slot = inst.slot(fs.name)
            if (
                slot is not None
                and fs.field_type.base == "ws"
                and isinstance(slot.value, VarRefValue)
                and field_active(state, spec, inst, fs)
            ):
                child = state.find_var(slot.value.name)
                if child is not None and not child.completed:
                    found = scan(child)
                    if found is not None:
                        return found
            if _askable_reason(state, spec, inst, fs) is not None:
                return inst, fs
        return None

    for inst in state.instances:
        found = scan(inst)
        if found is not None:
            return found
    return None


def pending_confirmations(state: st.DialogueState, spec: TaskSpec) -> list[ConfirmationAct]:
    """One act per instance with pending slots, fields in declaration order."""
    acts: list[ConfirmationAct] = []
    for inst in state.instances:
        ws = spec.worksheet(inst.spec_ref)
        if ws is None:
            continue
        pairs = []
        for fs in ws.fields:
            slot = inst.slot(fs.name)
            if slot is not None and slot.confirmed == st.PENDING:
                value = slot.resolved if slot.resolved is not EMPTY else slot.value
                pairs.append((fs.name, value))
        if pairs:
            acts.append(ConfirmationAct(inst.var_name, tuple(pairs)))
    return acts


def completion_check(state: st.DialogueState, spec: TaskSpec, inst: st.WorksheetInstance) -> bool:
    """Ready to fire the worksheet action: active required fields filled (none
    refused), confirmations granted, no field action outstanding."""
    ws = spec.worksheet(inst.spec_ref)
    if ws is None:
        return False
    for fs in ws.fields:
        slot = inst.slot(fs.name)
        if slot is None:
            continue
        if slot.confirmed == st.PENDING:
            return False
        if not field_active(state, spec, inst, fs):
            continue
        if fs.required:
            if slot.value is REFUSED:
                return False
            if not st.slot_filled(state, fs, slot):
                return False
        filled = st.slot_filled(state, fs, slot)
        if filled and fs.actions is not None and not slot.action_done:
            return False
    return True


# --- the policy ----------------------------------------------------------------------------


def run_policy(
    state: st.DialogueState,
    spec: TaskSpec,
    kb: KnowledgeBackend | None,
    apis: ApiRegistry,
) -> PolicyOutcome:
    reports: list[DialogueAct] = []
    says: list[DialogueAct] = []
    proposes: list[DialogueAct] = []
    executions: list[ExecutionRecord] = []
    kb_ask: AskAct | None = None

    st.ensure_top_level(state, spec)
    _auto_instantiate(state, spec)

    # step 1-2: knowledge queries, newest first for pending asks
    if kb is not None:
        kb_ask = _run_kb_step(state, spec, kb, reports, says, executions)

    # step 3: developer actions on newly populated fields
    _run_field_actions(state, spec, apis, reports, says, proposes, executions)

    # pending confirmations (issued for newly populated confirm fields)
    confirms = pending_confirmations(state, spec)

    # steps 5-6: completion and composition, iterated to a fixpoint
    _run_completions(state, spec, apis, reports, says, proposes, executions)
    _auto_instantiate(state, spec)

    # step 4 (last, so composition cannot invalidate the choice): the one ask
    ask: AskAct | None = kb_ask
    if ask is None:
        picked = select_ask(state, spec)
        if picked is not None:
            inst, fs = picked
            ask = AskAct(inst.var_name, fs.name, describe_field(spec, fs))
    if ask is None:
        refusal = _refusal_notice(state, spec)
        if refusal is not None:
            says.append(refusal)

    acts: list[DialogueAct] = []
    acts.extend(reports)
    acts.extend(says)
    acts.extend(confirms)
    acts.extend(proposes)
    if ask is not None:
        acts.append(ask)

    st.clear_turn_flags(state)
    state.pending_acts = list(acts)
    return PolicyOutcome(acts=acts, executions=executions, state=state)


def _auto_instantiate(state: st.DialogueState, spec: TaskSpec) -> None:
    """Instantiate predicated worksheets whose predicates just became true.

    A fresh instance is linked into the single empty ws-typed slot expecting
    it, when exactly one such slot exists.
    """
    for _ in range(len(spec.worksheets)):
        created = False
        for ws in spec.task_worksheets:
            if ws.predicate is None:
                continue
            if state.instances_of(ws.name):
                continue
            if not exprlang.eval_predicate(ws.predicate, st.GlobalScope(state, spec)):
                continue
            inst = st.add_instance(state, spec, ws)
            created = True
            holders = [
                (holder, fs)
                for holder in state.instances
                for fs in (spec.worksheet(holder.spec_ref).fields if spec.worksheet(holder.spec_ref) else ())
                if fs.field_type.base == "ws"
                and fs.field_type.arg == ws.name
                and holder.slot(fs.name) is not None
                and holder.slot(fs.name).value is EMPTY
            ]
            if len(holders) == 1:
                holder, fs = holders[0]
                st.set_slot_value(
                    state, spec, holder, fs, VarRefValue(inst.var_name), provenance="composed"
                )
        if not created:
            return


def _kb_lifecycle_slot(inst: st.WorksheetInstance, name: str) -> st.FieldSlot:
    return inst.slots.setdefault(name, st.FieldSlot())


def _run_kb_step(
    state: st.DialogueState,
    spec: TaskSpec,
    kb: KnowledgeBackend,
    reports: list,
    says: list,
    executions: list,
) -> AskAct | None:
    """Translate fresh NL queries, execute ready ones, report new results."""
    pending_ask: AskAct | None = None
    pending_instances = [
        inst
        for inst in state.instances
        if inst.kind == "kb" and inst.result is EMPTY
    ]
    for inst in pending_instances:
        nl_slot = inst.slot("nl_query")
        if nl_slot is None or nl_slot.value in (EMPTY, REFUSED):
            continue
        nl = nl_slot.value
        try:
            translation = kb.translate(nl)
        except (TranslationFailure, KbError):
            translation = TranslationResult.no_answer()
        if translation.kind == "no_answer":
            _finish_kb(state, spec, inst, [], reports)
            continue
        if translation.kind == "needs_info":
            if inst is pending_instances[-1]:
                # only the newest pending question is pursued
                if pending_ask is None:
                    pending_ask = AskAct(
                        inst.var_name,
                        translation.missing_slot or "detail",
                        translation.question or "Could you give me more detail?",
                    )
            else:
                _finish_kb(state, spec, inst, [], reports, report=False)
            continue
        query = translation.query
        serialized = query.serialize()
        sq_slot = _kb_lifecycle_slot(inst, "structured_query")
        sq_slot.value = serialized
        sq_slot.provenance = "computed"
        try:
            rows = kb.execute(query)
        except KbError as exc:
            says.append(SayAct(f"I hit a problem looking that up ({exc}); I will retry."))
            continue
        executions.append(
            ExecutionRecord(
                kind="db", name=query.table, query=serialized, result=rows, var=inst.var_name
            )
        )
        _finish_kb(state, spec, inst, rows, reports)
        # rebind the instance to the queried table's KB-worksheet
        target_ws = spec.worksheet(f"{_pascal(query.table)}KB")
        if target_ws is not None and inst.spec_ref != target_ws.name:
            inst.spec_ref = target_ws.name
    return pending_ask


def _pascal(name: str) -> str:
    from .spec import pascal_case

    return pascal_case(name)


def _finish_kb(state, spec, inst, rows, reports, report: bool = True) -> None:
    result_slot = _kb_lifecycle_slot(inst, "kb_result")
    result_slot.value = rows
    result_slot.provenance = "computed"
    inst.result = rows
    inst.completed = True
    if report:
        reports.append(ReportAct(inst.var_name, rows))


def _run_field_actions(
    state, spec, apis: ApiRegistry, reports, says, proposes, executions
) -> None:
    """Run developer actions for filled fields (deferred while a confirmation
    is pending; silent api calls per the field-action contract)."""
    for inst in list(state.instances):
        ws = spec.worksheet(inst.spec_ref)
        if ws is None or inst.kind == "kb":
            continue
        if not instance_active(state, spec, inst):
            continue
        for fs in ws.fields:
            if fs.actions is None:
                continue
            slot = inst.slot(fs.name)
            if slot is None or slot.action_done:
                continue
            if not st.slot_filled(state, fs, slot):
                continue
            if fs.confirm and slot.confirmed != st.GRANTED:
                continue
            if not field_active(state, spec, inst, fs):
                continue
            try:
                effects = exprlang.exec_actions(
                    fs.actions, st.ActionScope(state, spec, inst), apis
                )
            except (StubFailure, ApiFailure) as exc:
                says.append(SayAct(f"Something went wrong ({exc}); I will retry."))
                continue
            slot.action_done = True
            _consume_effects(state, spec, inst, effects, says, proposes, executions, reports, report_calls=False)


def _run_completions(state, spec, apis: ApiRegistry, reports, says, proposes, executions) -> None:
    for _ in range(len(state.instances) + len(spec.worksheets) + 1):
        progressed = False
        for inst in list(state.instances):
            if inst.completed or inst.kind == "kb":
                continue
            if not instance_active(state, spec, inst):
                continue
            if not completion_check(state, spec, inst):
                continue
            ws = spec.worksheet(inst.spec_ref)
            if ws is None:
                continue
            if ws.ws_action is not None:
                try:
                    effects = exprlang.exec_actions(
                        ws.ws_action, st.ActionScope(state, spec, inst), apis
                    )
                except (StubFailure, ApiFailure) as exc:
                    says.append(SayAct(f"I could not complete {inst.var_name} ({exc}); I will retry."))
                    continue
                _consume_effects(
                    state, spec, inst, effects, says, proposes, executions, reports, report_calls=True
                )
            if inst.result is EMPTY:
                inst.result = _composed_result(state, spec, inst)
            inst.completed = True
            progressed = True
        assignments = st.resolve_composition(state, spec)
        if assignments:
            st.apply_composition(state, spec, assignments)
            progressed = True
        if not progressed:
            return


def _composed_result(state, spec, inst) -> Any:
    ws = spec.worksheet(inst.spec_ref)
    out = {}
    for fs in ws.fields:
        slot = inst.slot(fs.name)
        if slot is None:
            continue
        value = st.slot_eval_value(state, slot)
        if value is EMPTY:
            continue
        out[fs.name] = "NA" if value is REFUSED else value
    return out


def _consume_effects(
    state, spec, inst, effects, says, proposes, executions, reports, report_calls: bool
) -> None:
    for effect in effects:
        if isinstance(effect, exprlang.SayEffect):
            says.append(SayAct(effect.text))
        elif isinstance(effect, exprlang.ProposeEffect):
            ws = spec.worksheet(effect.ws_name)
            if ws is None:
                continue
            new_inst = st.add_instance(state, spec, ws)
            for key, value in effect.pairs:
                fs = ws.field(key)
                if fs is not None:
                    st.set_slot_value(state, spec, new_inst, fs, value, provenance="composed")
            proposes.append(ProposeAct(effect.ws_name, effect.pairs))
        elif isinstance(effect, exprlang.CallEffect):
            executions.append(
                ExecutionRecord(
                    kind="api",
                    name=effect.api,
                    params=effect.kwargs,
                    result=effect.result,
                    var=inst.var_name,
                )
            )
            if report_calls and effect.target:
                reports.append(ReportAct(inst.var_name, effect.result))


def _refusal_notice(state: st.DialogueState, spec: TaskSpec) -> SayAct | None:
    """When nothing can be asked but a refused required field blocks a task."""
    for inst in state.instances:
        if inst.completed or inst.kind == "kb":
            continue
        if not instance_active(state, spec, inst):
            continue
        ws = spec.worksheet(inst.spec_ref)
        if ws is None:
            continue
        for fs in ws.fields:
            slot = inst.slot(fs.name)
            if slot is None or slot.value is not REFUSED:
                continue
            if fs.required and field_active(state, spec, inst, fs):
                label = fs.description or fs.name
                return SayAct(
                    f"I cannot complete this task without {label}, so it will "
                    "be left unfinished. Let me know if you change your mind."
                )
    return None
