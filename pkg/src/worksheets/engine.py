"""The per-session turn loop: parse, apply, run the policy, respond."""

from __future__ import annotations

from dataclasses import dataclass

from . import exprlang, semparse, state as st
from .apis import ApiRegistry
from .errors import BackendError
from .kb import KnowledgeBackend
from .policy import DialogueAct, ExecutionRecord, SayAct, run_policy
from .respond import TemplateResponder, render_template
from .semparse import Clock, FewShot, ParseIssue, PromptBundle, build_prompt, parse_statements
from .spec import TaskSpec
from .events import EventLog

APOLOGY = "Sorry, I hit a technical problem understanding that. Could you try again?"


@dataclass
class TurnResult:
    utterance: str
    acts: list[DialogueAct]
    executions: list[ExecutionRecord]
    statements: list[st.UpdateStatement]
    parse_issues: list[ParseIssue]
    report: st.ApplyReport | None
    error: str | None = None

    @property
    def act_strings(self) -> list[str]:
        return [act.canonical_str() for act in self.acts]


class Engine:
    """One conversational session over a spec, with pluggable backends."""

    def __init__(
        self,
        spec: TaskSpec,
        parser,
        responder=None,
        kb: KnowledgeBackend | None = None,
        apis: ApiRegistry | None = None,
        clock: Clock | None = None,
        few_shots: tuple[FewShot, ...] = (),
        event_log: EventLog | None = None,
    ):
        self.spec = spec
        self.parser = parser
        self.responder = responder or TemplateResponder()
        self.kb = kb
        self.apis = apis or ApiRegistry(spec)
        self.clock = clock or Clock(date="2024-01-01", day="Monday")
        self.few_shots = few_shots
        self.log = event_log or EventLog()
        self.state = st.DialogueState()
        self.opened = False

    # -- session lifecycle --

    def open(self) -> str | None:
        """Create the top-level instance; run its greeting action if any."""
        if self.opened:
            return None
        self.opened = True
        top_inst = st.ensure_top_level(self.state, self.spec)
        top_ws = self.spec.top_level
        greeting = None
        if top_ws.greeting is not None:
            effects = exprlang.exec_actions(
                top_ws.greeting, st.ActionScope(self.state, self.spec, top_inst), self.apis
            )
            says = [SayAct(e.text) for e in effects if isinstance(e, exprlang.SayEffect)]
            if says:
                greeting = render_template(says, self.state)
                self.state.pending_acts = list(says)
                self.state.last_agent_utterance = greeting
                for act in says:
                    self.log.append({"e": "act", "turn": -1, "act": act.canonical_str()})
                self.log.append({"e": "agent", "turn": -1, "text": greeting})
        return greeting

    def take_turn(self, user_text: str) -> TurnResult:
        if not self.opened:
            self.open()
        turn = self.state.turn_index
        self.state.last_user_utterance = user_text
        self.log.append({"e": "user", "turn": turn, "text": user_text})

        bundle = build_prompt(
            self.spec, self.state, self.state.pending_acts, self.clock, self.few_shots
        )
        raw: str | None
        try:
            raw = self.parser.parse_turn(bundle, turn)
        except BackendError as exc:
            raw = None
            self.log.append({"e": "parse", "turn": turn, "raw": None, "error": str(exc)})
            return self._apology_turn(turn, str(exc))
        if raw is None:
            self.log.append({"e": "parse", "turn": turn, "raw": None, "error": "no output"})
            return self._apology_turn(turn, "parser returned no output")

        statements, issues = parse_statements(raw, self.spec)
        self.log.append(
            {
                "e": "parse",
                "turn": turn,
                "raw": raw,
                "issues": [{"line": i.line, "message": i.message} for i in issues],
            }
        )
        report = st.apply_updates(self.state, self.spec, statements)
        for var, field_name, value in report.applied:
            self.log.append(
                {"e": "update", "turn": turn, "var": var, "field": field_name, "value": value}
            )
        for stmt_text, reason in report.rejected:
            self.log.append({"e": "reject", "turn": turn, "stmt": stmt_text, "reason": reason})

        outcome = run_policy(self.state, self.spec, self.kb, self.apis)
        for execution in outcome.executions:
            self.log.append(
                {
                    "e": "execution",
                    "turn": turn,
                    "kind": execution.kind,
                    "text": execution.canonical_str(),
                }
            )
        for act in outcome.acts:
            self.log.append({"e": "act", "turn": turn, "act": act.canonical_str()})

        utterance = self.responder.respond(outcome.acts, self.state, user_text, self.spec)
        if not utterance:
            utterance = "Is there anything else I can help you with?"
        self.state.last_agent_utterance = utterance
        self.log.append({"e": "agent", "turn": turn, "text": utterance})
        return TurnResult(
            utterance=utterance,
            acts=outcome.acts,
            executions=outcome.executions,
            statements=statements,
            parse_issues=issues,
            report=report,
        )

    def _apology_turn(self, turn: int, detail: str) -> TurnResult:
        self.state.turn_index = turn + 1
        acts: list[DialogueAct] = [SayAct(APOLOGY)]
        self.state.pending_acts = list(acts)
        utterance = render_template(acts, self.state)
        self.state.last_agent_utterance = utterance
        for act in acts:
            self.log.append({"e": "act", "turn": turn, "act": act.canonical_str()})
        self.log.append({"e": "agent", "turn": turn, "text": utterance})
        return TurnResult(
            utterance=utterance,
            acts=acts,
            executions=[],
            statements=[],
            parse_issues=[],
            report=None,
            error=detail,
        )


class _LogParser:
    """Replays raw parser outputs recorded in an event log."""

    def __init__(self, raws: dict[int, str | None]):
        self.raws = raws

    def parse_turn(self, bundle: PromptBundle, turn_index: int) -> str | None:
        return self.raws.get(turn_index)


def rebuild_from_events(
    events: list[dict],
    spec: TaskSpec,
    kb: KnowledgeBackend | None,
    apis: ApiRegistry,
    clock: Clock | None = None,
    few_shots: tuple[FewShot, ...] = (),
) -> Engine:
    """Reconstruct a session's state by re-running its recorded turns."""
    raws: dict[int, str | None] = {}
    for event in events:
        if event.get("e") == "parse":
            raws[int(event["turn"])] = event.get("raw")
    apis.reset()
    engine = Engine(
        spec,
        parser=_LogParser(raws),
        kb=kb,
        apis=apis,
        clock=clock,
        few_shots=few_shots,
    )
    engine.open()
    for event in events:
        if event.get("e") == "user":
            engine.take_turn(event["text"])
    return engine
