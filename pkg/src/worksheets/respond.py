"""Response generation: deterministic templates, optional LLM polish.

Templates are the system of record; the LLM responder only restyles and falls
back to templates on transport trouble, so nothing downstream depends on it.
"""

from __future__ import annotations

from typing import Any

from .errors import MalformedResponse, RateLimited, TransportError
from .policy import AskAct, ConfirmationAct, DialogueAct, ProposeAct, ReportAct, SayAct
from .semparse import HttpChatClient
from .state import DialogueState, snapshot_for_prompt
from .values import EMPTY, REFUSED, VarRefValue


def _display(value: Any) -> str:
    if value is EMPTY:
        return "(empty)"
    if value is REFUSED:
        return "NA"
    if isinstance(value, VarRefValue):
        return value.name
    if isinstance(value, dict):
        return ", ".join(f"{k}: {_display(v)}" for k, v in value.items())
    if isinstance(value, list):
        return "; ".join(_display(v) for v in value)
    return str(value)


def render_act(act: DialogueAct) -> str:
    if isinstance(act, AskAct):
        label = act.description or act.field
        return f"Please provide: {label}"
    if isinstance(act, ReportAct):
        if isinstance(act.result, list) and not act.result:
            return f"I looked into {act.var} and could not find any results."
        return f"I looked into {act.var} and found: {_display(act.result)}."
    if isinstance(act, ConfirmationAct):
        listing = "; ".join(f"{k} = {_display(v)}" for k, v in act.pairs)
        return f"Can you confirm the details? {listing}"
    if isinstance(act, SayAct):
        return act.text
    if isinstance(act, ProposeAct):
        prefill = ", ".join(f"{k} = {_display(v)}" for k, v in act.pairs)
        suffix = f" ({prefill})" if prefill else ""
        return f"How about we start {act.ws_name}{suffix}?"
    raise TypeError(act)


def render_template(acts: list[DialogueAct], state: DialogueState) -> str:
    """Realize every act exactly once, in act order."""
    return " ".join(render_act(act) for act in acts)


RESPONDER_SYSTEM = (
    "You are the voice of a task assistant. Rewrite the planned dialogue acts "
    "into one short, natural reply to the user. Cover every act, invent "
    "nothing, and keep listed values exactly as given."
)


class TemplateResponder:
    def respond(self, acts: list[DialogueAct], state: DialogueState, user_utterance: str, spec=None) -> str:
        return render_template(acts, state)


class LLMResponder:
    """Chat-endpoint responder (temperature 0.7 by default), template fallback."""

    def __init__(self, client: HttpChatClient, temperature: float = 0.7):
        self.client = client
        self.temperature = temperature

    def respond(self, acts: list[DialogueAct], state: DialogueState, user_utterance: str, spec=None) -> str:
        act_lines = "\n".join(act.canonical_str() for act in acts)
        snapshot = snapshot_for_prompt(state, spec) if spec is not None else ""
        user_text = (
            f"Dialogue acts:\n{act_lines}\n\n"
            f"Worksheet state:\n{snapshot}\n\n"
            f"The user just said: {user_utterance}\n\nReply:"
        )
        try:
            return self.client.complete(
                [
                    {"role": "system", "content": RESPONDER_SYSTEM},
                    {"role": "user", "content": user_text},
                ],
                temperature=self.temperature,
            ).strip()
        except (TransportError, RateLimited, MalformedResponse):
            return render_template(acts, state)


def render_llm(
    acts: list[DialogueAct],
    state: DialogueState,
    user_utterance: str,
    client: HttpChatClient,
    spec=None,
    temperature: float = 0.7,
) -> str:
    return LLMResponder(client, temperature).respond(acts, state, user_utterance, spec)
