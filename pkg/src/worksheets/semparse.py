"""The semantic-parser boundary: statement grammar, prompts, and backends.

The statement language is what a parser backend must produce::

    var.field = value
    var = WorksheetName(field=value, ...)
    WorksheetName(field=value, ...)
    answer("a self-contained question")

Values are literals (string/number/bool/None), bare variable references,
nested constructors, or list/dict literals (needed so state snapshots parse
back). Nested constructors flatten into separate statements, innermost first.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Protocol

import httpx
import jinja2

from . import exprlang
from .errors import (
    ExprSyntaxError,
    MalformedResponse,
    RateLimited,
    ScriptExhausted,
    TransportError,
)
from .spec import TaskSpec, render_for_prompt
from .state import Assign, Construct, DialogueState, Query, TempRef, UpdateStatement, VarToken
from .values import render_value


@dataclass
class ParseIssue:
    line_no: int
    line: str
    message: str


# --- statement parsing ----------------------------------------------------------------


def parse_statements(
    raw: str, spec: TaskSpec | None = None
) -> tuple[list[UpdateStatement], list[ParseIssue]]:
    """Parse backend output line by line; bad lines become issues, not errors."""
    statements: list[UpdateStatement] = []
    issues: list[ParseIssue] = []
    counter = [0]
    for line_no, line in enumerate(_clean_lines(raw), start=1):
        try:
            stmts = _parse_line(line, counter)
        except ExprSyntaxError as exc:
            issues.append(ParseIssue(line_no, line, str(exc)))
            continue
        if spec is not None:
            bad = _unknown_ctor(stmts, spec)
            if bad:
                issues.append(ParseIssue(line_no, line, f"unknown worksheet {bad!r}"))
                continue
        statements.extend(stmts)
    return statements, issues


def _clean_lines(raw: str) -> Iterable[str]:
    for line in raw.splitlines():
        stripped = line.strip()
        if not stripped or stripped.startswith("#") or stripped.startswith("```"):
            continue
        yield stripped


def _unknown_ctor(stmts: list[UpdateStatement], spec: TaskSpec) -> str | None:
    for stmt in stmts:
        if isinstance(stmt, Construct) and spec.worksheet(stmt.ws_name) is None:
            return stmt.ws_name
    return None


def _parse_line(line: str, counter: list[int]) -> list[UpdateStatement]:
    tokens = exprlang.tokenize(line)
    parser = _StmtParser(tokens, counter)
    stmts = parser.parse_line()
    return stmts


class _StmtParser:
    def __init__(self, tokens: list[exprlang.Token], counter: list[int]):
        self.tokens = [t for t in tokens if t.kind != "NEWLINE"]
        self.i = 0
        self.counter = counter
        self.out: list[UpdateStatement] = []

    def peek(self, offset: int = 0) -> exprlang.Token:
        j = min(self.i + offset, len(self.tokens) - 1)
        return self.tokens[j]

    def next(self) -> exprlang.Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, kind: str, text: str | None = None) -> exprlang.Token:
        tok = self.next()
        if tok.kind != kind or (text is not None and tok.text != text):
            raise ExprSyntaxError(f"expected {text or kind!r}, found {tok.text!r}", tok.pos, tok.line)
        return tok

    def at_op(self, text: str, offset: int = 0) -> bool:
        tok = self.peek(offset)
        return tok.kind == "OP" and tok.text == text

    def fresh_temp(self) -> int:
        idx = self.counter[0]
        self.counter[0] += 1
        return idx

    def parse_line(self) -> list[UpdateStatement]:
        first = self.peek()
        if first.kind != "NAME":
            raise ExprSyntaxError(f"statement must start with a name, found {first.text!r}", first.pos, first.line)

        # answer("...") with no assignment
        if first.text == "answer" and self.at_op("(", 1):
            query = self._parse_answer(None)
            self._expect_end()
            return self.out + [query]

        name = self.next().text

        if self.at_op("."):
            self.next()
            fld = self.expect("NAME").text
            self.expect("OP", "=")
            value = self._parse_value()
            self._expect_end()
            return self.out + [Assign(name, fld, value)]

        if self.at_op("="):
            self.next()
            tok = self.peek()
            if tok.kind == "NAME" and tok.text == "answer" and self.at_op("(", 1):
                query = self._parse_answer(name)
                self._expect_end()
                return self.out + [query]
            if tok.kind == "NAME" and self.at_op("(", 1):
                ctor = self._parse_ctor(explicit_var=name)
                self._expect_end()
                return self.out + [ctor]
            # bare-field assignment: resolved against the newest declaring instance
            value = self._parse_value()
            self._expect_end()
            return self.out + [Assign("", name, value)]

        if self.at_op("("):
            self.i -= 1
            ctor = self._parse_ctor(explicit_var=None)
            self._expect_end()
            return self.out + [ctor]

        raise ExprSyntaxError(f"cannot read statement near {first.text!r}", first.pos, first.line)

    def _expect_end(self) -> None:
        tok = self.peek()
        if tok.kind != "EOF":
            raise ExprSyntaxError(f"trailing input {tok.text!r}", tok.pos, tok.line)

    def _parse_answer(self, var: str | None) -> Query:
        self.expect("NAME", "answer")
        self.expect("OP", "(")
        text = self.expect("STRING").text
        self.expect("OP", ")")
        return Query(text=text, var=var)

    def _parse_ctor(self, explicit_var: str | None) -> Construct:
        ws = self.expect("NAME").text
        self.expect("OP", "(")
        pairs: list[tuple[str, Any]] = []
        if not self.at_op(")"):
            while True:
                key = self.expect("NAME").text
                self.expect("OP", "=")
                pairs.append((key, self._parse_value()))
                if self.at_op(","):
                    self.next()
                    continue
                break
        self.expect("OP", ")")
        return Construct(explicit_var, ws, tuple(pairs))

    def _parse_value(self) -> Any:
        tok = self.peek()
        if tok.kind == "STRING":
            self.next()
            return tok.text
        if tok.kind == "NUMBER":
            self.next()
            return float(tok.text) if "." in tok.text else int(tok.text)
        if tok.kind == "OP" and tok.text == "[":
            self.next()
            items: list[Any] = []
            if not self.at_op("]"):
                while True:
                    items.append(self._parse_value())
                    if self.at_op(","):
                        self.next()
                        continue
                    break
            self.expect("OP", "]")
            return items
        if tok.kind == "OP" and tok.text == "{":
            self.next()
            out: dict[str, Any] = {}
            if not self.at_op("}"):
                while True:
                    key = self.expect("STRING").text
                    self.expect("OP", ":")
                    out[key] = self._parse_value()
                    if self.at_op(","):
                        self.next()
                        continue
                    break
            self.expect("OP", "}")
            return out
        if tok.kind == "NAME":
            if tok.text in ("True", "true"):
                self.next()
                return True
            if tok.text in ("False", "false"):
                self.next()
                return False
            if tok.text in ("None", "null"):
                self.next()
                return None
            if tok.text == "answer" and self.at_op("(", 1):
                query = self._parse_answer(None)
                idx = self.fresh_temp()
                self.out.append(Query(query.text, var=None, temp_idx=idx))
                return TempRef(idx)
            if self.at_op("(", 1):
                # nested constructor: flatten, innermost first
                ctor = self._parse_ctor(explicit_var=None)
                idx = self.fresh_temp()
                self.out.append(Construct(ctor.var, ctor.ws_name, ctor.pairs, temp_idx=idx))
                return TempRef(idx)
            self.next()
            return VarToken(tok.text)
        raise ExprSyntaxError(f"cannot read value near {tok.text!r}", tok.pos, tok.line)


# --- statement printing -----------------------------------------------------------------


def print_statements(stmts: list[UpdateStatement]) -> str:
    """Render statements back to source, re-nesting flattened constructors."""
    by_temp: dict[int, UpdateStatement] = {}
    for stmt in stmts:
        idx = getattr(stmt, "temp_idx", None)
        if idx is not None:
            by_temp[idx] = stmt

    def render(value: Any) -> str:
        if isinstance(value, TempRef):
            inner = by_temp.get(value.idx)
            if inner is None:
                return "None"
            return render_stmt(inner, as_value=True)
        if isinstance(value, VarToken):
            return value.name
        if isinstance(value, list):
            return "[" + ", ".join(render(v) for v in value) + "]"
        if isinstance(value, dict):
            return "{" + ", ".join(f"'{k}': {render(v)}" for k, v in value.items()) + "}"
        return render_value(value)

    def render_stmt(stmt: UpdateStatement, as_value: bool = False) -> str:
        if isinstance(stmt, Assign):
            target = f"{stmt.var}.{stmt.field}" if stmt.var else stmt.field
            return f"{target} = {render(stmt.value)}"
        if isinstance(stmt, Construct):
            args = ", ".join(f"{k}={render(v)}" for k, v in stmt.pairs)
            body = f"{stmt.ws_name}({args})"
            if as_value or stmt.var is None:
                return body
            return f"{stmt.var} = {body}"
        if isinstance(stmt, Query):
            body = f'answer("{stmt.text}")'
            if as_value or stmt.var is None:
                return body
            return f"{stmt.var} = {body}"
        raise TypeError(stmt)

    referenced = _temps_referenced(stmts)
    lines = []
    for stmt in stmts:
        idx = getattr(stmt, "temp_idx", None)
        if idx is not None and idx in referenced:
            continue  # inlined into its parent statement
        lines.append(render_stmt(stmt))
    return "\n".join(lines)


def _temps_referenced(stmts: list[UpdateStatement]) -> set[int]:
    used: set[int] = set()

    def walk(value: Any) -> None:
        if isinstance(value, TempRef):
            used.add(value.idx)
        elif isinstance(value, list):
            for v in value:
                walk(v)
        elif isinstance(value, dict):
            for v in value.values():
                walk(v)

    for stmt in stmts:
        if isinstance(stmt, Assign):
            walk(stmt.value)
        elif isinstance(stmt, Construct):
            for _, v in stmt.pairs:
                walk(v)
    return used


# --- prompt assembly ----------------------------------------------------------------------


@dataclass(frozen=True)
class Clock:
    date: str  # ISO date
    day: str  # weekday name


@dataclass(frozen=True)
class FewShot:
    state: str
    acts: str
    agent: str
    user: str
    target: str


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    user_text: str


_SYSTEM_TEMPLATE = jinja2.Template(
    """You are a semantic parser for a task assistant. Translate the user's \
latest message into update statements over the worksheets, given the current \
state. Write one statement per line and nothing else. Use `var.field = value` \
to update a field, `var = WorksheetName(field=value, ...)` to start a new \
worksheet, and `answer("...")` with a self-contained question to query the \
databases. If the user explicitly refuses to provide a value, set it to "NA".

Today's date is {{ date }} and the day is {{ day }}.

These are the APIs available to you:
{{ worksheets }}
Do not assume field values the user has not given.
{% if few_shots %}
Here are some examples:
{% for shot in few_shots %}
State:
```
{{ shot.state }}
```
Agent Action:
```
{{ shot.acts }}
```

Last-turn Conversation:
Agent: {{ shot.agent }}
User: {{ shot.user }}

User Target:
```
{{ shot.target }}
```
--
{% endfor %}{% endif %}""",
    keep_trailing_newline=True,
)

_USER_TEMPLATE = jinja2.Template(
    """State:
```
{{ state }}
```
Agent Action:
```
{{ acts }}
```

Last-turn Conversation:
Agent: {{ agent_utterance }}
User: {{ user_utterance }}

User Target:
"""
)


def render_acts_for_prompt(acts: list) -> str:
    parts = []
    for act in acts:
        text = act.prompt_str() if hasattr(act, "prompt_str") else str(act)
        parts.append(json.dumps(text))
    return "[" + ", ".join(parts) + "]"


def build_prompt(
    spec: TaskSpec,
    state: DialogueState,
    acts: list,
    clock: Clock,
    few_shots: tuple[FewShot, ...] = (),
) -> PromptBundle:
    """Deterministic prompt assembly; equal inputs give byte-identical output."""
    from .state import snapshot_for_prompt  # local import to keep module load light

    system_text = _SYSTEM_TEMPLATE.render(
        date=clock.date,
        day=clock.day,
        worksheets=render_for_prompt(spec),
        few_shots=few_shots,
    )
    user_text = _USER_TEMPLATE.render(
        state=snapshot_for_prompt(state, spec),
        acts=render_acts_for_prompt(acts),
        agent_utterance=state.last_agent_utterance,
        user_utterance=state.last_user_utterance,
    )
    return PromptBundle(system_text=system_text, user_text=user_text)


# --- backends ---------------------------------------------------------------------------------


class ParserBackend(Protocol):
    def parse_turn(self, bundle: PromptBundle, turn_index: int) -> str: ...


class ScriptedParser:
    """Replays a fixed script of raw statement texts, keyed by turn index."""

    def __init__(self, script: dict | list):
        if isinstance(script, list):
            self.script = {i: text for i, text in enumerate(script)}
        else:
            self.script = {int(k): v for k, v in script.items()}

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedParser":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def parse_turn(self, bundle: PromptBundle, turn_index: int) -> str:
        if turn_index not in self.script:
            raise ScriptExhausted(f"no scripted output for turn {turn_index}")
        return self.script[turn_index]


@dataclass
class EndpointConfig:
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-4-turbo"
    api_key_env: str = "OPENAI_API_KEY"
    temperature: float = 0.0
    max_retries: int = 2
    timeout: float = 30.0
    cassette_path: str | None = None
    cassette_mode: str = "off"  # off | replay | record


class HttpChatClient:
    """Minimal chat-completions client with cassette record/replay."""

    def __init__(self, config: EndpointConfig, transport: Callable | None = None):
        self.config = config
        self._transport = transport  # test hook: (url, headers, body) -> dict
        self._cassette: list[dict] | None = None
        if config.cassette_mode in ("replay", "record") and config.cassette_path:
            path = Path(config.cassette_path)
            if path.exists():
                with path.open(encoding="utf-8") as fh:
                    self._cassette = json.load(fh)
            else:
                self._cassette = []

    def _request_body(self, messages: list[dict], temperature: float | None) -> dict:
        return {
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature if temperature is None else temperature,
        }

    def complete(self, messages: list[dict], temperature: float | None = None) -> str:
        body = self._request_body(messages, temperature)
        if self.config.cassette_mode == "replay":
            return self._replay(body)
        text = self._perform(body)
        if self.config.cassette_mode == "record" and self._cassette is not None:
            self._cassette.append({"request": body, "response": text})
            Path(self.config.cassette_path).write_text(
                json.dumps(self._cassette, indent=2), encoding="utf-8"
            )
        return text

    def _replay(self, body: dict) -> str:
        key = json.dumps(body, sort_keys=True)
        for entry in self._cassette or []:
            if json.dumps(entry["request"], sort_keys=True) == key:
                return entry["response"]
        raise TransportError("no cassette entry matches this request")

    def _perform(self, body: dict) -> str:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.config.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        url = f"{self.config.base_url.rstrip('/')}/chat/completions"
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            try:
                if self._transport is not None:
                    payload = self._transport(url, headers, body)
                else:
                    response = httpx.post(url, headers=headers, json=body, timeout=self.config.timeout)
                    if response.status_code == 429:
                        raise RateLimited("endpoint rate limited")
                    if response.status_code >= 400:
                        raise TransportError(f"endpoint returned {response.status_code}")
                    payload = response.json()
                try:
                    return payload["choices"][0]["message"]["content"]
                except (KeyError, IndexError, TypeError) as exc:
                    raise MalformedResponse(f"unexpected response shape: {payload!r}") from exc
            except (RateLimited, TransportError) as exc:
                last_error = exc
                if attempt < self.config.max_retries:
                    time.sleep(min(2**attempt * 0.1, 2.0))
                    continue
                raise
            except httpx.HTTPError as exc:
                last_error = exc
                if attempt < self.config.max_retries:
                    continue
                raise TransportError(str(exc)) from exc
        raise TransportError(str(last_error))


class LLMParser:
    """Parser backend over a chat endpoint; temperature defaults to 0.0."""

    def __init__(self, client: HttpChatClient):
        self.client = client

    def parse_turn(self, bundle: PromptBundle, turn_index: int) -> str:
        return self.client.complete(
            [
                {"role": "system", "content": bundle.system_text},
                {"role": "user", "content": bundle.user_text},
            ]
        )
