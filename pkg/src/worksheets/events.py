"""Append-only JSONL event log per session; replaying one rebuilds the state.

Events carry everything observable about a turn (applied updates, effects,
acts, utterances). Reconstruction re-runs the engine over the recorded raw
parser outputs, which is bit-exact because every backend in a recorded
session is deterministic given the logged seed.
"""

from __future__ import annotations

import datetime as dt
import json
from pathlib import Path
from typing import Any, Iterable, IO


class EventLog:
    def __init__(self, path: str | Path | None = None, redact_fields: set[str] | None = None):
        self.path = Path(path) if path is not None else None
        self.redact_fields = redact_fields or set()
        self.events: list[dict] = []
        self._fh: IO[str] | None = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = self.path.open("a", encoding="utf-8")

    def append(self, event: dict) -> None:
        event = self._redact(event)
        self.events.append(event)
        if self._fh is not None:
            self._fh.write(json.dumps(event, default=_default) + "\n")
            self._fh.flush()

    def _redact(self, event: dict) -> dict:
        if not self.redact_fields or event.get("e") != "update":
            return event
        if event.get("field") in self.redact_fields:
            event = dict(event)
            event["value"] = "[REDACTED]"
        return event

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def _default(value: Any) -> Any:
    if isinstance(value, (dt.date, dt.time)):
        return value.isoformat()
    return repr(value)


def read_events(path: str | Path) -> list[dict]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def user_turns(events: Iterable[dict]) -> list[dict]:
    return [e for e in events if e.get("e") == "user"]
