"""Runtime values: fill sentinels, instance references, and literal rendering.

The statement language and state snapshots share one literal syntax, so the
renderer here is the single source of truth for how values are written out
(and `semparse` guarantees the reverse direction).
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from typing import Any


class Sentinel:
    __slots__ = ("name",)

    def __init__(self, name: str):
        self.name = name

    def __repr__(self) -> str:
        return self.name

    def __deepcopy__(self, memo):
        return self


#: Field has no value yet.
EMPTY = Sentinel("EMPTY")
#: The user explicitly declined to provide the value (surface form "NA").
REFUSED = Sentinel("REFUSED")

#: Surface spelling of a refusal in the statement language.
REFUSAL_TOKEN = "NA"


@dataclass(frozen=True)
class VarRefValue:
    """A slot value that points at another worksheet instance by var name."""

    name: str


def quote(text: str) -> str:
    escaped = text.replace("\\", "\\\\").replace("'", "\\'")
    return f"'{escaped}'"


def render_value(value: Any) -> str:
    """Render a runtime value as a statement-language literal."""
    if value is EMPTY or value is None:
        return "None"
    if value is REFUSED:
        return quote(REFUSAL_TOKEN)
    if isinstance(value, VarRefValue):
        return value.name
    if isinstance(value, bool):
        return "True" if value else "False"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, dt.date):
        return quote(value.isoformat())
    if isinstance(value, dt.time):
        return quote(value.strftime("%H:%M"))
    if isinstance(value, str):
        return quote(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(render_value(v) for v in value) + "]"
    if isinstance(value, dict):
        inner = ", ".join(f"{quote(str(k))}: {render_value(v)}" for k, v in value.items())
        return "{" + inner + "}"
    return quote(str(value))


def parse_date(text: str) -> dt.date:
    """Accept ISO dates plus the US MM/DD/YYYY spelling."""
    text = text.strip()
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        pass
    parts = text.split("/")
    if len(parts) == 3:
        month, day, year = parts
        return dt.date(int(year), int(month), int(day))
    raise ValueError(f"not a date: {text!r}")


def parse_time(text: str) -> dt.time:
    """Accept HH:MM[:SS] plus '7 pm' style clock times."""
    text = text.strip().lower()
    suffix = None
    for marker in ("am", "pm"):
        if text.endswith(marker):
            suffix = marker
            text = text[: -len(marker)].strip()
    pieces = text.split(":")
    if not 1 <= len(pieces) <= 3 or not all(p.strip().isdigit() for p in pieces):
        raise ValueError(f"not a time: {text!r}")
    nums = [int(p) for p in pieces]
    hour = nums[0]
    minute = nums[1] if len(nums) > 1 else 0
    second = nums[2] if len(nums) > 2 else 0
    if suffix == "pm" and hour < 12:
        hour += 12
    if suffix == "am" and hour == 12:
        hour = 0
    return dt.time(hour, minute, second)
