"""Developer API registry: host-function bindings and deterministic stubs."""

from __future__ import annotations

import random
import uuid
from typing import Any, Callable

from .errors import ApiFailure, ArityMismatchError, StubFailure, UnknownApiError
from .spec import TaskSpec
from .values import EMPTY, REFUSED, Sentinel


class ApiRegistry:
    """Resolves `call` statements against declared APIs.

    Stub results come from a template in the declaration; `{uuid}` placeholders
    draw from a seeded RNG so replays of a session are bit-identical.
    """

    def __init__(
        self,
        spec: TaskSpec,
        host_functions: dict[str, Callable] | None = None,
        seed: int = 0,
    ):
        self.spec = spec
        self.host_functions = host_functions or {}
        self.seed = seed
        self.rng = random.Random(seed)
        self._fail_counts: dict[str, int] = {}

    def reset(self) -> None:
        """Rewind the RNG and failure counters (used when replaying a log)."""
        self.rng = random.Random(self.seed)
        self._fail_counts = {}

    def call(self, name: str, kwargs: dict[str, Any]) -> Any:
        decl = self.spec.api(name)
        if decl is None:
            raise UnknownApiError(f"unknown api {name!r}")
        declared = {p.name for p in decl.params}
        unknown = [k for k in kwargs if k not in declared]
        if unknown:
            raise ArityMismatchError(f"{name}() has no parameter {unknown[0]!r}")
        if decl.host is not None:
            fn = self.host_functions.get(decl.host)
            if fn is None:
                raise UnknownApiError(f"host function {decl.host!r} is not registered")
            try:
                return fn(**{k: _plain(v) for k, v in kwargs.items()})
            except Exception as exc:
                raise ApiFailure(f"{name}() failed: {exc}") from exc
        stub = decl.stub or {}
        fail_times = stub.get("fail_times")
        if "result" not in stub:
            raise StubFailure(stub.get("error", f"{name}() is configured to fail"))
        if fail_times:
            count = self._fail_counts.get(name, 0)
            self._fail_counts[name] = count + 1
            if count < int(fail_times):
                raise StubFailure(stub.get("error", f"{name}() failed"))
        return self._fill_template(stub["result"], kwargs)

    def _fill_template(self, template: Any, kwargs: dict[str, Any]) -> Any:
        if isinstance(template, str):
            out = template
            if "{uuid}" in out:
                out = out.replace("{uuid}", str(uuid.UUID(int=self.rng.getrandbits(128), version=4)))
            for key, value in kwargs.items():
                out = out.replace("{" + key + "}", _display(value))
            return out
        if isinstance(template, list):
            return [self._fill_template(t, kwargs) for t in template]
        if isinstance(template, dict):
            return {k: self._fill_template(v, kwargs) for k, v in template.items()}
        return template


def _plain(value: Any) -> Any:
    if isinstance(value, Sentinel):
        return None
    return value


def _display(value: Any) -> str:
    if value is EMPTY:
        return ""
    if value is REFUSED:
        return "NA"
    if isinstance(value, dict):
        first = next(iter(value.values()), "")
        return str(first)
    return str(value)
