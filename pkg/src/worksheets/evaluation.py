"""Transcript metrics and the deterministic replay harness.

Four metrics: parser-choice accuracy (per user turn), execution precision
(per conversation), dialogue-act accuracy (per agent turn, optionally through
an alias table mapping canonical act strings to domain labels), and binary
goal completion. Empty denominators yield None and are excluded from
aggregates rather than counted as zero.
"""

from __future__ import annotations

import datetime as dt
import json
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Any

from .apis import ApiRegistry
from .engine import Engine
from .errors import FixtureError
from .kb import KnowledgeBackend, TableTranslator, load_store
from .policy import ExecutionRecord
from .semparse import Clock, FewShot, ScriptedParser
from .spec import TaskSpec, load_spec
from .state import Construct, Query, UpdateStatement
from .values import REFUSED, Sentinel, VarRefValue


# --- gold annotations -----------------------------------------------------------------


@dataclass(frozen=True)
class GoldTurn:
    user: str
    apis: tuple[str, ...] = ()
    dbs: tuple[str, ...] = ()
    fields: tuple[tuple[str, str, Any], ...] = ()
    acts: tuple[str, ...] = ()
    executions: tuple[dict, ...] = ()

    @property
    def sp_size(self) -> int:
        return len(self.apis) + len(self.dbs) + len(self.fields)


@dataclass(frozen=True)
class GoldAnnotation:
    turns: tuple[GoldTurn, ...]
    goal_api: str | None = None
    goal_params: dict[str, Any] = dc_field(default_factory=dict)
    expected_goal: int | None = None
    aliases: dict[str, list[str]] = dc_field(default_factory=dict)


def load_transcript(path: str | Path) -> GoldAnnotation:
    goal_api = None
    goal_params: dict[str, Any] = {}
    expected_goal = None
    turns: list[GoldTurn] = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            if doc.get("type") == "meta":
                goal = doc.get("goal") or {}
                goal_api = goal.get("api")
                goal_params = goal.get("params") or {}
                expected_goal = doc.get("expected_goal")
            elif doc.get("type") == "turn":
                gold = doc.get("gold") or {}
                turns.append(
                    GoldTurn(
                        user=doc.get("user", ""),
                        apis=tuple(gold.get("apis") or ()),
                        dbs=tuple(gold.get("dbs") or ()),
                        fields=tuple(tuple(f) for f in gold.get("fields") or ()),
                        acts=tuple(gold.get("acts") or ()),
                        executions=tuple(gold.get("executions") or ()),
                    )
                )
            else:
                raise FixtureError(f"unknown transcript line type: {doc.get('type')!r}")
    return GoldAnnotation(tuple(turns), goal_api, goal_params, expected_goal)


# --- turn records -----------------------------------------------------------------------


@dataclass
class TurnRecord:
    user: str
    statements: list[UpdateStatement] = dc_field(default_factory=list)
    applied: list[tuple[str, str, Any]] = dc_field(default_factory=list)
    acts: list[str] = dc_field(default_factory=list)
    executions: list[ExecutionRecord] = dc_field(default_factory=list)
    utterance: str = ""

    def to_json(self) -> dict:
        return {
            "user": self.user,
            "apis": self.predicted_apis(),
            "dbs": self.predicted_dbs(),
            "fields": [[v, f, normalize(value)] for v, f, value in self.applied],
            "acts": list(self.acts),
            "executions": [
                {
                    "kind": e.kind,
                    "name": e.name,
                    "query": e.query,
                    "params": {k: normalize(v) for k, v in e.params},
                }
                for e in self.executions
            ],
            "utterance": self.utterance,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TurnRecord":
        record = cls(user=doc.get("user", ""))
        record._apis = list(doc.get("apis") or [])
        record._dbs = list(doc.get("dbs") or [])
        record.applied = [tuple(f) for f in doc.get("fields") or []]
        record.acts = list(doc.get("acts") or [])
        record.executions = [
            ExecutionRecord(
                kind=e.get("kind", "api"),
                name=e.get("name", ""),
                query=e.get("query"),
                params=tuple((e.get("params") or {}).items()),
            )
            for e in doc.get("executions") or []
        ]
        record.utterance = doc.get("utterance", "")
        return record

    def predicted_apis(self) -> list[str]:
        if hasattr(self, "_apis"):
            return list(self._apis)
        return [s.ws_name for s in self.statements if isinstance(s, Construct)]

    def predicted_dbs(self) -> list[str]:
        if hasattr(self, "_dbs"):
            return list(self._dbs)
        return [s.text for s in self.statements if isinstance(s, Query)]


# --- value normalization ------------------------------------------------------------------


def normalize(value: Any) -> Any:
    """Canonical comparison form shared by gold JSON values and runtime values."""
    if isinstance(value, Sentinel):
        return "NA" if value is REFUSED else None
    if isinstance(value, VarRefValue):
        return value.name
    if isinstance(value, bool):
        return value
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, dt.datetime):
        return value.date().isoformat()
    if isinstance(value, dt.date):
        return value.isoformat()
    if isinstance(value, dt.time):
        return value.strftime("%H:%M")
    if isinstance(value, dict):
        first = next(iter(value.values()), None)
        return normalize(first)
    if isinstance(value, (list, tuple)):
        return tuple(normalize(v) for v in value)
    return value


def _multiset_matches(gold: list, predicted: list) -> int:
    """Greedy multiset intersection size."""
    remaining = list(predicted)
    matched = 0
    for item in gold:
        if item in remaining:
            remaining.remove(item)
            matched += 1
    return matched


# --- the four metrics ------------------------------------------------------------------------


def sp_accuracy(gold: GoldTurn, record: TurnRecord) -> float | None:
    """Matched parser choices / m over apis, dbs, and (var, field, value) fills."""
    m = gold.sp_size
    if m == 0:
        return None
    matched = _multiset_matches(list(gold.apis), record.predicted_apis())
    matched += _multiset_matches(list(gold.dbs), record.predicted_dbs())
    gold_fields = [(v, f, normalize(value)) for v, f, value in gold.fields]
    pred_fields = [(v, f, normalize(value)) for v, f, value in record.applied]
    matched += _multiset_matches(gold_fields, pred_fields)
    return matched / m


def _execution_matches(gold_item: dict, execution: ExecutionRecord) -> bool:
    if gold_item.get("kind") != execution.kind:
        return False
    if execution.kind == "db":
        return (gold_item.get("query") or "") == (execution.query or "")
    if gold_item.get("name") != execution.name:
        return False
    params = dict(execution.params)
    for key, expected in (gold_item.get("params") or {}).items():
        if key not in params or normalize(params[key]) != normalize(expected):
            return False
    return True


def ex_accuracy(gold_turns: list[GoldTurn], records: list[TurnRecord]) -> float | None:
    """True positives / all executions across the conversation."""
    gold_items = [dict(item) for turn in gold_turns for item in turn.executions]
    executions = [e for record in records for e in record.executions]
    if not executions:
        return None
    tp = 0
    remaining = list(gold_items)
    for execution in executions:
        hit = next((g for g in remaining if _execution_matches(g, execution)), None)
        if hit is not None:
            remaining.remove(hit)
            tp += 1
    return tp / len(executions)


def da_accuracy(
    gold_acts: list[str], emitted_acts: list[str], aliases: dict[str, list[str]] | None = None
) -> float | None:
    """Matched acts / m, order-insensitive, through the optional alias table."""
    if not gold_acts:
        return None
    aliases = aliases or {}
    label_sets = []
    for act in emitted_acts:
        labels = set(aliases.get(act, []))
        labels.add(act)
        label_sets.append(labels)
    matched = 0
    used = [False] * len(label_sets)
    for gold in gold_acts:
        for i, labels in enumerate(label_sets):
            if not used[i] and gold in labels:
                used[i] = True
                matched += 1
                break
    return matched / len(gold_acts)


def goal_completion(
    goal_api: str | None, goal_params: dict[str, Any], records: list[TurnRecord]
) -> int:
    """1 iff the terminal api ran with every expected parameter value."""
    if goal_api is None:
        return 0
    for record in records:
        for execution in record.executions:
            if execution.kind != "api" or execution.name != goal_api:
                continue
            params = dict(execution.params)
            if all(
                key in params and normalize(params[key]) == normalize(expected)
                for key, expected in goal_params.items()
            ):
                return 1
    return 0


# --- aggregate report --------------------------------------------------------------------------


@dataclass
class Report:
    fixture: str
    turns: list[dict]
    metrics: dict[str, float | None]
    runtime_seconds: float
    thresholds: dict[str, float] = dc_field(default_factory=dict)

    def failures(self) -> list[str]:
        out = []
        for name, minimum in self.thresholds.items():
            value = self.metrics.get(name)
            if value is None or value < minimum:
                out.append(f"{name} = {value} < {minimum}")
        return out

    def to_json(self) -> str:
        return json.dumps(
            {
                "fixture": self.fixture,
                "metrics": self.metrics,
                "turns": self.turns,
                "runtime_seconds": round(self.runtime_seconds, 3),
            },
            sort_keys=True,
            indent=2,
        )

    def to_table(self) -> str:
        lines = [f"fixture: {self.fixture}"]
        name_width = max(len(k) for k in self.metrics)
        for name, value in self.metrics.items():
            shown = "n/a" if value is None else f"{value:.3f}"
            lines.append(f"  {name.ljust(name_width)}  {shown}")
        for failure in self.failures():
            lines.append(f"  FAIL {failure}")
        return "\n".join(lines)


def score_records(
    gold: GoldAnnotation,
    records: list[TurnRecord],
    fixture_name: str = "records",
    runtime: float = 0.0,
    thresholds: dict[str, float] | None = None,
    aliases: dict[str, list[str]] | None = None,
) -> Report:
    aliases = aliases if aliases is not None else gold.aliases
    turns = []
    sp_scores: list[float] = []
    da_scores: list[float] = []
    sp_pool = [0, 0]  # matched, m (for the micro aggregate)
    da_pool = [0, 0]
    for i, (gold_turn, record) in enumerate(zip(gold.turns, records)):
        sp = sp_accuracy(gold_turn, record)
        da = da_accuracy(list(gold_turn.acts), record.acts, aliases)
        if sp is not None:
            sp_scores.append(sp)
            sp_pool[0] += round(sp * gold_turn.sp_size)
            sp_pool[1] += gold_turn.sp_size
        if da is not None:
            da_scores.append(da)
            da_pool[0] += round(da * len(gold_turn.acts))
            da_pool[1] += len(gold_turn.acts)
        turns.append(
            {
                "turn": i,
                "user": gold_turn.user,
                "sp_accuracy": sp,
                "da_accuracy": da,
                "acts": list(record.acts),
                "executions": [e.canonical_str() for e in record.executions],
            }
        )
    ex = ex_accuracy(list(gold.turns), records)
    goal = goal_completion(gold.goal_api, gold.goal_params, records)
    # macro = mean of per-turn scores; micro = pooled counts across turns
    metrics: dict[str, float | None] = {
        "sp_accuracy": sum(sp_scores) / len(sp_scores) if sp_scores else None,
        "sp_accuracy_micro": sp_pool[0] / sp_pool[1] if sp_pool[1] else None,
        "ex_accuracy": ex,
        "da_accuracy": sum(da_scores) / len(da_scores) if da_scores else None,
        "da_accuracy_micro": da_pool[0] / da_pool[1] if da_pool[1] else None,
        "goal_completion": float(goal),
    }
    return Report(
        fixture=fixture_name,
        turns=turns,
        metrics=metrics,
        runtime_seconds=runtime,
        thresholds=thresholds or {},
    )


# --- fixture bundles & replay ----------------------------------------------------------------------


@dataclass
class FixtureBundle:
    root: Path
    spec: TaskSpec
    gold: GoldAnnotation
    script: dict
    clock: Clock
    seed: int
    thresholds: dict[str, float]
    kb_dir: Path | None = None
    translations: Path | None = None
    aliases: dict[str, list[str]] = dc_field(default_factory=dict)
    few_shots: tuple[FewShot, ...] = ()


def load_fixture(root: str | Path) -> FixtureBundle:
    root = Path(root)
    manifest_path = root / "fixture.json" if root.is_dir() else root
    root = manifest_path.parent
    if not manifest_path.exists():
        raise FixtureError(f"no fixture manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    try:
        spec_doc = json.loads((root / manifest["spec"]).read_text(encoding="utf-8"))
        spec = load_spec(spec_doc)
        gold = load_transcript(root / manifest["transcript"])
        script = json.loads((root / manifest["script"]).read_text(encoding="utf-8"))
    except (KeyError, OSError, json.JSONDecodeError) as exc:
        raise FixtureError(f"incomplete fixture bundle at {root}: {exc}") from exc
    aliases: dict[str, list[str]] = {}
    if manifest.get("aliases"):
        aliases = json.loads((root / manifest["aliases"]).read_text(encoding="utf-8"))
    clock_doc = manifest.get("clock") or {}
    clock = Clock(date=clock_doc.get("date", "2024-01-01"), day=clock_doc.get("day", "Monday"))
    few_shots: tuple[FewShot, ...] = ()
    if manifest.get("few_shots"):
        shots = json.loads((root / manifest["few_shots"]).read_text(encoding="utf-8"))
        few_shots = tuple(FewShot(**shot) for shot in shots)
    return FixtureBundle(
        root=root,
        spec=spec,
        gold=gold,
        script=script,
        clock=clock,
        seed=int(manifest.get("seed", 0)),
        thresholds=manifest.get("thresholds") or {},
        kb_dir=(root / manifest["kb_dir"]) if manifest.get("kb_dir") else None,
        translations=(root / manifest["translations"]) if manifest.get("translations") else None,
        aliases=aliases,
        few_shots=few_shots,
    )


def build_engine(bundle: FixtureBundle, event_log=None) -> Engine:
    kb = None
    if bundle.kb_dir is not None:
        store = load_store(bundle.spec, bundle.kb_dir)
        translator = (
            TableTranslator.from_file(bundle.translations)
            if bundle.translations is not None
            else TableTranslator({})
        )
        kb = KnowledgeBackend(bundle.spec, store, translator)
    return Engine(
        bundle.spec,
        parser=ScriptedParser(bundle.script),
        kb=kb,
        apis=ApiRegistry(bundle.spec, seed=bundle.seed),
        clock=bundle.clock,
        few_shots=bundle.few_shots,
        event_log=event_log,
    )


def replay(bundle: FixtureBundle | str | Path) -> tuple[Report, list[TurnRecord]]:
    """Run the fixture conversation with deterministic backends and score it."""
    if not isinstance(bundle, FixtureBundle):
        bundle = load_fixture(bundle)
    start = time.perf_counter()
    engine = build_engine(bundle)
    engine.open()
    records: list[TurnRecord] = []
    for gold_turn in bundle.gold.turns:
        result = engine.take_turn(gold_turn.user)
        records.append(
            TurnRecord(
                user=gold_turn.user,
                statements=result.statements,
                applied=result.report.applied if result.report else [],
                acts=result.act_strings,
                executions=result.executions,
                utterance=result.utterance,
            )
        )
    runtime = time.perf_counter() - start
    report = score_records(
        bundle.gold,
        records,
        fixture_name=bundle.spec.name,
        runtime=runtime,
        thresholds=bundle.thresholds,
        aliases=bundle.aliases,
    )
    return report, records


def write_records(records: list[TurnRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_json(), sort_keys=True, default=str) + "\n")


def read_records(path: str | Path) -> list[TurnRecord]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(TurnRecord.from_json(json.loads(line)))
    return out
