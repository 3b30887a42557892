"""Session-oriented HTTP chat service over the engine.

Three endpoints: create a session, take a turn, read a session. Turns on one
session are serialized with a per-session lock; sessions persist as JSONL
event logs under the data directory and can be rebuilt from them.
"""

from __future__ import annotations

import json
import os
import threading
import time
import uuid
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Any

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .apis import ApiRegistry
from .engine import Engine, rebuild_from_events
from .errors import (
    BackendInitError,
    SessionNotFound,
    UnknownSpecError,
    WorksheetError,
)
from .events import EventLog, read_events
from .kb import KnowledgeBackend, TableTranslator, load_store
from .respond import LLMResponder, TemplateResponder
from .semparse import Clock, EndpointConfig, FewShot, HttpChatClient, LLMParser, ScriptedParser
from .spec import load_spec
from .state import snapshot_for_prompt
from .values import EMPTY, Sentinel, VarRefValue

FIXTURES_DIR = Path(__file__).parent / "fixtures"


@dataclass
class ServiceConfig:
    data_dir: Path = Path("./data")
    spec_dirs: list[Path] = dc_field(default_factory=list)
    redact_fields: set[str] = dc_field(default_factory=set)
    busy_returns_409: bool = False
    llm: EndpointConfig = dc_field(default_factory=EndpointConfig)
    frontend_dir: Path | None = None

    @classmethod
    def from_file(cls, path: str | Path) -> "ServiceConfig":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        config = cls()
        if "data_dir" in doc:
            config.data_dir = Path(doc["data_dir"])
        config.spec_dirs = [Path(p) for p in doc.get("spec_dirs", [])]
        config.redact_fields = set(doc.get("redact_fields", []))
        config.busy_returns_409 = bool(doc.get("busy_returns_409", False))
        if "llm" in doc:
            config.llm = EndpointConfig(**doc["llm"])
        if doc.get("frontend_dir"):
            config.frontend_dir = Path(doc["frontend_dir"])
        config.apply_env_overrides()
        return config

    def apply_env_overrides(self) -> None:
        if os.environ.get("WORKSHEETS_DATA_DIR"):
            self.data_dir = Path(os.environ["WORKSHEETS_DATA_DIR"])
        if os.environ.get("WORKSHEETS_LLM_BASE_URL"):
            self.llm.base_url = os.environ["WORKSHEETS_LLM_BASE_URL"]
        if os.environ.get("WORKSHEETS_LLM_MODEL"):
            self.llm.model = os.environ["WORKSHEETS_LLM_MODEL"]


def find_spec_bundle(name: str, spec_dirs: list[Path]) -> Path:
    """Locate a spec bundle directory by name (bundled fixtures included)."""
    candidates = list(spec_dirs) + [FIXTURES_DIR]
    for base in candidates:
        direct = base / name
        if direct.is_dir() and (direct / "spec.json").exists():
            return direct
    raise UnknownSpecError(f"unknown spec {name!r}")


@dataclass
class Session:
    id: str
    spec_name: str
    engine: Engine
    lock: threading.Lock = dc_field(default_factory=threading.Lock)
    transcript: list[dict] = dc_field(default_factory=list)
    created_at: float = dc_field(default_factory=time.time)
    updated_at: float = dc_field(default_factory=time.time)


class SessionManager:
    def __init__(self, config: ServiceConfig):
        self.config = config
        self.sessions: dict[str, Session] = {}
        self._registry_lock = threading.Lock()

    def _build_engine(self, bundle_dir: Path, backends: dict, log: EventLog) -> Engine:
        spec_doc = json.loads((bundle_dir / "spec.json").read_text(encoding="utf-8"))
        spec = load_spec(spec_doc)
        seed = int(backends.get("seed", 0))

        parser_kind = str(backends.get("parser", "scripted"))
        if parser_kind.startswith("scripted"):
            _, _, script_path = parser_kind.partition(":")
            if script_path:
                parser = ScriptedParser.from_file(script_path)
            elif (bundle_dir / "script.json").exists():
                parser = ScriptedParser.from_file(bundle_dir / "script.json")
            else:
                raise BackendInitError("scripted parser needs a script file")
        elif parser_kind == "llm":
            parser = LLMParser(HttpChatClient(self.config.llm))
        else:
            raise BackendInitError(f"unknown parser backend {parser_kind!r}")

        responder_kind = str(backends.get("responder", "template"))
        if responder_kind == "template":
            responder = TemplateResponder()
        elif responder_kind == "llm":
            responder = LLMResponder(HttpChatClient(self.config.llm))
        else:
            raise BackendInitError(f"unknown responder backend {responder_kind!r}")

        kb = None
        kb_dir = bundle_dir / "kb"
        if kb_dir.is_dir() and spec.kb_schemas:
            store = load_store(spec, kb_dir)
            translations = bundle_dir / "translations.json"
            translator = (
                TableTranslator.from_file(translations)
                if translations.exists()
                else TableTranslator({})
            )
            kb = KnowledgeBackend(spec, store, translator)

        clock = Clock(date="2024-02-10", day="Saturday")
        manifest = bundle_dir / "fixture.json"
        few_shots: tuple[FewShot, ...] = ()
        if manifest.exists():
            doc = json.loads(manifest.read_text(encoding="utf-8"))
            clock_doc = doc.get("clock") or {}
            clock = Clock(
                date=clock_doc.get("date", clock.date), day=clock_doc.get("day", clock.day)
            )
            if "seed" in doc and "seed" not in backends:
                seed = int(doc["seed"])
        return Engine(
            spec,
            parser=parser,
            responder=responder,
            kb=kb,
            apis=ApiRegistry(spec, seed=seed),
            clock=clock,
            few_shots=few_shots,
            event_log=log,
        )

    def create(self, spec_name: str, backends: dict | None) -> tuple[Session, str | None]:
        backends = backends or {}
        bundle_dir = find_spec_bundle(spec_name, self.config.spec_dirs)
        session_id = uuid.uuid4().hex
        log_path = self.config.data_dir / "sessions" / f"{session_id}.jsonl"
        log = EventLog(log_path, redact_fields=self.config.redact_fields)
        log.append(
            {"e": "session", "id": session_id, "spec": spec_name, "backends": backends}
        )
        try:
            engine = self._build_engine(bundle_dir, backends, log)
        except WorksheetError:
            raise
        except Exception as exc:
            raise BackendInitError(str(exc)) from exc
        session = Session(id=session_id, spec_name=spec_name, engine=engine)
        greeting = engine.open()
        if greeting is not None:
            session.transcript.append({"speaker": "agent", "text": greeting})
        with self._registry_lock:
            self.sessions[session_id] = session
        return session, greeting

    def get(self, session_id: str) -> Session:
        with self._registry_lock:
            session = self.sessions.get(session_id)
        if session is None:
            raise SessionNotFound(f"no session {session_id!r}")
        return session

    def rebuild(self, session_id: str) -> Session:
        """Reconstruct a session from its event log (crash recovery)."""
        log_path = self.config.data_dir / "sessions" / f"{session_id}.jsonl"
        if not log_path.exists():
            raise SessionNotFound(f"no event log for session {session_id!r}")
        events = read_events(log_path)
        header = next((e for e in events if e.get("e") == "session"), None)
        if header is None:
            raise SessionNotFound(f"event log for {session_id!r} has no session header")
        bundle_dir = find_spec_bundle(header["spec"], self.config.spec_dirs)
        engine = self._build_engine(bundle_dir, header.get("backends") or {}, EventLog())
        rebuilt = rebuild_from_events(
            events, engine.spec, engine.kb, engine.apis, engine.clock, engine.few_shots
        )
        # restore the configured backends and keep appending to the same log
        rebuilt.parser = engine.parser
        rebuilt.responder = engine.responder
        rebuilt.log = EventLog(log_path, redact_fields=self.config.redact_fields)
        session = Session(id=session_id, spec_name=header["spec"], engine=rebuilt)
        with self._registry_lock:
            self.sessions[session_id] = session
        return session


def render_state(engine: Engine) -> dict:
    return {
        "snapshot": snapshot_for_prompt(engine.state, engine.spec),
        "turn_index": engine.state.turn_index,
        "instances": [
            {
                "var": inst.var_name,
                "worksheet": inst.spec_ref,
                "kind": inst.kind,
                "completed": inst.completed,
                "result": _json_safe(inst.result),
                "fields": [
                    {
                        "name": name,
                        "value": _json_safe(slot.value),
                        "filled": slot.value is not EMPTY,
                        "confirmed": slot.confirmed,
                    }
                    for name, slot in inst.slots.items()
                ],
            }
            for inst in engine.state.instances
        ],
    }


def _json_safe(value: Any) -> Any:
    if isinstance(value, Sentinel):
        return None if value is EMPTY else "NA"
    if isinstance(value, VarRefValue):
        return value.name
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if hasattr(value, "isoformat"):
        return value.isoformat()
    return value


class CreateSessionBody(BaseModel):
    spec: str
    backends: dict | None = None


class TurnBody(BaseModel):
    utterance: str


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig()
    app = FastAPI(title="worksheets", version="0.1.0")
    from fastapi.middleware.cors import CORSMiddleware

    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    manager = SessionManager(config)
    app.state.manager = manager

    def error(code: str, message: str, status: int) -> JSONResponse:
        return JSONResponse({"code": code, "message": message}, status_code=status)

    @app.post("/api/sessions")
    def create_session(body: CreateSessionBody):
        try:
            session, greeting = manager.create(body.spec, body.backends)
        except UnknownSpecError as exc:
            return error("unknown_spec", str(exc), 404)
        except WorksheetError as exc:
            return error("backend_init", str(exc), 400)
        payload: dict[str, Any] = {"session_id": session.id}
        if greeting is not None:
            payload["greeting"] = greeting
        return payload

    @app.post("/api/sessions/{session_id}/turns")
    def take_turn(session_id: str, body: TurnBody):
        try:
            session = manager.get(session_id)
        except SessionNotFound as exc:
            return error("session_not_found", str(exc), 404)
        if config.busy_returns_409:
            acquired = session.lock.acquire(blocking=False)
            if not acquired:
                return error("busy", "a turn is already in flight for this session", 409)
        else:
            session.lock.acquire()
        try:
            session.transcript.append({"speaker": "user", "text": body.utterance})
            result = session.engine.take_turn(body.utterance)
            session.transcript.append({"speaker": "agent", "text": result.utterance})
            session.updated_at = time.time()
            return {
                "reply": result.utterance,
                "acts": result.act_strings,
                "executions": [
                    {"kind": e.kind, "text": e.canonical_str()} for e in result.executions
                ],
                "state": render_state(session.engine),
                "error": result.error,
            }
        finally:
            session.lock.release()

    @app.get("/api/sessions/{session_id}")
    def get_state(session_id: str):
        try:
            session = manager.get(session_id)
        except SessionNotFound as exc:
            return error("session_not_found", str(exc), 404)
        return {
            "session_id": session.id,
            "spec": session.spec_name,
            "created_at": session.created_at,
            "updated_at": session.updated_at,
            "state": render_state(session.engine),
            "transcript": session.transcript,
        }

    frontend = config.frontend_dir
    if frontend is not None and frontend.is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=frontend, html=True), name="webchat")

    return app
