"""Operator entry points.

Exit codes: 0 success, 1 usage error, 2 validation failure, 3 a replay or
score fell below its thresholds.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import evaluation
from .apis import ApiRegistry
from .engine import Engine
from .errors import WorksheetError
from .kb import KnowledgeBackend, TableTranslator, load_store
from .respond import LLMResponder, TemplateResponder
from .semparse import Clock, EndpointConfig, HttpChatClient, LLMParser, ScriptedParser
from .spec import import_sheet_csv, load_spec

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_THRESHOLD = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="worksheets", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("validate", help="load and validate a spec document")
    p.add_argument("spec", help="path to a canonical spec JSON file")

    p = sub.add_parser("import-sheet", help="translate a CSV sheet into a canonical spec")
    p.add_argument("sheet", help="path to the CSV sheet")
    p.add_argument("--name", default="imported", help="name for the resulting spec")
    p.add_argument("--out", help="write the document here instead of stdout")

    p = sub.add_parser("chat", help="interactive read-eval loop over one session")
    p.add_argument("--spec", required=True, help="spec JSON file or fixture directory")
    p.add_argument("--kb-dir", help="directory with the spec's data files")
    p.add_argument("--translations", help="table-translator mapping file")
    p.add_argument("--parser", default="llm", help="scripted:FILE or llm")
    p.add_argument("--responder", default="template", choices=["template", "llm"])
    p.add_argument("--seed", type=int, default=0, help="stub RNG seed")
    p.add_argument("--date", default="2024-02-10", help="clock date shown to the parser")
    p.add_argument("--day", default="Saturday", help="clock weekday shown to the parser")
    p.add_argument("--base-url", help="chat endpoint base URL for llm backends")
    p.add_argument("--model", help="model name for llm backends")

    p = sub.add_parser("serve", help="run the HTTP chat service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--config", help="service config JSON file")
    p.add_argument("--data-dir", help="session event-log directory")
    p.add_argument("--frontend", help="directory with a built web client")

    p = sub.add_parser("replay", help="replay a fixture and score it")
    p.add_argument("fixture", help="fixture directory or manifest file")
    p.add_argument("--json", action="store_true", help="machine-readable report")
    p.add_argument("--records-out", help="write per-turn records JSONL here")

    p = sub.add_parser("score", help="score recorded turns against a gold transcript")
    p.add_argument("--records", required=True, help="records JSONL from replay")
    p.add_argument("--transcript", required=True, help="gold transcript JSONL")
    p.add_argument("--aliases", help="act alias table JSON")
    p.add_argument("--json", action="store_true", help="machine-readable report")
    p.add_argument("--threshold", action="append", default=[], metavar="METRIC=MIN")

    return parser


def _cmd_validate(args) -> int:
    try:
        doc = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        spec = load_spec(doc)
    except (OSError, json.JSONDecodeError, WorksheetError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    stats = spec.stats()
    print(
        f"ok: {spec.name} (worksheets={stats.worksheets}, fields={stats.fields}, "
        f"dbs={stats.dbs}, predicates={stats.predicates}, actions={stats.actions})"
    )
    return EXIT_OK


def _cmd_import_sheet(args) -> int:
    try:
        text = Path(args.sheet).read_text(encoding="utf-8")
        doc = import_sheet_csv(text, name=args.name)
    except (OSError, WorksheetError) as exc:
        print(f"import failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    rendered = json.dumps(doc, indent=2)
    if args.out:
        Path(args.out).write_text(rendered + "\n", encoding="utf-8")
    else:
        print(rendered)
    return EXIT_OK


def _build_chat_engine(args) -> Engine:
    spec_path = Path(args.spec)
    bundle_dir = spec_path if spec_path.is_dir() else spec_path.parent
    spec_file = spec_path / "spec.json" if spec_path.is_dir() else spec_path
    spec = load_spec(json.loads(spec_file.read_text(encoding="utf-8")))

    endpoint = EndpointConfig()
    if args.base_url:
        endpoint.base_url = args.base_url
    if args.model:
        endpoint.model = args.model

    if args.parser.startswith("scripted"):
        _, _, path = args.parser.partition(":")
        script = path or (bundle_dir / "script.json")
        parser = ScriptedParser.from_file(script)
    else:
        parser = LLMParser(HttpChatClient(endpoint))

    responder = TemplateResponder() if args.responder == "template" else LLMResponder(
        HttpChatClient(endpoint)
    )

    kb = None
    kb_dir = Path(args.kb_dir) if args.kb_dir else bundle_dir / "kb"
    if spec.kb_schemas and kb_dir.is_dir():
        store = load_store(spec, kb_dir)
        translations = (
            Path(args.translations) if args.translations else bundle_dir / "translations.json"
        )
        translator = (
            TableTranslator.from_file(translations) if translations.exists() else TableTranslator({})
        )
        kb = KnowledgeBackend(spec, store, translator)

    return Engine(
        spec,
        parser=parser,
        responder=responder,
        kb=kb,
        apis=ApiRegistry(spec, seed=args.seed),
        clock=Clock(date=args.date, day=args.day),
    )


def _cmd_chat(args) -> int:
    try:
        engine = _build_chat_engine(args)
    except (OSError, json.JSONDecodeError, WorksheetError) as exc:
        print(f"cannot start chat: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    greeting = engine.open()
    if greeting:
        print(f"agent: {greeting}")
    try:
        while True:
            try:
                line = input("you: ").strip()
            except EOFError:
                break
            if line in ("/quit", "/exit"):
                break
            if not line:
                continue
            result = engine.take_turn(line)
            print(f"agent: {result.utterance}")
            for act in result.act_strings:
                print(f"  [act] {act}")
            for execution in result.executions:
                print(f"  [run] {execution.canonical_str()}")
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceConfig, create_app

    if args.config:
        config = ServiceConfig.from_file(args.config)
    else:
        config = ServiceConfig()
        config.apply_env_overrides()
    if args.data_dir:
        config.data_dir = Path(args.data_dir)
    if args.frontend:
        config.frontend_dir = Path(args.frontend)
    uvicorn.run(create_app(config), host=args.host, port=args.port)
    return EXIT_OK


def _print_report(report: evaluation.Report, as_json: bool) -> None:
    print(report.to_json() if as_json else report.to_table())


def _cmd_replay(args) -> int:
    try:
        report, records = evaluation.replay(args.fixture)
    except WorksheetError as exc:
        print(f"replay failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    if args.records_out:
        evaluation.write_records(records, args.records_out)
    _print_report(report, args.json)
    return EXIT_THRESHOLD if report.failures() else EXIT_OK


def _cmd_score(args) -> int:
    try:
        gold = evaluation.load_transcript(args.transcript)
        records = evaluation.read_records(args.records)
        aliases = (
            json.loads(Path(args.aliases).read_text(encoding="utf-8")) if args.aliases else {}
        )
    except (OSError, json.JSONDecodeError, WorksheetError) as exc:
        print(f"score failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    thresholds = {}
    for item in args.threshold:
        name, _, minimum = item.partition("=")
        if not minimum:
            print(f"error: bad --threshold {item!r}", file=sys.stderr)
            return EXIT_USAGE
        thresholds[name] = float(minimum)
    report = evaluation.score_records(
        gold, records, fixture_name=args.records, thresholds=thresholds, aliases=aliases
    )
    _print_report(report, args.json)
    return EXIT_THRESHOLD if report.failures() else EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return EXIT_USAGE
    handlers = {
        "validate": _cmd_validate,
        "import-sheet": _cmd_import_sheet,
        "chat": _cmd_chat,
        "serve": _cmd_serve,
        "replay": _cmd_replay,
        "score": _cmd_score,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
