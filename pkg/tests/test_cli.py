import json

import pytest

from worksheets.cli import (
    EXIT_OK,
    EXIT_THRESHOLD,
    EXIT_USAGE,
    EXIT_VALIDATION,
    main,
)

from .conftest import FIXTURES


def test_no_arguments_prints_usage(capsys):
    assert main([]) == EXIT_USAGE
    out = capsys.readouterr().out
    assert "usage" in out or "worksheets" in out


def test_unknown_command_is_usage_error(capsys):
    with pytest.raises(SystemExit) as err:
        main(["frobnicate"])
    assert err.value.code == EXIT_USAGE


def test_validate_ok(capsys):
    code = main(["validate", str(FIXTURES / "restaurant" / "spec.json")])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "worksheets=2" in out and "fields=8" in out


def test_validate_bad_spec(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"name": "x", "worksheets": []}))
    assert main(["validate", str(bad)]) == EXIT_VALIDATION


def test_import_sheet_then_validate(tmp_path, capsys):
    out_path = tmp_path / "spec.json"
    code = main(
        [
            "import-sheet",
            str(FIXTURES / "sheets" / "restaurant.csv"),
            "--name",
            "restaurant_sheet",
            "--out",
            str(out_path),
        ]
    )
    assert code == EXIT_OK
    assert main(["validate", str(out_path)]) == EXIT_OK


def test_import_sheet_bad_header(tmp_path):
    sheet = tmp_path / "s.csv"
    sheet.write_text("wrong,header\n")
    assert main(["import-sheet", str(sheet)]) == EXIT_VALIDATION


def test_replay_fixture_all_ones(capsys):
    code = main(["replay", str(FIXTURES / "restaurant"), "--json"])
    assert code == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["metrics"]["sp_accuracy"] == 1.0
    assert report["metrics"]["ex_accuracy"] == 1.0
    assert report["metrics"]["da_accuracy"] == 1.0
    assert report["metrics"]["goal_completion"] == 1.0


def test_replay_missing_fixture(tmp_path):
    assert main(["replay", str(tmp_path)]) == EXIT_VALIDATION


def test_replay_threshold_failure(tmp_path, capsys):
    # copy the fixture but demand a goal the conversation never reaches
    import shutil

    target = tmp_path / "banking"
    shutil.copytree(FIXTURES / "banking", target)
    manifest = json.loads((target / "fixture.json").read_text())
    manifest["thresholds"] = {"goal_completion": 1.0}
    (target / "fixture.json").write_text(json.dumps(manifest))
    assert main(["replay", str(target)]) == EXIT_THRESHOLD


def test_score_equals_replay_output(tmp_path, capsys):
    records = tmp_path / "records.jsonl"
    code = main(
        ["replay", str(FIXTURES / "restaurant"), "--json", "--records-out", str(records)]
    )
    assert code == EXIT_OK
    replay_report = json.loads(capsys.readouterr().out)
    code = main(
        [
            "score",
            "--records",
            str(records),
            "--transcript",
            str(FIXTURES / "restaurant" / "transcript.jsonl"),
            "--json",
        ]
    )
    assert code == EXIT_OK
    score_report = json.loads(capsys.readouterr().out)
    assert score_report["metrics"] == replay_report["metrics"]
    assert [t["sp_accuracy"] for t in score_report["turns"]] == [
        t["sp_accuracy"] for t in replay_report["turns"]
    ]


def test_score_threshold_flags(tmp_path, capsys):
    records = tmp_path / "records.jsonl"
    main(["replay", str(FIXTURES / "banking"), "--records-out", str(records)])
    capsys.readouterr()
    code = main(
        [
            "score",
            "--records",
            str(records),
            "--transcript",
            str(FIXTURES / "banking" / "transcript.jsonl"),
            "--aliases",
            str(FIXTURES / "banking" / "aliases.json"),
            "--threshold",
            "goal_completion=1.0",
        ]
    )
    assert code == EXIT_THRESHOLD
    code = main(
        [
            "score",
            "--records",
            str(records),
            "--transcript",
            str(FIXTURES / "banking" / "transcript.jsonl"),
            "--aliases",
            str(FIXTURES / "banking" / "aliases.json"),
            "--threshold",
            "da_accuracy=1.0",
        ]
    )
    assert code == EXIT_OK
