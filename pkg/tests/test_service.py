import json
import threading
import time
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from worksheets import state as ST
from worksheets.service import ServiceConfig, create_app

from .conftest import FIXTURES


@pytest.fixture
def client(tmp_path):
    config = ServiceConfig(data_dir=tmp_path, spec_dirs=[FIXTURES])
    app = create_app(config)
    with TestClient(app) as c:
        yield c


def create_restaurant_session(client):
    response = client.post("/api/sessions", json={"spec": "restaurant"})
    assert response.status_code == 200
    return response.json()


def test_create_session_returns_greeting(client):
    payload = create_restaurant_session(client)
    assert "session_id" in payload
    assert payload["greeting"].startswith("Hi! I am the restaurant reservation assistant.")


def test_unknown_spec_404(client):
    response = client.post("/api/sessions", json={"spec": "nope"})
    assert response.status_code == 404
    assert response.json()["code"] == "unknown_spec"


def test_sessions_get_distinct_ids(client):
    a = create_restaurant_session(client)["session_id"]
    b = create_restaurant_session(client)["session_id"]
    assert a != b


def test_turn_on_unknown_session_404(client):
    response = client.post("/api/sessions/ghost/turns", json={"utterance": "hi"})
    assert response.status_code == 404


def test_full_restaurant_conversation_over_http(client):
    session_id = create_restaurant_session(client)["session_id"]
    transcript = [
        json.loads(line)
        for line in (FIXTURES / "restaurant" / "transcript.jsonl").read_text().splitlines()
        if line.strip()
    ]
    turns = [t for t in transcript if t["type"] == "turn"]
    all_acts = []
    for turn in turns:
        response = client.post(
            f"/api/sessions/{session_id}/turns", json={"utterance": turn["user"]}
        )
        assert response.status_code == 200
        payload = response.json()
        assert payload["reply"]
        all_acts.append(payload["acts"])
    assert all_acts[0] == [
        "Report(answer, answer.result)",
        "Confirm(book_restaurant, num_people=2)",
        "AskField(book_restaurant, restaurant)",
    ]
    assert all_acts[2][0] == "Report(book_restaurant, book_restaurant.result)"
    final = client.get(f"/api/sessions/{session_id}").json()
    assert final["spec"] == "restaurant"
    user_lines = [t for t in final["transcript"] if t["speaker"] == "user"]
    assert len(user_lines) == len(turns)
    booking = next(
        i for i in final["state"]["instances"] if i["var"] == "book_restaurant"
    )
    assert booking["completed"] is True


def test_state_endpoint_fresh_session(client):
    session_id = create_restaurant_session(client)["session_id"]
    payload = client.get(f"/api/sessions/{session_id}").json()
    instances = payload["state"]["instances"]
    assert [i["var"] for i in instances] == ["book_restaurant"]
    assert all(f["value"] in (None, "NA") for f in instances[0]["fields"])


def test_crash_recovery_rebuilds_equal_state(client, tmp_path):
    session_id = create_restaurant_session(client)["session_id"]
    client.post(
        f"/api/sessions/{session_id}/turns",
        json={
            "utterance": "I want to book an Italian restaurant in NYC for two on Valentine's day"
        },
    )
    manager = client.app.state.manager
    live = manager.get(session_id)
    fingerprint_before = ST.state_fingerprint(live.engine.state)
    # simulate a crash: drop the in-memory session, then rebuild from the log
    manager.sessions.clear()
    rebuilt = manager.rebuild(session_id)
    assert ST.state_fingerprint(rebuilt.engine.state) == fingerprint_before
    # and the rebuilt session keeps working
    response = client.post(
        f"/api/sessions/{session_id}/turns",
        json={"utterance": "Yes, two people. Let's do Trattoria Roma at 7:30 pm."},
    )
    assert response.status_code == 200
    assert response.json()["acts"] == ["AskField(book_restaurant, confirm_booking)"]


def test_concurrent_turns_serialized(tmp_path):
    config = ServiceConfig(data_dir=tmp_path, spec_dirs=[FIXTURES])
    app = create_app(config)
    with TestClient(app) as client:
        session_id = create_restaurant_session(client)["session_id"]
        manager = client.app.state.manager
        session = manager.get(session_id)

        order = []
        original_take_turn = session.engine.take_turn

        def slow_take_turn(text):
            order.append(f"start:{text}")
            time.sleep(0.05)
            result = original_take_turn(text)
            order.append(f"end:{text}")
            return result

        session.engine.take_turn = slow_take_turn

        def post(text):
            client.post(f"/api/sessions/{session_id}/turns", json={"utterance": text})

        threads = [threading.Thread(target=post, args=(f"t{i}",)) for i in range(3)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        # no interleaving: every start is immediately followed by its own end
        for i in range(0, len(order), 2):
            assert order[i].split(":")[1] == order[i + 1].split(":")[1]
            assert order[i].startswith("start") and order[i + 1].startswith("end")


def test_busy_signal_when_configured(tmp_path):
    config = ServiceConfig(data_dir=tmp_path, spec_dirs=[FIXTURES], busy_returns_409=True)
    app = create_app(config)
    with TestClient(app) as client:
        session_id = create_restaurant_session(client)["session_id"]
        manager = client.app.state.manager
        session = manager.get(session_id)
        session.lock.acquire()
        try:
            response = client.post(
                f"/api/sessions/{session_id}/turns", json={"utterance": "hi"}
            )
            assert response.status_code == 409
            assert response.json()["code"] == "busy"
        finally:
            session.lock.release()


def test_redaction_hook_scrubs_configured_fields(tmp_path):
    config = ServiceConfig(
        data_dir=tmp_path, spec_dirs=[FIXTURES], redact_fields={"full_name"}
    )
    app = create_app(config)
    with TestClient(app) as client:
        response = client.post("/api/sessions", json={"spec": "banking"})
        session_id = response.json()["session_id"]
        client.post(
            f"/api/sessions/{session_id}/turns",
            json={"utterance": "Hi, I lost my debit card."},
        )
        client.post(
            f"/api/sessions/{session_id}/turns", json={"utterance": "Katarina Miller"}
        )
        log_text = (tmp_path / "sessions" / f"{session_id}.jsonl").read_text()
        assert "Katarina Miller" not in "".join(
            line for line in log_text.splitlines() if '"e": "update"' in line or '"e":"update"' in line
        )


def test_backend_init_error_reported(client):
    response = client.post(
        "/api/sessions", json={"spec": "restaurant", "backends": {"parser": "warp-drive"}}
    )
    assert response.status_code == 400
    assert response.json()["code"] == "backend_init"


def test_config_file_and_env_overrides(tmp_path, monkeypatch):
    config_path = tmp_path / "service.json"
    config_path.write_text(
        json.dumps(
            {
                "data_dir": str(tmp_path / "from_file"),
                "redact_fields": ["full_name"],
                "llm": {"base_url": "https://file.example/v1", "model": "file-model"},
            }
        )
    )
    monkeypatch.setenv("WORKSHEETS_DATA_DIR", str(tmp_path / "from_env"))
    monkeypatch.setenv("WORKSHEETS_LLM_MODEL", "env-model")
    config = ServiceConfig.from_file(config_path)
    assert config.data_dir == tmp_path / "from_env"  # env wins
    assert config.llm.base_url == "https://file.example/v1"
    assert config.llm.model == "env-model"
    assert config.redact_fields == {"full_name"}
