import pytest

from worksheets import respond as R
from worksheets.errors import TransportError
from worksheets.policy import AskAct, ConfirmationAct, ProposeAct, ReportAct, SayAct
from worksheets.semparse import EndpointConfig, HttpChatClient
from worksheets.state import DialogueState

MARKERS = {
    AskAct: "Please provide",
    ReportAct: "I looked into",
    ConfirmationAct: "Can you confirm",
    SayAct: None,  # the text itself is the marker
    ProposeAct: "How about",
}


def test_ask_includes_enum_options_from_description():
    act = AskAct(
        "course",
        "grade_type",
        "The desired grading basis of the student. Options are: Credit/No Credit, Letter",
    )
    text = R.render_template([act], DialogueState())
    assert "Options are: Credit/No Credit, Letter" in text


def test_confirm_enumerates_all_pairs():
    pairs = tuple((f"f{i}", f"v{i}") for i in range(7))
    text = R.render_template([ConfirmationAct("main", pairs)], DialogueState())
    for key, value in pairs:
        assert f"{key} = {value}" in text
    assert text.count("Can you confirm") == 1


def test_empty_act_list_renders_empty():
    assert R.render_template([], DialogueState()) == ""


def test_report_empty_result_says_none_found():
    text = R.render_template([ReportAct("answer", [])], DialogueState())
    assert "could not find any results" in text


def test_act_coverage_markers_once_each():
    acts = [
        ReportAct("answer", [{"name": "x"}]),
        SayAct("a bespoke remark"),
        ConfirmationAct("main", (("f", "v"),)),
        ProposeAct("Extra", ()),
        AskAct("main", "f", "the next thing"),
    ]
    text = R.render_template(acts, DialogueState())
    for act in acts:
        marker = MARKERS[type(act)] or act.text
        assert text.count(marker) == 1, marker


def test_llm_responder_embeds_canonical_acts_and_temperature():
    calls = []

    def transport(url, headers, body):
        calls.append(body)
        return {"choices": [{"message": {"content": "styled reply"}}]}

    client = HttpChatClient(EndpointConfig(max_retries=0), transport=transport)
    acts = [AskAct("main", "f", "desc"), SayAct("note")]
    reply = R.LLMResponder(client).respond(acts, DialogueState(), "hi there")
    assert reply == "styled reply"
    body = calls[0]
    assert body["temperature"] == 0.7
    prompt = body["messages"][1]["content"]
    for act in acts:
        assert act.canonical_str() in prompt
    assert "hi there" in prompt


def test_llm_responder_falls_back_to_template():
    def transport(url, headers, body):
        raise TransportError("down")

    client = HttpChatClient(EndpointConfig(max_retries=0), transport=transport)
    acts = [AskAct("main", "f", "the thing")]
    reply = R.LLMResponder(client).respond(acts, DialogueState(), "hi")
    assert reply == R.render_template(acts, DialogueState())


def test_llm_responder_cassette_replay(tmp_path):
    cassette = tmp_path / "responder.json"
    calls = []

    def transport(url, headers, body):
        calls.append(body)
        return {"choices": [{"message": {"content": "Warm, styled reply."}}]}

    record_client = HttpChatClient(
        EndpointConfig(cassette_path=str(cassette), cassette_mode="record", max_retries=0),
        transport=transport,
    )
    acts = [AskAct("main", "f", "a detail")]
    first = R.LLMResponder(record_client).respond(acts, DialogueState(), "hello")
    replay_client = HttpChatClient(
        EndpointConfig(cassette_path=str(cassette), cassette_mode="replay")
    )
    second = R.LLMResponder(replay_client).respond(acts, DialogueState(), "hello")
    assert first == second == "Warm, styled reply."
    assert len(calls) == 1  # replay never touched the transport
