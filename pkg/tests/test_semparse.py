import json

import pytest
from hypothesis import given, settings, strategies as hst

from worksheets import semparse as P
from worksheets import state as ST
from worksheets.errors import MalformedResponse, ScriptExhausted, TransportError
from worksheets.policy import AskAct, ReportAct
from worksheets.semparse import Clock, EndpointConfig, FewShot, HttpChatClient


def test_parse_nested_constructor_flattens_to_three_statements(course_spec):
    stmts, issues = P.parse_statements(
        "main.courses_to_take = CoursesToTake(course_0_details=Course(course_name='CS 221'))",
        course_spec,
    )
    assert not issues
    assert len(stmts) == 3
    course, ctt, assign = stmts
    assert isinstance(course, ST.Construct) and course.ws_name == "Course"
    assert course.pairs == (("course_name", "CS 221"),)
    assert isinstance(ctt, ST.Construct) and ctt.ws_name == "CoursesToTake"
    assert ctt.pairs == (("course_0_details", ST.TempRef(course.temp_idx)),)
    assert isinstance(assign, ST.Assign)
    assert assign.var == "main" and assign.field == "courses_to_take"
    assert assign.value == ST.TempRef(ctt.temp_idx)


def test_parse_answer_query():
    stmts, issues = P.parse_statements(
        'answer("What are the prerequisites for the course CS 103?")'
    )
    assert not issues
    assert stmts == [ST.Query("What are the prerequisites for the course CS 103?")]


def test_parse_named_answer_query():
    stmts, _ = P.parse_statements('answer_1 = answer("What else?")')
    assert stmts == [ST.Query("What else?", var="answer_1")]


def test_parse_empty_string():
    stmts, issues = P.parse_statements("")
    assert stmts == [] and issues == []


def test_parse_skips_fences_and_comments():
    raw = "```python\nmain.x = 1\n# comment\n```"
    stmts, issues = P.parse_statements(raw)
    assert len(stmts) == 1 and not issues


def test_bad_lines_reported_good_lines_kept():
    raw = "main.x = 1\nthis is prose, not a statement\nmain.y = 2"
    stmts, issues = P.parse_statements(raw)
    assert len(stmts) == 2
    assert len(issues) == 1 and issues[0].line_no == 2


def test_unknown_constructor_reported_when_spec_given(course_spec):
    stmts, issues = P.parse_statements("x = Nonexistent(a=1)", course_spec)
    assert stmts == [] and len(issues) == 1
    assert "Nonexistent" in issues[0].message


def test_parse_list_and_dict_values():
    stmts, issues = P.parse_statements("answer.result = [{'code': 'CS 103', 'units': 3}]")
    assert not issues
    assert stmts[0].value == [{"code": "CS 103", "units": 3}]


def test_parse_bare_field_assignment():
    stmts, issues = P.parse_statements("grade_type = 'Letter'")
    assert not issues
    assert stmts == [ST.Assign("", "grade_type", "Letter")]


# --- print/parse identity ------------------------------------------------------------

_values = hst.one_of(
    hst.integers(-100, 100),
    hst.booleans(),
    hst.none(),
    hst.sampled_from(["alpha", "o'brien", "x y"]),
    hst.sampled_from(["ref_a", "ref_b"]).map(ST.VarToken),
)

_assigns = hst.tuples(
    hst.sampled_from(["main", "course", "book"]),
    hst.sampled_from(["f0", "f1", "grade_type"]),
    _values,
).map(lambda t: ST.Assign(*t))

_constructs = hst.tuples(
    hst.sampled_from([None, "c1", "c2"]),
    hst.sampled_from(["Course", "Main"]),
    hst.lists(hst.tuples(hst.sampled_from(["a", "b"]), _values), max_size=2, unique_by=lambda p: p[0]),
).map(lambda t: ST.Construct(t[0], t[1], tuple(t[2])))

_queries = hst.sampled_from(["What is x?", "Where?"]).map(lambda q: ST.Query(q))


@given(hst.lists(hst.one_of(_assigns, _constructs, _queries), max_size=6))
@settings(max_examples=150, deadline=None)
def test_print_parse_identity(stmts):
    printed = P.print_statements(stmts)
    reparsed, issues = P.parse_statements(printed)
    assert not issues
    assert reparsed == stmts


def test_print_parse_identity_nested(course_spec):
    raw = "main.courses_to_take = CoursesToTake(course_0_details=Course(course_name='CS 221'))"
    stmts, _ = P.parse_statements(raw, course_spec)
    assert P.print_statements(stmts) == raw
    again, _ = P.parse_statements(P.print_statements(stmts), course_spec)
    assert again == stmts


# --- prompt assembly -------------------------------------------------------------------


def _state_with_course(course_spec):
    state = ST.DialogueState()
    ST.ensure_top_level(state, course_spec)
    stmts, _ = P.parse_statements(
        "main.courses_to_take = CoursesToTake(course_0_details=Course(course_name='CS 231'))",
        course_spec,
    )
    ST.apply_updates(state, course_spec, stmts)
    state.last_agent_utterance = "What is the desired grading basis for CS 231?"
    state.last_user_utterance = "I will take the letter grade for 4 units"
    return state


def test_build_prompt_blocks(course_spec):
    state = _state_with_course(course_spec)
    acts = [
        AskAct(
            "course",
            "grade_type",
            "The desired grading basis of the student. Options are: Credit/No Credit, Letter",
        )
    ]
    bundle = P.build_prompt(course_spec, state, acts, Clock("2024-05-20", "Monday"))
    assert "Today's date is 2024-05-20 and the day is Monday." in bundle.system_text
    assert "Course(course_name, grade_type, course_num_units, offering_quarter)" in bundle.system_text
    assert "State:" in bundle.user_text
    assert "course = Course(course_name = 'CS 231')" in bundle.user_text
    assert (
        '"AskField(course, grade_type, The desired grading basis of the student. '
        'Options are: Credit/No Credit, Letter)"' in bundle.user_text
    )
    assert "Agent: What is the desired grading basis for CS 231?" in bundle.user_text
    assert "User: I will take the letter grade for 4 units" in bundle.user_text
    assert bundle.user_text.rstrip().endswith("User Target:")


def test_build_prompt_deterministic(course_spec):
    state = _state_with_course(course_spec)
    acts = [ReportAct("answer", [])]
    shots = (FewShot(state="s", acts="[]", agent="a", user="u", target="t"),)
    one = P.build_prompt(course_spec, state, acts, Clock("2024-05-20", "Monday"), shots)
    two = P.build_prompt(course_spec, state, acts, Clock("2024-05-20", "Monday"), shots)
    assert one == two


def test_build_prompt_zero_few_shots_well_formed(course_spec):
    state = _state_with_course(course_spec)
    bundle = P.build_prompt(course_spec, state, [], Clock("2024-05-20", "Monday"))
    assert "Here are some examples" not in bundle.system_text
    assert bundle.user_text.count("State:") == 1


# --- backends ----------------------------------------------------------------------------


def test_scripted_backend_replays_and_exhausts():
    backend = P.ScriptedParser({"0": "main.x = 1", "1": ""})
    assert backend.parse_turn(None, 0) == "main.x = 1"
    assert backend.parse_turn(None, 1) == ""
    with pytest.raises(ScriptExhausted):
        backend.parse_turn(None, 2)


def test_scripted_backend_empty_script_no_turns():
    P.ScriptedParser({})  # fine as long as no turn is consumed


def _transport_recording(responses):
    calls = []

    def transport(url, headers, body):
        calls.append({"url": url, "headers": headers, "body": body})
        if isinstance(responses, Exception):
            raise responses
        return {"choices": [{"message": {"content": responses}}]}

    return transport, calls


def test_llm_backend_sends_prompt_and_temperature():
    transport, calls = _transport_recording("main.x = 1")
    client = HttpChatClient(EndpointConfig(max_retries=0), transport=transport)
    parser = P.LLMParser(client)
    bundle = P.PromptBundle(system_text="SYS", user_text="USR")
    assert parser.parse_turn(bundle, 0) == "main.x = 1"
    body = calls[0]["body"]
    assert body["temperature"] == 0.0
    assert body["messages"][0] == {"role": "system", "content": "SYS"}
    assert body["messages"][1] == {"role": "user", "content": "USR"}


def test_llm_temperature_override():
    transport, calls = _transport_recording("ok")
    client = HttpChatClient(EndpointConfig(temperature=0.7, max_retries=0), transport=transport)
    client.complete([{"role": "user", "content": "x"}])
    assert calls[0]["body"]["temperature"] == 0.7
    client.complete([{"role": "user", "content": "x"}], temperature=0.2)
    assert calls[1]["body"]["temperature"] == 0.2


def test_llm_malformed_response():
    def transport(url, headers, body):
        return {"unexpected": True}

    client = HttpChatClient(EndpointConfig(max_retries=0), transport=transport)
    with pytest.raises(MalformedResponse):
        client.complete([{"role": "user", "content": "x"}])


def test_cassette_record_and_replay(tmp_path):
    cassette = tmp_path / "cassette.json"
    transport, calls = _transport_recording("recorded output")
    record_client = HttpChatClient(
        EndpointConfig(cassette_path=str(cassette), cassette_mode="record", max_retries=0),
        transport=transport,
    )
    messages = [{"role": "user", "content": "hello"}]
    assert record_client.complete(messages) == "recorded output"
    assert json.loads(cassette.read_text())[0]["response"] == "recorded output"

    replay_client = HttpChatClient(
        EndpointConfig(cassette_path=str(cassette), cassette_mode="replay")
    )
    assert replay_client.complete(messages) == "recorded output"
    with pytest.raises(TransportError):
        replay_client.complete([{"role": "user", "content": "different"}])


def test_build_prompt_matches_golden_file(restaurant_spec, fixtures_dir):
    from pathlib import Path

    from worksheets.state import DialogueState

    golden = Path(__file__).parent / "goldens" / "restaurant_system_prompt.txt"
    bundle = P.build_prompt(
        restaurant_spec, DialogueState(), [], Clock("2024-02-10", "Saturday")
    )
    assert bundle.system_text == golden.read_text(encoding="utf-8")


def test_llm_backend_retries_then_succeeds():
    attempts = []

    def flaky_transport(url, headers, body):
        attempts.append(1)
        if len(attempts) == 1:
            raise TransportError("blip")
        return {"choices": [{"message": {"content": "ok"}}]}

    client = HttpChatClient(EndpointConfig(max_retries=2), transport=flaky_transport)
    assert client.complete([{"role": "user", "content": "x"}]) == "ok"
    assert len(attempts) == 2


def test_llm_backend_gives_up_after_retries():
    def always_down(url, headers, body):
        raise TransportError("down")

    client = HttpChatClient(EndpointConfig(max_retries=1), transport=always_down)
    with pytest.raises(TransportError):
        client.complete([{"role": "user", "content": "x"}])
