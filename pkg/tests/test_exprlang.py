import itertools

import pytest
from hypothesis import given, settings, strategies as hst

from worksheets import exprlang as E
from worksheets.errors import (
    ExprSyntaxError,
    StubFailure,
    TypeMismatchError,
    UnknownApiError,
)
from worksheets.values import EMPTY, REFUSED


def test_parse_comparison():
    node = E.parse_expr('student_task == "Leave of Absence"')
    assert node == E.Binary("==", E.Ref(None, "student_task"), E.Lit("Leave of Absence"))


def test_parse_boolean_literal():
    assert E.parse_expr("true") == E.Lit(True)


def test_parse_conjunction_golden_ast():
    node = E.parse_expr("is_filled(course_0_details) and not is_refused(course_1_details)")
    expected = E.Binary(
        "and",
        E.Call("is_filled", (E.Ref(None, "course_0_details"),)),
        E.Unary("not", E.Call("is_refused", (E.Ref(None, "course_1_details"),))),
    )
    assert node == expected
    assert (
        E.dump_sexpr(node)
        == "(and (call is_filled (ref course_0_details)) (not (call is_refused (ref course_1_details))))"
    )


def test_parse_dotted_reference():
    assert E.parse_expr("book_restaurant.result") == E.Ref("book_restaurant", "result")


def test_syntax_error_carries_position():
    with pytest.raises(ExprSyntaxError) as err:
        E.parse_expr("a == ")
    assert "col" in str(err.value)


def test_operator_precedence():
    node = E.parse_expr("a == 1 or b == 2 and not c")
    assert isinstance(node, E.Binary) and node.op == "or"
    assert isinstance(node.right, E.Binary) and node.right.op == "and"


# --- printer round trip ---------------------------------------------------------

_leaf = hst.one_of(
    hst.integers(-50, 50).map(E.Lit),
    hst.booleans().map(E.Lit),
    hst.sampled_from(["alpha", "beta", "it's"]).map(E.Lit),
    hst.sampled_from(["x", "y", "field_1"]).map(lambda n: E.Ref(None, n)),
    hst.sampled_from([("main", "f"), ("course", "grade_type")]).map(lambda p: E.Ref(*p)),
)


def _exprs(depth: int):
    if depth == 0:
        return _leaf
    sub = _exprs(depth - 1)
    return hst.one_of(
        _leaf,
        hst.tuples(sub, sub, hst.sampled_from(["and", "or", "==", "!=", "<", ">="])).map(
            lambda t: E.Binary(t[2], t[0], t[1])
        ),
        sub.map(lambda e: E.Unary("not", e)),
        hst.sampled_from(["x", "y"]).map(lambda n: E.Call("is_filled", (E.Ref(None, n),))),
    )


@given(_exprs(3))
@settings(max_examples=200, deadline=None)
def test_print_parse_round_trip(expr):
    assert E.parse_expr(E.to_source(expr)) == expr


def test_action_block_round_trip():
    source = "say('hi'); call submit(x=f0) -> result; if a == 1 { f0 = 'done' }"
    block = E.parse_actions(source)
    again = E.parse_actions(E.block_to_source(block))
    assert again == block


# --- evaluation semantics ---------------------------------------------------------


class DictScope:
    """Test scope: dict of (var, field) -> value with EMPTY/REFUSED sentinels."""

    def __init__(self, values: dict):
        self.values = values
        self.assigned: dict = {}

    def lookup(self, var, field):
        return self.values.get((var, field), EMPTY)

    def is_filled(self, var, field):
        value = self.values.get((var, field), EMPTY)
        return value is not EMPTY and value is not REFUSED

    def is_refused(self, var, field):
        return self.values.get((var, field), EMPTY) is REFUSED

    def assign(self, field, value):
        self.assigned[field] = value
        self.values[(None, field)] = value


def test_absent_predicate_is_true():
    assert E.eval_predicate(None, DictScope({})) is True


def test_unfilled_comparison_is_false():
    scope = DictScope({})
    assert E.eval_predicate(E.parse_expr("more_course_2 == true"), scope) is False
    scope_true = DictScope({(None, "more_course_2"): True})
    assert E.eval_predicate(E.parse_expr("more_course_2 == true"), scope_true) is True


def test_predicate_matches_enum_value():
    scope = DictScope({(None, "student_task"): "Troubleshoot Student Enrollment"})
    pred = E.parse_expr('student_task == "Troubleshoot Student Enrollment"')
    assert E.eval_predicate(pred, scope) is True


def test_truth_table_oracle_three_bool_fields():
    """Engine evaluation equals a plain-python oracle over all fill states."""
    predicates = {
        "a == true": lambda a, b, c: a is True,
        "a == true and b == false": lambda a, b, c: a is True and b is False,
        "a == true or is_filled(c)": lambda a, b, c: a is True or c is not None,
        "not is_filled(b)": lambda a, b, c: b is None,
        "is_filled(a) and (b == true or c == true)": lambda a, b, c: a is not None
        and (b is True or c is True),
    }
    states = itertools.product([None, True, False], repeat=3)
    for a, b, c in states:
        values = {}
        for name, value in zip("abc", (a, b, c)):
            if value is not None:
                values[(None, name)] = value
        scope = DictScope(values)
        for source, oracle in predicates.items():
            assert E.eval_predicate(E.parse_expr(source), scope) == oracle(a, b, c), source


def test_refused_fields_are_not_filled():
    scope = DictScope({(None, "x"): REFUSED})
    assert E.eval_predicate(E.parse_expr("is_filled(x)"), scope) is False
    assert E.eval_predicate(E.parse_expr("is_refused(x)"), scope) is True
    assert E.eval_predicate(E.parse_expr("x == 'NA'"), scope) is False


def test_evaluation_is_pure():
    scope = DictScope({(None, "x"): 3})
    before = dict(scope.values)
    pred = E.parse_expr("x > 1 and len('abc') == 3 and contains(y, 'a') == false")
    E.eval_predicate(pred, scope)
    E.eval_predicate(pred, scope)
    assert scope.values == before


def test_len_and_contains():
    scope = DictScope({(None, "xs"): ["a", "b"], (None, "s"): "abcd"})
    assert E.eval_expr(E.parse_expr("len(xs)"), scope) == 2
    assert E.eval_expr(E.parse_expr("len(s)"), scope) == 4
    assert E.eval_expr(E.parse_expr("len(missing)"), scope) == 0
    assert E.eval_expr(E.parse_expr("contains(xs, 'a')"), scope) is True
    assert E.eval_expr(E.parse_expr("contains(xs, 'z')"), scope) is False


def test_date_string_comparison():
    import datetime as dt

    scope = DictScope({(None, "when"): dt.date(2024, 2, 14)})
    assert E.eval_predicate(E.parse_expr("when == '2024-02-14'"), scope) is True
    assert E.eval_predicate(E.parse_expr("when < '2024-03-01'"), scope) is True


# --- type checking ------------------------------------------------------------------


def _resolver(types: dict):
    def resolve(var, field):
        key = (var, field)
        if key in types:
            return types[key]
        raise E.UnknownReferenceError(f"unknown {key}")

    return resolve


def test_check_predicate_accepts_bool():
    resolve = _resolver({(None, "n"): "int"})
    E.check_predicate(E.parse_expr("n > 3"), resolve)


def test_check_predicate_rejects_non_bool():
    resolve = _resolver({(None, "n"): "int"})
    with pytest.raises(TypeMismatchError):
        E.check_predicate(E.parse_expr("n"), resolve)


def test_check_rejects_mismatched_comparison():
    resolve = _resolver({(None, "n"): "int", (None, "s"): "str"})
    with pytest.raises(TypeMismatchError):
        E.check_expr(E.parse_expr("n == s"), resolve)


def test_check_rejects_unknown_function():
    with pytest.raises(TypeMismatchError):
        E.check_expr(E.parse_expr("frobnicate(1)"), _resolver({}))


# --- action execution ------------------------------------------------------------------


class FakeApis:
    def __init__(self, results=None, fail=None):
        self.results = results or {}
        self.fail = fail
        self.calls = []

    def call(self, name, kwargs):
        self.calls.append((name, dict(kwargs)))
        if self.fail == name:
            raise StubFailure("configured failure")
        if name not in self.results:
            raise UnknownApiError(name)
        return self.results[name]


def test_exec_actions_effect_order_and_assignment():
    block = E.parse_actions("say('one')\nf0 = 'two'\ncall api(x=f0) -> result\nsay('three')")
    scope = DictScope({})
    apis = FakeApis(results={"api": {"ok": True}})
    effects = E.exec_actions(block, scope, apis)
    kinds = [type(e).__name__ for e in effects]
    assert kinds == ["SayEffect", "CallEffect", "SayEffect"]
    assert scope.assigned["f0"] == "two"
    assert scope.assigned["result"] == {"ok": True}
    assert apis.calls == [("api", {"x": "two"})]


def test_exec_actions_empty_block():
    scope = DictScope({})
    assert E.exec_actions(E.parse_actions(""), scope, FakeApis()) == []
    assert scope.assigned == {}


def test_exec_actions_dead_branch():
    block = E.parse_actions("if false { say('x') }")
    assert E.exec_actions(block, DictScope({}), FakeApis()) == []


def test_exec_actions_live_branch_and_propose():
    block = E.parse_actions("if a == 1 { propose(Extra, note='hello') }")
    scope = DictScope({(None, "a"): 1})
    effects = E.exec_actions(block, scope, FakeApis())
    assert effects == [E.ProposeEffect("Extra", (("note", "hello"),))]


def test_exec_actions_repeat_is_deterministic():
    block = E.parse_actions("say('a'); call api(x=f0); say('b')")
    results = []
    for _ in range(2):
        scope = DictScope({(None, "f0"): "v"})
        effects = E.exec_actions(block, scope, FakeApis(results={"api": 1}))
        results.append(effects)
    assert results[0] == results[1]


def test_exec_actions_unknown_api_raises():
    block = E.parse_actions("call nope(x=1)")
    with pytest.raises(UnknownApiError):
        E.exec_actions(block, DictScope({}), FakeApis())
