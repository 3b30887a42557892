"""Parser, checker, and evaluator for the worksheet predicate/action language.

Predicates are boolean expressions over field references; actions are short
statement blocks (`say`, `propose`, `call`, assignment, `if`). The grammar is
deliberately tiny: no loops, no user functions, so a block always terminates.

Expression grammar (EBNF)::

    expr       = or_expr ;
    or_expr    = and_expr { "or" and_expr } ;
    and_expr   = not_expr { "and" not_expr } ;
    not_expr   = "not" not_expr | comparison ;
    comparison = operand [ ("==" | "!=" | "<" | "<=" | ">" | ">=") operand ] ;
    operand    = literal | call | reference | "(" expr ")" ;
    call       = name "(" [ expr { "," expr } ] ")" ;
    reference  = name [ "." name ] ;
    literal    = string | number | "true" | "false" | "None" ;

Action grammar::

    block     = { statement (";" | NEWLINE) } ;
    statement = "say" "(" expr ")"
              | "propose" "(" name { "," name "=" expr } ")"
              | "call" name "(" [ name "=" expr { "," name "=" expr } ] ")" [ "->" name ]
              | "if" expr "{" block "}"
              | name "=" expr ;
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from typing import Any, Callable, Protocol

from .errors import ExprSyntaxError, TypeMismatchError, UnknownReferenceError
from .values import Sentinel, quote

BUILTINS = ("is_filled", "is_refused", "len", "contains")

COMPARISON_OPS = ("==", "!=", "<=", ">=", "<", ">")


# --- AST -----------------------------------------------------------------------

@dataclass(frozen=True)
class Lit:
    value: Any


@dataclass(frozen=True)
class Ref:
    var: str | None
    field: str


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple["Expr", ...]


Expr = Lit | Ref | Unary | Binary | Call


@dataclass(frozen=True)
class SayStmt:
    text: Expr


@dataclass(frozen=True)
class ProposeStmt:
    ws_name: str
    pairs: tuple[tuple[str, Expr], ...]


@dataclass(frozen=True)
class CallStmt:
    api: str
    kwargs: tuple[tuple[str, Expr], ...]
    target: str | None


@dataclass(frozen=True)
class AssignStmt:
    field: str
    value: Expr


@dataclass(frozen=True)
class IfStmt:
    cond: Expr
    body: tuple["Stmt", ...]


Stmt = SayStmt | ProposeStmt | CallStmt | AssignStmt | IfStmt


@dataclass(frozen=True)
class ActionBlock:
    statements: tuple[Stmt, ...]

    def __bool__(self) -> bool:
        return bool(self.statements)


# --- lexer -----------------------------------------------------------------------

@dataclass
class Token:
    kind: str  # NAME NUMBER STRING OP NEWLINE EOF
    text: str
    pos: int
    line: int


_TWO_CHAR_OPS = ("==", "!=", "<=", ">=", "->")
_ONE_CHAR_OPS = "()=<>.,{};[]:"


def tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    i, line, col, depth = 0, 1, 1, 0
    n = len(source)
    while i < n:
        ch = source[i]
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "\n":
            if depth == 0:
                tokens.append(Token("NEWLINE", "\n", col, line))
            i += 1
            line += 1
            col = 1
            continue
        if ch == "#":
            while i < n and source[i] != "\n":
                i += 1
            continue
        if ch in "'\"":
            start_col, start_line = col, line
            terminator = ch
            i += 1
            col += 1
            chunk: list[str] = []
            while i < n and source[i] != terminator:
                c = source[i]
                if c == "\\" and i + 1 < n:
                    nxt = source[i + 1]
                    chunk.append({"n": "\n", "t": "\t"}.get(nxt, nxt))
                    i += 2
                    col += 2
                    continue
                if c == "\n":
                    raise ExprSyntaxError("unterminated string", start_col, start_line)
                chunk.append(c)
                i += 1
                col += 1
            if i >= n:
                raise ExprSyntaxError("unterminated string", start_col, start_line)
            i += 1
            col += 1
            tokens.append(Token("STRING", "".join(chunk), start_col, start_line))
            continue
        if ch.isdigit() or (ch == "-" and i + 1 < n and source[i + 1].isdigit()):
            start_col = col
            j = i + 1 if ch == "-" else i
            while j < n and (source[j].isdigit() or source[j] == "."):
                j += 1
            text = source[i:j]
            if text.count(".") > 1:
                raise ExprSyntaxError(f"bad number {text!r}", start_col, line)
            tokens.append(Token("NUMBER", text, start_col, line))
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_":
            start_col = col
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            tokens.append(Token("NAME", source[i:j], start_col, line))
            col += j - i
            i = j
            continue
        two = source[i : i + 2]
        if two in _TWO_CHAR_OPS:
            tokens.append(Token("OP", two, col, line))
            i += 2
            col += 2
            continue
        if ch in _ONE_CHAR_OPS:
            if ch in "([{":
                depth += 1
            elif ch in ")]}":
                depth = max(0, depth - 1)
            tokens.append(Token("OP", ch, col, line))
            i += 1
            col += 1
            continue
        raise ExprSyntaxError(f"unexpected character {ch!r}", col, line)
    tokens.append(Token("EOF", "", col, line))
    return tokens


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.i = 0

    def peek(self, skip_newlines: bool = False) -> Token:
        j = self.i
        if skip_newlines:
            while self.tokens[j].kind == "NEWLINE":
                j += 1
        return self.tokens[j]

    def next(self, skip_newlines: bool = False) -> Token:
        if skip_newlines:
            while self.tokens[self.i].kind == "NEWLINE":
                self.i += 1
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, kind: str, text: str | None = None, skip_newlines: bool = False) -> Token:
        tok = self.next(skip_newlines=skip_newlines)
        if tok.kind != kind or (text is not None and tok.text != text):
            want = text or kind
            raise ExprSyntaxError(f"expected {want!r}, found {tok.text!r}", tok.pos, tok.line)
        return tok

    # -- expressions --

    def expression(self) -> Expr:
        return self.or_expr()

    def or_expr(self) -> Expr:
        node = self.and_expr()
        while self.peek().kind == "NAME" and self.peek().text == "or":
            self.next()
            node = Binary("or", node, self.and_expr())
        return node

    def and_expr(self) -> Expr:
        node = self.not_expr()
        while self.peek().kind == "NAME" and self.peek().text == "and":
            self.next()
            node = Binary("and", node, self.not_expr())
        return node

    def not_expr(self) -> Expr:
        if self.peek().kind == "NAME" and self.peek().text == "not":
            self.next()
            return Unary("not", self.not_expr())
        return self.comparison()

    def comparison(self) -> Expr:
        node = self.operand()
        tok = self.peek()
        if tok.kind == "OP" and tok.text in COMPARISON_OPS:
            self.next()
            return Binary(tok.text, node, self.operand())
        return node

    def operand(self) -> Expr:
        tok = self.peek()
        if tok.kind == "STRING":
            self.next()
            return Lit(tok.text)
        if tok.kind == "NUMBER":
            self.next()
            return Lit(float(tok.text) if "." in tok.text else int(tok.text))
        if tok.kind == "OP" and tok.text == "(":
            self.next()
            node = self.expression()
            self.expect("OP", ")")
            return node
        if tok.kind == "NAME":
            if tok.text in ("true", "True"):
                self.next()
                return Lit(True)
            if tok.text in ("false", "False"):
                self.next()
                return Lit(False)
            if tok.text in ("None", "null"):
                self.next()
                return Lit(None)
            self.next()
            nxt = self.peek()
            if nxt.kind == "OP" and nxt.text == "(":
                self.next()
                args: list[Expr] = []
                if not (self.peek().kind == "OP" and self.peek().text == ")"):
                    args.append(self.expression())
                    while self.peek().kind == "OP" and self.peek().text == ",":
                        self.next()
                        args.append(self.expression())
                self.expect("OP", ")")
                return Call(tok.text, tuple(args))
            if nxt.kind == "OP" and nxt.text == ".":
                self.next()
                fld = self.expect("NAME")
                return Ref(tok.text, fld.text)
            return Ref(None, tok.text)
        raise ExprSyntaxError(f"unexpected token {tok.text!r}", tok.pos, tok.line)

    # -- action statements --

    def block(self, stop_at_brace: bool = False) -> tuple[Stmt, ...]:
        stmts: list[Stmt] = []
        while True:
            while self.peek().kind == "NEWLINE" or (
                self.peek().kind == "OP" and self.peek().text == ";"
            ):
                self.next()
            tok = self.peek()
            if tok.kind == "EOF":
                break
            if stop_at_brace and tok.kind == "OP" and tok.text == "}":
                break
            stmts.append(self.statement())
        return tuple(stmts)

    def statement(self) -> Stmt:
        tok = self.peek()
        if tok.kind != "NAME":
            raise ExprSyntaxError(f"expected statement, found {tok.text!r}", tok.pos, tok.line)
        if tok.text == "say":
            self.next()
            self.expect("OP", "(")
            text = self.expression()
            self.expect("OP", ")")
            return SayStmt(text)
        if tok.text == "propose":
            self.next()
            self.expect("OP", "(")
            ws = self.expect("NAME", skip_newlines=True)
            pairs: list[tuple[str, Expr]] = []
            while self.peek().kind == "OP" and self.peek().text == ",":
                self.next()
                name = self.expect("NAME", skip_newlines=True)
                self.expect("OP", "=")
                pairs.append((name.text, self.expression()))
            self.expect("OP", ")")
            return ProposeStmt(ws.text, tuple(pairs))
        if tok.text == "call":
            self.next()
            api = self.expect("NAME")
            self.expect("OP", "(")
            kwargs: list[tuple[str, Expr]] = []
            if not (self.peek(True).kind == "OP" and self.peek(True).text == ")"):
                while True:
                    name = self.expect("NAME", skip_newlines=True)
                    self.expect("OP", "=")
                    kwargs.append((name.text, self.expression()))
                    if self.peek().kind == "OP" and self.peek().text == ",":
                        self.next()
                        continue
                    break
            self.expect("OP", ")", skip_newlines=True)
            target = None
            if self.peek().kind == "OP" and self.peek().text == "->":
                self.next()
                target = self.expect("NAME").text
            return CallStmt(api.text, tuple(kwargs), target)
        if tok.text == "if":
            self.next()
            cond = self.expression()
            self.expect("OP", "{")
            body = self.block(stop_at_brace=True)
            self.expect("OP", "}")
            return IfStmt(cond, body)
        name = self.next()
        self.expect("OP", "=")
        return AssignStmt(name.text, self.expression())


def parse_expr(source: str) -> Expr:
    """Parse a single predicate/value expression."""
    parser = _Parser(tokenize(source))
    node = parser.expression()
    tok = parser.peek(skip_newlines=True)
    if tok.kind != "EOF":
        raise ExprSyntaxError(f"trailing input {tok.text!r}", tok.pos, tok.line)
    return node


def parse_actions(source: str) -> ActionBlock:
    """Parse an action block (empty source yields an empty block)."""
    parser = _Parser(tokenize(source))
    stmts = parser.block()
    tok = parser.peek(skip_newlines=True)
    if tok.kind != "EOF":
        raise ExprSyntaxError(f"trailing input {tok.text!r}", tok.pos, tok.line)
    return ActionBlock(stmts)


# --- printing ---------------------------------------------------------------------

def to_source(node: Expr) -> str:
    if isinstance(node, Lit):
        if node.value is None:
            return "None"
        if isinstance(node.value, bool):
            return "true" if node.value else "false"
        if isinstance(node.value, str):
            return quote(node.value)
        return repr(node.value)
    if isinstance(node, Ref):
        return f"{node.var}.{node.field}" if node.var else node.field
    if isinstance(node, Unary):
        return f"not {_wrap(node.operand)}"
    if isinstance(node, Binary):
        return f"{_wrap(node.left)} {node.op} {_wrap(node.right)}"
    if isinstance(node, Call):
        return f"{node.name}({', '.join(to_source(a) for a in node.args)})"
    raise TypeError(node)


def _wrap(node: Expr) -> str:
    if isinstance(node, (Binary, Unary)):
        return f"({to_source(node)})"
    return to_source(node)


def stmt_to_source(stmt: Stmt) -> str:
    if isinstance(stmt, SayStmt):
        return f"say({to_source(stmt.text)})"
    if isinstance(stmt, ProposeStmt):
        parts = [stmt.ws_name] + [f"{k}={to_source(v)}" for k, v in stmt.pairs]
        return f"propose({', '.join(parts)})"
    if isinstance(stmt, CallStmt):
        args = ", ".join(f"{k}={to_source(v)}" for k, v in stmt.kwargs)
        text = f"call {stmt.api}({args})"
        return f"{text} -> {stmt.target}" if stmt.target else text
    if isinstance(stmt, AssignStmt):
        return f"{stmt.field} = {to_source(stmt.value)}"
    if isinstance(stmt, IfStmt):
        body = "; ".join(stmt_to_source(s) for s in stmt.body)
        return f"if {to_source(stmt.cond)} {{ {body} }}"
    raise TypeError(stmt)


def block_to_source(block: ActionBlock) -> str:
    return "; ".join(stmt_to_source(s) for s in block.statements)


def dump_sexpr(node: Expr | Stmt) -> str:
    """Stable s-expression rendering of an AST, used by golden tests."""
    if isinstance(node, Lit):
        if isinstance(node.value, str):
            return f'(str "{node.value}")'
        if node.value is None:
            return "(none)"
        if isinstance(node.value, bool):
            return f"(bool {str(node.value).lower()})"
        return f"({type(node.value).__name__} {node.value!r})"
    if isinstance(node, Ref):
        return f"(ref {node.var}.{node.field})" if node.var else f"(ref {node.field})"
    if isinstance(node, Unary):
        return f"({node.op} {dump_sexpr(node.operand)})"
    if isinstance(node, Binary):
        return f"({node.op} {dump_sexpr(node.left)} {dump_sexpr(node.right)})"
    if isinstance(node, Call):
        inner = " ".join(dump_sexpr(a) for a in node.args)
        return f"(call {node.name}{' ' + inner if inner else ''})"
    if isinstance(node, SayStmt):
        return f"(say {dump_sexpr(node.text)})"
    if isinstance(node, ProposeStmt):
        pairs = " ".join(f"({k} {dump_sexpr(v)})" for k, v in node.pairs)
        return f"(propose {node.ws_name}{' ' + pairs if pairs else ''})"
    if isinstance(node, CallStmt):
        pairs = " ".join(f"({k} {dump_sexpr(v)})" for k, v in node.kwargs)
        tail = f" -> {node.target}" if node.target else ""
        return f"(call-api {node.api}{' ' + pairs if pairs else ''}{tail})"
    if isinstance(node, AssignStmt):
        return f"(assign {node.field} {dump_sexpr(node.value)})"
    if isinstance(node, IfStmt):
        body = " ".join(dump_sexpr(s) for s in node.body)
        return f"(if {dump_sexpr(node.cond)}{' ' + body if body else ''})"
    raise TypeError(node)


# --- type checking ------------------------------------------------------------------

#: resolver(var, field) -> abstract type name; raises UnknownReferenceError.
TypeResolver = Callable[[str | None, str], str]

_NUMERIC = {"int", "float"}
_ORDERED = {"int", "float", "date", "time", "str"}


def _compatible(a: str, b: str) -> bool:
    if "any" in (a, b) or a == b:
        return True
    if a in _NUMERIC and b in _NUMERIC:
        return True
    # ISO strings compare against date/time fields
    if {a, b} in ({"str", "date"}, {"str", "time"}):
        return True
    return False


def check_expr(node: Expr, resolve: TypeResolver) -> str:
    """Return the abstract type of `node`, raising on mismatches."""
    if isinstance(node, Lit):
        if node.value is None:
            return "none"
        if isinstance(node.value, bool):
            return "bool"
        if isinstance(node.value, int):
            return "int"
        if isinstance(node.value, float):
            return "float"
        return "str"
    if isinstance(node, Ref):
        return resolve(node.var, node.field)
    if isinstance(node, Unary):
        inner = check_expr(node.operand, resolve)
        if inner not in ("bool", "any"):
            raise TypeMismatchError(f"'not' needs a boolean, got {inner}")
        return "bool"
    if isinstance(node, Binary):
        left = check_expr(node.left, resolve)
        right = check_expr(node.right, resolve)
        if node.op in ("and", "or"):
            for side in (left, right):
                if side not in ("bool", "any"):
                    raise TypeMismatchError(f"'{node.op}' needs booleans, got {side}")
            return "bool"
        if node.op in ("==", "!="):
            if not _compatible(left, right) and "none" not in (left, right):
                raise TypeMismatchError(f"cannot compare {left} {node.op} {right}")
            return "bool"
        # ordering comparisons
        if not _compatible(left, right):
            raise TypeMismatchError(f"cannot compare {left} {node.op} {right}")
        if left != "any" and left not in _ORDERED:
            raise TypeMismatchError(f"{left} is not ordered")
        return "bool"
    if isinstance(node, Call):
        if node.name in ("is_filled", "is_refused"):
            if len(node.args) != 1 or not isinstance(node.args[0], Ref):
                raise TypeMismatchError(f"{node.name}() takes one field reference")
            check_expr(node.args[0], resolve)
            return "bool"
        if node.name == "len":
            if len(node.args) != 1:
                raise TypeMismatchError("len() takes one argument")
            inner = check_expr(node.args[0], resolve)
            if inner not in ("str", "list", "any"):
                raise TypeMismatchError(f"len() needs a string or list, got {inner}")
            return "int"
        if node.name == "contains":
            if len(node.args) != 2:
                raise TypeMismatchError("contains() takes two arguments")
            lst = check_expr(node.args[0], resolve)
            check_expr(node.args[1], resolve)
            if lst not in ("list", "any"):
                raise TypeMismatchError(f"contains() needs a list, got {lst}")
            return "bool"
        raise TypeMismatchError(f"unknown function {node.name}()")
    raise TypeError(node)


def check_predicate(node: Expr, resolve: TypeResolver) -> None:
    result = check_expr(node, resolve)
    if result not in ("bool", "any"):
        raise TypeMismatchError(f"predicate must be boolean, got {result}")


# --- evaluation ------------------------------------------------------------------------

class Scope(Protocol):
    """Read access to field values during predicate evaluation."""

    def lookup(self, var: str | None, field: str) -> Any: ...

    def is_filled(self, var: str | None, field: str) -> bool: ...

    def is_refused(self, var: str | None, field: str) -> bool: ...


class ActionScope(Scope, Protocol):
    """Scope with assignment, for action execution."""

    def assign(self, field: str, value: Any) -> None: ...


def _as_bool(value: Any) -> bool:
    if isinstance(value, Sentinel):
        return False
    return bool(value)


def _comparable(value: Any, other: Any) -> Any:
    """Coerce ISO strings when compared against date/time values."""
    if isinstance(other, dt.time) and isinstance(value, str):
        try:
            from .values import parse_time

            return parse_time(value)
        except ValueError:
            return value
    if isinstance(other, dt.date) and not isinstance(other, dt.datetime) and isinstance(value, str):
        try:
            from .values import parse_date

            return parse_date(value)
        except ValueError:
            return value
    return value


def eval_expr(node: Expr, scope: Scope) -> Any:
    if isinstance(node, Lit):
        return node.value
    if isinstance(node, Ref):
        return scope.lookup(node.var, node.field)
    if isinstance(node, Unary):
        return not _as_bool(eval_expr(node.operand, scope))
    if isinstance(node, Binary):
        if node.op == "and":
            return _as_bool(eval_expr(node.left, scope)) and _as_bool(eval_expr(node.right, scope))
        if node.op == "or":
            return _as_bool(eval_expr(node.left, scope)) or _as_bool(eval_expr(node.right, scope))
        left = eval_expr(node.left, scope)
        right = eval_expr(node.right, scope)
        # unfilled/refused references never satisfy a comparison
        if isinstance(left, Sentinel) or isinstance(right, Sentinel):
            return False
        left = _comparable(left, right)
        right = _comparable(right, left)
        try:
            if node.op == "==":
                return left == right
            if node.op == "!=":
                return left != right
            if node.op == "<":
                return left < right
            if node.op == "<=":
                return left <= right
            if node.op == ">":
                return left > right
            if node.op == ">=":
                return left >= right
        except TypeError:
            return False
        raise TypeError(node.op)
    if isinstance(node, Call):
        if node.name == "is_filled":
            ref = node.args[0]
            assert isinstance(ref, Ref)
            return scope.is_filled(ref.var, ref.field)
        if node.name == "is_refused":
            ref = node.args[0]
            assert isinstance(ref, Ref)
            return scope.is_refused(ref.var, ref.field)
        if node.name == "len":
            value = eval_expr(node.args[0], scope)
            if isinstance(value, Sentinel):
                return 0
            return len(value) if isinstance(value, (str, list, tuple, dict)) else 0
        if node.name == "contains":
            haystack = eval_expr(node.args[0], scope)
            needle = eval_expr(node.args[1], scope)
            if isinstance(haystack, Sentinel) or isinstance(needle, Sentinel):
                return False
            return needle in haystack if isinstance(haystack, (list, tuple, str)) else False
        raise TypeMismatchError(f"unknown function {node.name}()")
    raise TypeError(node)


def eval_predicate(node: Expr | None, scope: Scope) -> bool:
    """Evaluate a predicate; an absent predicate is unconditionally true."""
    if node is None:
        return True
    return _as_bool(eval_expr(node, scope))


# --- action execution --------------------------------------------------------------------

@dataclass(frozen=True)
class SayEffect:
    text: str


@dataclass(frozen=True)
class ProposeEffect:
    ws_name: str
    pairs: tuple[tuple[str, Any], ...]


@dataclass(frozen=True)
class CallEffect:
    api: str
    kwargs: tuple[tuple[str, Any], ...]
    result: Any
    target: str | None


Effect = SayEffect | ProposeEffect | CallEffect


class ApiCaller(Protocol):
    def call(self, name: str, kwargs: dict[str, Any]) -> Any: ...


def exec_actions(
    block: ActionBlock,
    scope: ActionScope,
    apis: ApiCaller,
    effects: list[Effect] | None = None,
) -> list[Effect]:
    """Run a block: assignments mutate the scope, the rest queue effects in order."""
    if effects is None:
        effects = []
    for stmt in block.statements:
        _exec_stmt(stmt, scope, apis, effects)
    return effects


def _exec_stmt(stmt: Stmt, scope: ActionScope, apis: ApiCaller, effects: list[Effect]) -> None:
    if isinstance(stmt, SayStmt):
        value = eval_expr(stmt.text, scope)
        effects.append(SayEffect("" if isinstance(value, Sentinel) else str(value)))
        return
    if isinstance(stmt, ProposeStmt):
        pairs = tuple((k, eval_expr(v, scope)) for k, v in stmt.pairs)
        effects.append(ProposeEffect(stmt.ws_name, pairs))
        return
    if isinstance(stmt, CallStmt):
        kwargs = {k: eval_expr(v, scope) for k, v in stmt.kwargs}
        result = apis.call(stmt.api, kwargs)
        effects.append(CallEffect(stmt.api, tuple(kwargs.items()), result, stmt.target))
        if stmt.target:
            scope.assign(stmt.target, result)
        return
    if isinstance(stmt, AssignStmt):
        scope.assign(stmt.field, eval_expr(stmt.value, scope))
        return
    if isinstance(stmt, IfStmt):
        if _as_bool(eval_expr(stmt.cond, scope)):
            for inner in stmt.body:
                _exec_stmt(inner, scope, apis, effects)
        return
    raise TypeError(stmt)
