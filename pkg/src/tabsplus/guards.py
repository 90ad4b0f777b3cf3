"""Guard expressions attached to sequence flows leaving exclusive and
inclusive fork gateways.

The grammar is a small total language over event payload fields::

    expr    := or
    or      := and ( "or" and )*
    and     := not ( "and" not )*
    not     := "not" not | atom
    atom    := "(" expr ")" | comparison | "true" | "false" | field
    compare := operand ( "==" | "!=" | "<" | "<=" | ">" | ">=" ) operand
    operand := number | string | "true" | "false" | field

Fields are bare identifiers resolved against the payload dict. Evaluation is
total: a missing field or a type mismatch raises ``GuardEval`` instead of
silently yielding false, so conformance failures are attributable.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

from .errors import GuardEval, GuardSyntax

_TOKEN_RE = re.compile(
    r"""\s*(?:
        (?P<num>-?\d+(?:\.\d+)?)
      | (?P<str>'[^']*'|"[^"]*")
      | (?P<op>==|!=|<=|>=|<|>|\(|\))
      | (?P<word>[A-Za-z_][A-Za-z0-9_.]*)
    )""",
    re.VERBOSE,
)

_CMP_OPS = {"==", "!=", "<", "<=", ">", ">="}


@dataclass(frozen=True)
class Lit:
    value: Union[int, float, str, bool]


@dataclass(frozen=True)
class Field:
    name: str


@dataclass(frozen=True)
class Cmp:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Not:
    item: object


@dataclass(frozen=True)
class And:
    items: tuple


@dataclass(frozen=True)
class Or:
    items: tuple


@dataclass(frozen=True)
class Guard:
    """Parsed guard plus its source text (kept for serialization)."""

    text: str
    ast: object

    def evaluate(self, payload: dict) -> bool:
        return _eval(self.ast, payload)


TRUE = Guard("true", Lit(True))


def _tokenize(text: str) -> list[tuple[str, str]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m or m.end() == pos:
            rest = text[pos:].strip()
            if not rest:
                break
            raise GuardSyntax(f"cannot tokenize guard at: {rest!r}")
        pos = m.end()
        if m.group("num") is not None:
            tokens.append(("num", m.group("num")))
        elif m.group("str") is not None:
            tokens.append(("str", m.group("str")[1:-1]))
        elif m.group("op") is not None:
            tokens.append(("op", m.group("op")))
        else:
            tokens.append(("word", m.group("word")))
    return tokens


class _Parser:
    def __init__(self, tokens: list[tuple[str, str]], text: str):
        self.tokens = tokens
        self.i = 0
        self.text = text

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, None)

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect_op(self, op: str):
        kind, val = self.take()
        if kind != "op" or val != op:
            raise GuardSyntax(f"expected {op!r} in guard {self.text!r}")

    def parse(self):
        node = self.parse_or()
        if self.i != len(self.tokens):
            raise GuardSyntax(f"trailing tokens in guard {self.text!r}")
        return node

    def parse_or(self):
        items = [self.parse_and()]
        while self.peek() == ("word", "or"):
            self.take()
            items.append(self.parse_and())
        return items[0] if len(items) == 1 else Or(tuple(items))

    def parse_and(self):
        items = [self.parse_not()]
        while self.peek() == ("word", "and"):
            self.take()
            items.append(self.parse_not())
        return items[0] if len(items) == 1 else And(tuple(items))

    def parse_not(self):
        if self.peek() == ("word", "not"):
            self.take()
            return Not(self.parse_not())
        return self.parse_atom()

    def parse_atom(self):
        kind, val = self.peek()
        if kind == "op" and val == "(":
            self.take()
            node = self.parse_or()
            self.expect_op(")")
            return self._maybe_comparison(node)
        operand = self.parse_operand()
        return self._maybe_comparison(operand)

    def _maybe_comparison(self, left):
        kind, val = self.peek()
        if kind == "op" and val in _CMP_OPS:
            self.take()
            right = self.parse_operand()
            return Cmp(val, left, right)
        return left

    def parse_operand(self):
        kind, val = self.take()
        if kind == "num":
            return Lit(float(val) if "." in val else int(val))
        if kind == "str":
            return Lit(val)
        if kind == "word":
            if val == "true":
                return Lit(True)
            if val == "false":
                return Lit(False)
            if val in ("and", "or", "not"):
                raise GuardSyntax(f"misplaced keyword {val!r} in guard {self.text!r}")
            return Field(val)
        raise GuardSyntax(f"unexpected end of guard {self.text!r}")


def parse_guard(text: str) -> Guard:
    text = text.strip()
    if not text:
        raise GuardSyntax("empty guard expression")
    tokens = _tokenize(text)
    if not tokens:
        raise GuardSyntax("empty guard expression")
    return Guard(text, _Parser(tokens, text).parse())


def _resolve(node, payload: dict):
    if isinstance(node, Lit):
        return node.value
    if isinstance(node, Field):
        cur = payload
        for part in node.name.split("."):
            if not isinstance(cur, dict) or part not in cur:
                raise GuardEval(f"payload field {node.name!r} is missing")
            cur = cur[part]
        return cur
    # nested boolean expression used as an operand
    return _eval(node, payload)


def _eval(node, payload: dict) -> bool:
    if isinstance(node, (Lit, Field)):
        val = _resolve(node, payload)
        if not isinstance(val, bool):
            raise GuardEval(f"guard atom is not boolean: {val!r}")
        return val
    if isinstance(node, Not):
        return not _eval(node.item, payload)
    if isinstance(node, And):
        result = True
        for item in node.items:
            result = _eval(item, payload) and result  # evaluate all: totality
        return result
    if isinstance(node, Or):
        result = False
        for item in node.items:
            result = _eval(item, payload) or result
        return result
    if isinstance(node, Cmp):
        left = _resolve(node.left, payload)
        right = _resolve(node.right, payload)
        return _compare(node.op, left, right)
    raise GuardEval(f"unknown guard node {node!r}")


def _compare(op: str, left, right) -> bool:
    numeric = lambda v: isinstance(v, (int, float)) and not isinstance(v, bool)
    if numeric(left) and numeric(right):
        pass
    elif isinstance(left, str) and isinstance(right, str):
        pass
    elif isinstance(left, bool) and isinstance(right, bool):
        if op not in ("==", "!="):
            raise GuardEval(f"ordering comparison on booleans: {op}")
    else:
        raise GuardEval(f"type mismatch in comparison: {left!r} {op} {right!r}")
    if op == "==":
        return left == right
    if op == "!=":
        return left != right
    if op == "<":
        return left < right
    if op == "<=":
        return left <= right
    if op == ">":
        return left > right
    return left >= right
