"""Tokenizer and recursive-descent parser for the constraint language.

Precedence, loosest to tightest: `or` < `and` < comparisons < {+,-} < {*,/}
< `^` (right-associative). Parentheses group either numeric expressions or
whole constraint formulae; the parser resolves the ambiguity by letting an
atom return either kind and demanding the right kind at each level.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .nodes import (
    And,
    BinOp,
    Cmp,
    Const,
    ConstraintExpr,
    ConstraintSet,
    Feature,
    Membership,
    NamedConstraint,
    NumericExpr,
    Or,
    OrigFeature,
)


class ParseError(ValueError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.line = line
        self.col = col


@dataclass(frozen=True)
class Token:
    kind: str  # number | ident | op
    text: str
    line: int
    col: int


_TOKEN_RE = re.compile(
    r"""
    (?P<number>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|>=|!=|[-+*/^=<>(){},])
  | (?P<ws>\s+)
  | (?P<bad>.)
    """,
    re.VERBOSE,
)

KEYWORDS = ("and", "or", "in", "orig")
_CMP_TOKENS = ("<", "<=", "=", "!=", ">=", ">")


def tokenize(text: str, line: int = 1) -> list[Token]:
    tokens = []
    for m in _TOKEN_RE.finditer(text):
        kind = m.lastgroup
        if kind == "ws":
            if "\n" in m.group():
                line += m.group().count("\n")
            continue
        col = m.start() + 1
        if kind == "bad":
            raise ParseError(f"unexpected character {m.group()!r}", line, col)
        tokens.append(Token(kind, m.group(), line, col))
    return tokens


class _Parser:
    def __init__(self, tokens: list[Token], line: int = 1):
        self.tokens = tokens
        self.i = 0
        self.line = line

    def peek(self) -> Token | None:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def next(self) -> Token:
        tok = self.peek()
        if tok is None:
            raise ParseError("unexpected end of input", self.line, 0)
        self.i += 1
        return tok

    def expect(self, text: str) -> Token:
        tok = self.next()
        if tok.text != text:
            raise ParseError(f"expected {text!r}, got {tok.text!r}", tok.line, tok.col)
        return tok

    def fail(self, message: str) -> ParseError:
        tok = self.peek()
        if tok is None:
            return ParseError(message + " at end of input", self.line, 0)
        return ParseError(f"{message} at token {tok.text!r}", tok.line, tok.col)

    def _at_keyword(self, kw: str) -> bool:
        tok = self.peek()
        return tok is not None and tok.kind == "ident" and tok.text == kw

    # -- the precedence tower; each level returns NumericExpr or ConstraintExpr

    def parse_or(self):
        node = self.parse_and()
        while self._at_keyword("or"):
            self.next()
            right = self.parse_and()
            node = Or(self._as_constraint(node), self._as_constraint(right))
        return node

    def parse_and(self):
        node = self.parse_cmp()
        while self._at_keyword("and"):
            self.next()
            right = self.parse_cmp()
            node = And(self._as_constraint(node), self._as_constraint(right))
        return node

    def parse_cmp(self):
        node = self.parse_additive()
        tok = self.peek()
        if tok is not None and tok.kind == "ident" and tok.text == "in":
            if not isinstance(node, Feature):
                raise ParseError(
                    "membership subject must be a feature name", tok.line, tok.col
                )
            self.next()
            return self._parse_candidates(node)
        if tok is not None and tok.text in _CMP_TOKENS:
            self.next()
            right = self.parse_additive()
            node = Cmp(tok.text, self._as_numeric(node, tok), self._as_numeric(right, tok))
            nxt = self.peek()
            if nxt is not None and nxt.text in _CMP_TOKENS:
                raise ParseError("chained comparisons are not allowed", nxt.line, nxt.col)
        return node

    def _parse_candidates(self, subject: Feature) -> Membership:
        self.expect("{")
        candidates = [self._as_numeric(self.parse_additive())]
        while self.peek() is not None and self.peek().text == ",":
            self.next()
            candidates.append(self._as_numeric(self.parse_additive()))
        self.expect("}")
        return Membership(subject, tuple(candidates))

    def parse_additive(self):
        node = self.parse_multiplicative()
        while self.peek() is not None and self.peek().text in ("+", "-"):
            op = self.next()
            right = self.parse_multiplicative()
            node = BinOp(op.text, self._as_numeric(node, op), self._as_numeric(right, op))
        return node

    def parse_multiplicative(self):
        node = self.parse_power()
        while self.peek() is not None and self.peek().text in ("*", "/"):
            op = self.next()
            right = self.parse_power()
            right_n = self._as_numeric(right, op)
            if op.text == "/" and isinstance(right_n, Const) and right_n.value == 0:
                raise ParseError("division by literal zero", op.line, op.col)
            node = BinOp(op.text, self._as_numeric(node, op), right_n)
        return node

    def parse_power(self):
        node = self.parse_atom()
        tok = self.peek()
        if tok is not None and tok.text == "^":
            self.next()
            right = self.parse_power()  # right-associative
            node = BinOp("^", self._as_numeric(node, tok), self._as_numeric(right, tok))
        return node

    def parse_atom(self):
        tok = self.peek()
        if tok is None:
            raise self.fail("expected expression")
        if tok.text == "(":
            self.next()
            node = self.parse_or()
            self.expect(")")
            return node
        if tok.kind == "number":
            self.next()
            return Const(float(tok.text))
        if tok.text == "-":
            # Unary minus is supported for numeric literals only.
            self.next()
            num = self.peek()
            if num is None or num.kind != "number":
                raise ParseError("'-' must precede a number here", tok.line, tok.col)
            self.next()
            return Const(-float(num.text))
        if tok.kind == "ident":
            if tok.text == "orig":
                self.next()
                self.expect("(")
                name = self.next()
                if name.kind != "ident" or name.text in KEYWORDS:
                    raise ParseError("orig() takes a feature name", name.line, name.col)
                self.expect(")")
                return OrigFeature(name.text, (name.line, name.col))
            if tok.text in KEYWORDS:
                raise ParseError(f"unexpected keyword {tok.text!r}", tok.line, tok.col)
            self.next()
            return Feature(tok.text, (tok.line, tok.col))
        raise self.fail("expected expression")

    # -- kind coercion helpers

    def _as_constraint(self, node) -> ConstraintExpr:
        if isinstance(node, (Cmp, And, Or, Membership)):
            return node
        raise self.fail("expected a constraint (comparison or membership)")

    def _as_numeric(self, node, tok: Token | None = None) -> NumericExpr:
        if isinstance(node, (Const, Feature, OrigFeature, BinOp)):
            return node
        if tok is not None:
            raise ParseError(
                "constraint used where a numeric expression is required",
                tok.line,
                tok.col,
            )
        raise self.fail("expected a numeric expression")


def parse(text: str, line: int = 1) -> ConstraintExpr:
    """Parse a single constraint formula."""
    parser = _Parser(tokenize(text, line), line)
    node = parser.parse_or()
    tok = parser.peek()
    if tok is not None:
        raise ParseError(f"trailing input {tok.text!r}", tok.line, tok.col)
    if not isinstance(node, (Cmp, And, Or, Membership)):
        raise ParseError("expected a constraint, got a bare numeric expression", line, 1)
    return node


def parse_constraints(text: str) -> ConstraintSet:
    """Parse a constraint file body: one constraint per line, optional `name:` prefix."""
    constraints = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if not stripped:
            continue
        name = f"c{len(constraints) + 1}"
        m = re.match(r"^([A-Za-z_][A-Za-z0-9_]*)\s*:\s*(.*)$", stripped)
        if m:
            name, stripped = m.group(1), m.group(2)
        constraints.append(NamedConstraint(name, parse(stripped, lineno)))
    return ConstraintSet(constraints)


def load_constraints(path: str) -> ConstraintSet:
    with open(path, encoding="utf-8") as fh:
        return parse_constraints(fh.read())
