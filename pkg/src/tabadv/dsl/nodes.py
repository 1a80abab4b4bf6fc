"""AST node types for the constraint language.

Numeric expressions combine constants, candidate feature values, original
feature values (``orig(name)``) and arithmetic; constraint formulae combine
comparisons, membership tests, and boolean connectives.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

ARITH_OPS = ("+", "-", "*", "/", "^")
CMP_OPS = ("<", "<=", "=", "!=", ">=", ">")


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Feature:
    name: str
    pos: tuple[int, int] | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class OrigFeature:
    """The original (pre-attack) value of a feature."""

    name: str
    pos: tuple[int, int] | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "NumericExpr"
    right: "NumericExpr"


NumericExpr = Union[Const, Feature, OrigFeature, BinOp]


@dataclass(frozen=True)
class Cmp:
    rel: str
    left: NumericExpr
    right: NumericExpr


@dataclass(frozen=True)
class And:
    left: "ConstraintExpr"
    right: "ConstraintExpr"


@dataclass(frozen=True)
class Or:
    left: "ConstraintExpr"
    right: "ConstraintExpr"


@dataclass(frozen=True)
class Membership:
    feature: Feature
    candidates: tuple[NumericExpr, ...]

    def __post_init__(self):
        if not self.candidates:
            raise ValueError("membership candidate list must be non-empty")


ConstraintExpr = Union[Cmp, And, Or, Membership]


@dataclass(frozen=True)
class NamedConstraint:
    name: str
    expr: ConstraintExpr


class ConstraintSet:
    """Ordered, named constraint formulae (the full Omega)."""

    def __init__(self, constraints: list[NamedConstraint] | tuple[NamedConstraint, ...]):
        self.constraints: tuple[NamedConstraint, ...] = tuple(constraints)

    def __iter__(self):
        return iter(self.constraints)

    def __len__(self) -> int:
        return len(self.constraints)

    def exprs(self) -> list[ConstraintExpr]:
        return [c.expr for c in self.constraints]


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 3}


def _num_str(expr: NumericExpr, min_prec: int = 0) -> str:
    if isinstance(expr, Const):
        return repr(expr.value)
    if isinstance(expr, Feature):
        return expr.name
    if isinstance(expr, OrigFeature):
        return f"orig({expr.name})"
    prec = _PREC[expr.op]
    # ^ is right-associative; the others are left-associative. A child is
    # parenthesized when its own precedence falls below what its side demands.
    if expr.op == "^":
        left, right = _num_str(expr.left, prec + 1), _num_str(expr.right, prec)
    else:
        left, right = _num_str(expr.left, prec), _num_str(expr.right, prec + 1)
    text = f"{left} {expr.op} {right}"
    return f"({text})" if prec < min_prec else text


def to_string(expr: ConstraintExpr | NumericExpr) -> str:
    """Render an AST back to concrete syntax; reparsing yields an equal AST."""
    if isinstance(expr, (Const, Feature, OrigFeature, BinOp)):
        return _num_str(expr)
    if isinstance(expr, Cmp):
        return f"{_num_str(expr.left)} {expr.rel} {_num_str(expr.right)}"
    if isinstance(expr, Membership):
        inner = ", ".join(_num_str(c) for c in expr.candidates)
        return f"{expr.feature.name} in {{{inner}}}"
    if isinstance(expr, And):
        return f"{_bool_operand(expr.left, And)} and {_bool_operand(expr.right, And)}"
    if isinstance(expr, Or):
        return f"{_bool_operand(expr.left, Or)} or {_bool_operand(expr.right, Or)}"
    raise TypeError(f"not an AST node: {expr!r}")


def _bool_operand(expr: ConstraintExpr, parent: type) -> str:
    text = to_string(expr)
    # `and` binds tighter than `or`: parenthesize an Or under an And, and any
    # right-nested same-operator chain to keep the tree shape on reparse.
    if parent is And and isinstance(expr, (Or, And)):
        return f"({text})"
    if parent is Or and isinstance(expr, Or):
        return f"({text})"
    return text


def features_in(expr: ConstraintExpr | NumericExpr, include_orig: bool = True) -> set[str]:
    """Names of all features referenced by an expression."""
    out: set[str] = set()

    def walk(node):
        if isinstance(node, Feature):
            out.add(node.name)
        elif isinstance(node, OrigFeature):
            if include_orig:
                out.add(node.name)
        elif isinstance(node, BinOp):
            walk(node.left)
            walk(node.right)
        elif isinstance(node, Cmp):
            walk(node.left)
            walk(node.right)
        elif isinstance(node, (And, Or)):
            walk(node.left)
            walk(node.right)
        elif isinstance(node, Membership):
            walk(node.feature)
            for c in node.candidates:
                walk(c)

    walk(expr)
    return out
