"""Constraint validation against a schema and smooth/repairable/opaque classification."""

from __future__ import annotations

from dataclasses import dataclass

from ..schema import FeatureSchema
from .nodes import (
    And,
    BinOp,
    Cmp,
    Const,
    ConstraintExpr,
    ConstraintSet,
    Feature,
    Membership,
    NumericExpr,
    Or,
    OrigFeature,
    features_in,
)

SMOOTH = "smooth"
REPAIRABLE = "repairable"
OPAQUE = "opaque"


@dataclass(frozen=True)
class Diagnostic:
    message: str
    line: int | None = None
    col: int | None = None

    def __str__(self) -> str:
        if self.line is None:
            return self.message
        return f"{self.line}:{self.col}: {self.message}"


def validate(omega: ConstraintExpr, schema: FeatureSchema) -> list[Diagnostic]:
    """Check that every feature reference resolves; returns diagnostics, raises nothing."""
    diags: list[Diagnostic] = []

    def walk(node):
        if isinstance(node, (Feature, OrigFeature)):
            if node.name not in schema.index:
                line, col = node.pos if node.pos else (None, None)
                diags.append(Diagnostic(f"unknown feature {node.name}", line, col))
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

    walk(omega)
    return diags


def validate_set(omega: ConstraintSet, schema: FeatureSchema) -> list[Diagnostic]:
    diags = []
    for named in omega:
        for d in validate(named.expr, schema):
            diags.append(Diagnostic(f"{named.name}: {d.message}", d.line, d.col))
    return diags


# -- repair rules ------------------------------------------------------------
#
# A constraint is repairable when a registered deterministic repair can force
# it to hold exactly: membership snapping, functional assignment of a lone
# left-side feature, or a guarded bit assignment (disjunction of conjunctions
# that each pin one feature to a constant under mutually exclusive guards).


@dataclass(frozen=True)
class MembershipRepair:
    feature: str
    candidates: tuple[NumericExpr, ...]


@dataclass(frozen=True)
class AssignmentRepair:
    feature: str
    value: NumericExpr


@dataclass(frozen=True)
class GuardedBitRepair:
    feature: str
    branches: tuple[tuple[float, ConstraintExpr], ...]  # (bit value, guard)


RepairRule = MembershipRepair | AssignmentRepair | GuardedBitRepair


def _bit_branch(node: ConstraintExpr) -> tuple[str, float, ConstraintExpr] | None:
    """Match And(Cmp(=, Feature, Const), guard) in either operand order."""
    if not isinstance(node, And):
        return None
    for eq, guard in ((node.left, node.right), (node.right, node.left)):
        if (
            isinstance(eq, Cmp)
            and eq.rel == "="
            and isinstance(eq.left, Feature)
            and isinstance(eq.right, Const)
        ):
            if eq.left.name not in features_in(guard):
                return eq.left.name, eq.right.value, guard
    return None


def find_repair_rule(omega: ConstraintExpr) -> RepairRule | None:
    if isinstance(omega, Membership):
        return MembershipRepair(omega.feature.name, omega.candidates)
    if isinstance(omega, Cmp) and omega.rel == "=" and isinstance(omega.left, Feature):
        # Assignment only works when the right side does not read the target.
        if omega.left.name not in features_in(omega.right):
            return AssignmentRepair(omega.left.name, omega.right)
    if isinstance(omega, Or):
        # Flatten the or-chain and require every branch to pin the same feature.
        branches: list[tuple[float, ConstraintExpr]] = []
        stack = [omega]
        leaves = []
        while stack:
            node = stack.pop()
            if isinstance(node, Or):
                stack.extend([node.right, node.left])
            else:
                leaves.append(node)
        feature = None
        for leaf in leaves:
            matched = _bit_branch(leaf)
            if matched is None:
                return None
            name, value, guard = matched
            if feature is None:
                feature = name
            elif feature != name:
                return None
            branches.append((value, guard))
        if feature is not None and len(branches) >= 2:
            return GuardedBitRepair(feature, tuple(branches))
    return None


def _contains_nonsmooth(node) -> bool:
    if isinstance(node, Membership):
        return True
    if isinstance(node, Cmp):
        return node.rel == "!="
    if isinstance(node, (And, Or)):
        return _contains_nonsmooth(node.left) or _contains_nonsmooth(node.right)
    return False


def classify(omega: ConstraintExpr) -> str:
    """Classify a validated constraint for the gradient attack.

    Repair rules take precedence: anything a registered repair can fix exactly
    is handled by R rather than back-propagated. Remaining constraints are
    smooth when their penalty is differentiable almost everywhere (no
    membership, no !=), and opaque otherwise.
    """
    if find_repair_rule(omega) is not None:
        return REPAIRABLE
    if not _contains_nonsmooth(omega):
        return SMOOTH
    return OPAQUE
