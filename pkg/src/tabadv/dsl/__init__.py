"""Constraint language: AST, parser, validation, and attack-facing classification."""

from .analysis import (
    OPAQUE,
    REPAIRABLE,
    SMOOTH,
    AssignmentRepair,
    Diagnostic,
    GuardedBitRepair,
    MembershipRepair,
    RepairRule,
    classify,
    find_repair_rule,
    validate,
    validate_set,
)
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
    features_in,
    to_string,
)
from .parser import ParseError, load_constraints, parse, parse_constraints

__all__ = [
    "And",
    "AssignmentRepair",
    "BinOp",
    "Cmp",
    "Const",
    "ConstraintExpr",
    "ConstraintSet",
    "Diagnostic",
    "Feature",
    "GuardedBitRepair",
    "Membership",
    "MembershipRepair",
    "NamedConstraint",
    "NumericExpr",
    "OPAQUE",
    "Or",
    "OrigFeature",
    "ParseError",
    "REPAIRABLE",
    "RepairRule",
    "SMOOTH",
    "classify",
    "features_in",
    "find_repair_rule",
    "load_constraints",
    "parse",
    "parse_constraints",
    "to_string",
    "validate",
    "validate_set",
]
