"""Penalty compilation of constraints: boolean evaluation, non-negative
penalties, subgradients over the AST, and exact repair of repairable
constraints.

Constraints are evaluated in original units; gradients are chain-ruled
through the scaler so attacks receive scaled-space vectors. Evaluation at
singular points (x/0, 0^negative, overflow) never raises: it yields an
"evaluation-invalid" state that makes comparisons false and penalties equal
to a large finite sentinel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import dsl
from .dsl import (
    And,
    AssignmentRepair,
    BinOp,
    Cmp,
    Const,
    ConstraintExpr,
    ConstraintSet,
    Feature,
    GuardedBitRepair,
    Membership,
    MembershipRepair,
    NumericExpr,
    Or,
    OrigFeature,
)
from .schema import FeatureSchema, Scaler


class NotSmoothError(ValueError):
    """Raised when grad_penalty is called on a non-smooth constraint."""


class NotRepairableError(ValueError):
    """Raised when repair is called on a constraint without a repair rule."""


@dataclass(frozen=True)
class PenaltyConfig:
    tau: float = 1e-6  # strict-inequality margin, original units
    invalid_sentinel: float = 1e6

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")


@dataclass
class EvalContext:
    """Candidate and original vectors in original units, schema-aligned.

    ``x`` may be a single vector (n,) or a batch (m, n); results broadcast.
    """

    schema: FeatureSchema
    x: np.ndarray
    x0: np.ndarray

    @classmethod
    def from_scaled(cls, schema: FeatureSchema, x: np.ndarray, x0: np.ndarray) -> "EvalContext":
        scaler = schema.scaler
        return cls(schema, scaler.inverse(x), scaler.inverse(x0))

    def _batch_shape(self) -> tuple[int, ...]:
        return np.asarray(self.x).shape[:-1]


def _eval_num(expr: NumericExpr, ctx: EvalContext):
    """Evaluate a numeric expression; returns (values, invalid_mask), broadcastable."""
    if isinstance(expr, Const):
        return np.float64(expr.value), np.False_
    if isinstance(expr, Feature):
        return np.asarray(ctx.x)[..., ctx.schema.index[expr.name]], np.False_
    if isinstance(expr, OrigFeature):
        return np.asarray(ctx.x0)[..., ctx.schema.index[expr.name]], np.False_
    v1, i1 = _eval_num(expr.left, ctx)
    v2, i2 = _eval_num(expr.right, ctx)
    invalid = np.logical_or(i1, i2)
    with np.errstate(all="ignore"):
        if expr.op == "+":
            v = v1 + v2
        elif expr.op == "-":
            v = v1 - v2
        elif expr.op == "*":
            v = v1 * v2
        elif expr.op == "/":
            v = np.divide(v1, np.where(v2 == 0, 1.0, v2))
            invalid = invalid | (v2 == 0)
        elif expr.op == "^":
            v = np.power(np.asarray(v1, dtype=float), v2)
        else:
            raise ValueError(f"unknown operator {expr.op}")
    invalid = invalid | ~np.isfinite(np.where(invalid, 0.0, v))
    return v, invalid


def eval_bool(omega: ConstraintExpr, ctx: EvalContext):
    """Exact boolean semantics; invalid subexpressions make comparisons false."""
    if isinstance(omega, And):
        return np.logical_and(eval_bool(omega.left, ctx), eval_bool(omega.right, ctx))
    if isinstance(omega, Or):
        return np.logical_or(eval_bool(omega.left, ctx), eval_bool(omega.right, ctx))
    if isinstance(omega, Membership):
        f, _ = _eval_num(omega.feature, ctx)
        hit = np.False_
        for cand in omega.candidates:
            v, inv = _eval_num(cand, ctx)
            hit = np.logical_or(hit, np.logical_and(f == v, ~inv))
        return np.broadcast_to(hit, ctx._batch_shape()) if hit.shape == () else hit
    if isinstance(omega, Cmp):
        v1, i1 = _eval_num(omega.left, ctx)
        v2, i2 = _eval_num(omega.right, ctx)
        invalid = np.logical_or(i1, i2)
        with np.errstate(invalid="ignore"):
            res = _CMP_FUNCS[omega.rel](v1, v2)
        res = np.logical_and(res, ~invalid)
        return np.broadcast_to(res, ctx._batch_shape()) if res.shape == () else res
    raise TypeError(f"not a constraint: {omega!r}")


_CMP_FUNCS = {
    "<": np.less,
    "<=": np.less_equal,
    "=": np.equal,
    "!=": np.not_equal,
    ">=": np.greater_equal,
    ">": np.greater,
}


def penalty(omega: ConstraintExpr, ctx: EvalContext, cfg: PenaltyConfig = PenaltyConfig()):
    """Non-negative distance to satisfaction; zero iff eval_bool holds (up to tau)."""
    if isinstance(omega, And):
        return penalty(omega.left, ctx, cfg) + penalty(omega.right, ctx, cfg)
    if isinstance(omega, Or):
        return np.minimum(penalty(omega.left, ctx, cfg), penalty(omega.right, ctx, cfg))
    if isinstance(omega, Membership):
        f, _ = _eval_num(omega.feature, ctx)
        best = None
        for cand in omega.candidates:
            v, inv = _eval_num(cand, ctx)
            d = np.where(inv, cfg.invalid_sentinel, np.abs(f - np.where(inv, 0.0, v)))
            best = d if best is None else np.minimum(best, d)
        return np.broadcast_to(best, ctx._batch_shape()) if best.shape == () else best
    if isinstance(omega, Cmp):
        v1, i1 = _eval_num(omega.left, ctx)
        v2, i2 = _eval_num(omega.right, ctx)
        invalid = np.logical_or(i1, i2)
        v1 = np.where(invalid, 0.0, v1)
        v2 = np.where(invalid, 0.0, v2)
        if omega.rel == "<=":
            p = np.maximum(0.0, v1 - v2)
        elif omega.rel == "<":
            p = np.maximum(0.0, v1 - v2 + cfg.tau)
        elif omega.rel == ">=":
            p = np.maximum(0.0, v2 - v1)
        elif omega.rel == ">":
            p = np.maximum(0.0, v2 - v1 + cfg.tau)
        elif omega.rel == "=":
            p = np.abs(v1 - v2)
        elif omega.rel == "!=":
            p = np.maximum(0.0, cfg.tau - np.abs(v1 - v2))
        else:
            raise ValueError(f"unknown relation {omega.rel}")
        p = np.where(invalid, cfg.invalid_sentinel, p)
        return np.broadcast_to(p, ctx._batch_shape()) if p.shape == () else p
    raise TypeError(f"not a constraint: {omega!r}")


def total_penalty(omega: ConstraintSet, ctx: EvalContext, cfg: PenaltyConfig = PenaltyConfig()):
    """Sum of per-constraint penalties; zero iff every constraint is satisfied."""
    total = np.zeros(ctx._batch_shape())
    for named in omega:
        total = total + penalty(named.expr, ctx, cfg)
    return total


def satisfies_all(omega: ConstraintSet, ctx: EvalContext):
    """Exact conjunction of eval_bool over the set (vacuously true when empty)."""
    ok = np.ones(ctx._batch_shape(), dtype=bool)
    for named in omega:
        ok = np.logical_and(ok, eval_bool(named.expr, ctx))
    return ok


# -- differentiation ---------------------------------------------------------


def _grad_num(expr: NumericExpr, ctx: EvalContext):
    """Value and gradient (original units) of a numeric expression at ctx.x.

    Returns (value, grad) or (None, None) when evaluation is invalid at this
    point. Scalar path: ctx.x must be a single vector.
    """
    n = ctx.schema.n
    if isinstance(expr, Const):
        return expr.value, np.zeros(n)
    if isinstance(expr, Feature):
        i = ctx.schema.index[expr.name]
        g = np.zeros(n)
        g[i] = 1.0
        return float(ctx.x[i]), g
    if isinstance(expr, OrigFeature):
        return float(ctx.x0[ctx.schema.index[expr.name]]), np.zeros(n)
    v1, g1 = _grad_num(expr.left, ctx)
    v2, g2 = _grad_num(expr.right, ctx)
    if v1 is None or v2 is None:
        return None, None
    op = expr.op
    if op == "+":
        v, g = v1 + v2, g1 + g2
    elif op == "-":
        v, g = v1 - v2, g1 - g2
    elif op == "*":
        v, g = v1 * v2, g1 * v2 + v1 * g2
    elif op == "/":
        if v2 == 0:
            return None, None
        v, g = v1 / v2, (g1 * v2 - v1 * g2) / (v2 * v2)
    elif op == "^":
        v, g = _grad_pow(v1, g1, v2, g2)
        if v is None:
            return None, None
    else:
        raise ValueError(f"unknown operator {op}")
    if not (math.isfinite(v) and np.isfinite(g).all()):
        return None, None
    return v, g


def _grad_pow(u, gu, w, gw):
    # d(u^w) needs ln(u) only when the exponent actually varies here.
    exponent_fixed = not gw.any()
    if u > 0:
        v = u**w
        if not math.isfinite(v):
            return None, None
        return v, v * (gw * math.log(u) + w * gu / u)
    if not exponent_fixed:
        return None, None
    if u == 0:
        if w > 1:
            return 0.0, np.zeros_like(gu)
        if w == 1:
            return 0.0, gu
        return None, None  # 0^w with w <= 0 diverges; w in (0,1) has no gradient
    # u < 0: defined only for integral exponents.
    if w != int(w):
        return None, None
    v = u**w
    return v, w * u ** (w - 1) * gu


def grad_penalty(
    omega: ConstraintExpr,
    ctx: EvalContext,
    cfg: PenaltyConfig = PenaltyConfig(),
) -> np.ndarray:
    """Subgradient of penalty(omega) w.r.t. the scaled candidate vector.

    Kink conventions: max(0, u) has gradient 0 at u <= 0; |u| has gradient 0
    at u = 0; min(a, b) follows the smaller branch, left on ties. The
    original-unit gradient is chain-ruled through the scaler and immutable
    coordinates are zeroed.
    """
    if dsl.classify(omega) != dsl.SMOOTH:
        raise NotSmoothError(f"constraint is not smooth: {dsl.to_string(omega)}")
    _, grad = _grad_constraint(omega, ctx, cfg)
    scaled = grad * ctx.schema.ranges
    scaled[~ctx.schema.mutable_mask] = 0.0
    return scaled


def _grad_constraint(omega: ConstraintExpr, ctx: EvalContext, cfg: PenaltyConfig):
    n = ctx.schema.n
    if isinstance(omega, And):
        p1, g1 = _grad_constraint(omega.left, ctx, cfg)
        p2, g2 = _grad_constraint(omega.right, ctx, cfg)
        return p1 + p2, g1 + g2
    if isinstance(omega, Or):
        p1, g1 = _grad_constraint(omega.left, ctx, cfg)
        p2, g2 = _grad_constraint(omega.right, ctx, cfg)
        return (p1, g1) if p1 <= p2 else (p2, g2)
    if isinstance(omega, Cmp):
        v1, g1 = _grad_num(omega.left, ctx)
        v2, g2 = _grad_num(omega.right, ctx)
        if v1 is None or v2 is None:
            return cfg.invalid_sentinel, np.zeros(n)
        if omega.rel in ("<=", "<"):
            u = v1 - v2 + (cfg.tau if omega.rel == "<" else 0.0)
            du = g1 - g2
        elif omega.rel in (">=", ">"):
            u = v2 - v1 + (cfg.tau if omega.rel == ">" else 0.0)
            du = g2 - g1
        elif omega.rel == "=":
            d = v1 - v2
            if d == 0:
                return 0.0, np.zeros(n)
            return abs(d), math.copysign(1.0, d) * (g1 - g2)
        else:
            raise NotSmoothError(f"relation {omega.rel} is not smooth")
        if u > 0:
            return u, du
        return 0.0, np.zeros(n)
    raise NotSmoothError("membership constraints are not smooth")


def grad_total_penalty(
    omega: ConstraintSet,
    ctx: EvalContext,
    cfg: PenaltyConfig = PenaltyConfig(),
) -> np.ndarray:
    """Sum of grad_penalty over the smooth constraints of the set (scaled space)."""
    out = np.zeros(ctx.schema.n)
    for named in omega:
        if dsl.classify(named.expr) == dsl.SMOOTH:
            out += grad_penalty(named.expr, ctx, cfg)
    return out


# -- repair ------------------------------------------------------------------


def _assign_original(x_scaled: np.ndarray, i: int, value: float, schema: FeatureSchema) -> None:
    """Set scaled coordinate i so that inverse-transforming yields `value` exactly."""
    spec = schema.features[i]
    value = min(max(value, spec.min), spec.max)
    if spec.kind in ("integer", "binary"):
        value = round(value)
    if spec.max == spec.min:
        x_scaled[i] = 0.0
        return
    s = (value - spec.min) / (spec.max - spec.min)
    # Float min-max round trips can be off by an ulp; probe the neighbours.
    for cand in (s, np.nextafter(s, 1.0), np.nextafter(s, -1.0)):
        back = spec.min + cand * (spec.max - spec.min)
        if spec.kind in ("integer", "binary"):
            back = round(back)
        if back == value:
            x_scaled[i] = cand
            return
    x_scaled[i] = s


def repair(x: np.ndarray, omega: ConstraintExpr, ctx: EvalContext) -> np.ndarray:
    """Deterministically fix a repairable constraint on a scaled sample.

    Membership snaps the subject to the nearest candidate (lowest index on
    ties); a lone-feature equality assigns the evaluated right side; a guarded
    bit assignment picks the branch whose guard holds. Integer features are
    snapped to the integer grid. Only features named by the constraint move.
    """
    rule = dsl.find_repair_rule(omega)
    if rule is None:
        raise NotRepairableError(f"no repair rule for: {dsl.to_string(omega)}")
    out = np.array(x, dtype=float)
    schema = ctx.schema
    if isinstance(rule, MembershipRepair):
        i = schema.index[rule.feature]
        current = float(np.asarray(ctx.x)[..., i])
        best_val, best_dist = None, math.inf
        for cand in rule.candidates:
            v, inv = _eval_num(cand, ctx)
            if bool(inv):
                continue
            d = abs(current - float(v))
            if d < best_dist:
                best_val, best_dist = float(v), d
        if best_val is not None:
            _assign_original(out, i, best_val, schema)
        return out
    if isinstance(rule, AssignmentRepair):
        v, inv = _eval_num(rule.value, ctx)
        if not bool(inv):
            _assign_original(out, schema.index[rule.feature], float(v), schema)
        return out
    if isinstance(rule, GuardedBitRepair):
        for bit, guard in rule.branches:
            if bool(eval_bool(guard, ctx)):
                _assign_original(out, schema.index[rule.feature], bit, schema)
                break
        return out
    raise NotRepairableError(f"unhandled repair rule {rule!r}")


def repair_all(
    x: np.ndarray,
    omega: ConstraintSet,
    x0: np.ndarray,
    schema: FeatureSchema,
) -> np.ndarray:
    """Apply repairable constraints in set order, then one extra full pass.

    A later repair may break an earlier one; remaining violations are left to
    the penalty objective. Inputs and output are scaled vectors.
    """
    repairable = [c for c in omega if dsl.classify(c.expr) == dsl.REPAIRABLE]
    if not repairable:
        return np.array(x, dtype=float)
    out = np.array(x, dtype=float)
    for _ in range(2):
        for named in repairable:
            ctx = EvalContext.from_scaled(schema, out, x0)
            out = repair(out, named.expr, ctx)
    return out
