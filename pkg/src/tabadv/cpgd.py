"""Projected gradient attacks: plain PGD (constraint-blind baseline) and
constrained PGD, which descends the loss-minus-penalty objective, repairs
repairable constraints each step, and projects back into the budget ball.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import dsl
from .dsl import ConstraintSet
from .model import MLP
from .penalty import EvalContext, PenaltyConfig, grad_total_penalty, repair_all, satisfies_all, total_penalty
from .schema import FeatureSchema, Scaler, distance, project_ball

EMPTY_OMEGA = ConstraintSet([])


def derive_seed(seed: int, sample: np.ndarray) -> int:
    """Stable per-sample seed from a batch seed and the sample bytes."""
    import hashlib

    digest = hashlib.sha256(np.ascontiguousarray(sample, dtype=float).tobytes())
    content = int.from_bytes(digest.digest()[:8], "little")
    return int(np.random.SeedSequence([seed, content]).generate_state(1)[0])


@dataclass(frozen=True)
class GradAttackConfig:
    eps: float = 0.5  # scaled-space budget
    p: float = 2
    alpha: float | None = None  # step size; defaults to eps / 10
    n_iter: int = 100
    random_init: bool = False
    threshold: float = 0.5
    penalty_weight: float = 1.0  # lambda on the penalty gradient term
    seed: int = 0
    penalty_cfg: PenaltyConfig = field(default_factory=PenaltyConfig)

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        step = self.step_size
        # alpha = 0 is tolerated as an explicit no-op configuration
        if step < 0 or step > self.eps:
            raise ValueError("need 0 <= alpha <= eps")
        if self.n_iter < 1:
            raise ValueError("n_iter must be >= 1")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must be in (0, 1)")

    @property
    def step_size(self) -> float:
        return self.eps / 10 if self.alpha is None else self.alpha


@dataclass
class AttackResult:
    """Outcome of one attack on one original example.

    The boolean flags describe the returned ``best`` example; the ``any_*``
    flags record whether any generated example within the budget was
    misclassified (M) or constraint-satisfying (C) during the search.
    """

    original: np.ndarray
    best: np.ndarray
    misclassified: bool
    constraints_ok: bool
    within_eps: bool
    success: bool
    iterations_used: int
    any_misclassified: bool = False
    any_constrained: bool = False
    best_objectives: tuple[float, float, float] = (math.nan, math.nan, math.nan)
    history: list | None = None

    def __post_init__(self):
        assert self.success == (
            self.misclassified and self.constraints_ok and self.within_eps
        )


class _BestTracker:
    """Lexicographic bookkeeping: success first, then lowest total penalty,
    then lowest predicted probability."""

    def __init__(self):
        self.key = None
        self.candidate = None

    def offer(self, x: np.ndarray, success: bool, pen: float, prob: float):
        key = (0 if success else 1, pen, prob)
        if self.key is None or key < self.key:
            self.key = key
            self.candidate = (x.copy(), success, pen, prob)


def _evaluate(
    x: np.ndarray,
    x0: np.ndarray,
    model: MLP,
    schema: FeatureSchema,
    omega: ConstraintSet,
    cfg: GradAttackConfig,
):
    prob = float(model.predict_proba(x))
    ctx = EvalContext.from_scaled(schema, x, x0)
    pen = float(total_penalty(omega, ctx, cfg.penalty_cfg))
    ok = bool(satisfies_all(omega, ctx))
    within = distance(x, x0, cfg.p) <= cfg.eps + 1e-9
    return prob, pen, ok, within


def _run(
    model: MLP,
    x0: np.ndarray,
    y: int,
    schema: FeatureSchema,
    omega: ConstraintSet,
    cfg: GradAttackConfig,
    constrained: bool,
    trace: list | None = None,
) -> AttackResult:
    if not hasattr(model, "input_gradient"):
        raise ValueError("predictor does not expose input gradients")
    x0 = np.asarray(x0, dtype=float)
    mask = schema.mutable_mask
    scaler = schema.scaler
    alpha = cfg.step_size
    smooth = (
        [c for c in omega if dsl.classify(c.expr) == dsl.SMOOTH] if constrained else []
    )
    smooth_set = ConstraintSet(smooth)
    has_repairs = constrained and any(
        dsl.classify(c.expr) == dsl.REPAIRABLE for c in omega
    )

    x = x0.copy()
    if cfg.random_init:
        rng = np.random.default_rng(cfg.seed)
        x = project_ball(x0 + rng.uniform(-cfg.eps, cfg.eps, size=schema.n) * mask,
                         x0, cfg.eps, cfg.p, schema)

    tracker = _BestTracker()
    any_mis = False
    any_con = False
    iterations = 0

    for _ in range(cfg.n_iter):
        iterations += 1
        g = model.input_gradient(x, y, mask)
        if constrained and smooth:
            ctx = EvalContext.from_scaled(schema, x, x0)
            g = g - cfg.penalty_weight * grad_total_penalty(smooth_set, ctx, cfg.penalty_cfg)
        x = x + alpha * np.sign(g) * mask
        if constrained and len(omega):
            # R: repair the non-back-propagated constraints, snap integer grids
            if has_repairs:
                x = np.clip(x, 0.0, 1.0)
                x = repair_all(x, omega, x0, schema)
            x = scaler.snap_to_grid(np.clip(x, 0.0, 1.0))
        x = project_ball(x, x0, cfg.eps, cfg.p, schema)
        if trace is not None:
            trace.append(x.copy())

        prob, pen, ok, within = _evaluate(x, x0, model, schema, omega, cfg)
        mis = prob < cfg.threshold
        any_mis = any_mis or (mis and within)
        any_con = any_con or (ok and within)
        tracker.offer(x, mis and ok and within, pen, prob)
        if not constrained and mis:
            break  # plain PGD stops at the first misclassifying iterate

    # Plain PGD returns the first misclassified iterate (that is where the
    # loop stopped) or the final one; C-PGD returns the tracked best.
    best = tracker.candidate[0] if constrained else x
    prob_b, pen_b, ok_b, within_b = _evaluate(best, x0, model, schema, omega, cfg)
    g2 = distance(best, x0, cfg.p)
    return AttackResult(
        original=x0,
        best=best,
        misclassified=prob_b < cfg.threshold,
        constraints_ok=ok_b,
        within_eps=within_b,
        success=(prob_b < cfg.threshold) and ok_b and within_b,
        iterations_used=iterations,
        any_misclassified=any_mis,
        any_constrained=any_con,
        best_objectives=(prob_b, g2, pen_b),
    )


def pgd(model: MLP, x: np.ndarray, y: int, schema: FeatureSchema, cfg: GradAttackConfig,
        omega: ConstraintSet = EMPTY_OMEGA, trace: list | None = None) -> AttackResult:
    """Constraint-blind sign-gradient ascent baseline; constraints, if given,
    are only reported on, never steered by."""
    return _run(model, x, y, schema, omega, cfg, constrained=False, trace=trace)


def cpgd(model: MLP, x: np.ndarray, y: int, schema: FeatureSchema,
         omega: ConstraintSet, cfg: GradAttackConfig, trace: list | None = None) -> AttackResult:
    """Constrained PGD: sign step on loss minus summed penalty gradients,
    repair, then projection; tracks the lexicographically best candidate."""
    return _run(model, x, y, schema, omega, cfg, constrained=True, trace=trace)


def attack_batch(
    model: MLP,
    samples: np.ndarray,
    schema: FeatureSchema,
    omega: ConstraintSet,
    cfg: GradAttackConfig,
    attack: str = "cpgd",
) -> list[AttackResult]:
    """Independent per-sample attacks, order-preserving and seed-deterministic.

    The per-sample seed is derived from the batch seed and the sample content,
    so duplicated samples produce identical results.
    """
    results = []
    for x in np.asarray(samples, dtype=float):
        sample_cfg = replace(cfg, seed=derive_seed(cfg.seed, x))
        if attack == "pgd":
            results.append(pgd(model, x, 1, schema, sample_cfg, omega))
        elif attack == "cpgd":
            results.append(cpgd(model, x, 1, schema, omega, sample_cfg))
        else:
            raise ValueError(f"unknown gradient attack {attack!r}")
    return results
