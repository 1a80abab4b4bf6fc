"""Defenses: adversarial retraining on successful constrained attacks, and
constraint augmentation with engineered XOR features.

Augmentation builds one binary feature per pair of important mutable
features, defined as the XOR of two threshold tests against training-set
means, and pins it with a constraint so that attacks must keep the bit
consistent with its sources.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, replace

import numpy as np

from . import dsl
from .cpgd import AttackResult, cpgd, derive_seed
from .model import MLP, TrainConfig, auroc, train
from .moeva import moeva_attack
from .parallel import run_parallel
from .schema import Dataset, FeatureSchema, FeatureSpec, Scaler


@dataclass(frozen=True)
class EngineeredFeature:
    name: str
    source_a: str
    source_b: str
    threshold_a: float  # training mean of source_a, original units
    threshold_b: float


@dataclass
class AugmentationPlan:
    features: list[EngineeredFeature]
    constraints: list[str]  # one DSL line per engineered feature
    importance: dict[str, float]

    def constraint_set(self) -> dsl.ConstraintSet:
        return dsl.parse_constraints("\n".join(self.constraints))

    def to_json(self) -> str:
        return json.dumps(
            {
                "features": [vars(f) for f in self.features],
                "constraints": self.constraints,
                "importance": self.importance,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "AugmentationPlan":
        data = json.loads(text)
        return cls(
            [EngineeredFeature(**item) for item in data["features"]],
            list(data["constraints"]),
            dict(data["importance"]),
        )


def feature_importance(
    model: MLP,
    dataset: Dataset,
    schema: FeatureSchema,
    seed: int = 0,
    n_shuffles: int = 5,
    val_fraction: float = 0.2,
) -> np.ndarray:
    """Permutation importance: mean AUROC drop over shuffles of each column on
    a held-out split. Immutable features score 0. Deterministic given seed."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(dataset))
    n_val = max(int(round(len(dataset) * val_fraction)), 2)
    val_idx = perm[:n_val]
    Xv, yv = dataset.X[val_idx], dataset.y[val_idx]
    if len(np.unique(yv)) < 2:
        Xv, yv = dataset.X, dataset.y
    baseline = auroc(yv, model.predict_proba(Xv))
    scores = np.zeros(schema.n)
    for i, spec in enumerate(schema.features):
        if not schema.mutable_mask[i]:
            continue
        drops = []
        for _ in range(n_shuffles):
            shuffled = Xv.copy()
            shuffled[:, i] = shuffled[rng.permutation(len(Xv)), i]
            drops.append(baseline - auroc(yv, model.predict_proba(shuffled)))
        scores[i] = max(0.0, float(np.mean(drops)))
    return scores


def pair_budget(n_features: int) -> int:
    """Largest k with C(k,2) strictly below n_features / 4."""
    if math.comb(2, 2) >= n_features / 4:
        raise ValueError(
            f"{n_features} features leave no room for engineered pairs"
        )
    k = 2
    while math.comb(k + 1, 2) < n_features / 4:
        k += 1
    return k


def _xor_constraint(fe: EngineeredFeature) -> str:
    a = f"{fe.threshold_a!r} <= {fe.source_a}"
    not_a = f"{fe.source_a} < {fe.threshold_a!r}"
    b = f"{fe.threshold_b!r} <= {fe.source_b}"
    not_b = f"{fe.source_b} < {fe.threshold_b!r}"
    differ = f"(({a} and {not_b}) or ({not_a} and {b}))"
    agree = f"(({a} and {b}) or ({not_a} and {not_b}))"
    return f"({fe.name} = 1 and {differ}) or ({fe.name} = 0 and {agree})"


def build_plan(
    schema: FeatureSchema,
    dataset: Dataset,
    importance: np.ndarray,
    prefix: str = "xf",
) -> AugmentationPlan:
    """Select the top-k mutable features and emit one XOR feature per pair.

    Thresholds are training-set means in original units; ties in importance
    break by schema order.
    """
    mutable = [i for i in range(schema.n) if schema.mutable_mask[i]]
    if len(mutable) < 2:
        raise ValueError("augmentation needs at least two mutable features")
    if len(dataset) == 0:
        raise ValueError("augmentation thresholds need a non-empty training set")
    k = min(pair_budget(schema.n), len(mutable))
    ranked = sorted(mutable, key=lambda i: (-importance[i], i))[:k]
    # plain affine inverse: the kind-aware one would round integer-feature means
    means = schema.mins + dataset.X.mean(axis=0) * schema.ranges
    features = []
    for ia, ib in itertools.combinations(ranked, 2):
        fa, fb = schema.features[ia].name, schema.features[ib].name
        name = f"{prefix}_{fa}_{fb}"
        if name in schema.index:
            raise ValueError(f"engineered feature name collision: {name}")
        features.append(
            EngineeredFeature(name, fa, fb, float(means[ia]), float(means[ib]))
        )
    constraints = [f"{fe.name}_rule: {_xor_constraint(fe)}" for fe in features]
    scores = {schema.features[i].name: float(importance[i]) for i in range(schema.n)}
    return AugmentationPlan(features, constraints, scores)


def engineered_value(fe: EngineeredFeature, original_units: np.ndarray, schema: FeatureSchema) -> float:
    a = fe.threshold_a <= original_units[..., schema.index[fe.source_a]]
    b = fe.threshold_b <= original_units[..., schema.index[fe.source_b]]
    return np.asarray(a != b, dtype=float)


def augment(
    schema: FeatureSchema,
    dataset: Dataset,
    plan: AugmentationPlan,
) -> tuple[FeatureSchema, Dataset]:
    """Append the engineered binary features to the schema and fill their
    values; original columns and constraints are untouched."""
    for fe in plan.features:
        if fe.name in schema.index:
            raise ValueError(f"engineered feature name collision: {fe.name}")
    new_schema = FeatureSchema(
        list(schema.features)
        + [FeatureSpec(fe.name, "binary", 0.0, 1.0, True) for fe in plan.features]
    )
    originals = Scaler(schema).inverse(dataset.X) if len(dataset) else dataset.X
    columns = [engineered_value(fe, originals, schema) for fe in plan.features]
    X_new = (
        np.hstack([dataset.X] + [c[:, None] for c in columns])
        if len(dataset)
        else np.empty((0, new_schema.n))
    )
    return new_schema, Dataset(X_new, dataset.y.copy())


def augmented_constraints(omega: dsl.ConstraintSet, plan: AugmentationPlan) -> dsl.ConstraintSet:
    return dsl.ConstraintSet(list(omega) + list(plan.constraint_set()))


@dataclass
class RetrainResult:
    model: MLP
    n_attacked: int
    n_added: int
    adv_examples: np.ndarray  # scaled rows appended to the training set


def adversarial_retrain(
    model: MLP,
    train_set: Dataset,
    omega: dsl.ConstraintSet,
    schema: FeatureSchema,
    attack: str,
    attack_cfg,
    train_cfg: TrainConfig,
    hidden: tuple[int, ...] = (64, 64, 32),
    max_examples: int | None = None,
    seed: int = 0,
    n_jobs: int = 1,
) -> RetrainResult:
    """Attack eligible training examples (true class 1, classified 1), append
    the successful constrained adversarial examples with label 1, and retrain
    from scratch with the original training configuration."""
    if attack not in ("cpgd", "moeva"):
        raise ValueError("attack must be 'cpgd' or 'moeva'")
    threshold = attack_cfg.threshold
    probs = np.asarray(model.predict_proba(train_set.X))
    eligible = np.flatnonzero((train_set.y == 1) & (probs >= threshold))
    if len(eligible) == 0:
        raise ValueError("no eligible training examples to attack")
    if max_examples is not None and len(eligible) > max_examples:
        rng = np.random.default_rng(seed)
        eligible = np.sort(rng.choice(eligible, size=max_examples, replace=False))
    samples = train_set.X[eligible]

    if attack == "moeva":
        def attack_one(x):
            cfg = replace(attack_cfg, seed=derive_seed(attack_cfg.seed, x))
            return moeva_attack(model, x, schema, omega, cfg)
    else:
        def attack_one(x):
            cfg = replace(attack_cfg, seed=derive_seed(attack_cfg.seed, x))
            return cpgd(model, x, 1, schema, omega, cfg)

    results: list[AttackResult] = run_parallel(attack_one, samples, n_jobs)
    adv = [r.best for r in results if r.success]
    if adv:
        X_new = np.vstack([train_set.X, np.array(adv)])
        y_new = np.concatenate([train_set.y, np.ones(len(adv), dtype=int)])
    else:
        X_new, y_new = train_set.X, train_set.y
    retrained = train(Dataset(X_new, y_new), hidden=hidden, cfg=train_cfg)
    return RetrainResult(retrained, len(samples), len(adv), np.array(adv))
