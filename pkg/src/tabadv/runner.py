"""Experiment orchestration: target selection, attack dispatch, the
C / M / C&M success metrics, and deterministic report files.

Success is counted per original example: C when some generated example within
the budget satisfied every constraint (checked by exact boolean evaluation,
never by penalty tolerance), M when some example within the budget was
misclassified, and C&M when a single example achieved both.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import __version__, dsl
from .cpgd import AttackResult, GradAttackConfig, cpgd, derive_seed, pgd
from .model import MLP, load as load_model
from .moeva import GAConfig, moeva_attack
from .parallel import run_parallel
from .penalty import EvalContext, satisfies_all
from .schema import Dataset, FeatureSchema, distance, load_dataset, load_schema

GRADIENT_ATTACKS = ("pgd", "cpgd")
ATTACKS = GRADIENT_ATTACKS + ("moeva",)


@dataclass(frozen=True)
class Metrics:
    C: float
    M: float
    CandM: float
    n_targets: int

    def __post_init__(self):
        if not 0 <= self.CandM <= min(self.C, self.M) <= 100:
            raise ValueError("need 0 <= CandM <= min(C, M) <= 100")


@dataclass
class ExperimentConfig:
    schema_path: str
    constraints_path: str
    dataset_path: str
    model_path: str
    attack: str
    out_dir: str
    n_targets: int = 100
    selection_seed: int = 0
    attack_seed: int = 0
    eps: float = 0.5
    p: float = 2
    threshold: float = 0.5
    n_jobs: int = 1
    save_histories: bool = False
    attack_params: dict = field(default_factory=dict)  # attack-specific overrides

    def __post_init__(self):
        if self.attack not in ATTACKS:
            raise ValueError(f"unknown attack {self.attack!r}")
        for path in (
            self.schema_path,
            self.constraints_path,
            self.dataset_path,
            self.model_path,
        ):
            if not os.path.exists(path):
                raise FileNotFoundError(path)

    def canonical(self) -> dict:
        # execution details (output location, parallelism, extra dumps) do not
        # change the experiment identity and stay out of the hash
        data = vars(self).copy()
        for key in ("out_dir", "n_jobs", "save_histories"):
            data.pop(key)
        data["attack_params"] = dict(sorted(self.attack_params.items()))
        return data

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def select_targets(
    model: MLP,
    test_set: Dataset,
    n: int,
    seed: int,
    threshold: float = 0.5,
) -> tuple[np.ndarray, np.ndarray]:
    """Indices and samples of label-1 test examples the model classifies as 1.

    When more than n are eligible, a seeded uniform subsample is taken; the
    returned order follows the dataset order either way.
    """
    probs = np.asarray(model.predict_proba(test_set.X))
    eligible = np.flatnonzero((test_set.y == 1) & (probs >= threshold))
    if len(eligible) == 0:
        raise ValueError("no eligible attack targets (label 1, classified 1)")
    if len(eligible) > n:
        rng = np.random.default_rng(seed)
        eligible = np.sort(rng.choice(eligible, size=n, replace=False))
    return eligible, test_set.X[eligible]


def compute_metrics(results: Sequence[AttackResult]) -> Metrics:
    """Per-original success percentages over the attacked examples."""
    if not results:
        raise ValueError("no attack results to aggregate")
    c = float(np.mean([r.any_constrained for r in results]) * 100)
    m = float(np.mean([r.any_misclassified for r in results]) * 100)
    cm = float(np.mean([r.success for r in results]) * 100)
    return Metrics(C=c, M=m, CandM=cm, n_targets=len(results))


def revalidate(
    result: AttackResult,
    model: MLP,
    schema: FeatureSchema,
    omega: dsl.ConstraintSet,
    eps: float,
    p: float,
    threshold: float = 0.5,
) -> bool:
    """Independent re-check of a reported success: exact constraint evaluation,
    distance within budget, and an actual misclassification."""
    ctx = EvalContext.from_scaled(schema, result.best, result.original)
    ok = bool(satisfies_all(omega, ctx))
    within = distance(result.best, result.original, p) <= eps + 1e-9
    mis = float(model.predict_proba(result.best)) < threshold
    return ok and within and mis


def build_attack_config(cfg: ExperimentConfig):
    common = dict(eps=cfg.eps, p=cfg.p, threshold=cfg.threshold, seed=cfg.attack_seed)
    if cfg.attack in GRADIENT_ATTACKS:
        return GradAttackConfig(**common, **cfg.attack_params)
    return GAConfig(**common, **cfg.attack_params)


def run_attacks(
    model: MLP,
    samples: np.ndarray,
    schema: FeatureSchema,
    omega: dsl.ConstraintSet,
    attack: str,
    attack_cfg,
    n_jobs: int = 1,
) -> list[AttackResult]:
    """Dispatch independent per-original attacks to the worker pool.

    Per-sample seeds derive from the attack seed and the sample content, so
    results are identical at any worker count.
    """
    if attack == "pgd":
        def one(x):
            return pgd(model, x, 1, schema, replace(attack_cfg, seed=derive_seed(attack_cfg.seed, x)), omega)
    elif attack == "cpgd":
        def one(x):
            return cpgd(model, x, 1, schema, omega, replace(attack_cfg, seed=derive_seed(attack_cfg.seed, x)))
    elif attack == "moeva":
        def one(x):
            return moeva_attack(model, x, schema, omega, replace(attack_cfg, seed=derive_seed(attack_cfg.seed, x)))
    else:
        raise ValueError(f"unknown attack {attack!r}")
    return run_parallel(one, list(np.asarray(samples, dtype=float)), n_jobs)


def success_curve(results: Sequence[AttackResult]) -> list[tuple[int, float]]:
    """Aggregate cumulative success rate per generation over all originals."""
    with_history = [r for r in results if r.history]
    if not with_history:
        return []
    n_gen = max(h[-1].generation for h in (r.history for r in with_history))
    curve = []
    for gen in range(n_gen + 1):
        hits = 0
        for r in with_history:
            rows = r.history
            row = rows[gen] if gen < len(rows) else rows[-1]
            hits += bool(row.cumulative_success)
        curve.append((gen, hits / len(with_history)))
    return curve


def write_history_csv(result: AttackResult, path: str) -> None:
    """Per-original generation log: generation, cumulative_success, best objectives."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["generation", "cumulative_success", "best_g1", "best_g2", "best_g3"])
        for row in result.history or []:
            writer.writerow(
                [row.generation, int(row.cumulative_success), repr(row.best_g1), repr(row.best_g2), repr(row.best_g3)]
            )


def run_experiment(cfg: ExperimentConfig) -> Metrics:
    """Load artifacts, attack the selected targets, and write the report files.

    Outputs in cfg.out_dir: metrics.json (with a reproducibility stamp),
    per_example.csv, curve.csv for the evolutionary attack, and optional
    per-original history files. Byte-identical across reruns and worker counts.
    """
    schema = load_schema(cfg.schema_path)
    omega = dsl.load_constraints(cfg.constraints_path)
    problems = dsl.validate_set(omega, schema)
    if problems:
        raise ValueError("constraints do not match schema: " + "; ".join(map(str, problems)))
    test_set = load_dataset(cfg.dataset_path, schema)
    model = load_model(cfg.model_path)

    indices, samples = select_targets(
        model, test_set, cfg.n_targets, cfg.selection_seed, cfg.threshold
    )
    attack_cfg = build_attack_config(cfg)
    results = run_attacks(model, samples, schema, omega, cfg.attack, attack_cfg, cfg.n_jobs)

    for result in results:
        if result.success and not revalidate(
            result, model, schema, omega, cfg.eps, cfg.p, cfg.threshold
        ):
            raise AssertionError("reported success failed independent re-validation")

    metrics = compute_metrics(results)
    os.makedirs(cfg.out_dir, exist_ok=True)

    with open(os.path.join(cfg.out_dir, "metrics.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {
                "attack": cfg.attack,
                "C": metrics.C,
                "M": metrics.M,
                "CandM": metrics.CandM,
                "n_targets": metrics.n_targets,
                "eps": cfg.eps,
                "p": cfg.p,
                "threshold": cfg.threshold,
                "stamp": {
                    "selection_seed": cfg.selection_seed,
                    "attack_seed": cfg.attack_seed,
                    "config_sha256": cfg.config_hash(),
                    "version": __version__,
                },
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")

    with open(os.path.join(cfg.out_dir, "per_example.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "original_index",
                "success",
                "misclassified",
                "constraints_ok",
                "within_eps",
                "any_misclassified",
                "any_constrained",
                "best_g1",
                "best_g2",
                "best_g3",
                "iterations_used",
            ]
        )
        for idx, r in zip(indices, results):
            g1, g2, g3 = r.best_objectives
            writer.writerow(
                [
                    int(idx),
                    int(r.success),
                    int(r.misclassified),
                    int(r.constraints_ok),
                    int(r.within_eps),
                    int(r.any_misclassified),
                    int(r.any_constrained),
                    repr(g1),
                    repr(g2),
                    repr(g3),
                    r.iterations_used,
                ]
            )

    curve = success_curve(results)
    if curve:
        with open(os.path.join(cfg.out_dir, "curve.csv"), "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["generation", "success_rate"])
            for gen, rate in curve:
                writer.writerow([gen, repr(rate)])

    if cfg.save_histories:
        hist_dir = os.path.join(cfg.out_dir, "histories")
        os.makedirs(hist_dir, exist_ok=True)
        for idx, r in zip(indices, results):
            if r.history:
                write_history_csv(r, os.path.join(hist_dir, f"target_{int(idx):05d}.csv"))

    return metrics
