"""Shipped synthetic benchmark: a 12-feature constrained tabular task.

Every generated row satisfies the six domain constraints by construction
(a linear equality, a ratio bound, a membership grid, an increase-only
feature, a quadratic energy cap, and a strict floor), so originals are valid
starting points for the attacks. The label mixes several feature signals
with noise, which keeps the classifier learnable but attackable.
"""

from __future__ import annotations

import csv
import os

import numpy as np

from . import dsl
from .schema import Dataset, FeatureSchema, Scaler, parse_schema

SCHEMA_TEXT = """\
# synthetic constrained benchmark
base_a continuous 0 4 mutable
base_b continuous 0 4 mutable
total  continuous 0 8 mutable
rate   continuous 0.1 2.0 mutable
cap    continuous 0.5 2.5 mutable
level  integer 0 8 mutable
count  integer 0 50 mutable
load   continuous 0 3 mutable
amp    continuous 0 3 mutable
shift  continuous -2 2 mutable
guard  continuous 0 1 mutable
region binary 0 1 immutable
"""

CONSTRAINTS_TEXT = """\
# domain rules for the synthetic benchmark
sum_parts:   total = base_a + base_b
ratio_cap:   rate / cap <= 1.5
level_grid:  level in {0, 2, 4, 6, 8}
count_up:    count >= orig(count)
energy:      load ^ 2 + amp ^ 2 <= 10
guard_floor: guard > 0.05
"""

# label signal weights over roughly [-1, 1]-standardized features
_WEIGHTS = {
    "level": 1.1,
    "count": 0.9,
    "load": 1.1,
    "amp": -1.0,
    "shift": 0.9,
    "rate": 0.6,
    "cap": -0.4,
    "region": 0.8,
    "guard": 0.3,
}
_LEVEL_STEP = 2.3  # extra +-step at level >= 4; most of the level signal sits there
_INTERACTION = 0.5  # load x amp cross term
_NOISE_STD = 0.5


def benchmark_schema() -> FeatureSchema:
    return parse_schema(SCHEMA_TEXT)


def benchmark_constraints() -> dsl.ConstraintSet:
    return dsl.parse_constraints(CONSTRAINTS_TEXT)


def _score(cols: dict[str, np.ndarray]) -> np.ndarray:
    z = {
        "level": (cols["level"] - 4.0) / 4.0,
        "count": (cols["count"] - 25.0) / 25.0,
        "load": (cols["load"] - 1.5) / 1.5,
        "amp": (cols["amp"] - 1.5) / 1.5,
        "shift": cols["shift"] / 2.0,
        "rate": (cols["rate"] - 1.05) / 0.95,
        "cap": (cols["cap"] - 1.5) / 1.0,
        "region": 2.0 * cols["region"] - 1.0,
        "guard": (cols["guard"] - 0.55) / 0.45,
    }
    s = sum(_WEIGHTS[name] * z[name] for name in _WEIGHTS)
    s = s + _LEVEL_STEP * np.where(cols["level"] >= 4.0, 1.0, -1.0)
    return s + _INTERACTION * z["load"] * z["amp"]


def generate(n_samples: int = 5000, seed: int = 7) -> tuple[np.ndarray, np.ndarray]:
    """Original-unit feature matrix and labels; all constraints hold exactly."""
    rng = np.random.default_rng(seed)
    base_a = rng.uniform(0.2, 3.8, n_samples)
    base_b = rng.uniform(0.2, 3.8, n_samples)
    total = base_a + base_b
    cap = rng.uniform(0.5, 2.5, n_samples)
    rate = np.clip(1.5 * cap * rng.uniform(0.05, 1.0, n_samples), 0.1, 2.0)
    level = 2.0 * rng.integers(0, 5, n_samples)
    count = rng.integers(0, 51, n_samples).astype(float)
    load = rng.uniform(0.0, 3.0, n_samples)
    amp = rng.uniform(0.0, 3.0, n_samples)
    hot = load * load + amp * amp > 10.0
    while hot.any():
        load[hot] = rng.uniform(0.0, 3.0, int(hot.sum()))
        amp[hot] = rng.uniform(0.0, 3.0, int(hot.sum()))
        hot = load * load + amp * amp > 10.0
    shift = rng.uniform(-2.0, 2.0, n_samples)
    guard = rng.uniform(0.1, 1.0, n_samples)
    region = rng.integers(0, 2, n_samples).astype(float)

    cols = {
        "base_a": base_a,
        "base_b": base_b,
        "total": total,
        "rate": rate,
        "cap": cap,
        "level": level,
        "count": count,
        "load": load,
        "amp": amp,
        "shift": shift,
        "guard": guard,
        "region": region,
    }
    y = (_score(cols) + rng.normal(0.0, _NOISE_STD, n_samples) > 0.0).astype(int)
    schema = benchmark_schema()
    X = np.column_stack([cols[f.name] for f in schema.features])
    return X, y


def make_benchmark(
    n_samples: int = 5000, seed: int = 7, test_fraction: float = 0.2
) -> tuple[FeatureSchema, dsl.ConstraintSet, Dataset, Dataset]:
    """In-memory benchmark: schema, constraints, scaled train and test splits."""
    schema = benchmark_schema()
    X, y = generate(n_samples, seed)
    scaler = Scaler(schema)
    Xs = np.array([scaler.transform(row) for row in X])
    rng = np.random.default_rng(seed + 1)
    perm = rng.permutation(n_samples)
    n_test = int(round(n_samples * test_fraction))
    test_idx, train_idx = perm[:n_test], perm[n_test:]
    return (
        schema,
        benchmark_constraints(),
        Dataset(Xs[train_idx], y[train_idx]),
        Dataset(Xs[test_idx], y[test_idx]),
    )


def write_benchmark(
    out_dir: str, n_samples: int = 5000, seed: int = 7, test_fraction: float = 0.2
) -> dict[str, str]:
    """Write schema.txt, constraints.txt, train.csv, and test.csv."""
    os.makedirs(out_dir, exist_ok=True)
    schema = benchmark_schema()
    X, y = generate(n_samples, seed)
    rng = np.random.default_rng(seed + 1)
    perm = rng.permutation(n_samples)
    n_test = int(round(n_samples * test_fraction))
    splits = {"test": perm[:n_test], "train": perm[n_test:]}

    paths = {
        "schema": os.path.join(out_dir, "schema.txt"),
        "constraints": os.path.join(out_dir, "constraints.txt"),
        "train": os.path.join(out_dir, "train.csv"),
        "test": os.path.join(out_dir, "test.csv"),
    }
    with open(paths["schema"], "w", encoding="utf-8") as fh:
        fh.write(SCHEMA_TEXT)
    with open(paths["constraints"], "w", encoding="utf-8") as fh:
        fh.write(CONSTRAINTS_TEXT)
    header = [f.name for f in schema.features] + ["label"]
    for split, idx in splits.items():
        with open(paths[split], "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in idx:
                writer.writerow([repr(float(v)) for v in X[i]] + [int(y[i])])
    return paths
