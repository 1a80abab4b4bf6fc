"""Feature space definition, dataset loading, min-max scaling, and perturbation distances.

All attack-facing vectors live in the scaled [0,1]^n space; the scaler maps
back and forth to original units, where constraints are evaluated.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

KINDS = ("continuous", "integer", "binary")


class SchemaError(ValueError):
    """Raised for malformed schema files or schema invariant violations."""


@dataclass(frozen=True)
class FeatureSpec:
    """One feature: name, kind, bounds in original units, mutability."""

    name: str
    kind: str
    min: float
    max: float
    mutable: bool

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown kind {self.kind!r} for feature {self.name}")
        if self.min > self.max:
            raise SchemaError(f"min > max for feature {self.name}")
        if self.kind == "binary" and (self.min, self.max) != (0.0, 1.0):
            raise SchemaError(f"binary feature {self.name} must have bounds 0 1")
        if self.kind == "integer" and (
            self.min != int(self.min) or self.max != int(self.max)
        ):
            raise SchemaError(f"integer feature {self.name} needs integral bounds")

    @property
    def degenerate(self) -> bool:
        return self.min == self.max


class FeatureSchema:
    """Ordered feature descriptors; index order is the canonical vector order.

    Degenerate features (min == max) are treated as immutable constants and
    scale to 0.
    """

    def __init__(self, features: list[FeatureSpec] | tuple[FeatureSpec, ...]):
        names = [f.name for f in features]
        for name in names:
            if names.count(name) > 1:
                raise SchemaError(f"duplicate feature {name}")
        self.features: tuple[FeatureSpec, ...] = tuple(features)
        self.index = {f.name: i for i, f in enumerate(self.features)}
        self.mins = np.array([f.min for f in self.features], dtype=float)
        self.maxs = np.array([f.max for f in self.features], dtype=float)
        self.ranges = self.maxs - self.mins
        self.mutable_mask = np.array(
            [f.mutable and not f.degenerate for f in self.features], dtype=bool
        )

    @property
    def n(self) -> int:
        return len(self.features)

    @property
    def scaler(self) -> "Scaler":
        if not hasattr(self, "_scaler"):
            self._scaler = Scaler(self)
        return self._scaler

    def __iter__(self):
        return iter(self.features)

    def kind_of(self, name: str) -> str:
        return self.features[self.index[name]].kind

    def content_hash(self) -> str:
        import hashlib

        text = "\n".join(
            f"{f.name} {f.kind} {f.min!r} {f.max!r} {int(f.mutable)}"
            for f in self.features
        )
        return hashlib.sha256(text.encode()).hexdigest()[:16]


class Scaler:
    """Per-feature min-max scaling between original units and [0,1].

    Integer and binary features are rounded to their grid on the inverse
    transform so that integral originals round-trip exactly.
    """

    def __init__(self, schema: FeatureSchema):
        self.schema = schema
        self._grid = np.array(
            [f.kind in ("integer", "binary") for f in schema.features], dtype=bool
        )
        self._safe_ranges = np.where(schema.ranges > 0, schema.ranges, 1.0)

    def transform(self, values: np.ndarray) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        return np.where(self.schema.ranges > 0, (v - self.schema.mins) / self._safe_ranges, 0.0)

    def inverse(self, scaled: np.ndarray) -> np.ndarray:
        s = np.asarray(scaled, dtype=float)
        v = self.schema.mins + s * self.schema.ranges
        return np.where(self._grid, np.round(v), v)

    def snap_to_grid(self, scaled: np.ndarray) -> np.ndarray:
        """Round integer/binary coordinates of a scaled vector to their nearest valid grid point."""
        out = np.array(scaled, dtype=float)
        if not self._grid.any():
            return out
        orig = self.schema.mins + out * self.schema.ranges
        snapped = np.clip(np.round(orig), self.schema.mins, self.schema.maxs)
        grid_scaled = np.where(
            self.schema.ranges > 0,
            (snapped - self.schema.mins) / self._safe_ranges,
            0.0,
        )
        out[self._grid] = grid_scaled[self._grid]
        return out


@dataclass
class Dataset:
    """Samples in scaled space plus binary labels."""

    X: np.ndarray  # (n_samples, n) scaled to [0,1]
    y: np.ndarray  # (n_samples,) in {0,1}

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=int)
        if len(self.X) != len(self.y):
            raise SchemaError("samples and labels differ in length")
        if len(self.y) and not np.isin(self.y, (0, 1)).all():
            raise SchemaError("labels must be 0 or 1")

    def __len__(self) -> int:
        return len(self.y)


def parse_schema(text: str, source: str = "<schema>") -> FeatureSchema:
    """Parse schema text: one `name kind min max mutable|immutable` per line."""
    features = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise SchemaError(
                f"{source}:{lineno}: expected 'name kind min max mutable|immutable'"
            )
        name, kind, mn, mx, mut = parts
        if mut not in ("mutable", "immutable"):
            raise SchemaError(f"{source}:{lineno}: bad mutability {mut!r}")
        try:
            spec = FeatureSpec(name, kind, float(mn), float(mx), mut == "mutable")
        except SchemaError as exc:
            raise SchemaError(f"{source}:{lineno}: {exc}") from None
        except ValueError:
            raise SchemaError(f"{source}:{lineno}: non-numeric bound") from None
        if any(f.name == name for f in features):
            raise SchemaError(f"{source}:{lineno}: duplicate feature {name}")
        features.append(spec)
    if not features:
        raise SchemaError(f"{source}: empty schema")
    return FeatureSchema(features)


def load_schema(path: str) -> FeatureSchema:
    """Parse a schema file: one `name kind min max mutable|immutable` per line."""
    with open(path, encoding="utf-8") as fh:
        return parse_schema(fh.read(), source=path)


def load_dataset(path: str, schema: FeatureSchema) -> Dataset:
    """Load a CSV of original-unit values (+ `label` column) and scale to [0,1]."""
    scaler = Scaler(schema)
    rows, labels = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: missing header")
        header = [h.strip() for h in header]
        expected = [f.name for f in schema.features] + ["label"]
        missing = [c for c in expected if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        col = {name: header.index(name) for name in expected}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                values = np.array(
                    [float(row[col[f.name]]) for f in schema.features], dtype=float
                )
                label = float(row[col["label"]])
            except (ValueError, IndexError):
                raise SchemaError(f"{path}:{lineno}: non-numeric cell") from None
            if label not in (0.0, 1.0):
                raise SchemaError(f"{path}:{lineno}: label must be 0 or 1")
            if (values < schema.mins - 1e-9).any() or (values > schema.maxs + 1e-9).any():
                bad = int(np.argmax((values < schema.mins) | (values > schema.maxs)))
                raise SchemaError(
                    f"{path}:{lineno}: value {values[bad]} out of bounds for "
                    f"{schema.features[bad].name}"
                )
            rows.append(scaler.transform(values))
            labels.append(int(label))
    X = np.array(rows, dtype=float) if rows else np.empty((0, schema.n))
    return Dataset(X, np.array(labels, dtype=int))


def save_dataset(path: str, dataset: Dataset, schema: FeatureSchema) -> None:
    """Write a dataset back to CSV in original units."""
    scaler = Scaler(schema)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f.name for f in schema.features] + ["label"])
        for x, y in zip(dataset.X, dataset.y):
            writer.writerow([repr(float(v)) for v in scaler.inverse(x)] + [int(y)])


def distance(x: np.ndarray, x0: np.ndarray, p: float) -> float:
    """Lp norm of x - x0 in scaled space; p in {1, 2, inf}."""
    x = np.asarray(x, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    if x.shape != x0.shape:
        raise ValueError("length mismatch")
    delta = x - x0
    if p == 1:
        return float(np.abs(delta).sum())
    if p == 2:
        return float(np.sqrt((delta * delta).sum()))
    if p == math.inf:
        return float(np.abs(delta).max(initial=0.0))
    raise ValueError(f"unsupported norm order {p}")


def _project_l1(delta: np.ndarray, eps: float) -> np.ndarray:
    # Euclidean projection onto the L1 ball (Duchi et al. 2008).
    a = np.abs(delta)
    if a.sum() <= eps:
        return delta
    u = np.sort(a)[::-1]
    css = np.cumsum(u)
    ks = np.arange(1, len(u) + 1)
    rho = np.nonzero(u * ks > (css - eps))[0][-1]
    theta = (css[rho] - eps) / (rho + 1.0)
    return np.sign(delta) * np.maximum(a - theta, 0.0)


def project_ball(
    x: np.ndarray,
    x0: np.ndarray,
    eps: float,
    p: float,
    schema: FeatureSchema,
) -> np.ndarray:
    """Clip x into the eps-ball around x0 (scaled space) and the [0,1] box.

    Immutable coordinates are restored to x0's values. Idempotent.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    delta = np.where(schema.mutable_mask, x - x0, 0.0)
    if p == 2:
        norm = float(np.sqrt((delta * delta).sum()))
        if norm > eps:
            delta = delta * (eps / norm)
    elif p == math.inf:
        delta = np.clip(delta, -eps, eps)
    elif p == 1:
        delta = _project_l1(delta, eps)
    else:
        raise ValueError(f"unsupported norm order {p}")
    return np.clip(x0 + delta, 0.0, 1.0)
