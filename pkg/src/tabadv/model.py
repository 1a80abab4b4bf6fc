"""Built-in multilayer perceptron: training, probability scoring, and input
gradients for the gradient attack.

Any probability-scoring object with ``predict_proba`` can stand in for the
MLP in the evolutionary attack; the gradient attack additionally requires
``input_gradient``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .schema import Dataset

ACTIVATIONS = ("relu", "sigmoid")


class ModelError(ValueError):
    """Raised for malformed model files or incompatible shapes."""


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 256
    learning_rate: float = 1e-3
    seed: int = 0
    class_weighting: bool = True
    val_fraction: float = 0.2
    # Adam moments
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("hyperparameters must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")


@dataclass
class Layer:
    w: np.ndarray  # (n_in, n_out)
    b: np.ndarray  # (n_out,)
    act: str

    def __post_init__(self):
        if self.act not in ACTIVATIONS:
            raise ModelError(f"unknown activation {self.act!r}")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class MLP:
    """Feed-forward binary scorer; the final layer is always sigmoid-activated."""

    def __init__(self, layers: list[Layer], schema_hash: str | None = None):
        if not layers:
            raise ModelError("empty layer list")
        if layers[-1].act != "sigmoid" or layers[-1].w.shape[1] != 1:
            raise ModelError("final layer must be a single sigmoid unit")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.w.shape[1] != nxt.w.shape[0]:
                raise ModelError("layer dimensions do not chain")
        for layer in layers:
            if layer.b.shape != (layer.w.shape[1],):
                raise ModelError("bias shape mismatch")
            if not (np.isfinite(layer.w).all() and np.isfinite(layer.b).all()):
                raise ModelError("non-finite parameters")
        self.layers = layers
        self.schema_hash = schema_hash
        self.val_auroc: float | None = None  # set by train(), not serialized

    @property
    def n_inputs(self) -> int:
        return self.layers[0].w.shape[0]

    def _forward(self, X: np.ndarray) -> list[np.ndarray]:
        """Activations per layer, input first (kept for backprop)."""
        acts = [X]
        a = X
        for layer in self.layers:
            z = a @ layer.w + layer.b
            a = _sigmoid(z) if layer.act == "sigmoid" else np.maximum(z, 0.0)
            acts.append(a)
        return acts

    def predict_proba(self, x: np.ndarray) -> np.ndarray | float:
        """Probability of class 1; accepts a single vector or a batch."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = x[None, :] if single else x
        if X.shape[1] != self.n_inputs:
            raise ModelError(
                f"expected {self.n_inputs} inputs, got {X.shape[1]}"
            )
        p = self._forward(X)[-1][:, 0]
        return float(p[0]) if single else p

    def predict(self, x: np.ndarray, threshold: float = 0.5):
        """Hard label(s): 1 iff predict_proba >= threshold."""
        p = self.predict_proba(x)
        if np.isscalar(p):
            return int(p >= threshold)
        return (p >= threshold).astype(int)

    def input_gradient(
        self, x: np.ndarray, y: int, mask: np.ndarray | None = None
    ) -> np.ndarray:
        """Gradient of the binary cross-entropy loss w.r.t. the input vector.

        Coordinates where ``mask`` is false are zeroed.
        """
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_inputs,):
            raise ModelError(f"expected input of length {self.n_inputs}")
        acts = self._forward(x[None, :])
        # Sigmoid + BCE: dL/dz at the head is (p - y).
        delta = acts[-1] - float(y)
        for k in range(len(self.layers) - 1, 0, -1):
            delta = delta @ self.layers[k].w.T
            if self.layers[k - 1].act == "relu":
                delta = delta * (acts[k] > 0)
            else:
                a = acts[k]
                delta = delta * a * (1.0 - a)
        grad = (delta @ self.layers[0].w.T)[0]
        if mask is not None:
            grad = np.where(np.asarray(mask, dtype=bool), grad, 0.0)
        return grad

    def to_dict(self) -> dict:
        return {
            "layers": [
                {"w": layer.w.tolist(), "b": layer.b.tolist(), "act": layer.act}
                for layer in self.layers
            ],
            "schema_hash": self.schema_hash,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MLP":
        try:
            layers = [
                Layer(
                    np.array(item["w"], dtype=float),
                    np.array(item["b"], dtype=float),
                    str(item["act"]),
                )
                for item in data["layers"]
            ]
            schema_hash = data.get("schema_hash")
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelError(f"malformed model data: {exc}") from None
        return cls(layers, schema_hash)


def save(model: MLP, path: str) -> None:
    """Write the model as JSON; float repr round-trips bit-exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh)


def load(path: str) -> MLP:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ModelError(f"{path}: expected a JSON object")
    return MLP.from_dict(data)


def auroc(y_true: np.ndarray, scores: np.ndarray) -> float:
    """Area under the ROC curve via the rank statistic, ties averaged."""
    y = np.asarray(y_true)
    s = np.asarray(scores, dtype=float)
    n1 = int((y == 1).sum())
    n0 = int((y == 0).sum())
    if n1 == 0 or n0 == 0:
        raise ValueError("AUROC needs both classes")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s))
    ranks[order] = np.arange(1, len(s) + 1)
    # average the ranks within tied groups
    sorted_s = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        if j > i:
            ranks[order[i : j + 1]] = 0.5 * (i + 1 + j + 1)
        i = j + 1
    u = ranks[y == 1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def _init_layers(n_inputs: int, hidden: list[int], rng: np.random.Generator) -> list[Layer]:
    sizes = [n_inputs] + list(hidden) + [1]
    layers = []
    for k in range(len(sizes) - 1):
        n_in, n_out = sizes[k], sizes[k + 1]
        scale = np.sqrt(2.0 / n_in)  # He init for the relu stack
        w = rng.normal(0.0, scale, size=(n_in, n_out))
        layers.append(Layer(w, np.zeros(n_out), "relu" if k < len(sizes) - 2 else "sigmoid"))
    return layers


def train(
    dataset: Dataset,
    hidden: list[int] | tuple[int, ...] = (64, 64, 32),
    cfg: TrainConfig = TrainConfig(),
    schema_hash: str | None = None,
) -> MLP:
    """Fit an MLP with mini-batch Adam on binary cross-entropy.

    Deterministic given the seed. Optional inverse-frequency class weights
    counter imbalance. The held-out AUROC is stored on ``model.val_auroc``.
    """
    X, y = dataset.X, dataset.y
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if len(np.unique(y)) < 2:
        raise ValueError("training needs both classes present")
    rng = np.random.default_rng(cfg.seed)

    perm = rng.permutation(len(y))
    n_val = int(round(len(y) * cfg.val_fraction))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if len(np.unique(y[train_idx])) < 2:
        train_idx = perm  # tiny datasets: fall back to training on everything
    Xt, yt = X[train_idx], y[train_idx]

    if cfg.class_weighting:
        n1 = max(int((yt == 1).sum()), 1)
        n0 = max(int((yt == 0).sum()), 1)
        w_pos = len(yt) / (2.0 * n1)
        w_neg = len(yt) / (2.0 * n0)
    else:
        w_pos = w_neg = 1.0

    layers = _init_layers(X.shape[1], list(hidden), rng)
    model = MLP(layers, schema_hash)
    m_state = [(np.zeros_like(l.w), np.zeros_like(l.b)) for l in layers]
    v_state = [(np.zeros_like(l.w), np.zeros_like(l.b)) for l in layers]
    step = 0

    for _ in range(cfg.epochs):
        order = rng.permutation(len(yt))
        for start in range(0, len(yt), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = Xt[idx], yt[idx].astype(float)
            acts = model._forward(xb)
            p = acts[-1][:, 0]
            weights = np.where(yb == 1, w_pos, w_neg)
            # Weighted BCE with sigmoid head: dL/dz = w * (p - y) / batch
            delta = (weights * (p - yb) / len(yb))[:, None]
            grads = []
            for k in range(len(layers) - 1, -1, -1):
                gw = acts[k].T @ delta
                gb = delta.sum(axis=0)
                grads.append((gw, gb))
                if k > 0:
                    delta = delta @ layers[k].w.T
                    if layers[k - 1].act == "relu":
                        delta = delta * (acts[k] > 0)
                    else:
                        delta = delta * acts[k] * (1.0 - acts[k])
            grads.reverse()
            step += 1
            lr_t = cfg.learning_rate * np.sqrt(1 - cfg.beta2**step) / (1 - cfg.beta1**step)
            for k, layer in enumerate(layers):
                for slot, grad in zip(("w", "b"), grads[k]):
                    m = m_state[k][0 if slot == "w" else 1]
                    v = v_state[k][0 if slot == "w" else 1]
                    m *= cfg.beta1
                    m += (1 - cfg.beta1) * grad
                    v *= cfg.beta2
                    v += (1 - cfg.beta2) * grad * grad
                    param = getattr(layer, slot)
                    param -= lr_t * m / (np.sqrt(v) + cfg.adam_eps)

    if n_val and len(np.unique(y[val_idx])) == 2:
        model.val_auroc = auroc(y[val_idx], model.predict_proba(X[val_idx]))
    return model


def bce_loss(model: MLP, X: np.ndarray, y: np.ndarray) -> float:
    """Mean binary cross-entropy, for sanity checks."""
    p = np.clip(model.predict_proba(np.atleast_2d(X)), 1e-12, 1 - 1e-12)
    y = np.asarray(y, dtype=float)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))
