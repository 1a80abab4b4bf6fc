import json

import numpy as np
import pytest

from tabadv.model import (
    MLP,
    Layer,
    ModelError,
    TrainConfig,
    auroc,
    bce_loss,
    load,
    save,
    train,
)
from tabadv.schema import Dataset


def single_unit(w, b=0.0) -> MLP:
    return MLP([Layer(np.array(w, dtype=float).reshape(-1, 1), np.array([b]), "sigmoid")])


def blob_dataset(n=400, seed=0) -> Dataset:
    rng = np.random.default_rng(seed)
    X0 = rng.normal([0.3, 0.3], 0.08, size=(n // 2, 2))
    X1 = rng.normal([0.7, 0.7], 0.08, size=(n // 2, 2))
    X = np.clip(np.vstack([X0, X1]), 0, 1)
    y = np.array([0] * (n // 2) + [1] * (n // 2))
    return Dataset(X, y)


def test_zero_weights_give_half():
    model = single_unit([0.0, 0.0])
    assert model.predict_proba(np.array([0.2, 0.9])) == 0.5
    assert model.predict_proba(np.array([1.0, 0.0])) == 0.5


def test_single_unit_closed_form():
    model = single_unit([1.0, -1.0])
    p = model.predict_proba(np.array([0.8, 0.3]))
    assert p == pytest.approx(1 / (1 + np.exp(-0.5)), abs=1e-12)


def test_monotone_in_positive_weight():
    model = single_unit([2.0, 0.5])
    rng = np.random.default_rng(1)
    for _ in range(50):
        x = rng.random(2)
        bumped = x.copy()
        bumped[0] += 0.1
        assert model.predict_proba(bumped) >= model.predict_proba(x)


def test_threshold_semantics():
    model = single_unit([0.0, 0.0])  # p = 0.5 everywhere
    assert model.predict(np.zeros(2), threshold=0.5) == 1
    assert model.predict(np.zeros(2), threshold=0.500001) == 0


def test_predict_dimension_mismatch():
    model = single_unit([1.0, -1.0])
    with pytest.raises(ModelError):
        model.predict_proba(np.zeros(3))


def test_input_gradient_single_unit():
    w = np.array([1.5, -2.0])
    model = single_unit(w)
    x = np.array([0.4, 0.6])
    p = model.predict_proba(x)
    grad = model.input_gradient(x, 1)
    assert np.allclose(grad, (p - 1.0) * w, atol=1e-12)


def test_input_gradient_mask():
    model = single_unit([1.5, -2.0])
    grad = model.input_gradient(np.array([0.4, 0.6]), 1, mask=np.array([False, False]))
    assert (grad == 0).all()


def test_input_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    layers = [
        Layer(rng.normal(size=(4, 8)), rng.normal(size=8) * 0.1, "relu"),
        Layer(rng.normal(size=(8, 5)), rng.normal(size=5) * 0.1, "sigmoid"),
        Layer(rng.normal(size=(5, 1)), np.zeros(1), "sigmoid"),
    ]
    model = MLP(layers)
    h = 1e-6
    checked = 0
    while checked < 100:
        x = rng.random(4)
        y = int(rng.integers(0, 2))
        grad = model.input_gradient(x, y)
        fd = np.zeros(4)
        for i in range(4):
            up, dn = x.copy(), x.copy()
            up[i] += h
            dn[i] -= h
            fd[i] = (bce_loss(model, up, [y]) - bce_loss(model, dn, [y])) / (2 * h)
        scale = max(np.linalg.norm(fd), 1e-8)
        if np.linalg.norm(grad - fd) / scale >= 1e-4:
            # a relu kink right at x; resample
            continue
        checked += 1
    assert checked == 100


def test_train_separable_blobs():
    ds = blob_dataset()
    cfg = TrainConfig(epochs=40, seed=0, learning_rate=1e-2, batch_size=64)
    model = train(ds, hidden=[8], cfg=cfg)
    acc = (model.predict(ds.X) == ds.y).mean()
    assert acc >= 0.95
    assert model.val_auroc is not None and model.val_auroc > 0.95


def test_train_rejects_single_class():
    ds = Dataset(np.random.default_rng(0).random((10, 2)), np.ones(10, dtype=int))
    with pytest.raises(ValueError, match="both classes"):
        train(ds)


def test_train_deterministic():
    ds = blob_dataset(n=120)
    cfg = TrainConfig(epochs=5, seed=42)
    a = train(ds, hidden=[6], cfg=cfg)
    b = train(ds, hidden=[6], cfg=cfg)
    for la, lb in zip(a.layers, b.layers):
        assert (la.w == lb.w).all()
        assert (la.b == lb.b).all()


def test_train_reduces_loss():
    ds = blob_dataset(n=200, seed=3)
    before = train(ds, hidden=[6], cfg=TrainConfig(epochs=1, seed=1, val_fraction=0.0))
    after = train(ds, hidden=[6], cfg=TrainConfig(epochs=30, seed=1, val_fraction=0.0))
    assert bce_loss(after, ds.X, ds.y) < bce_loss(before, ds.X, ds.y)


def test_save_load_round_trip(tmp_path):
    ds = blob_dataset(n=120)
    model = train(ds, hidden=[6, 4], cfg=TrainConfig(epochs=3, seed=7))
    path = tmp_path / "model.json"
    save(model, str(path))
    loaded = load(str(path))
    rng = np.random.default_rng(9)
    X = rng.random((100, 2))
    assert (model.predict_proba(X) == loaded.predict_proba(X)).all()


def test_load_truncated_file(tmp_path):
    path = tmp_path / "model.json"
    path.write_text('{"layers": [{"w": [[0.1], [0.2')
    with pytest.raises(ModelError):
        load(str(path))


def test_load_empty_layer_list(tmp_path):
    path = tmp_path / "model.json"
    path.write_text(json.dumps({"layers": [], "schema_hash": None}))
    with pytest.raises(ModelError, match="empty layer list"):
        load(str(path))


def test_mlp_rejects_bad_shapes():
    with pytest.raises(ModelError, match="chain"):
        MLP(
            [
                Layer(np.zeros((2, 3)), np.zeros(3), "relu"),
                Layer(np.zeros((4, 1)), np.zeros(1), "sigmoid"),
            ]
        )
    with pytest.raises(ModelError, match="sigmoid"):
        MLP([Layer(np.zeros((2, 1)), np.zeros(1), "relu")])


def test_auroc_rank_statistic():
    y = np.array([0, 0, 1, 1])
    assert auroc(y, np.array([0.1, 0.2, 0.8, 0.9])) == 1.0
    assert auroc(y, np.array([0.9, 0.8, 0.2, 0.1])) == 0.0
    assert auroc(y, np.array([0.5, 0.5, 0.5, 0.5])) == 0.5
    with pytest.raises(ValueError):
        auroc(np.zeros(4), np.ones(4))
