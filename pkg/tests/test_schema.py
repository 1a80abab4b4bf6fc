import math

import numpy as np
import pytest

from tabadv.schema import (
    Dataset,
    FeatureSchema,
    FeatureSpec,
    Scaler,
    SchemaError,
    distance,
    load_dataset,
    load_schema,
    project_ball,
)


@pytest.fixture
def basic_schema(tmp_path):
    path = tmp_path / "schema.txt"
    path.write_text(
        "# toy schema\n"
        "f1 continuous 0 10 mutable\n"
        "f2 integer 0 5 mutable\n"
        "f3 binary 0 1 immutable\n"
    )
    return load_schema(str(path))


def test_load_schema_basic(basic_schema):
    assert basic_schema.n == 3
    assert [f.name for f in basic_schema] == ["f1", "f2", "f3"]
    assert basic_schema.mutable_mask.tolist() == [True, True, False]


def test_load_schema_duplicate(tmp_path):
    path = tmp_path / "schema.txt"
    path.write_text("f1 continuous 0 1 mutable\nf1 continuous 0 1 mutable\n")
    with pytest.raises(SchemaError, match="duplicate feature f1"):
        load_schema(str(path))


def test_load_schema_bad_values(tmp_path):
    path = tmp_path / "schema.txt"
    path.write_text("f1 binary 0 2 mutable\n")
    with pytest.raises(SchemaError, match=":1"):
        load_schema(str(path))
    path.write_text("f1 continuous 3 1 mutable\n")
    with pytest.raises(SchemaError, match="min > max"):
        load_schema(str(path))
    path.write_text("f1 gaussian 0 1 mutable\n")
    with pytest.raises(SchemaError, match="unknown kind"):
        load_schema(str(path))


def test_load_dataset_scales(basic_schema, tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("f1,f2,f3,label\n5.0,2,1,1\n")
    ds = load_dataset(str(path), basic_schema)
    assert np.allclose(ds.X[0], [0.5, 0.4, 1.0])
    assert ds.y.tolist() == [1]


def test_load_dataset_out_of_bounds(basic_schema, tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("f1,f2,f3,label\n12.0,2,1,1\n")
    with pytest.raises(SchemaError, match="out of bounds"):
        load_dataset(str(path), basic_schema)


def test_load_dataset_empty_after_header(basic_schema, tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("f1,f2,f3,label\n")
    ds = load_dataset(str(path), basic_schema)
    assert len(ds) == 0


def test_load_dataset_missing_column(basic_schema, tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("f1,f2,label\n1,2,1\n")
    with pytest.raises(SchemaError, match="missing column"):
        load_dataset(str(path), basic_schema)


def test_load_dataset_bad_label(basic_schema, tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("f1,f2,f3,label\n1,2,1,3\n")
    with pytest.raises(SchemaError, match="label"):
        load_dataset(str(path), basic_schema)


def test_dataset_invariants():
    with pytest.raises(SchemaError):
        Dataset(np.zeros((2, 3)), np.array([1]))
    with pytest.raises(SchemaError):
        Dataset(np.zeros((1, 3)), np.array([2]))


def test_scaler_round_trip(basic_schema):
    scaler = Scaler(basic_schema)
    rng = np.random.default_rng(0)
    for _ in range(200):
        v = basic_schema.mins + rng.random(3) * basic_schema.ranges
        v[1] = round(v[1])
        v[2] = round(v[2])
        back = scaler.inverse(scaler.transform(v))
        assert np.abs(back - v).max() < 1e-12


def test_scaler_degenerate_feature():
    schema = FeatureSchema(
        [
            FeatureSpec("a", "continuous", 2.0, 2.0, True),
            FeatureSpec("b", "continuous", 0.0, 1.0, True),
        ]
    )
    scaler = Scaler(schema)
    assert schema.mutable_mask.tolist() == [False, True]
    assert scaler.transform(np.array([2.0, 0.5])).tolist() == [0.0, 0.5]
    assert scaler.inverse(np.array([0.0, 0.5])).tolist() == [2.0, 0.5]


def test_snap_to_grid(basic_schema):
    scaler = Scaler(basic_schema)
    snapped = scaler.snap_to_grid(np.array([0.53, 0.45, 0.2]))
    # f1 continuous untouched; f2 snaps to 2/5; f3 snaps to 0
    assert np.allclose(snapped, [0.53, 0.4, 0.0])


def test_distance_values():
    x0 = np.zeros(2)
    x = np.array([0.3, 0.4])
    assert distance(x, x0, 2) == pytest.approx(0.5)
    assert distance(x, x0, math.inf) == pytest.approx(0.4)
    assert distance(x, x0, 1) == pytest.approx(0.7)
    assert distance(x0, x0, 2) == 0.0
    with pytest.raises(ValueError):
        distance(np.zeros(3), x0, 2)


def test_distance_metric_properties():
    rng = np.random.default_rng(1)
    for p in (1, 2, math.inf):
        for _ in range(100):
            a, b, c = rng.random((3, 5))
            assert distance(a, b, p) == pytest.approx(distance(b, a, p))
            assert distance(a, c, p) <= distance(a, b, p) + distance(b, c, p) + 1e-12
            assert distance(a, a, p) == 0.0


@pytest.fixture
def two_feature_schema():
    return FeatureSchema(
        [
            FeatureSpec("x", "continuous", 0, 1, True),
            FeatureSpec("y", "continuous", 0, 1, True),
        ]
    )


def test_project_ball_radial(two_feature_schema):
    x0 = np.zeros(2)
    out = project_ball(np.array([0.6, 0.8]), x0, 0.5, 2, two_feature_schema)
    assert np.allclose(out, [0.3, 0.4])


def test_project_ball_inside_unchanged(two_feature_schema):
    x0 = np.full(2, 0.5)
    x = np.array([0.52, 0.48])
    out = project_ball(x, x0, 0.5, 2, two_feature_schema)
    assert np.allclose(out, x)


def test_project_ball_linf_clamp(two_feature_schema):
    x0 = np.full(2, 0.5)
    x = x0 + np.array([0.9, -0.9])
    out = project_ball(x, x0, 0.2, math.inf, two_feature_schema)
    assert np.allclose(out - x0, [0.2, -0.2])


def test_project_ball_properties():
    schema = FeatureSchema(
        [
            FeatureSpec("a", "continuous", 0, 1, True),
            FeatureSpec("b", "continuous", 0, 1, True),
            FeatureSpec("c", "continuous", 0, 1, False),
            FeatureSpec("d", "integer", 0, 9, True),
        ]
    )
    rng = np.random.default_rng(2)
    for p in (1, 2, math.inf):
        for _ in range(200):
            x0 = rng.random(4)
            x = x0 + rng.uniform(-2, 2, size=4)
            eps = rng.uniform(0.05, 1.0)
            out = project_ball(x, x0, eps, p, schema)
            assert distance(out, x0, p) <= eps + 1e-9
            assert (out >= 0).all() and (out <= 1).all()
            assert out[2] == x0[2]  # immutable restored
            again = project_ball(out, x0, eps, p, schema)
            assert np.allclose(out, again, atol=1e-12)
