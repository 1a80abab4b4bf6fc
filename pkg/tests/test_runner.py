import json
import math
from pathlib import Path

import numpy as np
import pytest

from tabadv.cpgd import AttackResult
from tabadv.model import TrainConfig, save as save_model, train
from tabadv.runner import (
    ExperimentConfig,
    Metrics,
    compute_metrics,
    revalidate,
    run_experiment,
    select_targets,
    success_curve,
)
from tabadv.schema import Dataset, load_dataset, load_schema
from tabadv.synth import write_benchmark


def result_stub(success=False, mis=False, con=False, within=True, any_mis=None, any_con=None):
    x = np.zeros(2)
    return AttackResult(
        original=x,
        best=x,
        misclassified=mis,
        constraints_ok=con,
        within_eps=within,
        success=success,
        iterations_used=1,
        any_misclassified=mis if any_mis is None else any_mis,
        any_constrained=con if any_con is None else any_con,
        best_objectives=(0.5, 0.0, 0.0),
    )


def test_compute_metrics_counts():
    results = (
        [result_stub(success=True, mis=True, con=True)] * 8
        + [result_stub(mis=True, any_con=True)] * 1
        + [result_stub(any_con=True)] * 1
    )
    m = compute_metrics(results)
    assert (m.C, m.M, m.CandM) == (100.0, 90.0, 80.0)


def test_compute_metrics_empty_and_invariant():
    with pytest.raises(ValueError):
        compute_metrics([])
    rng = np.random.default_rng(0)
    for _ in range(200):
        results = []
        for _ in range(rng.integers(1, 8)):
            mis, con, within = (bool(b) for b in rng.random(3) < 0.5)
            succ = mis and con and within
            # the any-flags can only be wider than the best-example flags
            any_mis = mis or bool(rng.random() < 0.5)
            any_con = con or bool(rng.random() < 0.5)
            results.append(
                result_stub(
                    success=succ, mis=mis, con=con, within=within,
                    any_mis=any_mis, any_con=any_con,
                )
            )
        m = compute_metrics(results)
        assert m.CandM <= min(m.C, m.M)


def test_metrics_invariant_enforced():
    with pytest.raises(ValueError):
        Metrics(C=10.0, M=10.0, CandM=50.0, n_targets=4)


def test_success_curve_empty_for_gradient_results():
    assert success_curve([result_stub()]) == []


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench")
    paths = write_benchmark(str(root), n_samples=600, seed=7, test_fraction=0.3)
    schema = load_schema(paths["schema"])
    train_ds = load_dataset(paths["train"], schema)
    cfg = TrainConfig(epochs=20, seed=0, learning_rate=1e-2, batch_size=64)
    model = train(train_ds, hidden=[16, 8], cfg=cfg, schema_hash=schema.content_hash())
    model_path = str(root / "model.json")
    save_model(model, model_path)
    return {"paths": paths, "schema": schema, "model": model, "model_path": model_path, "root": root}


def test_select_targets(bench):
    schema = bench["schema"]
    test_ds = load_dataset(bench["paths"]["test"], schema)
    model = bench["model"]
    idx, samples = select_targets(model, test_ds, 10, seed=0)
    assert len(idx) == 10 and samples.shape == (10, schema.n)
    assert (test_ds.y[idx] == 1).all()
    assert (np.asarray(model.predict_proba(samples)) >= 0.5).all()
    idx2, _ = select_targets(model, test_ds, 10, seed=0)
    assert (idx == idx2).all()
    idx3, _ = select_targets(model, test_ds, 10_000, seed=0)
    assert len(idx3) >= 10  # n larger than the pool returns everyone eligible


def test_select_targets_rejects_empty_pool(bench):
    schema = bench["schema"]
    test_ds = load_dataset(bench["paths"]["test"], schema)
    all_zero = Dataset(test_ds.X, np.zeros(len(test_ds), dtype=int))
    with pytest.raises(ValueError, match="eligible"):
        select_targets(bench["model"], all_zero, 5, seed=0)


def _experiment(bench, out: Path, attack: str, n_jobs: int = 1, **params) -> ExperimentConfig:
    defaults = {
        "pgd": {"n_iter": 30},
        "cpgd": {"n_iter": 30},
        "moeva": {"pop_size": 20, "n_offspring": 10, "n_gen": 10},
    }[attack]
    defaults.update(params)
    return ExperimentConfig(
        schema_path=bench["paths"]["schema"],
        constraints_path=bench["paths"]["constraints"],
        dataset_path=bench["paths"]["test"],
        model_path=bench["model_path"],
        attack=attack,
        out_dir=str(out),
        n_targets=6,
        selection_seed=1,
        attack_seed=2,
        eps=0.6,
        n_jobs=n_jobs,
        save_histories=(attack == "moeva"),
        attack_params=defaults,
    )


def test_run_experiment_reports(bench, tmp_path):
    cfg = _experiment(bench, tmp_path / "pgd", "pgd")
    metrics = run_experiment(cfg)
    out = tmp_path / "pgd"
    data = json.loads((out / "metrics.json").read_text())
    assert data["CandM"] == metrics.CandM
    assert data["stamp"]["version"]
    lines = (out / "per_example.csv").read_text().strip().splitlines()
    assert len(lines) == 1 + 6
    assert not (out / "curve.csv").exists()  # gradient attacks have no curve


def test_run_experiment_moeva_curve_monotone(bench, tmp_path):
    cfg = _experiment(bench, tmp_path / "mo", "moeva")
    run_experiment(cfg)
    out = tmp_path / "mo"
    rows = (out / "curve.csv").read_text().strip().splitlines()[1:]
    rates = [float(line.split(",")[1]) for line in rows]
    assert rates == sorted(rates)
    hist = list((out / "histories").glob("*.csv"))
    assert len(hist) == 6


def test_run_experiment_deterministic_across_workers(bench, tmp_path):
    outs = []
    for tag, jobs in (("a", 1), ("b", 1), ("c", 2)):
        cfg = _experiment(bench, tmp_path / tag, "moeva", n_jobs=jobs)
        run_experiment(cfg)
        outs.append((tmp_path / tag / "metrics.json").read_bytes())
    assert outs[0] == outs[1] == outs[2]
    csvs = [
        (tmp_path / tag / "per_example.csv").read_bytes() for tag in ("a", "b", "c")
    ]
    assert csvs[0] == csvs[1] == csvs[2]


def test_run_experiment_revalidates_successes(bench, tmp_path):
    from tabadv import dsl
    from tabadv.runner import run_attacks, build_attack_config

    cfg = _experiment(bench, tmp_path / "x", "moeva")
    schema = bench["schema"]
    omega = dsl.load_constraints(cfg.constraints_path)
    test_ds = load_dataset(cfg.dataset_path, schema)
    _, samples = select_targets(bench["model"], test_ds, cfg.n_targets, cfg.selection_seed)
    results = run_attacks(
        bench["model"], samples, schema, omega, "moeva", build_attack_config(cfg)
    )
    for r in results:
        if r.success:
            assert revalidate(r, bench["model"], schema, omega, cfg.eps, cfg.p)


def test_experiment_config_validates(bench, tmp_path):
    with pytest.raises(FileNotFoundError):
        ExperimentConfig(
            schema_path="/nonexistent",
            constraints_path=bench["paths"]["constraints"],
            dataset_path=bench["paths"]["test"],
            model_path=bench["model_path"],
            attack="pgd",
            out_dir=str(tmp_path),
        )
    with pytest.raises(ValueError, match="unknown attack"):
        ExperimentConfig(
            schema_path=bench["paths"]["schema"],
            constraints_path=bench["paths"]["constraints"],
            dataset_path=bench["paths"]["test"],
            model_path=bench["model_path"],
            attack="zeroth-order",
            out_dir=str(tmp_path),
        )
