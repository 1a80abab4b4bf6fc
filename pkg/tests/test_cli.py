import json

import numpy as np
import pytest

from tabadv.cli import main
from tabadv.model import load as load_model
from tabadv.schema import load_dataset, load_schema


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth-gen", "--out", str(root / "data"), "--n-samples", "600", "--seed", "7", "--test-fraction", "0.3"]) == 0
    args = [
        "train",
        "--schema", str(root / "data" / "schema.txt"),
        "--data", str(root / "data" / "train.csv"),
        "--out", str(root / "model.json"),
        "--hidden", "16,8",
        "--epochs", "20",
        "--learning-rate", "0.01",
        "--batch-size", "64",
        "--seed", "0",
    ]
    assert main(args) == 0
    return root


def test_synth_gen_and_train(workdir, capsys):
    model = load_model(str(workdir / "model.json"))
    assert model.n_inputs == 12
    schema = load_schema(str(workdir / "data" / "schema.txt"))
    assert model.schema_hash == schema.content_hash()


def test_attack_command_writes_reports(workdir, capsys):
    out = workdir / "attack_pgd"
    args = [
        "attack", "pgd",
        "--schema", str(workdir / "data" / "schema.txt"),
        "--constraints", str(workdir / "data" / "constraints.txt"),
        "--data", str(workdir / "data" / "test.csv"),
        "--model", str(workdir / "model.json"),
        "--out", str(out),
        "--eps", "0.6",
        "--n-targets", "5",
        "--n-iter", "20",
    ]
    assert main(args) == 0
    printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert printed["CandM"] == 0.0  # constraint-blind baseline never satisfies all rules
    data = json.loads((out / "metrics.json").read_text())
    assert data["attack"] == "pgd"
    assert (out / "per_example.csv").exists()


def test_config_file_defaults_and_flag_override(workdir, tmp_path, capsys):
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"n_targets": 4, "n_iter": 15, "eps": 0.6}))
    out = tmp_path / "run"
    args = [
        "--config", str(config),
        "attack", "pgd",
        "--schema", str(workdir / "data" / "schema.txt"),
        "--constraints", str(workdir / "data" / "constraints.txt"),
        "--data", str(workdir / "data" / "test.csv"),
        "--model", str(workdir / "model.json"),
        "--out", str(out),
        "--n-targets", "3",  # flag overrides the config value
    ]
    assert main(args) == 0
    lines = (out / "per_example.csv").read_text().strip().splitlines()
    assert len(lines) == 1 + 3
    data = json.loads((out / "metrics.json").read_text())
    assert data["eps"] == 0.6  # config value survived


def test_defend_augment_command(workdir, capsys):
    out = workdir / "aug"
    args = [
        "defend", "augment",
        "--schema", str(workdir / "data" / "schema.txt"),
        "--constraints", str(workdir / "data" / "constraints.txt"),
        "--data", str(workdir / "data" / "train.csv"),
        "--model", str(workdir / "model.json"),
        "--out", str(out),
        "--also", str(workdir / "data" / "test.csv"),
    ]
    assert main(args) == 0
    schema_aug = load_schema(str(out / "schema.txt"))
    assert schema_aug.n == 13
    aug_train = load_dataset(str(out / "train.csv"), schema_aug)
    aug_test = load_dataset(str(out / "test.csv"), schema_aug)
    assert len(aug_train) == 420 and len(aug_test) == 180
    from tabadv import dsl

    omega_aug = dsl.load_constraints(str(out / "constraints.txt"))
    assert len(omega_aug) == 7
    plan = json.loads((out / "plan.json").read_text())
    assert len(plan["features"]) == 1


def test_defend_retrain_command(workdir, capsys):
    out_model = workdir / "model_def.json"
    args = [
        "defend", "retrain",
        "--schema", str(workdir / "data" / "schema.txt"),
        "--constraints", str(workdir / "data" / "constraints.txt"),
        "--data", str(workdir / "data" / "train.csv"),
        "--model", str(workdir / "model.json"),
        "--attack", "moeva",
        "--out", str(out_model),
        "--eps-def", "0.6",
        "--max-examples", "12",
        "--pop-size", "16",
        "--n-offspring", "8",
        "--n-gen", "6",
        "--hidden", "16,8",
        "--epochs", "20",
        "--learning-rate", "0.01",
        "--batch-size", "64",
    ]
    assert main(args) == 0
    printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert printed["attacked"] <= 12
    assert load_model(str(out_model)).n_inputs == 12


def test_evaluate_command(workdir, tmp_path, capsys):
    report_path = tmp_path / "report.json"
    args = [
        "evaluate",
        "--schema", str(workdir / "data" / "schema.txt"),
        "--data", str(workdir / "data" / "test.csv"),
        "--model", str(workdir / "model.json"),
        "--constraints", str(workdir / "data" / "constraints.txt"),
        "--out", str(report_path),
    ]
    assert main(args) == 0
    report = json.loads(report_path.read_text())
    assert report["constraint_satisfaction_rate"] == 1.0
    assert 0.5 < report["auroc"] <= 1.0
    assert report["n"] == 180
