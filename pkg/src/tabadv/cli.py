"""Command-line interface: train, attack, defend, evaluate, synth-gen.

Every option can also come from a JSON config file (``--config``); explicit
command-line flags override config-file values.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__, dsl
from .defense import (
    AugmentationPlan,
    adversarial_retrain,
    augment,
    augmented_constraints,
    build_plan,
    feature_importance,
)
from .model import TrainConfig, auroc, load as load_model, save as save_model, train
from .moeva import GAConfig
from .penalty import EvalContext, satisfies_all
from .runner import ExperimentConfig, run_experiment
from .schema import load_dataset, load_schema, save_dataset
from .synth import write_benchmark


def _load_config_file(argv: list[str]) -> dict:
    if "--config" in argv:
        path = argv[argv.index("--config") + 1]
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise SystemExit(f"{path}: config file must hold a JSON object")
        return data
    return {}


def _hidden_layers(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    cfg = _load_config_file(argv)

    def opt(key, fallback):
        return cfg.get(key, fallback)

    parser = argparse.ArgumentParser(
        prog="tabadv",
        description="Constrained adversarial attacks and defenses for tabular models.",
    )
    parser.add_argument("--version", action="version", version=f"tabadv {__version__}")
    parser.add_argument("--config", help="JSON file with default option values")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth-gen", help="write the synthetic constrained benchmark")
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.add_argument("--n-samples", type=int, default=opt("n_samples", 5000))
    p_synth.add_argument("--seed", type=int, default=opt("seed", 7))
    p_synth.add_argument("--test-fraction", type=float, default=opt("test_fraction", 0.2))

    p_train = sub.add_parser("train", help="train the built-in MLP on a dataset")
    p_train.add_argument("--schema", required=True)
    p_train.add_argument("--data", required=True)
    p_train.add_argument("--out", required=True, help="model JSON path")
    p_train.add_argument("--hidden", type=_hidden_layers, default=opt("hidden", "64,64,32"))
    p_train.add_argument("--epochs", type=int, default=opt("epochs", 20))
    p_train.add_argument("--batch-size", type=int, default=opt("batch_size", 256))
    p_train.add_argument("--learning-rate", type=float, default=opt("learning_rate", 1e-3))
    p_train.add_argument("--seed", type=int, default=opt("seed", 0))
    p_train.add_argument("--val-fraction", type=float, default=opt("val_fraction", 0.2))
    p_train.add_argument(
        "--no-class-weights", action="store_true", default=opt("no_class_weights", False)
    )

    p_attack = sub.add_parser("attack", help="run an attack experiment")
    p_attack.add_argument("attack", choices=["pgd", "cpgd", "moeva"])
    p_attack.add_argument("--schema", required=True)
    p_attack.add_argument("--constraints", required=True)
    p_attack.add_argument("--data", required=True, help="test CSV to pick targets from")
    p_attack.add_argument("--model", required=True)
    p_attack.add_argument("--out", required=True, help="report directory")
    p_attack.add_argument("--eps", type=float, default=opt("eps", 0.5))
    p_attack.add_argument("--p", type=float, default=opt("p", 2))
    p_attack.add_argument("--threshold", type=float, default=opt("threshold", 0.5))
    p_attack.add_argument("--n-targets", type=int, default=opt("n_targets", 100))
    p_attack.add_argument("--selection-seed", type=int, default=opt("selection_seed", 0))
    p_attack.add_argument("--attack-seed", type=int, default=opt("attack_seed", 0))
    p_attack.add_argument("--jobs", type=int, default=opt("jobs", 1))
    p_attack.add_argument("--save-histories", action="store_true", default=opt("save_histories", False))
    p_attack.add_argument("--alpha", type=float, default=opt("alpha", None))
    p_attack.add_argument("--n-iter", type=int, default=opt("n_iter", 100))
    p_attack.add_argument("--random-init", action="store_true", default=opt("random_init", False))
    p_attack.add_argument("--penalty-weight", type=float, default=opt("penalty_weight", 1.0))
    p_attack.add_argument("--pop-size", type=int, default=opt("pop_size", 200))
    p_attack.add_argument("--n-offspring", type=int, default=opt("n_offspring", 100))
    p_attack.add_argument("--n-gen", type=int, default=opt("n_gen", 100))
    p_attack.add_argument("--eta-m", type=float, default=opt("eta_m", 20.0))
    p_attack.add_argument("--p-mut", type=float, default=opt("p_mut", None))

    p_def = sub.add_parser("defend", help="build a defended model or artifacts")
    def_sub = p_def.add_subparsers(dest="defense", required=True)

    p_aug = def_sub.add_parser("augment", help="engineered XOR features and constraints")
    p_aug.add_argument("--schema", required=True)
    p_aug.add_argument("--constraints", required=True)
    p_aug.add_argument("--data", required=True, help="training CSV (thresholds and importance)")
    p_aug.add_argument("--model", required=True, help="model used for feature importance")
    p_aug.add_argument("--out", required=True, help="output directory")
    p_aug.add_argument("--seed", type=int, default=opt("seed", 0))
    p_aug.add_argument(
        "--also",
        action="append",
        default=opt("also", []),
        help="extra CSVs (e.g. the test split) to augment alongside; repeatable",
    )

    p_ret = def_sub.add_parser("retrain", help="adversarial retraining")
    p_ret.add_argument("--schema", required=True)
    p_ret.add_argument("--constraints", required=True)
    p_ret.add_argument("--data", required=True, help="training CSV")
    p_ret.add_argument("--model", required=True)
    p_ret.add_argument("--attack", choices=["cpgd", "moeva"], default=opt("attack", "moeva"))
    p_ret.add_argument("--out", required=True, help="defended model JSON path")
    p_ret.add_argument("--eps-def", type=float, default=opt("eps_def", 0.125))
    p_ret.add_argument("--p", type=float, default=opt("p", 2))
    p_ret.add_argument("--threshold", type=float, default=opt("threshold", 0.5))
    p_ret.add_argument("--max-examples", type=int, default=opt("max_examples", None))
    p_ret.add_argument("--seed", type=int, default=opt("seed", 0))
    p_ret.add_argument("--jobs", type=int, default=opt("jobs", 1))
    p_ret.add_argument("--n-iter", type=int, default=opt("n_iter", 100))
    p_ret.add_argument("--pop-size", type=int, default=opt("pop_size", 100))
    p_ret.add_argument("--n-offspring", type=int, default=opt("n_offspring", 50))
    p_ret.add_argument("--n-gen", type=int, default=opt("n_gen", 50))
    p_ret.add_argument("--p-mut", type=float, default=opt("p_mut", None))
    p_ret.add_argument("--hidden", type=_hidden_layers, default=opt("hidden", "64,64,32"))
    p_ret.add_argument("--epochs", type=int, default=opt("epochs", 20))
    p_ret.add_argument("--batch-size", type=int, default=opt("batch_size", 256))
    p_ret.add_argument("--learning-rate", type=float, default=opt("learning_rate", 1e-3))
    p_ret.add_argument("--train-seed", type=int, default=opt("train_seed", 0))

    p_eval = sub.add_parser("evaluate", help="clean metrics of a model on a dataset")
    p_eval.add_argument("--schema", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--constraints", help="also report the constraint satisfaction rate")
    p_eval.add_argument("--threshold", type=float, default=opt("threshold", 0.5))
    p_eval.add_argument("--out", help="write the JSON report here instead of stdout")

    args = parser.parse_args(argv)

    if args.command == "synth-gen":
        paths = write_benchmark(args.out, args.n_samples, args.seed, args.test_fraction)
        print(json.dumps(paths, indent=2))
        return 0

    if args.command == "train":
        schema = load_schema(args.schema)
        dataset = load_dataset(args.data, schema)
        tcfg = TrainConfig(
            epochs=args.epochs,
            batch_size=args.batch_size,
            learning_rate=args.learning_rate,
            seed=args.seed,
            class_weighting=not args.no_class_weights,
            val_fraction=args.val_fraction,
        )
        model = train(dataset, hidden=args.hidden, cfg=tcfg, schema_hash=schema.content_hash())
        save_model(model, args.out)
        print(json.dumps({"model": args.out, "val_auroc": model.val_auroc}))
        return 0

    if args.command == "attack":
        if args.attack in ("pgd", "cpgd"):
            params = {
                "alpha": args.alpha,
                "n_iter": args.n_iter,
                "random_init": args.random_init,
                "penalty_weight": args.penalty_weight,
            }
        else:
            params = {
                "pop_size": args.pop_size,
                "n_offspring": args.n_offspring,
                "n_gen": args.n_gen,
                "eta_m": args.eta_m,
                "p_mut": args.p_mut,
            }
        exp = ExperimentConfig(
            schema_path=args.schema,
            constraints_path=args.constraints,
            dataset_path=args.data,
            model_path=args.model,
            attack=args.attack,
            out_dir=args.out,
            n_targets=args.n_targets,
            selection_seed=args.selection_seed,
            attack_seed=args.attack_seed,
            eps=args.eps,
            p=args.p,
            threshold=args.threshold,
            n_jobs=args.jobs,
            save_histories=args.save_histories,
            attack_params=params,
        )
        metrics = run_experiment(exp)
        print(
            json.dumps(
                {"C": metrics.C, "M": metrics.M, "CandM": metrics.CandM, "out": args.out}
            )
        )
        return 0

    if args.command == "defend" and args.defense == "augment":
        schema = load_schema(args.schema)
        omega = dsl.load_constraints(args.constraints)
        dataset = load_dataset(args.data, schema)
        model = load_model(args.model)
        importance = feature_importance(model, dataset, schema, seed=args.seed)
        plan = build_plan(schema, dataset, importance)
        schema_aug, data_aug = augment(schema, dataset, plan)
        omega_aug = augmented_constraints(omega, plan)
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "plan.json"), "w", encoding="utf-8") as fh:
            fh.write(plan.to_json())
        with open(os.path.join(args.out, "schema.txt"), "w", encoding="utf-8") as fh:
            for f in schema_aug.features:
                mut = "mutable" if f.mutable else "immutable"
                fh.write(f"{f.name} {f.kind} {f.min!r} {f.max!r} {mut}\n")
        with open(os.path.join(args.out, "constraints.txt"), "w", encoding="utf-8") as fh:
            with open(args.constraints, encoding="utf-8") as src:
                fh.write(src.read().rstrip("\n") + "\n")
            for line in plan.constraints:
                fh.write(line + "\n")
        save_dataset(os.path.join(args.out, "train.csv"), data_aug, schema_aug)
        for extra in args.also:
            extra_ds = load_dataset(extra, schema)
            _, extra_aug = augment(schema, extra_ds, plan)
            name = os.path.basename(extra)
            save_dataset(os.path.join(args.out, name), extra_aug, schema_aug)
        print(
            json.dumps(
                {
                    "out": args.out,
                    "pairs": [[f.source_a, f.source_b] for f in plan.features],
                    "n_constraints": len(omega_aug),
                }
            )
        )
        return 0

    if args.command == "defend" and args.defense == "retrain":
        schema = load_schema(args.schema)
        omega = dsl.load_constraints(args.constraints)
        dataset = load_dataset(args.data, schema)
        model = load_model(args.model)
        tcfg = TrainConfig(
            epochs=args.epochs,
            batch_size=args.batch_size,
            learning_rate=args.learning_rate,
            seed=args.train_seed,
        )
        if args.attack == "moeva":
            acfg = GAConfig(
                pop_size=args.pop_size,
                n_offspring=args.n_offspring,
                n_gen=args.n_gen,
                eps=args.eps_def,
                p=args.p,
                threshold=args.threshold,
                p_mut=args.p_mut,
                seed=args.seed,
            )
        else:
            from .cpgd import GradAttackConfig

            acfg = GradAttackConfig(
                eps=args.eps_def,
                p=args.p,
                threshold=args.threshold,
                n_iter=args.n_iter,
                seed=args.seed,
            )
        result = adversarial_retrain(
            model,
            dataset,
            omega,
            schema,
            args.attack,
            acfg,
            tcfg,
            hidden=args.hidden,
            max_examples=args.max_examples,
            seed=args.seed,
            n_jobs=args.jobs,
        )
        save_model(result.model, args.out)
        print(
            json.dumps(
                {
                    "model": args.out,
                    "attacked": result.n_attacked,
                    "adversarial_examples_added": result.n_added,
                    "val_auroc": result.model.val_auroc,
                }
            )
        )
        return 0

    if args.command == "evaluate":
        schema = load_schema(args.schema)
        dataset = load_dataset(args.data, schema)
        model = load_model(args.model)
        probs = np.asarray(model.predict_proba(dataset.X))
        preds = (probs >= args.threshold).astype(int)
        report = {
            "n": len(dataset),
            "auroc": auroc(dataset.y, probs) if len(np.unique(dataset.y)) == 2 else None,
            "accuracy": float((preds == dataset.y).mean()),
            "positive_rate": float(dataset.y.mean()),
            "threshold": args.threshold,
        }
        if args.constraints:
            omega = dsl.load_constraints(args.constraints)
            ctx = EvalContext.from_scaled(schema, dataset.X, dataset.X)
            report["constraint_satisfaction_rate"] = float(
                np.mean(satisfies_all(omega, ctx))
            )
        text = json.dumps(report, indent=2, sort_keys=True)
        if args.out:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        else:
            print(text)
        return 0

    parser.error("unhandled command")
    return 2


if __name__ == "__main__":
    raise SystemExit(main())
