"""Command-line entry points.

``rulkit fit`` runs the full search + ensembling per seed and persists, under
the output directory, one folder per seed (history.jsonl, regret.csv,
ensemble/, metrics.json) plus an aggregate summary and the search-space
manifest. ``rulkit predict`` applies a saved bundle to new data.
Every flag can also be set through an environment variable with the
``RULKIT_`` prefix (e.g. ``RULKIT_WALLTIME_SECONDS=600``).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import ensemble as ens
from . import pipeline as pl
from . import report
from .configspace import define_space, space_manifest
from .dataset import (
    TestInstance,
    generate_synthetic,
    label_rul,
    load_cmapss,
    load_cmapss_series,
    load_long_csv,
    truncate_for_testing,
)
from .errors import RulkitError
from .metrics import rmse
from .search import SearchBudget, compute_regret, run_search
from .seeding import derive_seed

_ENV_PREFIX = "RULKIT_"


def _env(flag: str, default, cast):
    raw = os.environ.get(_ENV_PREFIX + flag.replace("-", "_").upper())
    if raw is None:
        return default
    return cast(raw)


def _add_data_arguments(parser: argparse.ArgumentParser, include_synthetic: bool) -> None:
    formats = ["cmapss", "csv"] + (["synthetic"] if include_synthetic else [])
    parser.add_argument(
        "--data-format",
        choices=formats,
        default=_env("data-format", "synthetic" if include_synthetic else "csv", str),
    )
    parser.add_argument("--train", default=_env("train", None, str))
    parser.add_argument("--test", default=_env("test", None, str))
    parser.add_argument("--rul", default=_env("rul", None, str))
    parser.add_argument("--schema", default=_env("schema", None, str),
                        help="JSON file mapping CSV column names to roles")
    parser.add_argument("--rul-cap", type=float, default=_env("rul-cap", None, float))
    if include_synthetic:
        parser.add_argument("--synthetic-instances", type=int,
                            default=_env("synthetic-instances", 30, int))
        parser.add_argument("--synthetic-channels", type=int,
                            default=_env("synthetic-channels", 3, int))
        parser.add_argument("--synthetic-length", type=int,
                            default=_env("synthetic-length", 200, int))
        parser.add_argument("--synthetic-noise", type=float,
                            default=_env("synthetic-noise", 0.05, float))
        parser.add_argument("--synthetic-seed", type=int,
                            default=_env("synthetic-seed", 1234, int))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rulkit",
        description="Automated pipeline search for remaining-useful-life prediction",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="search, ensemble and persist models")
    _add_data_arguments(fit, include_synthetic=True)
    fit.add_argument("--walltime-seconds", type=float,
                     default=_env("walltime-seconds", 3600.0, float))
    fit.add_argument("--trial-timeout-seconds", type=float,
                     default=_env("trial-timeout-seconds", 300.0, float))
    fit.add_argument("--max-budget", type=int, default=_env("max-budget", 81, int))
    fit.add_argument("--eta", type=int, default=_env("eta", 3, int))
    fit.add_argument("--workers", type=int,
                     default=_env("workers", os.cpu_count() or 1, int))
    fit.add_argument("--seeds", default=_env("seeds", "0", str),
                     help="comma-separated list of search seeds")
    fit.add_argument("--ensemble-size", type=int, default=_env("ensemble-size", 10, int))
    fit.add_argument("--ensemble-rounds", type=int,
                     default=_env("ensemble-rounds", 25, int))
    fit.add_argument("--max-brackets", type=int, default=_env("max-brackets", None, int))
    fit.add_argument("--out", required=True)

    predict = sub.add_parser("predict", help="apply a saved bundle to new data")
    _add_data_arguments(predict, include_synthetic=False)
    predict.add_argument("--bundle", required=True,
                         help="ensemble directory or single pipeline bundle")
    predict.add_argument("--out", required=True, help="output predictions CSV")

    manifest = sub.add_parser("space-manifest", help="print the search-space manifest")
    manifest.add_argument("--out", default=None)
    return parser


# ---------------------------------------------------------------------------
# Data loading
# ---------------------------------------------------------------------------


def _load_schema(path) -> dict:
    try:
        schema = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise RulkitError(f"could not read schema file {path}: {exc}") from None
    if not isinstance(schema, dict):
        raise RulkitError("schema file must contain a JSON object of column -> role")
    return schema


def _load_fit_data(args):
    """Returns (labelled training dataset, test instances or None)."""
    if args.data_format == "synthetic":
        train = generate_synthetic(
            args.synthetic_instances,
            args.synthetic_channels,
            args.synthetic_length,
            args.synthetic_noise,
            seed=args.synthetic_seed,
        )
        held_out = generate_synthetic(
            max(10, args.synthetic_instances // 3),
            args.synthetic_channels,
            args.synthetic_length,
            args.synthetic_noise,
            seed=derive_seed(args.synthetic_seed, "test-instances"),
        )
        # floor prefixes at the space's largest window so every candidate
        # pipeline can consume the generated test set
        max_window = int(define_space().get("window_length").hi)
        tests = truncate_for_testing(
            held_out,
            seed=derive_seed(args.synthetic_seed, "test-cuts"),
            min_length=max_window,
        )
        return train, tests
    if args.data_format == "cmapss":
        if not (args.train and args.test and args.rul):
            raise RulkitError("cmapss format needs --train, --test and --rul")
        train, tests = load_cmapss(args.train, args.test, args.rul)
        return label_rul(train, args.rul_cap), tests
    if not (args.train and args.schema):
        raise RulkitError("csv format needs --train and --schema")
    schema = _load_schema(args.schema)
    train = load_long_csv(args.train, schema)
    if any(inst.rul is None for inst in train.instances):
        train = label_rul(train, args.rul_cap)
    tests = None
    if args.test:
        test_ds = load_long_csv(args.test, schema)
        if any(inst.rul is None for inst in test_ds.instances):
            raise RulkitError("test CSV needs a target column to evaluate against")
        tests = [
            TestInstance(id=inst.id, values=inst.values, true_rul=float(inst.rul[-1]))
            for inst in test_ds.instances
        ]
    return train, tests


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


def cmd_fit(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    space = define_space()
    (out / "space_manifest.txt").write_text(space_manifest(space))

    train, tests = _load_fit_data(args)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
    if not seeds:
        print("error: --seeds is empty", file=sys.stderr)
        return 2

    budget = SearchBudget(
        total_walltime_seconds=args.walltime_seconds,
        per_trial_timeout_seconds=args.trial_timeout_seconds,
        max_budget=args.max_budget,
        eta=args.eta,
        n_workers=args.workers,
        max_brackets=args.max_brackets,
    )

    per_seed_metrics = {}
    failures = {}
    for seed in seeds:
        seed_dir = out / str(seed)
        seed_dir.mkdir(parents=True, exist_ok=True)
        try:
            metrics = _fit_one_seed(args, space, train, tests, budget, seed, seed_dir)
            per_seed_metrics[seed] = metrics
            print(f"seed {seed}: ensemble val RMSE {metrics['ensemble_val_rmse']:.4f}"
                  + (f", test RMSE {metrics['test_rmse']:.4f}" if metrics.get("test_rmse") is not None else ""))
        except RulkitError as exc:
            failures[seed] = str(exc)
            print(f"seed {seed}: failed: {exc}", file=sys.stderr)

    aggregate = {
        "seeds": seeds,
        "completed": sorted(per_seed_metrics),
        "failed": {str(k): v for k, v in failures.items()},
        "per_seed": {str(k): v for k, v in per_seed_metrics.items()},
    }
    test_rmses = [
        m["test_rmse"] for m in per_seed_metrics.values() if m.get("test_rmse") is not None
    ]
    if test_rmses:
        aggregate["test_rmse_mean"] = float(np.mean(test_rmses))
        aggregate["test_rmse_std"] = float(np.std(test_rmses))
        print(f"aggregate test RMSE: {aggregate['test_rmse_mean']:.4f} "
              f"+/- {aggregate['test_rmse_std']:.4f} over {len(test_rmses)} seeds")
    (out / "aggregate.json").write_text(json.dumps(aggregate, indent=2))
    return 0 if per_seed_metrics else 1


def _fit_one_seed(args, space, train, tests, budget, seed, seed_dir: Path) -> dict:
    history, incumbent = run_search(
        space, train, budget, seed, history_path=seed_dir / "history.jsonl"
    )
    reference = history.incumbent.val_rmse
    report.write_regret_csv(compute_regret(history, reference), seed_dir / "regret.csv")

    bag = ens.build_ensemble(history, max_distinct=args.ensemble_size, rounds=args.ensemble_rounds)
    bag = ens.refit_final(
        bag, train, R=budget.max_budget, deadline_seconds=budget.per_trial_timeout_seconds
    )
    ens.save_ensemble(bag, seed_dir / "ensemble")
    if incumbent is not None:
        pl.save_bundle(
            incumbent, seed_dir / "incumbent",
            metrics={"val_rmse": history.incumbent.val_rmse},
        )

    metrics = {
        "incumbent_val_rmse": history.incumbent.val_rmse,
        "ensemble_val_rmse": bag.val_rmse,
        "statistics": report.report_run_statistics(history),
        "composition": report.report_ensemble_composition(bag),
        "test_rmse": None,
    }
    if tests:
        levels = None
        predictions = [ens.ensemble_predict(bag, t, levels) for t in tests]
        metrics["test_rmse"] = rmse(predictions, [t.true_rul for t in tests])
    (seed_dir / "metrics.json").write_text(json.dumps(metrics, indent=2))
    return metrics


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------


def _load_predict_inputs(args):
    if args.data_format == "cmapss":
        if not args.test:
            raise RulkitError("cmapss prediction needs --test")
        return [(uid, values, None) for uid, values in load_cmapss_series(args.test)]
    if not (args.test and args.schema):
        raise RulkitError("csv prediction needs --test and --schema")
    schema = {c: r for c, r in _load_schema(args.schema).items() if r != "target"}
    ds = load_long_csv(args.test, schema)
    levels = {c: ds.levels_for(c) for c in ds.categorical_columns} or None
    return [(inst.id, inst.values, levels) for inst in ds.instances]


def _load_bundle(path):
    path = Path(path)
    if (path / "manifest.json").exists() and (path / "members").exists():
        return ens.load_ensemble(path), True
    if (path / "pipeline.pkl").exists():
        return pl.load_bundle(path), False
    raise RulkitError(f"{path} is neither an ensemble nor a pipeline bundle")


def cmd_predict(args) -> int:
    bundle, is_ensemble = _load_bundle(args.bundle)
    rows = []
    for instance_id, values, levels in _load_predict_inputs(args):
        if is_ensemble:
            test = TestInstance(id=instance_id, values=values, true_rul=0.0)
            prediction = ens.ensemble_predict(bundle, test, levels)
        else:
            prediction = bundle.predict_matrix(values, levels)
        rows.append((instance_id, prediction))
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("instance_id,predicted_rul\n")
        for instance_id, prediction in rows:
            fh.write(f"{instance_id},{prediction!r}\n")
    print(f"wrote {len(rows)} predictions to {args.out}")
    return 0


def cmd_space_manifest(args) -> int:
    text = space_manifest(define_space())
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text, end="")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "fit":
            return cmd_fit(args)
        if args.command == "predict":
            return cmd_predict(args)
        return cmd_space_manifest(args)
    except RulkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
