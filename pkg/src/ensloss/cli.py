"""Command-line surface: train, check-loss, derivs, bench.

Exit codes are a stable contract: 0 success, 1 usage/config error,
2 runtime failure (divergence, failed benchmark cells).

Option precedence, lowest to highest: built-in defaults, --config file,
the ENSLOSS_SEED environment variable (seed only), explicit flags.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .datasets import (
    IngestionError,
    SplitDataset,
    SyntheticSpec,
    load_csv,
    load_dataset,
    make_gaussian_blobs,
    make_high_dim_sparse,
    split_standardize,
)
from .derivgen import GenConfig, MarginBatch, generate_rc_derivatives
from .evaluation import aggregate_benchmark
from .losses import BUILTIN_LOSS_NAMES, builtin_loss, loss_report
from .models import save_checkpoint
from .numerics import BoxCoxParam, Rng
from .runio import ConfigError, atomic_write_text, read_kv_config, write_manifest
from .trainer import EarlyStop, ModelSpec, TrainConfig, train


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _parse_kv_list(spec: str) -> dict[str, str]:
    out = {}
    for part in spec.split(","):
        if not part:
            continue
        if "=" not in part:
            raise ConfigError(f"expected k=v in dataset spec, got {part!r}")
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_data_spec(spec: str, default_seed: int = 0) -> SplitDataset:
    """Resolve a dataset reference string.

    Forms: ``blobs[:k=v,...]`` (n,d,sep,seed,test), ``highdim[:k=v,...]``
    (n,d,k,sep,noise,seed,test), a ``.npz`` cache path, or a CSV path as
    ``csv:PATH[:label=COL,pos=VAL,delim=CHAR,test=F,seed=N]`` / bare path
    with defaults (label column ``label``, positive value ``1``).
    """
    head, _, rest = spec.partition(":")
    if head in ("blobs", "highdim"):
        kv = _parse_kv_list(rest) if rest else {}
        seed = int(kv.get("seed", default_seed))
        test = float(kv.get("test", 0.25 if head == "blobs" else 0.5))
        if head == "blobs":
            s = SyntheticSpec(
                kind="gaussian_blobs",
                n=int(kv.get("n", 2000)),
                d=int(kv.get("d", 2)),
                class_sep=float(kv.get("sep", 2.0)),
            )
            return make_gaussian_blobs(s, seed=seed, test_fraction=test)
        s = SyntheticSpec(
            kind="high_dim_sparse",
            n=int(kv.get("n", 1000)),
            d=int(kv.get("d", 2000)),
            class_sep=float(kv.get("sep", 3.0)),
            noise=float(kv.get("noise", 1.0)),
            informative=int(kv.get("k", 10)),
        )
        return make_high_dim_sparse(s, seed=seed, test_fraction=test)
    if head == "csv":
        path, _, opts = rest.partition(":")
        kv = _parse_kv_list(opts) if opts else {}
    else:
        path, kv = spec, {}
    if path.endswith(".npz"):
        return load_dataset(path)
    delim = {"comma": ",", "semicolon": ";", "tab": "\t"}.get(kv.get("delim", "comma"), kv.get("delim", ","))
    raw = load_csv(
        path,
        label_column=kv.get("label", "label"),
        positive_label=kv.get("pos", "1"),
        delimiter=delim,
    )
    return split_standardize(raw, float(kv.get("test", 0.25)), int(kv.get("seed", default_seed)))


_TRAIN_DEFAULTS = {
    "mode": "ensloss",
    "data": "blobs",
    "epochs": 100,
    "batch_size": 128,
    "lr": 0.1,
    "lr_schedule": "cosine",
    "weight_decay": 0.0,
    "dropout": 0.0,
    "lambda": 0.0,
    "resample_T": 0,
    "lambda_pool": "0,0.5,1",
    "hidden": "64,64",
    "activation": "relu",
    "seed": 0,
    "data_seed": 0,
    "early_stop_threshold": None,
    "early_stop_patience": 5,
    "out": None,
    "jobs": 1,
}

_TYPES = {
    "epochs": int,
    "batch_size": int,
    "resample_T": int,
    "seed": int,
    "data_seed": int,
    "early_stop_patience": int,
    "jobs": int,
    "lr": float,
    "weight_decay": float,
    "dropout": float,
    "lambda": float,
    "early_stop_threshold": float,
}


def _resolve(args: argparse.Namespace, extra_keys: tuple[str, ...] = ()) -> dict:
    resolved = dict(_TRAIN_DEFAULTS)
    for k in extra_keys:
        resolved.setdefault(k, None)
    if getattr(args, "config", None):
        for key, value in read_kv_config(args.config).items():
            if key not in resolved:
                raise ConfigError(f"unknown config key {key!r}")
            resolved[key] = value
    env_seed = os.environ.get("ENSLOSS_SEED")
    if env_seed is not None:
        resolved["seed"] = env_seed
    for key in resolved:
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
    for key, typ in _TYPES.items():
        if key in resolved and resolved[key] is not None and not isinstance(resolved[key], typ):
            try:
                resolved[key] = typ(resolved[key])
            except ValueError:
                raise ConfigError(f"config key {key!r}: cannot parse {resolved[key]!r} as {typ.__name__}")
    return resolved


def _train_config(resolved: dict) -> TrainConfig:
    pool = tuple(float(v) for v in str(resolved["lambda_pool"]).split(",") if v)
    early = None
    if resolved["early_stop_threshold"] is not None:
        early = EarlyStop(float(resolved["early_stop_threshold"]), int(resolved["early_stop_patience"]))
    return TrainConfig(
        mode=resolved["mode"],
        epochs=resolved["epochs"],
        batch_size=resolved["batch_size"],
        lr=resolved["lr"],
        lr_schedule=resolved["lr_schedule"],
        weight_decay=resolved["weight_decay"],
        dropout_rate=resolved["dropout"],
        gen=GenConfig(
            lam=BoxCoxParam(resolved["lambda"]),
            resample_period_T=resolved["resample_T"],
            lambda_pool=pool,
        ),
        seed=resolved["seed"],
        early_stop=early,
    )


def _model_spec(resolved: dict) -> ModelSpec:
    hidden = tuple(int(v) for v in str(resolved["hidden"]).split(",") if v)
    return ModelSpec(hidden=hidden, activation=resolved["activation"])


def cmd_train(args: argparse.Namespace) -> int:
    try:
        resolved = _resolve(args)
        cfg = _train_config(resolved)
        spec = _model_spec(resolved)
        dataset = load_data_spec(resolved["data"], default_seed=resolved["data_seed"])
    except (ConfigError, IngestionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    out_dir = Path(resolved["out"] or f"runs/train-seed{cfg.seed}")
    model, record = train(dataset, spec, cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out_dir / "runrecord.jsonl", record.rows_jsonl())
    atomic_write_text(out_dir / "curves.csv", record.rows_csv())
    atomic_write_text(out_dir / "summary.json", json.dumps(record.summary, indent=2) + "\n")
    save_checkpoint(model, out_dir / "checkpoint.npz")
    write_manifest(
        out_dir,
        command="train",
        resolved={**resolved, "package_version": __version__},
        artifacts=["runrecord.jsonl", "curves.csv", "checkpoint.npz"],
    )
    if record.summary["diverged"]:
        print(
            f"run diverged at epoch {record.summary['diverged_epoch']}; partial record in {out_dir}",
            file=sys.stderr,
        )
        return 2
    print(f"trained {cfg.mode} for {record.summary['epochs_run']} epochs -> {out_dir}")
    return 0


def cmd_check_loss(args: argparse.Namespace) -> int:
    try:
        loss = builtin_loss(args.loss)
        report = loss_report(loss, p=args.tail_p, z0=args.tail_z0)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.json:
        print(json.dumps(report, indent=2))
        return 0
    print(f"loss: {report['name']}")
    print(f"  calibrated:    {report['calibrated']} ({report['calibration_reason']})")
    print(f"  bounded below: {report['bounded_below']} (inf estimate {report['inf_estimate']:.6g})")
    print(f"  raising tail:  {report['tail_ok']} (p={report['tail_p']}, z0={report['tail_z0']})")
    if not report["bounded_below"]:
        print("  warning: unbounded below; expect unstable minibatch training")
    return 0


def cmd_derivs(args: argparse.Namespace) -> int:
    try:
        lam = BoxCoxParam(args.box_cox_lambda)
        rng = Rng(args.seed)
        if args.margins:
            margins = np.array([float(v) for v in args.margins.split(",")])
        else:
            margins = 3.0 * rng.standard_normal(args.batch_size)
        batch = MarginBatch(margins=margins, sample_ids=np.arange(margins.size))
        dbatch = generate_rc_derivatives(batch, GenConfig(lam=lam), rng)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    lines = ["sample_id,margin,deriv,lambda"]
    for i, (z, g) in enumerate(zip(batch.margins, dbatch.derivs)):
        lines.append(f"{i},{float(z)!r},{float(g)!r},{lam.lam!r}")
    text = "\n".join(lines) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _parse_bench_datasets(value: str) -> dict[str, str]:
    out = {}
    for item in value.split():
        if "=" not in item:
            raise ConfigError(f"dataset entries look like name=spec, got {item!r}")
        name, spec = item.split("=", 1)
        out[name] = spec
    if not out:
        raise ConfigError("no datasets configured")
    return out


def cmd_bench(args: argparse.Namespace) -> int:
    try:
        resolved = _resolve(args, extra_keys=("datasets", "methods", "seeds", "metric"))
        datasets_spec = _parse_bench_datasets(resolved.get("datasets") or "")
        methods = str(resolved.get("methods") or "").split()
        if not methods:
            raise ConfigError("no methods configured")
        seeds = [int(s) for s in str(resolved.get("seeds") or "").split()]
        if not seeds:
            raise ConfigError("no seeds configured")
        metric = resolved.get("metric") or "final_test_acc"
        base_cfg = _train_config(resolved)
        spec = _model_spec(resolved)
        method_cfgs = {m: dataclasses.replace(base_cfg, mode=m) for m in methods}
        datasets = {
            name: load_data_spec(ds_spec, default_seed=resolved["data_seed"])
            for name, ds_spec in datasets_spec.items()
        }
    except (ConfigError, IngestionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    cells = [(ds, m, s) for ds in sorted(datasets) for m in sorted(methods) for s in seeds]
    if args.dry_run:
        print(f"benchmark matrix: {len(cells)} cells")
        for ds, m, s in cells:
            print(f"  {ds} x {m} x seed{s}")
        return 0

    out_dir = Path(resolved["out"] or "runs/bench")

    def cell_dir(key):
        ds, m, s = key
        return out_dir / "cells" / ds / m.replace(":", "_") / f"seed{s}"

    def run_cell(key):
        ds, m, s = key
        d = cell_dir(key)
        if (d / "manifest.json").exists():
            return key, json.loads((d / "summary.json").read_text()), True
        cfg = dataclasses.replace(method_cfgs[m], seed=s)
        _, record = train(datasets[ds], spec, cfg)
        d.mkdir(parents=True, exist_ok=True)
        atomic_write_text(d / "runrecord.jsonl", record.rows_jsonl())
        atomic_write_text(d / "curves.csv", record.rows_csv())
        atomic_write_text(d / "summary.json", json.dumps(record.summary, indent=2) + "\n")
        write_manifest(
            d,
            command="bench-cell",
            resolved={**resolved, "dataset": ds, "mode": m, "seed": s, "package_version": __version__},
            artifacts=["runrecord.jsonl", "curves.csv"],
        )
        return key, record.summary, False

    summaries: dict[tuple[str, str, int], dict] = {}
    skipped = 0
    with ThreadPoolExecutor(max_workers=max(1, resolved["jobs"])) as pool:
        for key, summary, was_cached in pool.map(run_cell, cells):
            summaries[key] = summary
            skipped += was_cached

    failures = []
    warnings: list[str] = []
    acc: dict[tuple[str, str], dict[int, float]] = {}
    for (ds, m, s), summary in sorted(summaries.items()):
        if summary["diverged"]:
            failures.append((ds, m, s, f"diverged at epoch {summary['diverged_epoch']}"))
            warnings.append(f"cell ({ds}, {m}, seed {s}) diverged; excluded")
            continue
        acc.setdefault((ds, m), {})[s] = summary[metric]

    result = aggregate_benchmark(sorted(datasets), methods, seeds, acc, failures, warnings)
    atomic_write_text(out_dir / "cells.csv", result.cells_csv())
    atomic_write_text(out_dir / "tests.json", json.dumps(result.tests_json_obj(), indent=2) + "\n")
    atomic_write_text(out_dir / "summary.txt", result.summary_text())
    write_manifest(
        out_dir,
        command="bench",
        resolved={**resolved, "package_version": __version__},
        artifacts=["cells.csv", "tests.json", "summary.txt"],
    )
    for line in result.warnings:
        print(f"warning: {line}", file=sys.stderr)
    print(
        f"benchmark done: {len(cells)} cells ({skipped} cached), "
        f"{len(failures)} failed -> {out_dir}"
    )
    print(result.summary_text(), end="")
    return 2 if failures else 0


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--mode", help="ensloss or fixed:<loss>")
    p.add_argument("--data", help="dataset spec: blobs[:...], highdim[:...], csv path, or .npz cache")
    p.add_argument("--epochs", type=int, help="training epochs")
    p.add_argument("--batch-size", dest="batch_size", type=int, help="minibatch size")
    p.add_argument("--lr", type=float, help="base learning rate")
    p.add_argument("--lr-schedule", dest="lr_schedule", help="constant, cosine, or step:<e1,e2>:<factor>")
    p.add_argument("--weight-decay", dest="weight_decay", type=float, help="coupled L2 coefficient")
    p.add_argument("--dropout", type=float, help="inverted-dropout rate on hidden activations")
    p.add_argument("--lambda", dest="lambda", type=float, help="Box-Cox lambda for the generator")
    p.add_argument("--resample-T", dest="resample_T", type=int, help="resample lambda every T epochs (0 = fixed)")
    p.add_argument("--lambda-pool", dest="lambda_pool", help="comma list of candidate lambdas")
    p.add_argument("--hidden", help="comma list of hidden layer widths")
    p.add_argument("--activation", choices=["relu", "tanh"], help="hidden activation")
    p.add_argument("--seed", type=int, help="run seed (ENSLOSS_SEED overrides config files)")
    p.add_argument("--data-seed", dest="data_seed", type=int, help="seed for synthetic data / splits")
    p.add_argument("--early-stop-threshold", dest="early_stop_threshold", type=float,
                   help="stop once train accuracy holds at or above this level")
    p.add_argument("--early-stop-patience", dest="early_stop_patience", type=int,
                   help="consecutive epochs required for early stop")
    p.add_argument("--out", help="output directory")
    p.add_argument("--jobs", type=int, help="worker pool size for benchmark cells")


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ensloss", description="Stochastic calibrated loss ensembles")
    parser.add_argument("--version", action="version", version=f"ensloss {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training job")
    _add_train_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_check = sub.add_parser("check-loss", help="print validity certificates for a builtin loss")
    p_check.add_argument("loss", help=f"one of: {', '.join(BUILTIN_LOSS_NAMES)}")
    p_check.add_argument("--json", action="store_true")
    p_check.add_argument("--tail-p", dest="tail_p", type=float, default=1.01)
    p_check.add_argument("--tail-z0", dest="tail_z0", type=float, default=1.0)
    p_check.set_defaults(func=cmd_check_loss)

    p_derivs = sub.add_parser("derivs", help="dump a generated derivative batch as CSV")
    p_derivs.add_argument("--batch-size", dest="batch_size", type=int, default=8)
    p_derivs.add_argument("--seed", type=int, default=0)
    p_derivs.add_argument("--lambda", dest="box_cox_lambda", type=float, default=0.0)
    p_derivs.add_argument("--margins", help="comma list of margins (default: random)")
    p_derivs.add_argument("--out")
    p_derivs.set_defaults(func=cmd_derivs)

    p_bench = sub.add_parser("bench", help="run a benchmark matrix with paired t-tests")
    _add_train_flags(p_bench)
    p_bench.add_argument("--datasets", help="space list of name=spec entries")
    p_bench.add_argument("--methods", help="space list of modes")
    p_bench.add_argument("--seeds", help="space list of seeds")
    p_bench.add_argument("--metric", choices=["final_test_acc", "best_test_acc"])
    p_bench.add_argument("--dry-run", dest="dry_run", action="store_true")
    p_bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
