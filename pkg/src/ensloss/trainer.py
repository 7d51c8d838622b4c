"""Minibatch training loop, metrics, and run records.

One run owns five independent RNG streams (init, shuffle, derivatives,
dropout, lambda resampling) spawned from the config seed, so the ensemble
and fixed-loss modes consume identical randomness everywhere except
derivative production. That is what makes the two modes bitwise comparable.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .datasets import SplitDataset
from .derivgen import (
    DerivativeBatch,
    GenConfig,
    MarginBatch,
    fixed_loss_derivatives,
    generate_rc_derivatives,
    maybe_resample_lambda,
)
from .losses import builtin_loss
from .models import DivergenceError, MlpModel, backward_with_derivs, forward, init_mlp, sgd_step
from .numerics import BoxCoxParam, Rng

DerivativeProducer = Callable[[MarginBatch, BoxCoxParam, Rng], DerivativeBatch]


@dataclass(frozen=True)
class DatasetSplit:
    X: np.ndarray
    y: np.ndarray


@dataclass(frozen=True)
class EarlyStop:
    train_acc_threshold: float
    patience: int


@dataclass(frozen=True)
class ModelSpec:
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "relu"


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "ensloss"
    epochs: int = 100
    batch_size: int = 128
    lr: float = 0.1
    lr_schedule: str = "cosine"
    weight_decay: float = 0.0
    dropout_rate: float = 0.0
    gen: GenConfig = field(default_factory=GenConfig)
    seed: int = 0
    early_stop: EarlyStop | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1 or (self.mode == "ensloss" and self.batch_size < 2):
            raise ValueError("batch_size must be >= 2 in ensloss mode, >= 1 otherwise")
        if self.mode != "ensloss":
            if not self.mode.startswith("fixed:"):
                raise ValueError(f"mode must be 'ensloss' or 'fixed:<loss>', got {self.mode!r}")
            builtin_loss(self.fixed_loss_name)  # raises with the valid names
        _parse_schedule(self.lr_schedule, self.epochs)

    @property
    def fixed_loss_name(self) -> str:
        return self.mode.split(":", 1)[1]


def _parse_schedule(schedule: str, epochs: int) -> Callable[[int], float]:
    """Schedules return a multiplier on the base lr for a 0-based epoch."""
    if schedule == "constant":
        return lambda e: 1.0
    if schedule == "cosine":
        return lambda e: 0.5 * (1.0 + math.cos(math.pi * e / max(1, epochs)))
    if schedule.startswith("step:"):
        try:
            _, milestones, factor = schedule.split(":")
            points = tuple(int(m) for m in milestones.split(",") if m)
            fac = float(factor)
        except ValueError:
            raise ValueError(f"bad step schedule {schedule!r}; expected step:<e1,e2,...>:<factor>")
        return lambda e: fac ** sum(1 for m in points if e >= m)
    raise ValueError(f"unknown lr schedule {schedule!r}")


@dataclass
class RunRecord:
    """Per-epoch metric rows plus a run summary.

    ``rows_jsonl`` is the deterministic byte stream for reproducibility
    checks; wallclock lives only in the summary.
    """

    rows: list[dict]
    summary: dict

    def __post_init__(self):
        epochs = [r["epoch"] for r in self.rows]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError("record rows must be strictly increasing in epoch")

    def rows_jsonl(self) -> str:
        return "".join(json.dumps(row) + "\n" for row in self.rows)

    def rows_csv(self) -> str:
        if not self.rows:
            return ""
        cols = list(self.rows[0])
        lines = [",".join(cols)]
        for row in self.rows:
            lines.append(",".join("" if row[c] is None else repr(row[c]) for c in cols))
        return "\n".join(lines) + "\n"


def accuracy_score(scores: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of strictly correct signs; a zero score counts as an error."""
    return float(np.mean(labels * scores > 0))


def auc_score(scores: np.ndarray, labels: np.ndarray) -> float:
    """Rank statistic over score/label pairs with half credit for ties."""
    pos = labels > 0
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC is undefined when a split has a single class")
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    _, inverse, counts = np.unique(sorted_scores, return_inverse=True, return_counts=True)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    avg_rank = starts + (counts + 1) / 2.0
    ranks = np.empty(labels.size)
    ranks[order] = avg_rank[inverse]
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def evaluate(model: MlpModel, split: DatasetSplit) -> dict:
    """Accuracy and AUC on a split in eval mode.

    AUC comes back as nan for a single-class split (accuracy is still
    meaningful there); use auc_score directly if you want the error.
    """
    if split.y.size == 0:
        raise ValueError("cannot evaluate an empty split")
    scores, _ = forward(model, split.X, train_mode=False)
    acc = accuracy_score(scores, split.y)
    try:
        auc = auc_score(scores, split.y)
    except ValueError:
        auc = math.nan
    return {"accuracy": acc, "auc": auc}


def _resolve_producer(cfg: TrainConfig) -> DerivativeProducer:
    if cfg.mode == "ensloss":

        def producer(batch: MarginBatch, lam: BoxCoxParam, rng: Rng) -> DerivativeBatch:
            return generate_rc_derivatives(batch, dataclasses.replace(cfg.gen, lam=lam), rng)

        return producer
    loss = builtin_loss(cfg.fixed_loss_name)

    def producer(batch: MarginBatch, lam: BoxCoxParam, rng: Rng) -> DerivativeBatch:
        return fixed_loss_derivatives(batch, loss)

    return producer


def train(
    dataset: SplitDataset,
    model_spec: ModelSpec,
    cfg: TrainConfig,
    derivative_producer: DerivativeProducer | None = None,
) -> tuple[MlpModel, RunRecord]:
    """Run the training loop; returns the model and its RunRecord.

    ``derivative_producer`` overrides the mode's derivative source while
    keeping every other code path, which is how fixed derivatives can be
    routed through the ensemble plumbing for equivalence checks.
    Divergence does not raise: the record's summary carries the flag and
    the offending epoch.
    """
    if dataset.n_train == 0:
        raise ValueError("empty training split")
    if np.unique(dataset.y_train).size < 2:
        raise ValueError("training split must contain both classes")
    ensemble_path = cfg.mode == "ensloss"
    producer = derivative_producer if derivative_producer is not None else _resolve_producer(cfg)

    init_rng, shuffle_rng, deriv_rng, dropout_rng, lam_rng = Rng(cfg.seed).spawn(5)
    model = init_mlp(
        [dataset.n_features, *model_spec.hidden, 1],
        init_rng,
        activation=model_spec.activation,
        dropout_rate=cfg.dropout_rate,
        weight_decay=cfg.weight_decay,
    )
    schedule = _parse_schedule(cfg.lr_schedule, cfg.epochs)
    train_split = DatasetSplit(dataset.X_train, dataset.y_train)
    test_split = DatasetSplit(dataset.X_test, dataset.y_test)
    has_test = dataset.y_test.size > 0

    current_lam = cfg.gen.lam
    rows: list[dict] = []
    diverged = False
    diverged_epoch: int | None = None
    updates_total = 0
    stop_streak = 0
    t0 = time.perf_counter()

    for epoch in range(cfg.epochs):
        if ensemble_path and cfg.gen.resample_period_T > 0:
            current_lam = maybe_resample_lambda(cfg.gen, epoch, lam_rng, current_lam)
        lr = cfg.lr * schedule(epoch)
        perm = shuffle_rng.permutation(dataset.n_train)
        try:
            # overflow on the way to divergence is expected; the explicit
            # finiteness checks below turn it into a recorded abort
            with np.errstate(over="ignore", invalid="ignore"):
                for start in range(0, dataset.n_train, cfg.batch_size):
                    idx = perm[start : start + cfg.batch_size]
                    if ensemble_path and idx.size < 2:
                        continue  # the generator needs two samples to order
                    Xb = dataset.X_train[idx]
                    yb = dataset.y_train[idx]
                    scores, cache = forward(model, Xb, train_mode=True, rng=dropout_rng)
                    if not np.all(np.isfinite(scores)):
                        raise DivergenceError("non-finite scores")
                    batch = MarginBatch(margins=yb * scores, sample_ids=idx)
                    try:
                        dbatch = producer(batch, current_lam, deriv_rng)
                    except ValueError as exc:
                        raise DivergenceError(f"derivative evaluation failed: {exc}") from exc
                    grads = backward_with_derivs(model, cache, yb, dbatch)
                    sgd_step(model, grads, lr)
                    updates_total += 1
        except DivergenceError:
            diverged = True
            diverged_epoch = epoch
            break

        with np.errstate(over="ignore", invalid="ignore"):
            train_scores, _ = forward(model, train_split.X, train_mode=False)
        if not np.all(np.isfinite(train_scores)):
            diverged = True
            diverged_epoch = epoch
            break
        train_acc = accuracy_score(train_scores, train_split.y)
        try:
            train_auc = auc_score(train_scores, train_split.y)
        except ValueError:
            train_auc = math.nan
        test_metrics = evaluate(model, test_split) if has_test else None
        rows.append(
            {
                "epoch": epoch,
                "train_acc": train_acc,
                "test_acc": test_metrics["accuracy"] if test_metrics else None,
                "train_auc": train_auc,
                "test_auc": test_metrics["auc"] if test_metrics else None,
                "mean_margin": float(np.mean(train_split.y * train_scores)),
                "lambda_used": current_lam.lam if ensemble_path else None,
            }
        )
        if cfg.early_stop is not None:
            if train_acc >= cfg.early_stop.train_acc_threshold:
                stop_streak += 1
                if stop_streak >= cfg.early_stop.patience:
                    break
            else:
                stop_streak = 0

    test_accs = [r["test_acc"] for r in rows if r["test_acc"] is not None]
    summary = {
        "mode": cfg.mode,
        "epochs_run": len(rows),
        "updates_total": updates_total,
        "best_test_acc": max(test_accs) if test_accs else None,
        "final_test_acc": test_accs[-1] if test_accs else None,
        "diverged": diverged,
        "diverged_epoch": diverged_epoch,
        "wallclock": time.perf_counter() - t0,
    }
    return model, RunRecord(rows=rows, summary=summary)
