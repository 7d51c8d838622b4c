"""Data ingestion, label mapping, splitting, and synthetic generators.

Labels are always mapped to {-1, +1}. Standardization statistics come from
the training split only and are applied to both splits; constant training
columns get std 1 so they center to zero instead of blowing up.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import Rng


class IngestionError(ValueError):
    pass


@dataclass(frozen=True)
class RawDataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...] | None = None


@dataclass(frozen=True)
class SplitDataset:
    X_train: np.ndarray
    X_test: np.ndarray
    y_train: np.ndarray
    y_test: np.ndarray
    feature_means: np.ndarray
    feature_stds: np.ndarray
    bayes_accuracy: float | None = None

    def __post_init__(self):
        for y in (self.y_train, self.y_test):
            if y.size and not np.all(np.isin(y, (-1, 1))):
                raise ValueError("labels must be exactly -1 or +1")
        if np.any(self.feature_stds <= 0):
            raise ValueError("feature stds must be positive")

    @property
    def n_train(self) -> int:
        return self.y_train.size

    @property
    def n_features(self) -> int:
        return self.X_train.shape[1]


@dataclass(frozen=True)
class SyntheticSpec:
    """Config for a synthetic dataset with known or controllable difficulty."""

    kind: str
    n: int
    d: int
    class_sep: float = 2.0
    noise: float = 1.0
    informative: int = 10
    bayes_accuracy: float | None = field(default=None)

    def __post_init__(self):
        if self.kind not in ("gaussian_blobs", "high_dim_sparse"):
            raise ValueError(f"unknown synthetic kind {self.kind!r}")
        if self.n < 4 or self.d < 1:
            raise ValueError("need n >= 4 and d >= 1")
        if self.kind == "gaussian_blobs":
            bayes = _phi(self.class_sep / 2.0)
            if not 0.5 < bayes <= 1.0:
                raise ValueError(
                    f"class_sep {self.class_sep} gives Bayes accuracy {bayes:.3f}, not in (0.5, 1]"
                )
            object.__setattr__(self, "bayes_accuracy", bayes)


def _phi(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def load_csv(
    path: str | Path,
    label_column: str | int,
    positive_label: str,
    delimiter: str = ",",
    header: bool = True,
) -> RawDataset:
    """Parse a delimited text file into features and +-1 labels.

    Rows whose label equals ``positive_label`` map to +1, all others to -1.
    Non-numeric feature cells are rejected with their row number.
    """
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh, delimiter=delimiter))
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    rows = [r for r in rows if r]
    names: tuple[str, ...] | None = None
    if header:
        if not rows:
            raise IngestionError(f"{path} is empty")
        head, rows = rows[0], rows[1:]
        names = tuple(h.strip() for h in head)
    if not rows:
        raise IngestionError(f"{path} has no data rows")

    if isinstance(label_column, str):
        if names is None:
            raise IngestionError("label column given by name but the file has no header")
        try:
            label_idx = names.index(label_column)
        except ValueError:
            raise IngestionError(
                f"label column {label_column!r} not found; columns: {', '.join(names)}"
            ) from None
    else:
        label_idx = int(label_column)

    width = len(rows[0])
    if not 0 <= label_idx < width:
        raise IngestionError(f"label column index {label_idx} out of range for {width} columns")

    X = np.empty((len(rows), width - 1))
    y = np.empty(len(rows))
    for r, row in enumerate(rows):
        if len(row) != width:
            raise IngestionError(f"row {r + 1}: expected {width} fields, got {len(row)}")
        label = row[label_idx].strip()
        y[r] = 1.0 if label == positive_label else -1.0
        feats = row[:label_idx] + row[label_idx + 1 :]
        try:
            X[r] = [float(v) for v in feats]
        except ValueError as exc:
            raise IngestionError(f"row {r + 1}: non-numeric feature value ({exc})") from None
    if names is not None:
        names = names[:label_idx] + names[label_idx + 1 :]
    return RawDataset(X=X, y=y, feature_names=names)


def _stratified_split(y: np.ndarray, test_fraction: float, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    test_idx: list[np.ndarray] = []
    train_idx: list[np.ndarray] = []
    for cls in (-1.0, 1.0):
        members = np.nonzero(y == cls)[0]
        perm = members[rng.permutation(members.size)]
        n_test = int(round(test_fraction * members.size))
        test_idx.append(perm[:n_test])
        train_idx.append(perm[n_test:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(test_idx))


def split_standardize(raw: RawDataset, test_fraction: float, seed: int) -> SplitDataset:
    """Stratified shuffle split, then standardize using train statistics only."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie strictly between 0 and 1")
    classes = np.unique(raw.y)
    if classes.size < 2:
        raise ValueError("both classes must be present before splitting")
    train, test = _stratified_split(raw.y, test_fraction, Rng(seed))
    for name, idx in (("train", train), ("test", test)):
        if np.unique(raw.y[idx]).size < 2:
            raise ValueError(f"{name} split lost a class; adjust test_fraction")
    means = raw.X[train].mean(axis=0)
    stds = raw.X[train].std(axis=0)
    stds = np.where(stds > 0, stds, 1.0)
    return SplitDataset(
        X_train=(raw.X[train] - means) / stds,
        X_test=(raw.X[test] - means) / stds,
        y_train=raw.y[train].copy(),
        y_test=raw.y[test].copy(),
        feature_means=means,
        feature_stds=stds,
    )


def make_gaussian_blobs(spec: SyntheticSpec, seed: int, test_fraction: float = 0.25) -> SplitDataset:
    """Two unit-variance isotropic blobs at +-(class_sep/2) along the first axis.

    Balanced classes; the analytic Bayes accuracy is recorded on the result.
    """
    if spec.kind != "gaussian_blobs":
        raise ValueError("spec.kind must be gaussian_blobs")
    rng = Rng(seed)
    sample_rng, split_rng = rng.spawn(2)
    n_pos = spec.n // 2
    y = np.concatenate([np.ones(n_pos), -np.ones(spec.n - n_pos)])
    X = sample_rng.standard_normal(spec.n * spec.d).reshape(spec.n, spec.d)
    X[:, 0] += y * (spec.class_sep / 2.0)
    train, test = _stratified_split(y, test_fraction, split_rng)
    means = X[train].mean(axis=0)
    stds = X[train].std(axis=0)
    stds = np.where(stds > 0, stds, 1.0)
    return SplitDataset(
        X_train=(X[train] - means) / stds,
        X_test=(X[test] - means) / stds,
        y_train=y[train].copy(),
        y_test=y[test].copy(),
        feature_means=means,
        feature_stds=stds,
        bayes_accuracy=spec.bayes_accuracy,
    )


def make_high_dim_sparse(spec: SyntheticSpec, seed: int, test_fraction: float = 0.5) -> SplitDataset:
    """Overparameterization stressor: few informative directions, many noise ones.

    Labels are the sign of a sparse linear score plus Gaussian label noise
    scaled by ``spec.noise``.
    """
    if spec.kind != "high_dim_sparse":
        raise ValueError("spec.kind must be high_dim_sparse")
    k = min(spec.informative, spec.d)
    rng = Rng(seed)
    sample_rng, noise_rng, split_rng = rng.spawn(3)
    X = sample_rng.standard_normal(spec.n * spec.d).reshape(spec.n, spec.d)
    w = np.zeros(spec.d)
    w[:k] = spec.class_sep / math.sqrt(k)
    score = X @ w + spec.noise * noise_rng.standard_normal(spec.n)
    y = np.where(score > 0, 1.0, -1.0)
    # guard against a freak single-class draw on tiny n
    if np.unique(y).size < 2:
        y[0] = -y[0]
    train, test = _stratified_split(y, test_fraction, split_rng)
    means = X[train].mean(axis=0)
    stds = X[train].std(axis=0)
    stds = np.where(stds > 0, stds, 1.0)
    return SplitDataset(
        X_train=(X[train] - means) / stds,
        X_test=(X[test] - means) / stds,
        y_train=y[train].copy(),
        y_test=y[test].copy(),
        feature_means=means,
        feature_stds=stds,
    )


_CACHE_MAGIC = "ensloss-dataset"
_CACHE_VERSION = 1


def save_dataset(ds: SplitDataset, path: str | Path) -> None:
    """Binary cache with a versioned magic header; round-trips bitwise."""
    arrays = {
        "magic": np.array(_CACHE_MAGIC),
        "version": np.array([_CACHE_VERSION]),
        "X_train": ds.X_train,
        "X_test": ds.X_test,
        "y_train": ds.y_train,
        "y_test": ds.y_test,
        "feature_means": ds.feature_means,
        "feature_stds": ds.feature_stds,
        "bayes_accuracy": np.array(
            [math.nan if ds.bayes_accuracy is None else ds.bayes_accuracy]
        ),
    }
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_dataset(path: str | Path) -> SplitDataset:
    with np.load(path, allow_pickle=False) as data:
        if str(data["magic"]) != _CACHE_MAGIC:
            raise IngestionError(f"{path} is not an ensloss dataset cache")
        if int(data["version"][0]) != _CACHE_VERSION:
            raise IngestionError(f"unsupported dataset cache version in {path}")
        bayes = float(data["bayes_accuracy"][0])
        return SplitDataset(
            X_train=data["X_train"],
            X_test=data["X_test"],
            y_train=data["y_train"],
            y_test=data["y_test"],
            feature_means=data["feature_means"],
            feature_stds=data["feature_stds"],
            bayes_accuracy=None if math.isnan(bayes) else bayes,
        )
