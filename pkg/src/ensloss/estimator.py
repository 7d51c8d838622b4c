"""Scikit-learn estimator facade over the training loop.

EnsLossClassifier plugs into pipelines, grid search, and cross-validation
like any other sklearn classifier: constructor params are stored verbatim,
fitted state lives in trailing-underscore attributes, and input validation
goes through sklearn's helpers.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .datasets import SplitDataset
from .derivgen import GenConfig
from .models import forward
from .numerics import BoxCoxParam
from .trainer import EarlyStop, ModelSpec, TrainConfig, train


class EnsLossClassifier(BaseEstimator, ClassifierMixin):
    """Binary classifier trained with per-batch random calibrated derivatives.

    Set ``mode`` to ``"fixed:<loss>"`` (e.g. ``fixed:logistic``) for a
    conventional fixed-loss baseline with the same optimizer and model.

    Parameters mirror TrainConfig; ``validation_fraction`` > 0 carves a
    holdout whose per-epoch metrics land in ``record_``.
    """

    def __init__(
        self,
        mode: str = "ensloss",
        hidden_layer_sizes: tuple[int, ...] = (64, 64),
        activation: str = "relu",
        epochs: int = 100,
        batch_size: int = 128,
        lr: float = 0.1,
        lr_schedule: str = "cosine",
        weight_decay: float = 0.0,
        dropout_rate: float = 0.0,
        box_cox_lambda: float = 0.0,
        resample_period: int = 0,
        lambda_pool: tuple[float, ...] = (0.0, 0.5, 1.0),
        validation_fraction: float = 0.0,
        early_stop_threshold: float | None = None,
        early_stop_patience: int = 5,
        random_state: int = 0,
    ):
        self.mode = mode
        self.hidden_layer_sizes = hidden_layer_sizes
        self.activation = activation
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_schedule = lr_schedule
        self.weight_decay = weight_decay
        self.dropout_rate = dropout_rate
        self.box_cox_lambda = box_cox_lambda
        self.resample_period = resample_period
        self.lambda_pool = lambda_pool
        self.validation_fraction = validation_fraction
        self.early_stop_threshold = early_stop_threshold
        self.early_stop_patience = early_stop_patience
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        classes = np.unique(y)
        if classes.size != 2:
            raise ValueError(
                f"this estimator handles binary problems; got {classes.size} classes"
            )
        self.classes_ = classes
        y_pm = np.where(y == classes[1], 1.0, -1.0)

        self.feature_means_ = X.mean(axis=0)
        stds = X.std(axis=0)
        self.feature_stds_ = np.where(stds > 0, stds, 1.0)
        Xs = (X - self.feature_means_) / self.feature_stds_

        if self.validation_fraction > 0.0:
            n_val = max(2, int(round(self.validation_fraction * Xs.shape[0])))
            # deterministic tail holdout after a seeded shuffle
            from .numerics import Rng

            perm = Rng(self.random_state).permutation(Xs.shape[0])
            val_idx, train_idx = perm[:n_val], perm[n_val:]
        else:
            train_idx = np.arange(Xs.shape[0])
            val_idx = np.arange(0)

        dataset = SplitDataset(
            X_train=Xs[train_idx],
            X_test=Xs[val_idx],
            y_train=y_pm[train_idx],
            y_test=y_pm[val_idx],
            feature_means=self.feature_means_,
            feature_stds=self.feature_stds_,
        )
        early = (
            EarlyStop(self.early_stop_threshold, self.early_stop_patience)
            if self.early_stop_threshold is not None
            else None
        )
        cfg = TrainConfig(
            mode=self.mode,
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            lr_schedule=self.lr_schedule,
            weight_decay=self.weight_decay,
            dropout_rate=self.dropout_rate,
            gen=GenConfig(
                lam=BoxCoxParam(self.box_cox_lambda),
                resample_period_T=self.resample_period,
                lambda_pool=tuple(self.lambda_pool),
            ),
            seed=self.random_state,
            early_stop=early,
        )
        self.model_, self.record_ = train(dataset, ModelSpec(tuple(self.hidden_layer_sizes), self.activation), cfg)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features but the model was fit with {self.n_features_in_}"
            )
        Xs = (X - self.feature_means_) / self.feature_stds_
        scores, _ = forward(self.model_, Xs, train_mode=False)
        return scores

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[(scores > 0).astype(int)]
