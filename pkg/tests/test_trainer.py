import json

import numpy as np
import pytest

from ensloss.datasets import SplitDataset, SyntheticSpec, make_gaussian_blobs
from ensloss.derivgen import fixed_loss_derivatives
from ensloss.losses import builtin_loss
from ensloss.models import forward, init_mlp
from ensloss.numerics import Rng
from ensloss.trainer import (
    DatasetSplit,
    EarlyStop,
    ModelSpec,
    RunRecord,
    TrainConfig,
    accuracy_score,
    auc_score,
    evaluate,
    train,
)


def separable_blobs(seed, n=200, margin=2.0, d=2):
    """Gaussian blobs with the gap region rejected, so the classes are
    strictly separated by ``margin`` along the first coordinate."""
    rng = Rng(seed)
    y = np.concatenate([np.ones(n // 2), -np.ones(n - n // 2)])
    X = rng.standard_normal(n * d).reshape(n, d)
    X[:, 0] = y * (margin / 2.0 + np.abs(X[:, 0]))
    return SplitDataset(
        X_train=X,
        X_test=X[: max(4, n // 10)],
        y_train=y,
        y_test=y[: max(4, n // 10)],
        feature_means=np.zeros(d),
        feature_stds=np.ones(d),
    )


class TestMetrics:
    def test_perfect_separation(self):
        assert accuracy_score(np.array([1.0, -1.0]), np.array([1.0, -1.0])) == 1.0
        assert auc_score(np.array([1.0, -1.0]), np.array([1.0, -1.0])) == 1.0

    def test_zero_scores_count_as_errors(self):
        assert accuracy_score(np.zeros(4), np.array([1.0, -1.0, 1.0, -1.0])) == 0.0

    def test_spec_example(self):
        scores = np.array([0.9, 0.1, 0.8, 0.3])
        labels = np.array([1.0, -1.0, 1.0, -1.0])
        assert auc_score(scores, labels) == 1.0
        assert accuracy_score(scores, labels) == 0.5

    def test_auc_tie_credit(self):
        scores = np.array([0.5, 0.5])
        labels = np.array([1.0, -1.0])
        assert auc_score(scores, labels) == 0.5

    def test_auc_single_class_raises(self):
        with pytest.raises(ValueError, match="single class"):
            auc_score(np.array([0.1, 0.2]), np.array([1.0, 1.0]))

    def test_auc_matches_reference(self):
        from sklearn.metrics import roc_auc_score

        rng = np.random.default_rng(0)
        for _ in range(20):
            scores = rng.normal(size=50).round(1)  # force ties
            labels = np.where(rng.random(50) > 0.4, 1.0, -1.0)
            assert auc_score(scores, labels) == pytest.approx(
                roc_auc_score(labels, scores), abs=1e-12
            )

    def test_evaluate_single_class_returns_accuracy(self):
        model = init_mlp([2, 1], Rng(0))
        out = evaluate(model, DatasetSplit(np.ones((3, 2)), np.ones(3)))
        assert 0.0 <= out["accuracy"] <= 1.0
        assert np.isnan(out["auc"])

    def test_evaluate_empty_split_rejected(self):
        model = init_mlp([2, 1], Rng(0))
        with pytest.raises(ValueError):
            evaluate(model, DatasetSplit(np.empty((0, 2)), np.empty(0)))


class TestConfig:
    def test_epochs_validated(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)

    def test_mode_validated_with_loss_list(self):
        with pytest.raises(ValueError, match="valid names"):
            TrainConfig(mode="fixed:unknownloss")
        with pytest.raises(ValueError):
            TrainConfig(mode="sgd")

    def test_batch_size_rule(self):
        with pytest.raises(ValueError):
            TrainConfig(mode="ensloss", batch_size=1)
        TrainConfig(mode="fixed:hinge", batch_size=1)

    def test_schedule_validated(self):
        with pytest.raises(ValueError):
            TrainConfig(lr_schedule="linear")
        TrainConfig(lr_schedule="step:10,20:0.5")


class TestRunRecord:
    def test_rows_must_increase(self):
        with pytest.raises(ValueError):
            RunRecord(rows=[{"epoch": 0}, {"epoch": 0}], summary={})

    def test_jsonl_round_trip(self):
        rec = RunRecord(
            rows=[{"epoch": 0, "train_acc": 0.5}, {"epoch": 1, "train_acc": 0.75}], summary={}
        )
        lines = rec.rows_jsonl().strip().split("\n")
        assert [json.loads(l)["train_acc"] for l in lines] == [0.5, 0.75]

    def test_csv_has_header(self):
        rec = RunRecord(rows=[{"epoch": 0, "train_acc": 0.5}], summary={})
        assert rec.rows_csv().splitlines()[0] == "epoch,train_acc"


class TestTraining:
    def test_fixed_hinge_fits_separable_data(self):
        # perceptron-style sanity: separable data reaches train acc 1
        for seed in range(10):
            ds = separable_blobs(seed)
            cfg = TrainConfig(
                mode="fixed:hinge", epochs=50, batch_size=32, lr=0.1,
                lr_schedule="constant", seed=seed,
            )
            _, rec = train(ds, ModelSpec((16,)), cfg)
            assert max(r["train_acc"] for r in rec.rows) == 1.0, f"seed {seed}"

    def test_ensloss_fits_separable_data(self):
        for seed in range(10):
            ds = separable_blobs(seed)
            cfg = TrainConfig(
                mode="ensloss", epochs=200, batch_size=32, lr=0.1,
                lr_schedule="constant", seed=seed,
            )
            _, rec = train(ds, ModelSpec((16,)), cfg)
            assert max(r["train_acc"] for r in rec.rows) == 1.0, f"seed {seed}"

    def test_update_count_single_epoch(self):
        ds = separable_blobs(0, n=96)
        cfg = TrainConfig(mode="fixed:hinge", epochs=1, batch_size=32, lr=0.1, seed=0)
        _, rec = train(ds, ModelSpec((8,)), cfg)
        assert rec.summary["updates_total"] == 3

    def test_short_batch_kept_in_fixed_dropped_in_ensloss(self):
        ds = separable_blobs(0, n=65)  # 65 = 2*32 + 1
        cfg_f = TrainConfig(mode="fixed:hinge", epochs=1, batch_size=32, lr=0.1, seed=0)
        _, rec_f = train(ds, ModelSpec((8,)), cfg_f)
        assert rec_f.summary["updates_total"] == 3
        cfg_e = TrainConfig(mode="ensloss", epochs=1, batch_size=32, lr=0.1, seed=0)
        _, rec_e = train(ds, ModelSpec((8,)), cfg_e)
        assert rec_e.summary["updates_total"] == 2

    def test_reproducible_records(self):
        ds = separable_blobs(3)
        cfg = TrainConfig(mode="ensloss", epochs=10, batch_size=32, lr=0.1, seed=7)
        _, r1 = train(ds, ModelSpec((8,)), cfg)
        _, r2 = train(ds, ModelSpec((8,)), cfg)
        assert r1.rows_jsonl() == r2.rows_jsonl()

    def test_mode_isolation_bitwise(self):
        # fixed derivatives pushed through the ensemble plumbing match the
        # fixed-mode run exactly
        ds = make_gaussian_blobs(
            SyntheticSpec(kind="gaussian_blobs", n=400, d=2, class_sep=2.0), seed=0
        )
        hinge = builtin_loss("hinge")
        producer = lambda batch, lam, rng: fixed_loss_derivatives(batch, hinge)
        spec = ModelSpec((16,))
        m1, r1 = train(ds, spec, TrainConfig(mode="fixed:hinge", epochs=20, batch_size=64, lr=0.05, seed=11))
        m2, r2 = train(
            ds, spec,
            TrainConfig(mode="ensloss", epochs=20, batch_size=64, lr=0.05, seed=11),
            derivative_producer=producer,
        )
        for a, b in zip(m1.weights + m1.biases, m2.weights + m2.biases):
            assert np.array_equal(a, b)
        strip = lambda rows: [{k: v for k, v in r.items() if k != "lambda_used"} for r in rows]
        assert strip(r1.rows) == strip(r2.rows)

    def test_without_replacement_within_epoch(self):
        ds = separable_blobs(0, n=100)
        seen = []
        from ensloss.derivgen import DerivativeBatch

        def spy_producer(batch, lam, rng):
            seen.extend(batch.sample_ids.tolist())
            return fixed_loss_derivatives(batch, builtin_loss("hinge"))

        cfg = TrainConfig(mode="fixed:hinge", epochs=1, batch_size=32, lr=0.1, seed=0)
        train(ds, ModelSpec((8,)), cfg, derivative_producer=spy_producer)
        assert sorted(seen) == list(range(100))

    def test_early_stop_on_train_accuracy(self):
        ds = separable_blobs(1)
        cfg = TrainConfig(
            mode="fixed:hinge", epochs=100, batch_size=32, lr=0.1, lr_schedule="constant",
            seed=1, early_stop=EarlyStop(train_acc_threshold=1.0, patience=3),
        )
        _, rec = train(ds, ModelSpec((16,)), cfg)
        assert rec.summary["epochs_run"] < 100
        assert all(r["train_acc"] >= 1.0 for r in rec.rows[-3:])

    def test_divergence_recorded_not_raised(self):
        ds = separable_blobs(0)
        # exponential loss with a huge lr blows up quickly
        cfg = TrainConfig(
            mode="fixed:exponential", epochs=60, batch_size=8, lr=2000.0,
            lr_schedule="constant", seed=0,
        )
        _, rec = train(ds, ModelSpec((16,)), cfg)
        assert rec.summary["diverged"] is True
        assert rec.summary["diverged_epoch"] is not None

    def test_lambda_column_reflects_resampling(self):
        ds = separable_blobs(2)
        from ensloss.derivgen import GenConfig
        from ensloss.numerics import BoxCoxParam

        cfg = TrainConfig(
            mode="ensloss", epochs=12, batch_size=32, lr=0.05, seed=5,
            gen=GenConfig(lam=BoxCoxParam(0.0), resample_period_T=5, lambda_pool=(0.25, 0.75)),
        )
        _, rec = train(ds, ModelSpec((8,)), cfg)
        lams = [r["lambda_used"] for r in rec.rows]
        assert set(lams) <= {0.25, 0.75}
        assert lams[0] == lams[4] and lams[5] == lams[9]

    def test_single_class_train_rejected(self):
        ds = separable_blobs(0)
        bad = SplitDataset(
            X_train=ds.X_train,
            X_test=ds.X_test,
            y_train=np.ones_like(ds.y_train),
            y_test=ds.y_test,
            feature_means=ds.feature_means,
            feature_stds=ds.feature_stds,
        )
        with pytest.raises(ValueError, match="both classes"):
            train(bad, ModelSpec((8,)), TrainConfig(mode="fixed:hinge", epochs=1, seed=0))

    def test_empty_test_split_allowed(self):
        ds = separable_blobs(0)
        no_test = SplitDataset(
            X_train=ds.X_train,
            X_test=np.empty((0, 2)),
            y_train=ds.y_train,
            y_test=np.empty(0),
            feature_means=ds.feature_means,
            feature_stds=ds.feature_stds,
        )
        _, rec = train(no_test, ModelSpec((8,)), TrainConfig(mode="fixed:hinge", epochs=2, batch_size=32, seed=0))
        assert rec.rows[0]["test_acc"] is None
        assert rec.summary["final_test_acc"] is None

    def test_cosine_schedule_decays(self):
        from ensloss.trainer import _parse_schedule

        sched = _parse_schedule("cosine", 100)
        assert sched(0) == pytest.approx(1.0)
        assert sched(50) == pytest.approx(0.5)
        assert sched(99) < 0.01

    def test_step_schedule(self):
        from ensloss.trainer import _parse_schedule

        sched = _parse_schedule("step:10,20:0.1", 30)
        assert sched(9) == 1.0
        assert sched(10) == pytest.approx(0.1)
        assert sched(25) == pytest.approx(0.01)
