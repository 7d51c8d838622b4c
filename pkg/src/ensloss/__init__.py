"""Stochastic calibrated loss ensembles for binary classification."""

__version__ = "0.1.0"

from .numerics import BoxCoxParam, Rng, box_cox, inv_box_cox, sample_standard_normal
from .losses import (
    BUILTIN_LOSS_NAMES,
    FiniteLossMixture,
    LossSpec,
    PiecewiseLinearLoss,
    builtin_loss,
    check_bounded_below,
    check_calibration,
    check_superlinear_tail,
    excess_risk_bound,
    loss_report,
    mixture_loss_value,
    psi_transform,
    reconstruct_loss,
)
from .derivgen import (
    DerivativeBatch,
    GenConfig,
    MarginBatch,
    certify_rc,
    fixed_loss_derivatives,
    generate_rc_derivatives,
    maybe_resample_lambda,
)
from .models import (
    DivergenceError,
    GradAccumulator,
    MlpModel,
    backward_with_derivs,
    forward,
    init_mlp,
    load_checkpoint,
    save_checkpoint,
    sgd_step,
)
from .datasets import (
    RawDataset,
    SplitDataset,
    SyntheticSpec,
    load_csv,
    load_dataset,
    make_gaussian_blobs,
    make_high_dim_sparse,
    save_dataset,
    split_standardize,
)
from .trainer import (
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
from .evaluation import (
    BenchmarkResult,
    ComparisonCell,
    TestResult,
    paired_t_test_one_tailed,
    run_benchmark,
    student_t_cdf,
)
from .estimator import EnsLossClassifier

__all__ = [
    "BoxCoxParam", "Rng", "box_cox", "inv_box_cox", "sample_standard_normal",
    "BUILTIN_LOSS_NAMES", "FiniteLossMixture", "LossSpec", "PiecewiseLinearLoss",
    "builtin_loss", "check_bounded_below", "check_calibration", "check_superlinear_tail",
    "excess_risk_bound", "loss_report", "mixture_loss_value", "psi_transform", "reconstruct_loss",
    "DerivativeBatch", "GenConfig", "MarginBatch", "certify_rc", "fixed_loss_derivatives",
    "generate_rc_derivatives", "maybe_resample_lambda",
    "DivergenceError", "GradAccumulator", "MlpModel", "backward_with_derivs", "forward",
    "init_mlp", "load_checkpoint", "save_checkpoint", "sgd_step",
    "RawDataset", "SplitDataset", "SyntheticSpec", "load_csv", "load_dataset",
    "make_gaussian_blobs", "make_high_dim_sparse", "save_dataset", "split_standardize",
    "DatasetSplit", "EarlyStop", "ModelSpec", "RunRecord", "TrainConfig",
    "accuracy_score", "auc_score", "evaluate", "train",
    "BenchmarkResult", "ComparisonCell", "TestResult", "paired_t_test_one_tailed",
    "run_benchmark", "student_t_cdf",
    "EnsLossClassifier",
]
