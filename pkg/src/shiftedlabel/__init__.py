"""Softmax relation classifiers under shifted label distributions.

Bias adjustment, max/entropy thresholds and synthetic label-shift suites.
"""

__version__ = "0.1.0"

from .adaptation import (
    AdjustmentSpec,
    BiasAdjustedClassifier,
    ThresholdClassifier,
    ThresholdSpec,
    adjust_bias,
    apply_threshold,
    ba_fix_predict,
    ba_fix_proba,
    ba_set_predict,
    ba_set_proba,
    clean_dev_split,
    estimate_label_distribution,
    tune_threshold,
)
from .core import (
    Instance,
    LabelDistribution,
    LabelVocab,
    SoftmaxClassifier,
    argmax_predict,
    entropy,
    logits,
    represent,
    softmax,
    softmax_predict,
)
from .datasets import load_dataset, read_instances, save_dataset
from .evaluation import EvalReport, SeedAggregate, aggregate_seeds, evaluate, micro_f1
from .experiment import ExperimentResult, RunConfig, emit_reports, render_reports, run_experiment
from .synth import (
    ShiftReport,
    ShiftSuite,
    SynthGenSpec,
    build_shift_suite,
    interpolate_distribution,
    random_distribution,
    shift_report,
    stratified_sample,
    synth_generate,
)
from .training import TrainConfig, TrainLog, batch_loss_and_grad, gradient, loss, q_distribution, train, train_ba_fix
from .validation import DataError

__all__ = [
    "AdjustmentSpec",
    "BiasAdjustedClassifier",
    "DataError",
    "EvalReport",
    "ExperimentResult",
    "Instance",
    "LabelDistribution",
    "LabelVocab",
    "RunConfig",
    "SeedAggregate",
    "ShiftReport",
    "ShiftSuite",
    "SoftmaxClassifier",
    "SynthGenSpec",
    "ThresholdClassifier",
    "ThresholdSpec",
    "TrainConfig",
    "TrainLog",
    "adjust_bias",
    "aggregate_seeds",
    "apply_threshold",
    "argmax_predict",
    "ba_fix_predict",
    "ba_fix_proba",
    "ba_set_predict",
    "ba_set_proba",
    "batch_loss_and_grad",
    "build_shift_suite",
    "clean_dev_split",
    "emit_reports",
    "entropy",
    "estimate_label_distribution",
    "evaluate",
    "gradient",
    "interpolate_distribution",
    "load_dataset",
    "logits",
    "loss",
    "micro_f1",
    "q_distribution",
    "random_distribution",
    "read_instances",
    "render_reports",
    "represent",
    "run_experiment",
    "save_dataset",
    "shift_report",
    "softmax",
    "softmax_predict",
    "stratified_sample",
    "synth_generate",
    "train",
    "train_ba_fix",
    "tune_threshold",
]
