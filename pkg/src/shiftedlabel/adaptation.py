"""Adapting a trained softmax classifier to a shifted label distribution.

Two families of methods are provided, both fitted on a small *clean dev*
sample of the target data:

* bias adjustment, which moves each label's bias by the log ratio of the
  target and source priors (``set``), or, for a model trained with its bias
  frozen at the log source prior, swaps in the log target prior (``fix``);
* max / entropy thresholds, which relabel low-confidence predictions as NONE.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .core import LabelDistribution, LabelVocab, SoftmaxClassifier, entropy, softmax
from .evaluation import micro_f1
from .validation import DataError, as_label_sets, check_distribution

THRESHOLD_KINDS = ("max", "entropy")


@dataclass(frozen=True)
class AdjustmentSpec:
    p_src: LabelDistribution
    p_tgt: LabelDistribution

    def __post_init__(self):
        if self.p_src.vocab != self.p_tgt.vocab:
            raise ValueError("source and target distributions use different vocabularies")
        for name in ("p_src", "p_tgt"):
            dist = getattr(self, name)
            if not dist.is_strictly_positive:
                zero = dist.vocab.labels[int(np.flatnonzero(dist.probs <= 0)[0])]
                raise ValueError(f"{name} assigns zero probability to {zero!r}; smooth the estimate (alpha > 0)")

    @property
    def vocab(self) -> LabelVocab:
        return self.p_src.vocab

    def to_dict(self):
        return {"p_src": self.p_src.to_dict(), "p_tgt": self.p_tgt.to_dict()}

    @classmethod
    def from_dict(cls, d):
        p_src = LabelDistribution.from_dict(d["p_src"])
        return cls(p_src, LabelDistribution.from_dict(d["p_tgt"], p_src.vocab))


@dataclass(frozen=True)
class ThresholdSpec:
    kind: str
    value: float
    n_labels: int | None = None

    def __post_init__(self):
        if self.kind not in THRESHOLD_KINDS:
            raise ValueError(f"threshold kind must be one of {THRESHOLD_KINDS}, got {self.kind!r}")
        upper = 1.0 if self.kind == "max" else (math.log(self.n_labels) if self.n_labels else math.inf)
        if not 0.0 <= self.value <= upper + 1e-12:
            raise ValueError(f"{self.kind} threshold {self.value} outside [0, {upper}]")

    def to_dict(self):
        return {"kind": self.kind, "value": self.value, "n_labels": self.n_labels}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], float(d["value"]), d.get("n_labels"))


# -- clean dev and prior estimation -------------------------------------------


def clean_dev_split(test_set, fraction=0.2, seed=0):
    """Uniform random split of the test data into (clean dev, held-out test)."""
    test_set = list(test_set)
    if not test_set:
        raise DataError("cannot split an empty test set")
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    n = len(test_set)
    n_dev = int(round(fraction * n))
    if n_dev == 0 or n_dev == n:
        raise DataError(f"fraction {fraction} of {n} instances leaves an empty side")
    order = np.random.default_rng(seed).permutation(n)
    dev_idx, rest_idx = np.sort(order[:n_dev]), np.sort(order[n_dev:])
    return [test_set[i] for i in dev_idx], [test_set[i] for i in rest_idx]


def label_counts(instances, vocab: LabelVocab) -> np.ndarray:
    """Counts of each instance's first label."""
    counts = np.zeros(len(vocab))
    for labels in as_label_sets(instances):
        counts[vocab.index(labels[0])] += 1
    return counts


def estimate_label_distribution(instances, vocab: LabelVocab, alpha=1.0) -> LabelDistribution:
    """Additively smoothed maximum likelihood estimate of the label prior.

    ``p_i = (count_i + alpha) / (N + alpha K)``, counting the first label of
    every instance.  With ``alpha = 0`` unseen labels get probability zero,
    which :class:`AdjustmentSpec` will reject.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    counts = label_counts(instances, vocab)
    total = counts.sum() + alpha * len(vocab)
    if total == 0:
        raise DataError("no instances to estimate from and alpha = 0")
    return LabelDistribution((counts + alpha) / total, vocab)


# -- bias adjustment ---------------------------------------------------------


def adjust_bias(bias, spec: AdjustmentSpec) -> np.ndarray:
    """``b'_i = b_i + ln p_tgt(r_i) - ln p_src(r_i)``."""
    bias = np.asarray(bias, dtype=float)
    if bias.shape != spec.p_src.probs.shape:
        raise ValueError(f"bias has shape {bias.shape}, spec covers {len(spec.vocab)} labels")
    # log ratio first so equal priors leave the bias bit-identical
    return bias + (np.log(spec.p_tgt.probs) - np.log(spec.p_src.probs))


def _check_spec_vocab(model, vocab):
    if tuple(vocab.labels) != tuple(model.vocab_.labels):
        raise ValueError("distribution vocabulary does not match the model's labels")


def ba_set_proba(model: SoftmaxClassifier, X, spec: AdjustmentSpec) -> np.ndarray:
    _check_spec_vocab(model, spec.vocab)
    return model.predict_proba(X, bias=adjust_bias(model.intercept_, spec))


def ba_set_predict(model: SoftmaxClassifier, inst, spec: AdjustmentSpec) -> LabelDistribution:
    """Posterior for one mention with the bias adjusted toward ``spec.p_tgt``."""
    return LabelDistribution(ba_set_proba(model, [inst], spec)[0], model.vocab_)


def _fix_bias(model, p_tgt):
    if getattr(model, "fixed_bias_prior", None) is None:
        raise ValueError("ba_fix needs a model trained with a frozen bias (fixed_bias_prior)")
    if isinstance(p_tgt, LabelDistribution):
        _check_spec_vocab(model, p_tgt.vocab)
    p_tgt = check_distribution(p_tgt, name="p_tgt", strictly_positive=True)
    if p_tgt.size != model.intercept_.size:
        raise ValueError(f"p_tgt has {p_tgt.size} entries for {model.intercept_.size} labels")
    return np.log(p_tgt)


def ba_fix_proba(model: SoftmaxClassifier, X, p_tgt) -> np.ndarray:
    return model.predict_proba(X, bias=_fix_bias(model, p_tgt))


def ba_fix_predict(model: SoftmaxClassifier, inst, p_tgt) -> LabelDistribution:
    """Posterior for one mention with the frozen bias replaced by ``ln p_tgt``."""
    return LabelDistribution(ba_fix_proba(model, [inst], p_tgt)[0], model.vocab_)


# -- thresholds --------------------------------------------------------------


def threshold_indices(P, spec: ThresholdSpec, none_index: int) -> np.ndarray:
    """Vectorised thresholding of a (n, K) posterior matrix to label indices."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    best = np.argmax(P, axis=1)
    if spec.kind == "max":
        keep = P[np.arange(P.shape[0]), best] > spec.value
    else:
        keep = entropy(P) < spec.value
    return np.where(keep, best, none_index)


def apply_threshold(p, spec: ThresholdSpec, vocab: LabelVocab) -> str:
    """``r*`` if it is confident enough under ``spec``, else NONE."""
    p = np.asarray(p, dtype=float)
    return vocab.labels[int(threshold_indices(p[None, :], spec, vocab.none_index)[0])]


def default_grid(kind: str, n_labels: int) -> np.ndarray:
    """101 evenly spaced thresholds over [0, 1] (max) or [0, ln K] (entropy)."""
    if kind == "max":
        return np.arange(101) / 100.0
    if kind == "entropy":
        return np.arange(101) * (math.log(n_labels) / 100.0)
    raise ValueError(f"threshold kind must be one of {THRESHOLD_KINDS}, got {kind!r}")


def tune_threshold_from_proba(P, gold_idx, kind, vocab: LabelVocab, grid=None):
    """Grid value with the best clean-dev micro F1; ties go to the smaller value.

    Returns ``(ThresholdSpec, scores)`` with ``scores`` aligned to the sorted grid.
    """
    grid = default_grid(kind, len(vocab)) if grid is None else np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("threshold grid is empty")
    grid = np.sort(grid)
    gold_idx = np.asarray(gold_idx)
    scores = np.array(
        [
            micro_f1(threshold_indices(P, ThresholdSpec(kind, float(v)), vocab.none_index), gold_idx, vocab.none_index)
            for v in grid
        ]
    )
    best = int(np.argmax(scores))  # first maximum = smallest threshold
    return ThresholdSpec(kind, float(grid[best]), len(vocab)), scores


def tune_threshold(model: SoftmaxClassifier, clean_dev, kind, grid=None) -> ThresholdSpec:
    clean_dev = list(clean_dev)
    if not clean_dev:
        raise DataError("clean dev set is empty")
    gold = model.vocab_.indices([labels[0] for labels in as_label_sets(clean_dev)])
    spec, _ = tune_threshold_from_proba(model.predict_proba(clean_dev), gold, kind, model.vocab_, grid)
    return spec


# -- estimator wrappers ------------------------------------------------------


class _PrefitAdapter(ClassifierMixin, BaseEstimator):
    def _base(self):
        check_is_fitted(self.estimator, "coef_")
        return self.estimator

    @property
    def classes_(self):
        return self.estimator.classes_

    def predict(self, X):
        return self.classes_[self._predict_indices(X)]

    def _predict_indices(self, X):
        return np.argmax(self.predict_proba(X), axis=1)


class BiasAdjustedClassifier(_PrefitAdapter):
    """Bias adjustment of a prefit :class:`SoftmaxClassifier`.

    ``fit`` estimates the target prior from clean-dev labels (unless
    ``target_prior`` is given).  ``method="set"`` shifts the learned bias by
    ``ln p_tgt - ln p_src``, with ``p_src`` defaulting to the smoothed
    training prior recorded on the base model; ``method="fix"`` requires a
    base model trained with ``fixed_bias_prior`` and uses ``ln p_tgt``.
    """

    def __init__(self, estimator, method="set", alpha=1.0, target_prior=None, source_prior=None):
        self.estimator = estimator
        self.method = method
        self.alpha = alpha
        self.target_prior = target_prior
        self.source_prior = source_prior

    def fit(self, X=None, y=None):
        base = self._base()
        vocab = base.vocab_
        if self.target_prior is not None:
            self.target_prior_ = LabelDistribution(np.asarray(self.target_prior, dtype=float), vocab)
        else:
            if y is None:
                raise ValueError("need clean-dev labels y or an explicit target_prior")
            self.target_prior_ = estimate_label_distribution(y, vocab, self.alpha)
        if self.method == "set":
            src = base.source_prior_ if self.source_prior is None else self.source_prior
            self.spec_ = AdjustmentSpec(LabelDistribution(np.asarray(src, dtype=float), vocab), self.target_prior_)
            self.bias_ = adjust_bias(base.intercept_, self.spec_)
        elif self.method == "fix":
            self.spec_ = None
            self.bias_ = _fix_bias(base, self.target_prior_)
        else:
            raise ValueError(f"method must be 'set' or 'fix', got {self.method!r}")
        return self

    def decision_function(self, X):
        check_is_fitted(self, "bias_")
        return self._base().decision_function(X, bias=self.bias_)

    def predict_proba(self, X):
        return softmax(self.decision_function(X))


class ThresholdClassifier(_PrefitAdapter):
    """Max- or entropy-threshold rejection on top of a prefit classifier.

    ``fit`` grid-searches the threshold on clean-dev data; a fixed
    ``threshold`` skips the search.
    """

    def __init__(self, estimator, kind="max", grid=None, threshold=None):
        self.estimator = estimator
        self.kind = kind
        self.grid = grid
        self.threshold = threshold

    def fit(self, X=None, y=None):
        base = self._base()
        if self.threshold is not None:
            self.spec_ = ThresholdSpec(self.kind, float(self.threshold), len(base.vocab_))
            self.scores_ = None
            return self
        if X is None or y is None:
            raise ValueError("need clean-dev data (X, y) or a fixed threshold")
        gold = base.vocab_.indices([labels[0] for labels in as_label_sets(y)])
        if gold.size == 0:
            raise DataError("clean dev set is empty")
        self.spec_, self.scores_ = tune_threshold_from_proba(
            base.predict_proba(X), gold, self.kind, base.vocab_, self.grid
        )
        return self

    def predict_proba(self, X):
        return self._base().predict_proba(X)

    def _predict_indices(self, X):
        check_is_fitted(self, "spec_")
        return threshold_indices(self.predict_proba(X), self.spec_, self._base().vocab_.none_index)
