"""Micro precision/recall/F1 that ignores the NONE class, plus seed aggregation.

A prediction counts as a true positive only if it is a non-NONE label equal
to the gold label.  Every other non-NONE prediction is a false positive, and
every gold non-NONE label that is missed is a false negative.  NONE-NONE pairs
count toward nothing.
"""

from __future__ import annotations

import statistics
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import LabelVocab
from .validation import check_consistent_length


@dataclass
class EvalReport:
    micro_precision: float
    micro_recall: float
    micro_f1: float
    tp: int
    fp: int
    fn: int
    n_instances: int
    predicted_none_share: float
    gold_none_share: float
    per_label: dict[str, dict[str, int]] = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class SeedAggregate:
    mean_f1: float
    std_f1: float
    n_runs: int

    def to_dict(self):
        return asdict(self)


def _ratio(num, den):
    return num / den if den else 0.0


def f1_score(precision, recall):
    return _ratio(2 * precision * recall, precision + recall)


def micro_counts(pred_idx, gold_idx, none_index):
    """(tp, fp, fn) over index arrays."""
    pred_idx = np.asarray(pred_idx)
    gold_idx = np.asarray(gold_idx)
    pred_pos = pred_idx != none_index
    gold_pos = gold_idx != none_index
    correct = pred_pos & (pred_idx == gold_idx)
    tp = int(correct.sum())
    return tp, int(pred_pos.sum()) - tp, int(gold_pos.sum()) - tp


def micro_f1(pred_idx, gold_idx, none_index) -> float:
    tp, fp, fn = micro_counts(pred_idx, gold_idx, none_index)
    return f1_score(_ratio(tp, tp + fp), _ratio(tp, tp + fn))


def evaluate(predictions, golds, vocab: LabelVocab) -> EvalReport:
    """Score label-name predictions against single gold labels."""
    predictions, golds = list(predictions), list(golds)
    check_consistent_length(predictions, golds)
    try:
        p = vocab.indices(predictions)
        g = vocab.indices(golds)
    except KeyError as exc:
        raise ValueError(str(exc)) from None
    none = vocab.none_index
    tp, fp, fn = micro_counts(p, g, none)
    precision, recall = _ratio(tp, tp + fp), _ratio(tp, tp + fn)

    per_label = {}
    for k, name in enumerate(vocab.labels):
        if k == none:
            continue
        ltp = int(np.sum((p == k) & (g == k)))
        per_label[name] = {
            "tp": ltp,
            "fp": int(np.sum(p == k)) - ltp,
            "fn": int(np.sum(g == k)) - ltp,
        }
    n = len(p)
    return EvalReport(
        micro_precision=precision,
        micro_recall=recall,
        micro_f1=f1_score(precision, recall),
        tp=tp,
        fp=fp,
        fn=fn,
        n_instances=n,
        predicted_none_share=_ratio(int(np.sum(p == none)), n),
        gold_none_share=_ratio(int(np.sum(g == none)), n),
        per_label=per_label,
    )


def aggregate_seeds(reports) -> SeedAggregate:
    """Mean and sample standard deviation (n - 1 denominator) of F1.

    Accepts :class:`EvalReport` objects or bare F1 values.
    """
    f1s = [r.micro_f1 if isinstance(r, EvalReport) else float(r) for r in reports]
    if not f1s:
        raise ValueError("cannot aggregate an empty list of runs")
    # exact rational arithmetic: identical runs give std exactly 0
    mean = statistics.mean(f1s)
    std = statistics.stdev(f1s) if len(f1s) > 1 else 0.0
    return SeedAggregate(float(mean), float(std), len(f1s))


def none_share(predictions, vocab: LabelVocab) -> float:
    predictions = list(predictions)
    if not predictions:
        raise ValueError("none_share needs at least one prediction")
    return sum(p == vocab.none_label for p in predictions) / len(predictions)
