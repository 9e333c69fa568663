"""Label vocabulary, instances, and the softmax relation classifier.

The classifier scores a relation mention with ``z_i = r_i . h + b_i`` and
normalises with a softmax.  Two representations ``h`` are supported:

``sparse-linear``
    ``h`` is the binary indicator vector of the mention's known features
    (multinomial logistic regression over sparse features).
``embedding-average``
    ``h`` is the mean of per-feature embedding vectors; unknown features share
    one UNK row.  Both dropout knobs only apply to this kind of model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .validation import (
    as_feature_lists,
    as_label_sets,
    check_consistent_length,
    check_distribution,
    check_fraction,
)

KINDS = ("sparse-linear", "embedding-average")
MODEL_FORMAT = "shiftedlabel.model"
MODEL_VERSION = 1
UNK = "__UNK__"


@dataclass(frozen=True)
class LabelVocab:
    labels: tuple[str, ...]
    none_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(str(lab) for lab in self.labels))
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("label names must be unique")
        if not 0 <= self.none_index < len(self.labels):
            raise ValueError(f"none_index {self.none_index} out of range for {len(self.labels)} labels")
        object.__setattr__(self, "_lookup", {lab: i for i, lab in enumerate(self.labels)})

    @classmethod
    def from_labels(cls, labels, none_label="NONE"):
        """NONE first, then the remaining names sorted; stable under save/load."""
        rest = sorted({str(lab) for lab in labels} - {none_label})
        return cls((none_label, *rest), 0)

    def __len__(self):
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def __contains__(self, label):
        return label in self._lookup

    @property
    def none_label(self) -> str:
        return self.labels[self.none_index]

    def index(self, label: str) -> int:
        try:
            return self._lookup[label]
        except KeyError:
            raise KeyError(f"label {label!r} not in vocabulary") from None

    def indices(self, labels) -> np.ndarray:
        return np.array([self.index(lab) for lab in labels], dtype=np.intp)

    def to_dict(self):
        return {"labels": list(self.labels), "none_index": self.none_index}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["labels"]), int(d["none_index"]))


@dataclass(frozen=True, eq=False)
class LabelDistribution:
    """A probability vector aligned with a :class:`LabelVocab`."""

    probs: np.ndarray
    vocab: LabelVocab

    def __post_init__(self):
        p = check_distribution(self.probs, name="label distribution")
        if p.size != len(self.vocab):
            raise ValueError(f"distribution has {p.size} entries for {len(self.vocab)} labels")
        p = p.copy()
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)

    def __len__(self):
        return self.probs.size

    def __getitem__(self, label: str) -> float:
        return float(self.probs[self.vocab.index(label)])

    def __eq__(self, other):
        if not isinstance(other, LabelDistribution):
            return NotImplemented
        return self.vocab == other.vocab and np.array_equal(self.probs, other.probs)

    @property
    def is_strictly_positive(self) -> bool:
        return bool(np.all(self.probs > 0))

    def to_dict(self):
        return {"labels": list(self.vocab.labels), "probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, d, vocab: LabelVocab | None = None):
        if vocab is None:
            vocab = LabelVocab(tuple(d["labels"]), 0)
        elif list(d["labels"]) != list(vocab.labels):
            raise ValueError("distribution labels do not match the vocabulary")
        return cls(np.asarray(d["probs"], dtype=float), vocab)


@dataclass
class Instance:
    """One relation mention: a bag of feature ids and its (noisy) label set."""

    id: str
    features: list[str]
    labels: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        self.id = str(self.id)
        self.features = [str(f) for f in self.features]
        self.labels = tuple(str(lab) for lab in self.labels)

    @property
    def label(self) -> str:
        """First label; the gold label for single-labeled test data."""
        return self.labels[0]

    def to_dict(self):
        return {"id": self.id, "features": list(self.features), "labels": list(self.labels)}


# -- pure array functions ---------------------------------------------------


def softmax(z):
    """Row-wise softmax with max-logit subtraction."""
    z = np.asarray(z, dtype=float)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z):
    z = np.asarray(z, dtype=float)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def entropy(p):
    """Shannon entropy in nats along the last axis, with 0 ln 0 = 0."""
    p = np.asarray(p, dtype=float)
    logs = np.log(p, out=np.zeros_like(p), where=p > 0)
    return -(p * logs).sum(axis=-1)


# -- the estimator ----------------------------------------------------------


class SoftmaxClassifier(ClassifierMixin, BaseEstimator):
    """Softmax classifier over bags of feature ids, trained by SGD.

    ``X`` is a sequence of feature-id lists (or :class:`Instance` objects);
    ``y`` a sequence of label names or label sets.  A label set with more than
    one member is trained against the self-adapted target distribution (see
    :func:`shiftedlabel.training.q_distribution`).

    Passing ``fixed_bias_prior`` trains the BA-Fix variant: the bias is frozen
    at the log of that prior for the whole run.
    """

    def __init__(
        self,
        kind="sparse-linear",
        dim=30,
        lr0=1.0,
        decay_factor=0.1,
        patience=3,
        max_epochs=30,
        batch_size=1,
        input_dropout=0.0,
        pool_dropout=0.0,
        l2=0.0,
        init_scale=0.1,
        dev_fraction=0.1,
        seed=0,
        labels=None,
        none_label="NONE",
        fixed_bias_prior=None,
    ):
        self.kind = kind
        self.dim = dim
        self.lr0 = lr0
        self.decay_factor = decay_factor
        self.patience = patience
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.input_dropout = input_dropout
        self.pool_dropout = pool_dropout
        self.l2 = l2
        self.init_scale = init_scale
        self.dev_fraction = dev_fraction
        self.seed = seed
        self.labels = labels
        self.none_label = none_label
        self.fixed_bias_prior = fixed_bias_prior

    # -- setup --

    def _init_vocab(self, label_sets, extra_labels=()):
        if self.labels is not None:
            labels = tuple(self.labels)
            if self.none_label not in labels:
                raise ValueError(f"labels must contain the NONE label {self.none_label!r}")
            vocab = LabelVocab(labels, labels.index(self.none_label))
        else:
            vocab = LabelVocab.from_labels(
                [lab for labs in label_sets for lab in labs] + list(extra_labels), self.none_label
            )
        for i, labs in enumerate(label_sets):
            for lab in labs:
                if lab not in vocab:
                    raise ValueError(f"row {i}: label {lab!r} not in the label vocabulary")
        return vocab

    def initialize(self, X, y, extra_labels=()):
        """Build vocabularies and draw initial parameters without training.

        ``extra_labels`` widens an inferred label vocabulary (e.g. with labels
        that only occur in the dev set).
        """
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        feats = as_feature_lists(X)
        label_sets = as_label_sets(y)
        check_consistent_length(feats, label_sets)
        self.vocab_ = self._init_vocab(label_sets, extra_labels)
        self.classes_ = np.array(self.vocab_.labels, dtype=object)

        index: dict[str, int] = {}
        for row in feats:
            for f in row:
                if f not in index:
                    index[f] = len(index)
        self.feature_index_ = index

        rng = np.random.default_rng(self.seed)
        K, F = len(self.vocab_), len(index)
        if self.kind == "sparse-linear":
            self.coef_ = np.zeros((K, F))
            self.embeddings_ = None
        else:
            d = int(self.dim)
            if d < 1:
                raise ValueError("dim must be positive")
            self.embeddings_ = rng.normal(0.0, self.init_scale, size=(F + 1, d))
            self.coef_ = rng.normal(0.0, self.init_scale, size=(K, d))

        if self.fixed_bias_prior is not None:
            prior = check_distribution(
                self.fixed_bias_prior, name="fixed_bias_prior", strictly_positive=True
            )
            if prior.size != K:
                raise ValueError(f"fixed_bias_prior has {prior.size} entries for {K} labels")
            self.intercept_ = np.log(prior)
        else:
            self.intercept_ = np.zeros(K)
        counts = np.zeros(K)
        for labs in label_sets:
            counts[self.vocab_.index(labs[0])] += 1
        # add-one smoothing keeps the source prior usable in log space
        self.source_prior_ = (counts + 1.0) / (counts.sum() + K)
        return self

    def fit(self, X, y, X_dev=None, y_dev=None):
        """Train on ``(X, y)``; without an explicit dev set, hold out ``dev_fraction``."""
        from .training import TrainConfig, train

        feats = as_feature_lists(X)
        label_sets = as_label_sets(y)
        check_consistent_length(feats, label_sets)
        if not feats:
            raise ValueError("cannot fit on an empty training set")
        if X_dev is None:
            check_fraction(self.dev_fraction, "dev_fraction", include_low=False)
            rng = np.random.default_rng(self.seed)
            order = rng.permutation(len(feats))
            n_dev = int(round(self.dev_fraction * len(feats)))
            n_dev = min(max(n_dev, 1), len(feats) - 1) if len(feats) > 1 else 0
            dev_idx, tr_idx = np.sort(order[:n_dev]), np.sort(order[n_dev:])
            dev = [_make_instance(i, feats[i], label_sets[i]) for i in dev_idx]
            trn = [_make_instance(i, feats[i], label_sets[i]) for i in tr_idx]
        else:
            trn = [_make_instance(i, f, labs) for i, (f, labs) in enumerate(zip(feats, label_sets))]
            dev_feats, dev_labels = as_feature_lists(X_dev), as_label_sets(y_dev)
            check_consistent_length(dev_feats, dev_labels)
            dev = [_make_instance(i, f, labs) for i, (f, labs) in enumerate(zip(dev_feats, dev_labels))]
        self.initialize(
            [t.features for t in trn],
            [t.labels for t in trn],
            extra_labels=[lab for t in dev for lab in t.labels],
        )
        train(self, trn, dev, TrainConfig.from_estimator(self))
        return self

    # -- forward pass --

    @property
    def n_features_(self):
        return self.coef_.shape[1] if self.kind == "sparse-linear" else self.embeddings_.shape[0] - 1

    @property
    def frozen_bias_(self) -> bool:
        return self.fixed_bias_prior is not None

    def design_matrix(self, X) -> sp.csr_matrix:
        """Sparse input matrix: indicator columns (sparse-linear) or
        bag-averaging weights including an UNK column (embedding-average)."""
        check_is_fitted(self, "coef_")
        feats = as_feature_lists(X)
        index = self.feature_index_
        rows, cols, vals = [], [], []
        if self.kind == "sparse-linear":
            n_cols = len(index)
            for r, row in enumerate(feats):
                present = sorted({index[f] for f in row if f in index})
                rows.extend([r] * len(present))
                cols.extend(present)
                vals.extend([1.0] * len(present))
        else:
            n_cols = len(index) + 1
            unk = len(index)
            for r, row in enumerate(feats):
                if not row:
                    continue
                counts: dict[int, int] = {}
                for f in row:
                    c = index.get(f, unk)
                    counts[c] = counts.get(c, 0) + 1
                for c in sorted(counts):
                    rows.append(r)
                    cols.append(c)
                    vals.append(counts[c] / len(row))
        return sp.csr_matrix(
            (np.asarray(vals, dtype=float), (np.asarray(rows, dtype=np.intp), np.asarray(cols, dtype=np.intp))),
            shape=(len(feats), n_cols),
        )

    def _represent(self, A):
        return A if self.kind == "sparse-linear" else np.asarray(A @ self.embeddings_)

    def _logits(self, H, bias=None):
        b = self.intercept_ if bias is None else bias
        return np.asarray(H @ self.coef_.T) + b

    def transform(self, X):
        """Representations ``h`` (sparse for ``sparse-linear``, dense otherwise)."""
        return self._represent(self.design_matrix(X))

    def decision_function(self, X, bias=None):
        """Logits ``z_i = r_i . h + b_i``; ``bias`` overrides the learned one."""
        return self._logits(self.transform(X), bias)

    def predict_proba(self, X, bias=None):
        return softmax(self.decision_function(X, bias))

    def predict(self, X, bias=None):
        check_is_fitted(self, "coef_")
        return self.classes_[np.argmax(self.decision_function(X, bias), axis=1)]

    # -- persistence --

    def to_dict(self):
        check_is_fitted(self, "coef_")
        doc = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "kind": self.kind,
            "dim": int(self.coef_.shape[1]),
            "vocab": self.vocab_.to_dict(),
            "features": list(self.feature_index_),
            "weights": self.coef_.tolist(),
            "bias": self.intercept_.tolist(),
            "source_prior": self.source_prior_.tolist(),
            "params": _jsonable(self.get_params()),
        }
        if self.embeddings_ is not None:
            table = {f: self.embeddings_[i].tolist() for f, i in self.feature_index_.items()}
            table[UNK] = self.embeddings_[-1].tolist()
            doc["embeddings"] = table
        return doc

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != MODEL_FORMAT:
            raise ValueError("not a shiftedlabel model document")
        if doc.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {doc.get('version')!r}")
        model = cls(**doc.get("params", {}))
        model.kind = doc["kind"]
        model.vocab_ = LabelVocab.from_dict(doc["vocab"])
        model.classes_ = np.array(model.vocab_.labels, dtype=object)
        model.feature_index_ = {f: i for i, f in enumerate(doc["features"])}
        model.coef_ = np.asarray(doc["weights"], dtype=float).reshape(len(model.vocab_), -1)
        model.intercept_ = np.asarray(doc["bias"], dtype=float)
        model.source_prior_ = np.asarray(doc["source_prior"], dtype=float)
        if doc["kind"] == "embedding-average":
            table = doc["embeddings"]
            rows = [table[f] for f in doc["features"]] + [table[UNK]]
            model.embeddings_ = np.asarray(rows, dtype=float).reshape(len(rows), -1)
        else:
            model.embeddings_ = None
        return model

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def _make_instance(i, feats, labels):
    return Instance(str(i), feats, labels)


def _jsonable(params):
    out = {}
    for k, v in params.items():
        if isinstance(v, np.ndarray):
            v = v.tolist()
        elif isinstance(v, tuple):
            v = list(v)
        out[k] = v
    return out


# -- single-instance operations ---------------------------------------------


def represent(model: SoftmaxClassifier, inst) -> np.ndarray:
    """Dense representation ``h`` of one mention."""
    h = model.transform([inst])
    if sp.issparse(h):
        h = h.toarray()
    return np.asarray(h)[0]


def logits(model: SoftmaxClassifier, h) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    if h.shape != (model.coef_.shape[1],):
        raise ValueError(f"representation has shape {h.shape}, model expects ({model.coef_.shape[1]},)")
    return model.coef_ @ h + model.intercept_


def softmax_predict(model: SoftmaxClassifier, h) -> LabelDistribution:
    return LabelDistribution(softmax(logits(model, h)), model.vocab_)


def argmax_predict(model: SoftmaxClassifier, inst) -> str:
    """Highest-posterior label; ties go to the lowest label index."""
    z = logits(model, represent(model, inst))
    return model.vocab_.labels[int(np.argmax(z))]
