"""SGD training with the self-adapted supervision distribution.

For a mention annotated with the label set ``Y`` the training target is the
model's own posterior restricted to ``Y`` and renormalised (``q``).  ``q`` is
recomputed each step but treated as a constant, so the gradient of the
cross entropy w.r.t. the logits is simply ``p - q``.

The learning rate starts at ``lr0`` and is multiplied by ``decay_factor``
whenever the dev loss has not improved for ``patience`` consecutive epochs.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import scipy.sparse as sp

from .core import LabelDistribution, SoftmaxClassifier, Instance, log_softmax
from .evaluation import micro_f1
from .validation import check_distribution, check_fraction


@dataclass
class TrainConfig:
    lr0: float = 1.0
    decay_factor: float = 0.1
    patience: int = 3
    max_epochs: int = 30
    batch_size: int = 1
    input_dropout: float = 0.0
    pool_dropout: float = 0.0
    seed: int = 0
    l2: float = 0.0
    min_lr: float = 1e-6

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        check_fraction(self.decay_factor, "decay_factor", include_low=False)
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        check_fraction(self.input_dropout, "input_dropout")
        check_fraction(self.pool_dropout, "pool_dropout")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")

    @classmethod
    def from_estimator(cls, est: SoftmaxClassifier) -> "TrainConfig":
        params = est.get_params()
        return cls(**{f.name: params[f.name] for f in fields(cls) if f.name in params})


@dataclass
class EpochRecord:
    epoch: int
    dev_loss: float
    dev_f1: float
    lr: float


@dataclass
class TrainLog:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def final_epoch(self) -> int:
        return self.epochs[-1].epoch if self.epochs else 0

    @property
    def learning_rates(self) -> list[float]:
        return [e.lr for e in self.epochs]

    def to_csv(self, config_hash=None) -> str:
        """CSV with columns epoch, dev_loss, dev_f1, lr (and config_hash if given)."""
        tail = [] if config_hash is None else [config_hash]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "dev_loss", "dev_f1", "lr"] + (["config_hash"] if tail else []))
        for e in self.epochs:
            writer.writerow([e.epoch, repr(e.dev_loss), repr(e.dev_f1), repr(e.lr)] + tail)
        return buf.getvalue()

    def to_dict(self):
        return {"best_epoch": self.best_epoch, "epochs": [asdict(e) for e in self.epochs]}


# -- batch terms -------------------------------------------------------------


def label_mask(model: SoftmaxClassifier, label_sets) -> np.ndarray:
    mask = np.zeros((len(label_sets), len(model.vocab_)), dtype=bool)
    for r, labels in enumerate(label_sets):
        if not labels:
            raise ValueError(f"row {r}: empty label set")
        mask[r, model.vocab_.indices(labels)] = True
    return mask


def q_from_logits(Z, mask) -> np.ndarray:
    """Posterior restricted to the allowed labels, renormalised per row."""
    Z = np.asarray(Z, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if not np.all(mask.any(axis=-1)):
        raise ValueError("every row needs a nonempty label set")
    masked = np.where(mask, Z, -np.inf)
    e = np.exp(masked - masked.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _params(model):
    out = {"coef": model.coef_, "intercept": model.intercept_}
    if model.embeddings_ is not None:
        out["embeddings"] = model.embeddings_
    return out


def batch_loss_and_grad(model, A, mask, *, l2=0.0, rng=None, input_dropout=0.0, pool_dropout=0.0, q=None):
    """Mean cross entropy of a batch and its exact gradient.

    ``A`` is the batch's design matrix (see ``SoftmaxClassifier.design_matrix``).
    Dropout masks are drawn from ``rng`` only when it is given; kept units
    are scaled by ``1 / (1 - rate)``.  A precomputed ``q`` overrides the
    self-adapted target (finite-difference checks hold it fixed).
    """
    B = A.shape[0]
    A_used = A
    if rng is not None and input_dropout > 0:
        keep = rng.random(A.nnz) >= input_dropout
        A_used = A.copy()
        A_used.data = A.data * keep / (1.0 - input_dropout)
    pool_mask = None
    if model.embeddings_ is None:
        H = A_used
    else:
        H = np.asarray(A_used @ model.embeddings_)
        if rng is not None and pool_dropout > 0:
            pool_mask = (rng.random(H.shape) >= pool_dropout) / (1.0 - pool_dropout)
            H = H * pool_mask
    Z = np.asarray(H @ model.coef_.T) + model.intercept_
    logp = log_softmax(Z)
    P = np.exp(logp)
    Q = q_from_logits(Z, mask) if q is None else np.asarray(q, dtype=float)
    losses = -np.where(Q > 0, Q * logp, 0.0).sum(axis=1)

    G = (P - Q) / B
    grads = {"intercept": G.sum(axis=0)}
    if sp.issparse(H):
        grads["coef"] = np.asarray(H.T @ G).T
    else:
        grads["coef"] = G.T @ H
    if model.embeddings_ is not None:
        gH = G @ model.coef_
        if pool_mask is not None:
            gH = gH * pool_mask
        grads["embeddings"] = np.asarray(A_used.T @ gH)

    loss = float(losses.mean())
    if l2 > 0:
        for name in ("coef", "embeddings"):
            if name in grads:
                w = getattr(model, name + "_")
                loss += 0.5 * l2 * float(np.sum(w * w))
                grads[name] = grads[name] + l2 * w
    return loss, grads


# -- single-instance operations ---------------------------------------------


def _as_instance(inst):
    return inst if isinstance(inst, Instance) else Instance("", inst[0], inst[1])


def q_distribution(model: SoftmaxClassifier, inst, Y=None) -> LabelDistribution:
    """Self-adapted target ``q(.|Y, h)`` for one mention (``Y`` defaults to its labels)."""
    inst = _as_instance(inst)
    Y = tuple(inst.labels if Y is None else Y)
    if not Y:
        raise ValueError("label set Y must be nonempty")
    Z = model.decision_function([inst])
    q = q_from_logits(Z, label_mask(model, [Y]))[0]
    return LabelDistribution(q, model.vocab_)


def loss(model: SoftmaxClassifier, inst, l2=None) -> float:
    """Cross entropy of the posterior against ``q`` (plus the L2 term)."""
    inst = _as_instance(inst)
    l2 = model.l2 if l2 is None else l2
    A = model.design_matrix([inst])
    value, _ = batch_loss_and_grad(model, A, label_mask(model, [inst.labels]), l2=l2)
    return value


def gradient(model: SoftmaxClassifier, batch, l2=None) -> dict[str, np.ndarray]:
    """Batch-averaged analytic gradient: ``coef``, ``intercept`` and, for the
    embedding-average kind, ``embeddings``."""
    batch = [_as_instance(b) for b in batch]
    if not batch:
        raise ValueError("gradient needs a nonempty batch")
    l2 = model.l2 if l2 is None else l2
    A = model.design_matrix(batch)
    _, grads = batch_loss_and_grad(model, A, label_mask(model, [b.labels for b in batch]), l2=l2)
    return grads


# -- training loop -----------------------------------------------------------


def _dev_metrics(model, A_dev, mask_dev, gold_dev):
    if A_dev.shape[0] == 0:
        return float("nan"), 0.0
    dev_loss, _ = batch_loss_and_grad(model, A_dev, mask_dev)
    pred = np.argmax(model._logits(model._represent(A_dev)), axis=1)
    return dev_loss, micro_f1(pred, gold_dev, model.vocab_.none_index)


def train(model: SoftmaxClassifier, train_set, dev_set, cfg: TrainConfig | None = None):
    """Train ``model`` in place; returns ``(model, TrainLog)``.

    An unfitted model is initialised from ``train_set`` first.  The parameters
    with the lowest dev loss are restored at the end.
    """
    train_set = [_as_instance(t) for t in train_set]
    dev_set = [_as_instance(t) for t in dev_set]
    if not train_set:
        raise ValueError("empty training set")
    cfg = TrainConfig.from_estimator(model) if cfg is None else cfg
    if not hasattr(model, "coef_"):
        model.initialize(
            [t.features for t in train_set],
            [t.labels for t in train_set],
            extra_labels=[lab for t in dev_set for lab in t.labels],
        )
    frozen = model.fixed_bias_prior is not None

    A = model.design_matrix(train_set)
    mask = label_mask(model, [t.labels for t in train_set])
    A_dev = model.design_matrix(dev_set)
    mask_dev = label_mask(model, [t.labels for t in dev_set])
    gold_dev = model.vocab_.indices([t.label for t in dev_set])

    rng = np.random.default_rng([cfg.seed, 1])
    n = A.shape[0]
    lr = float(cfg.lr0)
    best_loss, best_params, stale = np.inf, None, 0
    log = TrainLog()
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            _, grads = batch_loss_and_grad(
                model,
                A[idx],
                mask[idx],
                l2=cfg.l2,
                rng=rng,
                input_dropout=cfg.input_dropout,
                pool_dropout=cfg.pool_dropout,
            )
            model.coef_ -= lr * grads["coef"]
            if not frozen:
                model.intercept_ -= lr * grads["intercept"]
            if model.embeddings_ is not None:
                model.embeddings_ -= lr * grads["embeddings"]

        dev_loss, dev_f1 = _dev_metrics(model, A_dev, mask_dev, gold_dev)
        log.epochs.append(EpochRecord(epoch, dev_loss, dev_f1, lr))
        if dev_loss < best_loss or best_params is None:
            best_loss, stale = dev_loss, 0
            best_params = {k: v.copy() for k, v in _params(model).items()}
            log.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                lr *= cfg.decay_factor
                stale = 0
                if lr < cfg.min_lr:
                    break

    for name, value in best_params.items():
        setattr(model, name + "_", value)
    model.train_log_ = log
    return model, log


def train_ba_fix(model: SoftmaxClassifier, train_set, dev_set, cfg: TrainConfig | None, p_src):
    """Train with the bias frozen at ``ln p_src``; the prior is kept on the
    model (``fixed_bias_prior``) so evaluation can swap in a target prior."""
    p_src = check_distribution(p_src, name="p_src", strictly_positive=True)
    model.fixed_bias_prior = p_src
    if hasattr(model, "coef_"):
        if p_src.size != model.intercept_.size:
            raise ValueError(f"p_src has {p_src.size} entries for {model.intercept_.size} labels")
        model.intercept_ = np.log(p_src)
    return train(model, train_set, dev_set, cfg)
