"""End-to-end label-shift experiment.

For every seed: build train sets at interpolation steps S0..S5 and a shared
test set, split a clean dev off the test set, train one plain and one
frozen-bias model per step, then score five methods on the held-out test
instances:

``original``   argmax of the plain model
``max-thres``  max-probability threshold tuned on clean dev
``ent-thres``  entropy threshold tuned on clean dev
``ba-set``     plain model, bias shifted by ``ln p_tgt - ln p_src``
``ba-fix``     frozen-bias model, bias replaced by ``ln p_tgt``
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .adaptation import (
    BiasAdjustedClassifier,
    ThresholdClassifier,
    clean_dev_split,
    estimate_label_distribution,
)
from .core import LabelVocab, SoftmaxClassifier
from .datasets import read_instances
from .evaluation import aggregate_seeds, evaluate
from .synth import SynthGenSpec, build_shift_suite, random_distribution, shift_report
from .training import TrainLog
from .validation import DataError

logger = logging.getLogger(__name__)

METHODS = ("original", "max-thres", "ent-thres", "ba-set", "ba-fix")
RESULT_FORMAT = "shiftedlabel.experiment"
RESULT_VERSION = 1


@dataclass
class RunConfig:
    methods: tuple[str, ...] = METHODS
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    # model and optimisation
    kind: str = "sparse-linear"
    dim: int = 30
    lr0: float = 1.0
    decay_factor: float = 0.1
    patience: int = 3
    max_epochs: int = 30
    batch_size: int = 32
    input_dropout: float = 0.0
    pool_dropout: float = 0.0
    l2: float = 0.0
    dev_fraction: float = 0.1
    # adaptation
    clean_dev_fraction: float = 0.2
    alpha: float = 1.0
    grid_size: int = 101
    # suite
    n_train: int = 5000
    n_test: int = 5000
    s0: str = "test"
    s5_seed: int = 0
    data: str | None = None
    test: str | None = None
    none_label: str = "NONE"
    # synthetic generator (used when no data file is given)
    n_labels: int = 7
    vocab_size: int = 200
    feats_per_instance: int = 6
    signature_size: int = 12
    signal: float = 0.35
    none_share: float = 0.6
    generator_seed: int = 0
    # not part of the hash
    output: str | None = None

    def __post_init__(self):
        self.methods = tuple(self.methods)
        self.seeds = tuple(int(s) for s in self.seeds)
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown method(s) {bad}; choose from {METHODS}")
        if not self.methods:
            raise ValueError("no methods selected")
        if not self.seeds:
            raise ValueError("no seeds given")
        if self.s0 not in ("test", "source"):
            raise ValueError("s0 must be 'test' or 'source'")
        if self.grid_size < 1:
            raise ValueError("grid_size must be >= 1")
        if self.data is None and self.test is not None:
            raise ValueError("a test file needs a data file to resample train sets from")

    def to_dict(self, include_output=False):
        d = asdict(self)
        d["methods"], d["seeds"] = list(self.methods), list(self.seeds)
        if not include_output:
            d.pop("output")
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class ExperimentResult:
    config: dict
    config_hash: str
    labels: list[str]
    steps: list[str]
    runs: list[dict] = field(default_factory=list)
    distributions: dict = field(default_factory=dict)
    shift: list[dict] = field(default_factory=list)
    trainlogs: dict[str, TrainLog] = field(default_factory=dict)

    def aggregates(self) -> list[dict]:
        out = []
        for method in self.config["methods"]:
            for step in self.steps:
                f1s = [r["report"]["micro_f1"] for r in self.runs if r["method"] == method and r["step"] == step]
                if f1s:
                    agg = aggregate_seeds(f1s)
                    out.append({"method": method, "dataset": step, **agg.to_dict()})
        return out

    def f1(self, method, step, seed) -> float:
        for r in self.runs:
            if (r["method"], r["step"], r["seed"]) == (method, step, seed):
                return r["report"]["micro_f1"]
        raise KeyError((method, step, seed))

    def mean_f1(self, method, step) -> float:
        for a in self.aggregates():
            if (a["method"], a["dataset"]) == (method, step):
                return a["mean_f1"]
        raise KeyError((method, step))

    def to_dict(self):
        return {
            "format": RESULT_FORMAT,
            "version": RESULT_VERSION,
            "config_hash": self.config_hash,
            "config": self.config,
            "labels": self.labels,
            "steps": self.steps,
            "metric": "micro-averaged P/R/F1 over non-NONE labels",
            "distributions": self.distributions,
            "shift": self.shift,
            "runs": self.runs,
            "aggregates": self.aggregates(),
            "trainlogs": {
                name: {"best_epoch": log.best_epoch, "final_epoch": log.final_epoch}
                for name, log in self.trainlogs.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


# -- pipeline ----------------------------------------------------------------


def _grid(kind, n_labels, size):
    if size == 1:
        return np.zeros(1)
    top = 1.0 if kind == "max" else math.log(n_labels)
    return np.arange(size) * (top / (size - 1))


def _empirical(instances, vocab):
    return estimate_label_distribution(instances, vocab, alpha=0.0)


def _prepare_source(cfg: RunConfig):
    """(source for build_shift_suite, vocab, test prior, fixed test set or None)."""
    if cfg.data is None:
        spec = SynthGenSpec.default(
            n_labels=cfg.n_labels,
            vocab_size=cfg.vocab_size,
            feats_per_instance=cfg.feats_per_instance,
            signature_size=cfg.signature_size,
            signal=cfg.signal,
            none_share=cfg.none_share,
            seed=cfg.generator_seed,
        )
        return spec, spec.vocab, spec.test_prior(), None, None
    data = read_instances(cfg.data)
    test = read_instances(cfg.test) if cfg.test else None
    labels = [lab for inst in data + (test or []) for lab in inst.labels]
    vocab = LabelVocab.from_labels(labels, cfg.none_label)
    test_prior = _empirical(test if test else data, vocab)
    return data, vocab, test_prior, test, _empirical(data, vocab)


def _model(cfg, vocab, seed, **extra):
    return SoftmaxClassifier(
        kind=cfg.kind,
        dim=cfg.dim,
        lr0=cfg.lr0,
        decay_factor=cfg.decay_factor,
        patience=cfg.patience,
        max_epochs=cfg.max_epochs,
        batch_size=cfg.batch_size,
        input_dropout=cfg.input_dropout,
        pool_dropout=cfg.pool_dropout,
        l2=cfg.l2,
        seed=seed,
        labels=vocab.labels,
        none_label=vocab.none_label,
        **extra,
    )


def _noisy_dev_split(train, fraction, rng):
    order = rng.permutation(len(train))
    n_dev = max(1, int(round(fraction * len(train))))
    return [train[j] for j in np.sort(order[n_dev:])], [train[j] for j in np.sort(order[:n_dev])]


def run_experiment(cfg: RunConfig) -> ExperimentResult:
    source, vocab, test_prior, fixed_test, source_prior = _prepare_source(cfg)
    s0 = test_prior if cfg.s0 == "test" or source_prior is None else source_prior
    s5 = random_distribution(vocab, cfg.s5_seed)
    steps = [f"S{i}" for i in range(6)]
    result = ExperimentResult(
        config=cfg.to_dict(),
        config_hash=cfg.config_hash(),
        labels=list(vocab.labels),
        steps=steps,
    )
    result.distributions = {
        "test_prior": test_prior.probs.tolist(),
        "S0": s0.probs.tolist(),
        "S5": s5.probs.tolist(),
        "p_tgt": {},
        "p_src": {},
    }
    grids = {kind: _grid(kind, len(vocab), cfg.grid_size) for kind in ("max", "entropy")}
    need_fix = "ba-fix" in cfg.methods

    for seed in cfg.seeds:
        logger.info("seed %d: building suite", seed)
        suite = build_shift_suite(
            source,
            s0,
            s5,
            cfg.n_train,
            np.random.default_rng([seed, 0]),
            test_prior,
            0 if fixed_test is not None else cfg.n_test,
        )
        test = fixed_test if fixed_test is not None else suite.test_set
        clean_dev, held_out = clean_dev_split(test, cfg.clean_dev_fraction, [seed, 1])
        p_tgt = estimate_label_distribution(clean_dev, vocab, cfg.alpha)
        result.distributions["p_tgt"][str(seed)] = p_tgt.probs.tolist()
        dev_labels = [inst.labels for inst in clean_dev]
        gold = [inst.label for inst in held_out]

        for i, (step, train_all) in enumerate(zip(steps, suite.train_sets)):
            if seed == cfg.seeds[0]:
                result.shift.append({"step": step, **shift_report(_empirical(train_all, vocab), test).to_dict()})
            train, dev = _noisy_dev_split(train_all, cfg.dev_fraction, np.random.default_rng([seed, 2, i]))
            p_src = estimate_label_distribution(train, vocab, cfg.alpha)
            result.distributions["p_src"][f"{step}/{seed}"] = p_src.probs.tolist()
            X, y = train, [t.labels for t in train]
            X_dev, y_dev = dev, [t.labels for t in dev]
            model_seed = 1000 * seed + i

            logger.info("seed %d %s: training", seed, step)
            base = _model(cfg, vocab, model_seed).fit(X, y, X_dev, y_dev)
            result.trainlogs[f"plain_{step}_seed{seed}"] = base.train_log_
            fixed = None
            if need_fix:
                fixed = _model(cfg, vocab, model_seed, fixed_bias_prior=p_src.probs).fit(X, y, X_dev, y_dev)
                result.trainlogs[f"bafix_{step}_seed{seed}"] = fixed.train_log_

            for method in cfg.methods:
                extra = {}
                if method == "original":
                    clf = base
                elif method in ("max-thres", "ent-thres"):
                    kind = "max" if method == "max-thres" else "entropy"
                    clf = ThresholdClassifier(base, kind, grid=grids[kind]).fit(clean_dev, dev_labels)
                    extra["threshold"] = clf.spec_.value
                elif method == "ba-set":
                    clf = BiasAdjustedClassifier(
                        base, "set", target_prior=p_tgt.probs, source_prior=p_src.probs
                    ).fit()
                else:
                    clf = BiasAdjustedClassifier(fixed, "fix", target_prior=p_tgt.probs).fit()
                report = evaluate(clf.predict(held_out), gold, vocab)
                result.runs.append(
                    {"method": method, "step": step, "seed": seed, **extra, "report": report.to_dict()}
                )
    return result


# -- reports -----------------------------------------------------------------


def _csv(rows, header):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def render_reports(result: ExperimentResult) -> dict[str, str]:
    """Relative path -> file content for every report file."""
    if not result.runs:
        raise ValueError("experiment result has no runs; nothing to report")
    h = result.config_hash
    files = {"results.json": result.to_json()}
    files["table.csv"] = _csv(
        [(a["method"], a["dataset"], repr(a["mean_f1"]), repr(a["std_f1"]), h) for a in result.aggregates()],
        ["method", "dataset", "mean_f1", "std_f1", "config_hash"],
    )
    rows = []
    for entry in result.shift:
        edges = entry["edges"]
        for lo, hi, prop in zip(edges[:-1], edges[1:], entry["proportions"]):
            rows.append((entry["step"], lo, hi, repr(prop), h))
    files["shift_bins.csv"] = _csv(rows, ["dataset", "bin_low", "bin_high", "proportion", "config_hash"])
    for name, log in result.trainlogs.items():
        files[f"trainlogs/{name}.csv"] = log.to_csv(h)
    return files


def emit_reports(result: ExperimentResult, out_dir) -> list[Path]:
    """Write results.json, table.csv, shift_bins.csv and trainlogs/*.csv.

    All content is rendered before anything touches the disk; existing files
    are overwritten.
    """
    files = render_reports(result)
    out_dir = Path(out_dir)
    written = []
    for rel, content in files.items():
        path = out_dir / rel
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_name(path.name + ".tmp")
            tmp.write_text(content, encoding="utf-8")
            os.replace(tmp, path)
        except OSError as exc:
            raise DataError(f"cannot write {path}: {exc.strerror or exc}") from exc
        written.append(path)
    return written
