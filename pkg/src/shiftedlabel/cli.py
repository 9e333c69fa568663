"""Command line interface.

Every subcommand accepts ``--config FILE`` with ``key = value`` lines whose
keys are the long flag names; flags given on the command line win.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import inspect
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .adaptation import (
    AdjustmentSpec,
    ThresholdSpec,
    ba_fix_proba,
    ba_set_proba,
    clean_dev_split,
    estimate_label_distribution,
    threshold_indices,
    tune_threshold_from_proba,
)
from .core import KINDS, LabelDistribution, LabelVocab, SoftmaxClassifier
from .datasets import load_dataset, read_config_file, read_instances, save_dataset
from .evaluation import evaluate
from .experiment import METHODS, RunConfig, _grid, _noisy_dev_split, emit_reports, run_experiment
from .synth import SynthGenSpec, build_shift_suite, random_distribution, shift_report, synth_generate
from .training import TrainConfig
from .validation import DataError

OUTPUT_ENV = "SHIFTEDLABEL_OUTPUT_DIR"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

logger = logging.getLogger("shiftedlabel")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _bool(text):
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _int_list(text):
    return tuple(int(part) for part in str(text).split(",") if part.strip())


def _str_list(text):
    return tuple(part.strip() for part in str(text).split(",") if part.strip())


def _default_out_dir():
    return os.environ.get(OUTPUT_ENV, "results")


def _write_json(obj, path=None):
    text = json.dumps(obj, indent=2) + "\n"
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    sys.stdout.write(text)


# -- train -------------------------------------------------------------------


def _add_train_flags(p):
    defaults = TrainConfig()
    p.add_argument("--kind", choices=KINDS, default="sparse-linear")
    p.add_argument("--dim", type=int, default=30, help="embedding size (embedding-average only)")
    p.add_argument("--lr0", type=float, default=defaults.lr0)
    p.add_argument("--decay-factor", type=float, default=defaults.decay_factor)
    p.add_argument("--patience", type=int, default=defaults.patience)
    p.add_argument("--max-epochs", type=int, default=defaults.max_epochs)
    p.add_argument("--batch-size", type=int, default=defaults.batch_size)
    p.add_argument("--input-dropout", type=float, default=0.0)
    p.add_argument("--pool-dropout", type=float, default=0.0)
    p.add_argument("--l2", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)


def cmd_train(args):
    train, _ = load_dataset(args.train, args.none_label)
    if args.dev:
        dev = read_instances(args.dev)
    else:
        train, dev = _noisy_dev_split(train, args.dev_fraction, np.random.default_rng([args.seed, 2]))
    vocab = LabelVocab.from_labels([lab for t in train + dev for lab in t.labels], args.none_label)
    extra = {}
    if args.ba_fix:
        p_src = estimate_label_distribution(train, vocab, args.alpha)
        extra["fixed_bias_prior"] = p_src.probs
    model = SoftmaxClassifier(
        kind=args.kind,
        dim=args.dim,
        lr0=args.lr0,
        decay_factor=args.decay_factor,
        patience=args.patience,
        max_epochs=args.max_epochs,
        batch_size=args.batch_size,
        input_dropout=args.input_dropout,
        pool_dropout=args.pool_dropout,
        l2=args.l2,
        seed=args.seed,
        labels=vocab.labels,
        none_label=args.none_label,
        **extra,
    )
    model.fit(train, [t.labels for t in train], dev, [t.labels for t in dev])
    Path(args.model_out).parent.mkdir(parents=True, exist_ok=True)
    model.save(args.model_out)
    log = model.train_log_
    if args.log_out:
        Path(args.log_out).write_text(log.to_csv())
    last = log.epochs[log.best_epoch - 1]
    print(
        f"trained {args.kind} model on {len(train)} instances; best epoch {log.best_epoch}/"
        f"{log.final_epoch} dev_loss={last.dev_loss:.6f} dev_f1={last.dev_f1:.4f} -> {args.model_out}"
    )


# -- eval / adapt / tune-threshold --------------------------------------------


def _load_model(path):
    try:
        return SoftmaxClassifier.load(path)
    except OSError as exc:
        raise DataError(f"cannot read model {path}: {exc.strerror or exc}") from exc
    except (KeyError, json.JSONDecodeError) as exc:
        raise DataError(f"malformed model file {path}: {exc}") from exc


def _source_prior(model):
    if model.fixed_bias_prior is not None:
        return np.asarray(model.fixed_bias_prior, dtype=float)
    return model.source_prior_


def cmd_eval(args):
    model = _load_model(args.model)
    vocab = model.vocab_
    test = read_instances(args.test)
    if args.clean_dev_fraction > 0:
        clean_dev, held_out = clean_dev_split(test, args.clean_dev_fraction, args.seed)
    else:
        clean_dev, held_out = [], test
    method = args.method
    out = {"method": method, "n_clean_dev": len(clean_dev), "n_eval": len(held_out)}
    if method in ("max-thres", "ent-thres"):
        kind = "max" if method == "max-thres" else "entropy"
        if args.threshold is not None:
            spec = ThresholdSpec(kind, args.threshold, len(vocab))
        else:
            if not clean_dev:
                raise UsageError("threshold tuning needs a clean dev split (--clean-dev-fraction > 0)")
            gold_dev = vocab.indices([t.label for t in clean_dev])
            spec, _ = tune_threshold_from_proba(
                model.predict_proba(clean_dev), gold_dev, kind, vocab, _grid(kind, len(vocab), args.grid_size)
            )
        out["threshold"] = spec.to_dict()
        idx = threshold_indices(model.predict_proba(held_out), spec, vocab.none_index)
    elif method in ("ba-set", "ba-fix"):
        if args.spec:
            p_tgt = AdjustmentSpec.from_dict(json.loads(Path(args.spec).read_text())).p_tgt
        else:
            if not clean_dev:
                raise UsageError("bias adjustment needs a clean dev split or --spec")
            p_tgt = estimate_label_distribution(clean_dev, vocab, args.alpha)
        out["p_tgt"] = p_tgt.to_dict()
        if method == "ba-set":
            spec = AdjustmentSpec(LabelDistribution(_source_prior(model), vocab), p_tgt)
            proba = ba_set_proba(model, held_out, spec)
        else:
            proba = ba_fix_proba(model, held_out, p_tgt)
        idx = np.argmax(proba, axis=1)
    else:
        idx = np.argmax(model.decision_function(held_out), axis=1)
    report = evaluate([vocab.labels[i] for i in idx], [t.label for t in held_out], vocab)
    out["report"] = report.to_dict()
    _write_json(out, args.out)


def cmd_adapt(args):
    model = _load_model(args.model)
    clean_dev = read_instances(args.clean_dev)
    p_tgt = estimate_label_distribution(clean_dev, model.vocab_, args.alpha)
    spec = AdjustmentSpec(LabelDistribution(_source_prior(model), model.vocab_), p_tgt)
    _write_json(spec.to_dict(), args.out)


def cmd_tune_threshold(args):
    model = _load_model(args.model)
    clean_dev = read_instances(args.clean_dev)
    if not clean_dev:
        raise DataError("clean dev set is empty")
    vocab = model.vocab_
    gold = vocab.indices([t.label for t in clean_dev])
    spec, scores = tune_threshold_from_proba(
        model.predict_proba(clean_dev), gold, args.kind, vocab, _grid(args.kind, len(vocab), args.grid_size)
    )
    _write_json({**spec.to_dict(), "clean_dev_f1": float(scores.max())}, args.out)


# -- synth / shift-report ------------------------------------------------------


def _gen_spec(args):
    return SynthGenSpec.default(
        n_labels=args.n_labels,
        vocab_size=args.vocab_size,
        feats_per_instance=args.feats_per_instance,
        signature_size=args.signature_size,
        signal=args.signal,
        none_share=args.none_share,
        seed=args.generator_seed,
    )


def _prior_arg(text, spec, seed):
    vocab = spec.vocab
    if text == "test":
        return spec.test_prior()
    if text == "random":
        return random_distribution(vocab, seed)
    if text == "uniform":
        return LabelDistribution(np.full(len(vocab), 1.0 / len(vocab)), vocab)
    try:
        doc = json.loads(Path(text).read_text())
    except OSError as exc:
        raise DataError(f"cannot read prior {text}: {exc.strerror or exc}") from exc
    return LabelDistribution.from_dict(doc, vocab)


def cmd_synth(args):
    spec = _gen_spec(args)
    out = Path(args.out)
    if args.suite:
        s0 = _prior_arg(args.s0, spec, args.seed)
        s5 = _prior_arg(args.s5, spec, args.s5_seed)
        suite = build_shift_suite(spec, s0, s5, args.n, args.seed, spec.test_prior(), args.n_test)
        out.mkdir(parents=True, exist_ok=True)
        for i, train in enumerate(suite.train_sets):
            save_dataset(train, out / f"train_S{i}.jsonl")
        save_dataset(suite.test_set, out / "test.jsonl")
        priors = {f"S{i}": p.probs.tolist() for i, p in enumerate(suite.step_priors)}
        priors["test"] = suite.test_prior.probs.tolist()
        (out / "priors.json").write_text(json.dumps({"labels": list(spec.labels), **priors}, indent=2) + "\n")
        print(f"wrote 6 train sets of {args.n} and a test set of {len(suite.test_set)} to {out}")
    else:
        prior = _prior_arg(args.prior, spec, args.seed)
        data = synth_generate(spec, prior, args.n, args.seed)
        out.parent.mkdir(parents=True, exist_ok=True)
        save_dataset(data, out)
        print(f"wrote {len(data)} instances to {out}")


def cmd_shift_report(args):
    train, _ = load_dataset(args.train, args.none_label)
    test = read_instances(args.test)
    vocab = LabelVocab.from_labels([lab for t in train + test for lab in t.labels], args.none_label)
    report = shift_report(estimate_label_distribution(train, vocab, 0.0), test)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "shift_report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
        (out / "shift_bins.csv").write_text(report.bins_csv())
    _write_json(report.to_dict())


# -- experiment ----------------------------------------------------------------

_RUN_FIELD_TYPES = {"methods": _str_list, "seeds": _int_list}


def _add_run_config_flags(p):
    for f in fields(RunConfig):
        if f.name == "output":
            continue
        flag = "--" + f.name.replace("_", "-")
        default = f.default
        if f.name in _RUN_FIELD_TYPES:
            p.add_argument(flag, type=_RUN_FIELD_TYPES[f.name], default=default)
        elif f.name in ("data", "test"):
            p.add_argument(flag, default=None)
        elif f.name == "kind":
            p.add_argument(flag, choices=KINDS, default=default)
        elif f.name == "s0":
            p.add_argument(flag, choices=("test", "source"), default=default)
        else:
            p.add_argument(flag, type=type(default), default=default)


def cmd_experiment(args):
    values = {f.name: getattr(args, f.name) for f in fields(RunConfig) if f.name != "output"}
    cfg = RunConfig(**values, output=args.out_dir)
    result = run_experiment(cfg)
    paths = emit_reports(result, args.out_dir)
    print(f"config {result.config_hash}; {len(result.runs)} runs; wrote {len(paths)} files to {args.out_dir}")
    print(f"{'method':<10}" + "".join(f"{s:>16}" for s in result.steps))
    for method in cfg.methods:
        cells = []
        for step in result.steps:
            agg = next(a for a in result.aggregates() if a["method"] == method and a["dataset"] == step)
            cells.append(f"{100 * agg['mean_f1']:7.2f} ± {100 * agg['std_f1']:5.2f}")
        print(f"{method:<10}" + "".join(f"{c:>16}" for c in cells))
    print("thresholds (method step seed value):")
    for r in result.runs:
        if "threshold" in r:
            print(f"  {r['method']} {r['step']} {r['seed']} {r['threshold']:.4f}")
    print("estimated target priors (clean dev):")
    for seed, probs in result.distributions["p_tgt"].items():
        print(f"  seed {seed}: " + " ".join(f"{lab}={p:.4f}" for lab, p in zip(result.labels, probs)))


# -- parser --------------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="shiftedlabel", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="key=value file with defaults for the flags below")
        p.set_defaults(func=func)
        return p

    p = add("train", cmd_train, "train a softmax classifier on a JSONL corpus")
    p.add_argument("--train", required=True)
    p.add_argument("--dev")
    p.add_argument("--dev-fraction", type=float, default=0.1)
    p.add_argument("--model-out", required=True)
    p.add_argument("--log-out")
    p.add_argument("--ba-fix", type=_bool, nargs="?", const=True, default=False)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--none-label", default="NONE")
    _add_train_flags(p)

    p = add("eval", cmd_eval, "score a model on a test set, optionally adapted")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--method", choices=METHODS, default="original")
    p.add_argument("--clean-dev-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--spec", help="AdjustmentSpec JSON (from `adapt`) to use instead of the clean dev")
    p.add_argument("--threshold", type=float)
    p.add_argument("--grid-size", type=int, default=101)
    p.add_argument("--out")

    p = add("adapt", cmd_adapt, "estimate the target prior and write an AdjustmentSpec")
    p.add_argument("--model", required=True)
    p.add_argument("--clean-dev", required=True)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--out")

    p = add("tune-threshold", cmd_tune_threshold, "grid-search a max or entropy threshold")
    p.add_argument("--model", required=True)
    p.add_argument("--clean-dev", required=True)
    p.add_argument("--kind", choices=("max", "entropy"), default="max")
    p.add_argument("--grid-size", type=int, default=101)
    p.add_argument("--out")

    p = add("synth", cmd_synth, "generate a synthetic corpus or a full S0-S5 suite")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--prior", default="test", help="test | random | uniform | path to a distribution JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--suite", type=_bool, nargs="?", const=True, default=False)
    p.add_argument("--s0", default="test")
    p.add_argument("--s5", default="random")
    p.add_argument("--s5-seed", type=int, default=0)
    p.add_argument("--n-test", type=int, default=5000)
    for name, param in inspect.signature(SynthGenSpec.default).parameters.items():
        flag = "generator_seed" if name == "seed" else name
        p.add_argument("--" + flag.replace("_", "-"), type=type(param.default), default=param.default)

    p = add("shift-report", cmd_shift_report, "per-label prior gaps between a train and a test set")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--none-label", default="NONE")
    p.add_argument("--out-dir")

    p = add("experiment", cmd_experiment, "run the S0-S5 label-shift experiment")
    p.add_argument("--out-dir", default=None)
    _add_run_config_flags(p)
    return parser


def _apply_config_file(parser, argv):
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    values = read_config_file(args.config)
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in subparser._actions}
    unknown = sorted(set(values) - set(known) - {"config"})
    if unknown:
        raise UsageError(f"unknown key(s) in {args.config}: {', '.join(unknown)}")
    subparser.set_defaults(**{k: v for k, v in values.items() if k != "config"})
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config_file(parser, sys.argv[1:] if argv is None else argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        if args.command == "experiment" and args.out_dir is None:
            args.out_dir = _default_out_dir()
        args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, TypeError, KeyError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
