"""Synthetic label-shift data: interpolated priors, stratified resampling,
the per-label shift metric, and a class-conditional feature generator.

The generator keeps ``p(features | label)`` fixed by construction, so two
datasets drawn from the same :class:`SynthGenSpec` differ only in their label
priors.  That is exactly the setting in which bias adjustment is exact.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .core import Instance, LabelDistribution, LabelVocab
from .validation import DataError, as_label_sets, check_distribution

DEFAULT_BIN_EDGES = (0.0, 0.01, 0.05, 0.1, 0.5, 1.0)
N_STEPS = 5


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


# -- label distributions -----------------------------------------------------


def interpolate_distribution(s0: LabelDistribution, s5: LabelDistribution, i: int, steps=N_STEPS):
    """``S_i = ((steps - i) / steps) S0 + (i / steps) S5``."""
    if s0.vocab != s5.vocab:
        raise ValueError("endpoint distributions use different vocabularies")
    if not (isinstance(i, (int, np.integer)) and 0 <= i <= steps):
        raise ValueError(f"step must be an integer in [0, {steps}], got {i!r}")
    w = i / steps
    return LabelDistribution((1.0 - w) * s0.probs + w * s5.probs, s0.vocab)


def random_distribution(vocab: LabelVocab, seed=0) -> LabelDistribution:
    """Uniform draw from the probability simplex (normalised exponentials)."""
    if len(vocab) < 2:
        raise ValueError("need at least two labels")
    rng = _rng(seed)
    while True:
        e = rng.standard_exponential(len(vocab))
        if np.all(e > 0):
            return LabelDistribution(e / e.sum(), vocab)


def largest_remainder(n: int, probs) -> np.ndarray:
    """Integer quotas summing to ``n``, each within 1 of ``n * p_i``.

    Remaining units go to the largest fractional parts; ties favour the
    lower label index.
    """
    probs = check_distribution(probs, name="target distribution")
    exact = n * probs
    quotas = np.floor(exact).astype(np.int64)
    short = int(n - quotas.sum())
    if short > 0:
        order = np.lexsort((np.arange(probs.size), -(exact - quotas)))
        quotas[order[:short]] += 1
    return quotas


# -- stratified resampling ---------------------------------------------------


def _strata(dataset, vocab):
    strata = [[] for _ in vocab.labels]
    for inst, labels in zip(dataset, as_label_sets(dataset)):
        if labels[0] not in vocab:
            raise DataError(f"instance label {labels[0]!r} is not in the target vocabulary")
        strata[vocab.index(labels[0])].append(inst)
    return strata


def stratified_sample(dataset, target: LabelDistribution, n: int, seed=0) -> list:
    """Disproportionate stratified sample of ``n`` instances following ``target``.

    Per-label quotas come from largest-remainder apportionment; instances are
    drawn without replacement within each label, and the result is shuffled.
    """
    if n <= 0:
        raise ValueError(f"sample size must be positive, got {n}")
    rng = _rng(seed)
    quotas = largest_remainder(n, target.probs)
    strata = _strata(list(dataset), target.vocab)
    out = []
    for label, quota, pool in zip(target.vocab.labels, quotas, strata):
        if quota > len(pool):
            raise DataError(f"label {label!r} needs {quota} instances but only {len(pool)} are available")
        picked = np.sort(rng.choice(len(pool), size=int(quota), replace=False))
        out.extend(pool[j] for j in picked)
    return [out[j] for j in rng.permutation(len(out))]


# -- shift metric --------------------------------------------------------------


@dataclass
class ShiftReport:
    labels: tuple[str, ...]
    delta: np.ndarray
    test_dist: np.ndarray
    edges: tuple[float, ...] = DEFAULT_BIN_EDGES
    proportions: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def delta_of(self, label: str) -> float:
        return float(self.delta[self.labels.index(label)])

    def to_dict(self):
        return {
            "labels": list(self.labels),
            "delta": self.delta.tolist(),
            "test_dist": self.test_dist.tolist(),
            "edges": list(self.edges),
            "proportions": self.proportions.tolist(),
        }

    def bins_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["bin_low", "bin_high", "proportion"])
        for lo, hi, prop in zip(self.edges[:-1], self.edges[1:], self.proportions):
            writer.writerow([lo, hi, repr(float(prop))])
        return buf.getvalue()


def bin_index(delta, edges=DEFAULT_BIN_EDGES) -> np.ndarray:
    """Bin of each delta; bins are ``[e0, e1], (e1, e2], ...``."""
    edges = np.asarray(edges, dtype=float)
    idx = np.searchsorted(edges[1:], np.asarray(delta, dtype=float), side="left")
    return np.minimum(idx, edges.size - 2)


def shift_report(train_dist: LabelDistribution, test, edges=DEFAULT_BIN_EDGES) -> ShiftReport:
    """Per-label prior gaps and the share of test instances in each gap bin.

    ``test`` is a test dataset or its label distribution.
    """
    if isinstance(test, LabelDistribution):
        test_dist = test
    else:
        test = list(test)
        if not test:
            raise DataError("empty test set")
        counts = np.zeros(len(train_dist.vocab))
        for labels in as_label_sets(test):
            counts[train_dist.vocab.index(labels[0])] += 1
        test_dist = LabelDistribution(counts / counts.sum(), train_dist.vocab)
    if test_dist.vocab != train_dist.vocab:
        raise ValueError("train and test distributions use different vocabularies")
    delta = np.abs(train_dist.probs - test_dist.probs)
    bins = bin_index(delta, edges)
    props = np.bincount(bins, weights=test_dist.probs, minlength=len(edges) - 1)
    return ShiftReport(train_dist.vocab.labels, delta, test_dist.probs.copy(), tuple(edges), props)


# -- class-conditional generator ---------------------------------------------


@dataclass
class SynthGenSpec:
    """Fixed class-conditional feature distributions for synthetic mentions.

    ``class_feature_dists[k]`` is the multinomial over the feature universe for
    label ``k``.  ``none_share`` is the NONE mass of the default test prior.
    """

    labels: tuple[str, ...]
    class_feature_dists: np.ndarray
    feats_per_instance: int = 6
    none_share: float = 0.6
    seed: int = 0
    none_index: int = 0

    def __post_init__(self):
        self.labels = tuple(self.labels)
        dists = np.asarray(self.class_feature_dists, dtype=float)
        if dists.ndim != 2 or dists.shape[0] != len(self.labels):
            raise ValueError("class_feature_dists must have one row per label")
        for k, row in enumerate(dists):
            check_distribution(row, name=f"feature distribution of {self.labels[k]!r}")
        self.class_feature_dists = dists
        if self.feats_per_instance < 1:
            raise ValueError("feats_per_instance must be >= 1")

    @property
    def vocab(self) -> LabelVocab:
        return LabelVocab(self.labels, self.none_index)

    @property
    def K(self) -> int:
        return len(self.labels)

    @property
    def vocab_size(self) -> int:
        return self.class_feature_dists.shape[1]

    @classmethod
    def default(
        cls,
        n_labels=7,
        vocab_size=200,
        feats_per_instance=6,
        signature_size=12,
        signal=0.35,
        none_share=0.6,
        seed=0,
    ):
        """NONE plus ``n_labels - 1`` relations.

        Each relation puts ``signal`` of its feature mass uniformly on a random
        signature set and the rest on a shared background; NONE is pure
        background, so every relation overlaps with NONE and each other.
        """
        if n_labels < 2:
            raise ValueError("need at least two labels")
        rng = np.random.default_rng(seed)
        background = rng.dirichlet(np.full(vocab_size, 5.0))
        dists = [background]
        for _ in range(n_labels - 1):
            sig = rng.choice(vocab_size, size=signature_size, replace=False)
            row = (1.0 - signal) * background
            row[sig] += signal / signature_size
            dists.append(row / row.sum())
        labels = ("NONE",) + tuple(f"R{k}" for k in range(1, n_labels))
        return cls(labels, np.array(dists), feats_per_instance, none_share, seed)

    def test_prior(self) -> LabelDistribution:
        """NONE gets ``none_share``; relations split the rest with weights K-1, ..., 1."""
        weights = np.arange(self.K - 1, 0, -1, dtype=float)
        rel = (1.0 - self.none_share) * weights / weights.sum()
        probs = np.insert(rel, self.none_index, self.none_share)
        return LabelDistribution(probs, self.vocab)

    def feature_name(self, j: int) -> str:
        return f"f{j:04d}"


def _draw_features(spec, label_idx, rng):
    m = spec.feats_per_instance
    feats = np.empty((label_idx.size, m), dtype=np.int64)
    for k in range(spec.K):
        rows = np.flatnonzero(label_idx == k)
        if rows.size:
            feats[rows] = rng.choice(spec.vocab_size, size=(rows.size, m), p=spec.class_feature_dists[k])
    return feats


def _to_instances(spec, label_idx, feats, prefix):
    return [
        Instance(f"{prefix}{i}", [spec.feature_name(j) for j in feats[i]], (spec.labels[label_idx[i]],))
        for i in range(label_idx.size)
    ]


def synth_generate(spec: SynthGenSpec, prior: LabelDistribution, n: int, seed=None, prefix="s") -> list[Instance]:
    """``n`` mentions with labels drawn from ``prior`` and features from the
    label's fixed feature distribution."""
    if tuple(prior.vocab.labels) != spec.labels:
        raise ValueError("prior vocabulary does not match the generator's labels")
    rng = _rng(spec.seed if seed is None else seed)
    label_idx = rng.choice(spec.K, size=n, p=prior.probs)
    return _to_instances(spec, label_idx, _draw_features(spec, label_idx, rng), prefix)


def synth_generate_counts(spec: SynthGenSpec, counts, seed=None, prefix="s") -> list[Instance]:
    """Like :func:`synth_generate` with exact per-label counts, in shuffled order."""
    rng = _rng(spec.seed if seed is None else seed)
    counts = np.asarray(counts, dtype=np.int64)
    label_idx = rng.permutation(np.repeat(np.arange(spec.K), counts))
    return _to_instances(spec, label_idx, _draw_features(spec, label_idx, rng), prefix)


# -- shift suites --------------------------------------------------------------


@dataclass
class ShiftSuite:
    train_sets: list[list[Instance]]
    test_set: list[Instance]
    step_priors: list[LabelDistribution]
    test_prior: LabelDistribution

    @property
    def vocab(self) -> LabelVocab:
        return self.test_prior.vocab


def build_shift_suite(source, s0, s5, n, seed=0, test_prior=None, n_test=None, steps=N_STEPS) -> ShiftSuite:
    """Train sets at every interpolation step ``S0 .. S5`` plus one test set.

    ``source`` is a :class:`SynthGenSpec` or a labelled dataset.  From a
    generator, a pool just large enough for every step's quotas is drawn
    and each train set is stratified out of it; the test set is generated
    independently at ``test_prior`` (default: the spec's test prior).  From a
    dataset, the test set is stratified out first and the train sets are
    drawn from the remaining instances.  ``n_test=0`` skips the test set.
    """
    rng = _rng(seed)
    n_test = n if n_test is None else n_test
    priors = [interpolate_distribution(s0, s5, i, steps) for i in range(steps + 1)]
    if isinstance(source, SynthGenSpec):
        test_prior = source.test_prior() if test_prior is None else test_prior
        pool_counts = np.max([largest_remainder(n, p.probs) for p in priors], axis=0)
        pool = synth_generate_counts(source, pool_counts, rng, prefix="train-")
        test = []
        if n_test:
            test = synth_generate_counts(source, largest_remainder(n_test, test_prior.probs), rng, prefix="test-")
    else:
        data = list(source)
        test = []
        if n_test:
            if test_prior is None:
                raise ValueError("a dataset source needs an explicit test_prior")
            test = stratified_sample(data, test_prior, n_test, rng)
        taken = {id(t) for t in test}
        pool = [t for t in data if id(t) not in taken]
    train_sets = [stratified_sample(pool, p, n, rng) for p in priors]
    return ShiftSuite(train_sets, test, priors, test_prior)
