import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shiftedlabel import (
    DataError,
    Instance,
    LabelDistribution,
    LabelVocab,
    SoftmaxClassifier,
    SynthGenSpec,
    build_shift_suite,
    interpolate_distribution,
    random_distribution,
    shift_report,
    stratified_sample,
    synth_generate,
)
from shiftedlabel.synth import DEFAULT_BIN_EDGES, bin_index, largest_remainder, synth_generate_counts


def vocab_of(K):
    return LabelVocab(tuple(["NONE"] + [f"R{i}" for i in range(1, K)]))


def pool_for(vocab, per_label):
    out = []
    for k, lab in enumerate(vocab.labels):
        out += [Instance(f"{lab}-{j}", [f"x{j}"], (lab,)) for j in range(per_label[k])]
    return out


def counts_of(instances, vocab):
    return np.bincount(vocab.indices([t.label for t in instances]), minlength=len(vocab))


# -- interpolation and random priors -----------------------------------------


def test_interpolation_endpoints_and_midpoint():
    v = vocab_of(2)
    s0, s5 = LabelDistribution([0.8, 0.2], v), LabelDistribution([0.2, 0.8], v)
    np.testing.assert_array_equal(interpolate_distribution(s0, s5, 0).probs, s0.probs)
    np.testing.assert_array_equal(interpolate_distribution(s0, s5, 5).probs, s5.probs)
    np.testing.assert_allclose(interpolate_distribution(s0, s5, 2).probs, [0.56, 0.44], rtol=0, atol=1e-15)


def test_interpolation_rejects_bad_inputs():
    v = vocab_of(2)
    s0 = LabelDistribution([0.5, 0.5], v)
    with pytest.raises(ValueError):
        interpolate_distribution(s0, LabelDistribution([0.5, 0.5], LabelVocab(("NONE", "X"))), 1)
    with pytest.raises(ValueError):
        interpolate_distribution(s0, s0, 6)


@given(st.integers(2, 10), st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1))
def test_interpolation_valid_and_monotone(K, a, b):
    v = vocab_of(K)
    s0, s5 = random_distribution(v, a), random_distribution(v, b)
    prev = -1.0
    for i in range(6):
        p = interpolate_distribution(s0, s5, i).probs
        assert np.all(p >= 0) and abs(p.sum() - 1) <= 1e-9
        dist = np.abs(p - s0.probs).sum()
        assert dist >= prev - 1e-15
        prev = dist


def test_random_distribution_seeded_and_valid():
    v = vocab_of(6)
    a, b = random_distribution(v, 11), random_distribution(v, 11)
    np.testing.assert_array_equal(a.probs, b.probs)
    assert abs(a.probs.sum() - 1) <= 1e-9 and np.all(a.probs > 0)
    with pytest.raises(ValueError):
        random_distribution(LabelVocab(("NONE",)), 0)


def test_random_distribution_is_flat_on_average():
    v = vocab_of(3)
    mean = np.mean([random_distribution(v, s).probs for s in range(1000)], axis=0)
    assert np.all(np.abs(mean - 1 / 3) <= 0.02)


# -- apportionment and stratified sampling -----------------------------------


def test_largest_remainder_examples():
    assert largest_remainder(10, [0.7, 0.3]).tolist() == [7, 3]
    assert largest_remainder(10, [0.5, 0.5]).tolist() == [5, 5]
    assert largest_remainder(2, [1 / 3, 1 / 3, 1 / 3]).tolist() == [1, 1, 0]


@given(st.integers(0, 20_000), st.integers(2, 50), st.integers(0, 2**32 - 1))
def test_largest_remainder_property(n, K, seed):
    p = np.random.default_rng(seed).dirichlet(np.ones(K))
    q = largest_remainder(n, p)
    assert q.sum() == n
    assert np.all(np.abs(q - n * p) < 1.0 + 1e-9)


def test_stratified_sample_small_examples():
    v = vocab_of(2)
    pool = pool_for(v, [50, 50])
    assert counts_of(stratified_sample(pool, LabelDistribution([0.5, 0.5], v), 10, 0), v).tolist() == [5, 5]
    assert counts_of(stratified_sample(pool, LabelDistribution([0.7, 0.3], v), 10, 0), v).tolist() == [7, 3]


def test_stratified_sample_42_labels():
    v = vocab_of(42)
    target = random_distribution(v, 3)
    pool = pool_for(v, np.ceil(10_000 * target.probs).astype(int) + 5)
    start = time.perf_counter()
    out = stratified_sample(pool, target, 10_000, seed=1)
    elapsed = time.perf_counter() - start
    assert 10_000 - 3 <= len(out) <= 10_000 + 3
    assert np.all(np.abs(counts_of(out, v) - 10_000 * target.probs) <= 1.0)
    assert len({t.id for t in out}) == len(out)
    assert elapsed < 5.0


def test_stratified_sample_errors_name_label():
    v = vocab_of(3)
    pool = pool_for(v, [10, 10, 1])
    with pytest.raises(DataError, match="R2"):
        stratified_sample(pool, LabelDistribution([0.4, 0.3, 0.3], v), 10, 0)
    with pytest.raises(ValueError):
        stratified_sample(pool, LabelDistribution([0.4, 0.3, 0.3], v), 0, 0)


def test_stratified_sample_is_seeded():
    v = vocab_of(2)
    pool = pool_for(v, [40, 40])
    target = LabelDistribution([0.5, 0.5], v)
    a = [t.id for t in stratified_sample(pool, target, 20, 5)]
    assert a == [t.id for t in stratified_sample(pool, target, 20, 5)]
    assert a != [t.id for t in stratified_sample(pool, target, 20, 6)]


# -- shift report --------------------------------------------------------------


def test_identical_distributions_fill_lowest_bin():
    v = vocab_of(4)
    p = random_distribution(v, 0)
    rep = shift_report(p, p)
    assert rep.proportions.tolist() == [1.0, 0.0, 0.0, 0.0, 0.0]
    assert np.all(rep.delta == 0)


def test_documented_none_shares_delta():
    v = vocab_of(2)
    train = LabelDistribution([0.7425, 0.2575], v)
    test = LabelDistribution([0.8567, 0.1433], v)
    assert abs(shift_report(train, test).delta_of("NONE") - 0.1142) <= 1e-12


def test_two_label_toy_binning():
    v = vocab_of(2)
    test = [Instance(str(i), [], (v.labels[i % 2],)) for i in range(10)]
    rep = shift_report(LabelDistribution([0.7, 0.3], v), test)
    np.testing.assert_allclose(rep.delta, [0.2, 0.2], rtol=0, atol=1e-15)
    assert rep.proportions.tolist() == [0.0, 0.0, 0.0, 1.0, 0.0]


def test_bin_edges_are_left_closed_first_then_right_closed():
    assert bin_index([0.0, 0.01, 0.010001, 0.05, 0.1, 0.5, 0.5001, 1.0]).tolist() == [0, 0, 1, 1, 2, 3, 4, 4]


@given(st.integers(2, 10), st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1))
def test_report_proportions_sum_to_one(K, a, b):
    v = vocab_of(K)
    rep = shift_report(random_distribution(v, a), random_distribution(v, b))
    assert abs(rep.proportions.sum() - 1.0) <= 1e-12
    assert np.all((rep.delta >= 0) & (rep.delta <= 1))


@given(st.floats(0.0, 0.1))
def test_moving_mass_to_test_none_grows_delta_by_that_amount(m):
    v = vocab_of(3)
    train = LabelDistribution([0.5, 0.3, 0.2], v)
    base = shift_report(train, LabelDistribution([0.6, 0.25, 0.15], v)).delta_of("NONE")
    moved = shift_report(train, LabelDistribution([0.6 + m, 0.25 - m, 0.15], v)).delta_of("NONE")
    assert moved - base == pytest.approx(m, abs=1e-12)


def test_report_serialisation():
    v = vocab_of(2)
    rep = shift_report(LabelDistribution([0.7, 0.3], v), LabelDistribution([0.5, 0.5], v))
    assert rep.to_dict()["edges"] == list(DEFAULT_BIN_EDGES)
    lines = rep.bins_csv().splitlines()
    assert lines[0] == "bin_low,bin_high,proportion" and len(lines) == 6


# -- generator -----------------------------------------------------------------


def test_one_hot_prior_labels_everything():
    spec = SynthGenSpec.default(seed=1)
    prior = LabelDistribution(np.eye(spec.K)[3], spec.vocab)
    data = synth_generate(spec, prior, 200, seed=2)
    assert {t.label for t in data} == {spec.labels[3]}
    assert all(len(t.features) == spec.feats_per_instance for t in data)


def test_generator_is_bit_reproducible():
    spec = SynthGenSpec.default(seed=4)
    a = synth_generate(spec, spec.test_prior(), 300, seed=9)
    b = synth_generate(spec, spec.test_prior(), 300, seed=9)
    assert [t.to_dict() for t in a] == [t.to_dict() for t in b]
    assert SynthGenSpec.default(seed=4).class_feature_dists.tolist() == spec.class_feature_dists.tolist()


def test_generator_rejects_foreign_prior():
    spec = SynthGenSpec.default()
    with pytest.raises(ValueError):
        synth_generate(spec, LabelDistribution([0.5, 0.5], vocab_of(2)), 10)


def test_test_prior_is_none_heavy():
    spec = SynthGenSpec.default()
    p = spec.test_prior().probs
    assert p[0] == pytest.approx(0.6, abs=1e-15)
    assert np.all(np.diff(p[1:]) < 0)


def test_disjoint_supports_are_learnable():
    K, per = 3, 10
    dists = np.zeros((K, K * per))
    for k in range(K):
        dists[k, k * per : (k + 1) * per] = 1.0 / per
    spec = SynthGenSpec(("NONE", "A", "B"), dists, feats_per_instance=3)
    prior = LabelDistribution([0.5, 0.25, 0.25], spec.vocab)
    train = synth_generate(spec, prior, 600, seed=0)
    test = synth_generate(spec, LabelDistribution([0.2, 0.4, 0.4], spec.vocab), 500, seed=1)
    model = SoftmaxClassifier(max_epochs=20, batch_size=8).fit(train, [t.labels for t in train])
    acc = np.mean(model.predict(test) == np.array([t.label for t in test], dtype=object))
    assert acc >= 0.99


def test_class_conditionals_shared_across_domains():
    spec = SynthGenSpec.default(seed=3)
    a = synth_generate_counts(spec, [5000] * spec.K, seed=1)
    b = synth_generate_counts(spec, [9000, 5000, 6000, 5000, 7000, 5000, 5000], seed=2)

    def freqs(data):
        out = np.zeros((spec.K, spec.vocab_size))
        for t in data:
            k = spec.vocab.index(t.label)
            for f in t.features:
                out[k, int(f[1:])] += 1
        return out / out.sum(axis=1, keepdims=True)

    tv = 0.5 * np.abs(freqs(a) - freqs(b)).sum(axis=1)
    assert np.all(tv <= 0.05)


# -- suites ------------------------------------------------------------------


def test_generator_suite_sizes_and_step_zero():
    spec = SynthGenSpec.default(seed=0)
    s0 = spec.test_prior()
    s5 = random_distribution(spec.vocab, 0)
    suite = build_shift_suite(spec, s0, s5, 1000, seed=3, n_test=700)
    assert len(suite.train_sets) == 6
    assert all(abs(len(t) - 1000) <= 3 for t in suite.train_sets)
    assert len(suite.test_set) == 700
    assert np.all(np.abs(counts_of(suite.train_sets[0], spec.vocab) - 1000 * s0.probs) <= 1.0)
    for i, train in enumerate(suite.train_sets):
        np.testing.assert_allclose(suite.step_priors[i].probs, interpolate_distribution(s0, s5, i).probs)
        assert np.all(np.abs(counts_of(train, spec.vocab) - 1000 * suite.step_priors[i].probs) <= 1.0)


def test_suite_shift_grows_along_path_when_start_matches_test():
    spec = SynthGenSpec.default()
    test = spec.test_prior()
    s5 = random_distribution(spec.vocab, 1)
    deltas = [shift_report(interpolate_distribution(test, s5, i), test).delta for i in range(6)]
    for a, b in zip(deltas, deltas[1:]):
        assert np.all(b >= a - 1e-15)


def test_dataset_suite_keeps_test_disjoint():
    v = vocab_of(3)
    data = pool_for(v, [400, 300, 300])
    test_prior = LabelDistribution([0.6, 0.2, 0.2], v)
    suite = build_shift_suite(
        data, LabelDistribution([0.5, 0.3, 0.2], v), LabelDistribution([0.2, 0.3, 0.5], v), 200, 0, test_prior, 100
    )
    test_ids = {t.id for t in suite.test_set}
    assert len(test_ids) == 100
    for train in suite.train_sets:
        assert abs(len(train) - 200) <= 3
        assert not test_ids & {t.id for t in train}
    with pytest.raises(ValueError):
        build_shift_suite(data, test_prior, test_prior, 100)
