import sys

import numpy as np
import pytest

from shiftedlabel import Instance, SoftmaxClassifier


def random_model(kind, n_labels, n_features, rng, dim=4, scale=1.0):
    """A classifier with random parameters over features f0..f{n_features-1}."""
    labels = ["NONE"] + [f"R{i}" for i in range(1, n_labels)]
    model = SoftmaxClassifier(kind=kind, dim=dim, labels=labels)
    model.initialize([[f"f{j}" for j in range(n_features)]], ["NONE"])
    K = n_labels
    if kind == "sparse-linear":
        model.coef_ = rng.normal(0, scale, (K, n_features))
    else:
        model.embeddings_ = rng.normal(0, scale, (n_features + 1, dim))
        model.coef_ = rng.normal(0, scale, (K, dim))
    model.intercept_ = rng.normal(0, scale, K)
    return model


def random_instances(model, n, rng, max_feats=5):
    F = model.n_features_
    out = []
    for i in range(n):
        k = int(rng.integers(0, max_feats + 1))
        feats = [f"f{j}" for j in rng.integers(0, F, size=k)]
        if rng.random() < 0.1:
            feats.append("unseen")
        label = model.vocab_.labels[int(rng.integers(len(model.vocab_)))]
        out.append(Instance(str(i), feats, (label,)))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    lines = getattr(acceptance, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
