"""Input validation helpers shared by the estimators and pure functions."""

from __future__ import annotations

from collections.abc import Iterable, Sequence

import numpy as np


class DataError(ValueError):
    """Malformed or insufficient data (as opposed to a misused API)."""


def check_distribution(p, *, name="distribution", strictly_positive=False, atol=1e-9):
    """Return ``p`` as a float vector after checking it is a probability vector."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-d vector, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError(f"{name} has non-finite entries")
    if np.any(p < 0):
        raise ValueError(f"{name} has negative entries")
    if abs(p.sum() - 1.0) > atol:
        raise ValueError(f"{name} sums to {p.sum():.12g}, expected 1")
    if strictly_positive and np.any(p <= 0):
        bad = int(np.flatnonzero(p <= 0)[0])
        raise ValueError(f"{name} has a zero entry at index {bad}; log-prior is undefined")
    return p


def check_fraction(value, name, *, low=0.0, high=1.0, include_low=True, include_high=False):
    value = float(value)
    ok_low = value >= low if include_low else value > low
    ok_high = value <= high if include_high else value < high
    if not (ok_low and ok_high):
        lo = "[" if include_low else "("
        hi = "]" if include_high else ")"
        raise ValueError(f"{name}={value} outside {lo}{low}, {high}{hi}")
    return value


def as_feature_lists(X) -> list[list[str]]:
    """Coerce ``X`` into a list of feature-id lists.

    Accepts a sequence of feature sequences or a sequence of objects with a
    ``features`` attribute (e.g. :class:`~shiftedlabel.core.Instance`).
    A bare string is rejected since it would be read as a bag of characters.
    """
    if isinstance(X, (str, bytes)):
        raise TypeError("X must be a sequence of feature lists, not a string")
    out = []
    for i, row in enumerate(X):
        feats = getattr(row, "features", row)
        if isinstance(feats, (str, bytes)):
            raise TypeError(f"row {i}: expected a list of feature ids, got a string")
        out.append([str(f) for f in feats])
    return out


def as_label_sets(y) -> list[tuple[str, ...]]:
    """Coerce ``y`` into label tuples; single labels become 1-tuples."""
    out = []
    for i, labels in enumerate(y):
        labels = getattr(labels, "labels", labels)
        if isinstance(labels, str):
            labels = (labels,)
        elif isinstance(labels, Iterable):
            labels = tuple(str(lab) for lab in labels)
        else:
            labels = (str(labels),)
        if not labels:
            raise DataError(f"row {i}: empty label set")
        out.append(labels)
    return out


def check_consistent_length(*arrays: Sequence):
    lengths = {len(a) for a in arrays if a is not None}
    if len(lengths) > 1:
        raise ValueError(f"inconsistent numbers of samples: {sorted(lengths)}")
