"""Batch construction from a smoothed class distribution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ClassPMF:
    """Per-class sampling probabilities from a lambda-smoothed mixture."""

    probs: tuple[float, ...]
    lam: float
    class_counts: tuple[int, ...]


@dataclass(frozen=True)
class ClassIndex:
    """Per-class row indices into the training matrix (disjoint cover)."""

    groups: tuple[tuple[int, ...], ...]

    @property
    def num_classes(self) -> int:
        return len(self.groups)


def build_class_index(labels, num_classes: int) -> ClassIndex:
    y = np.asarray(labels)
    groups = tuple(tuple(int(i) for i in np.flatnonzero(y == c)) for c in range(num_classes))
    covered = sum(len(g) for g in groups)
    if covered != y.size:
        raise ValueError("labels outside [0, num_classes) present")
    return ClassIndex(groups=groups)


def class_pmf(class_counts, lam: float) -> ClassPMF:
    """probs[c] = lam * count_c / N + (1 - lam) / K.

    lam=1 gives the empirical class proportions, lam=0 the uniform
    distribution; the map is affine in lam coordinatewise.
    """
    counts = np.asarray(class_counts, dtype=np.int64)
    if counts.size < 2:
        raise ValueError("need at least 2 classes")
    if (counts < 1).any():
        raise ValueError("every class needs at least one row")
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    k = counts.size
    probs = lam * counts / counts.sum() + (1.0 - lam) / k
    return ClassPMF(probs=tuple(float(p) for p in probs), lam=lam, class_counts=tuple(int(c) for c in counts))


def sample_batch(index: ClassIndex, pmf: ClassPMF, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw batch_size rows: class ~ pmf per slot, then a uniform row of that class."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    classes = rng.choice(index.num_classes, size=batch_size, p=np.asarray(pmf.probs))
    rows = np.empty(batch_size, dtype=np.int64)
    for slot, c in enumerate(classes):
        members = index.groups[c]
        rows[slot] = members[rng.integers(len(members))]
    return rows
