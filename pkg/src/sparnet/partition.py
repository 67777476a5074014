"""Entropy-based split of a batch into reliable and unreliable samples."""

import math
from dataclasses import dataclass

import numpy as np

from .numerics import entropy


def default_threshold(n_classes):
    """``0.4 * ln C``."""
    if n_classes < 2:
        raise ValueError(f"need at least two classes, got {n_classes}")
    return 0.4 * math.log(n_classes)


@dataclass(frozen=True)
class SamplePartition:
    reliable_idx: np.ndarray
    unreliable_idx: np.ndarray
    entropies: np.ndarray
    threshold: float

    @property
    def n_reliable(self):
        return len(self.reliable_idx)

    @property
    def n_unreliable(self):
        return len(self.unreliable_idx)

    def reliable_mask(self):
        return self.entropies < self.threshold


def partition_by_entropy(probs, threshold):
    """Samples with entropy strictly below ``threshold`` are reliable; the rest are not."""
    if threshold < 0:
        raise ValueError(f"threshold must be nonnegative, got {threshold}")
    probs = np.asarray(probs, dtype=float)
    if probs.size == 0:
        empty = np.zeros(0, dtype=int)
        return SamplePartition(empty, empty.copy(), np.zeros(0), float(threshold))
    ent = entropy(np.atleast_2d(probs))
    reliable = ent < threshold
    return SamplePartition(
        np.flatnonzero(reliable), np.flatnonzero(~reliable), ent, float(threshold)
    )
