"""Class-count estimation by maximum labeled clustering accuracy.

Sweeps candidate totals, clusters all features with k-means, and keeps the
candidate whose clusters best match the labeled subset under an optimal
assignment (ties go to the smallest candidate).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assignment import hungarian
from .data import rng_from
from .kmeans import lloyd

__all__ = ["KEstimate", "estimate_k"]


@dataclass(frozen=True)
class KEstimate:
    candidates: np.ndarray
    labeled_acc: np.ndarray
    chosen: int

    def to_dict(self) -> dict:
        return {
            "candidates": self.candidates.tolist(),
            "labeled_acc": self.labeled_acc.tolist(),
            "chosen": int(self.chosen),
        }


def _labeled_accuracy(assignments, labels, k_pred: int, k_old: int) -> float:
    """Hungarian match of cluster ids against labeled classes, zero-padded square."""
    side = max(k_pred, k_old)
    counts = np.zeros((side, side), dtype=np.float64)
    np.add.at(counts, (np.asarray(assignments), np.asarray(labels)), 1)
    perm = hungarian(counts)
    matched = counts[np.arange(side), perm].sum()
    return float(matched / len(labels))


def estimate_k(
    features: np.ndarray,
    labeled_idx: np.ndarray,
    labels: np.ndarray,
    k_min: int,
    k_max: int,
    num_old: int,
    seed: int = 0,
    restarts: int = 3,
) -> KEstimate:
    """Max-ACC estimate of the total class count.

    ``features`` covers the full training pool; ``labeled_idx`` points at the
    labeled rows and ``labels`` gives their ground truth (old classes).  Each
    candidate k in [k_min, k_max] is scored by clustering all features and
    measuring assignment accuracy on the labeled subset only.
    """
    if k_min > k_max:
        raise ValueError("invalid range: k_min > k_max")
    if k_min < max(num_old, 1):
        raise ValueError("candidate range must start at or above the old-class count")
    labeled_idx = np.asarray(labeled_idx, dtype=np.int64)
    if labeled_idx.size == 0:
        raise ValueError("labeled subset is empty")

    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)[labeled_idx]
    candidates = np.arange(k_min, k_max + 1)
    accs = np.empty(candidates.size)
    for i, k in enumerate(candidates):
        rng = rng_from(seed, "estimate-k", int(k))
        _, assign, _ = lloyd(x, int(k), rng, n_init=restarts)
        accs[i] = _labeled_accuracy(assign[labeled_idx], y, int(k), num_old)

    best = int(np.argmax(accs))  # first (smallest k) wins ties
    return KEstimate(candidates=candidates, labeled_acc=accs, chosen=int(candidates[best]))
