"""Optimal class assignment: Hungarian matching, clustering accuracy and label mappings.

Cluster indices produced by a discovery model are arbitrary, so both evaluation
and supervision need a bijection between ground-truth class ids and classifier
ids.  Everything in this module is a pure function over integer label arrays
and square reward matrices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "hungarian",
    "cluster_accuracy",
    "LabelMapping",
    "compute_mapping",
    "mapping_diff",
    "contingency",
]


def hungarian(reward: np.ndarray) -> np.ndarray:
    """Return the permutation ``sigma`` maximizing ``sum_i reward[i, sigma[i]]``.

    Classic O(K^3) potentials + shortest augmenting path formulation, run on the
    negated matrix.  Ties are resolved by lowest column index in the scan order,
    so results are reproducible bit-for-bit.
    """
    reward = np.asarray(reward, dtype=np.float64)
    if reward.ndim != 2 or reward.shape[0] != reward.shape[1]:
        raise ValueError(f"reward matrix must be square, got shape {reward.shape}")
    if not np.all(np.isfinite(reward)):
        raise ValueError("reward matrix must be finite")

    n = reward.shape[0]
    cost = -reward
    inf = np.inf

    # 1-based arrays with a virtual column 0, as in the standard formulation.
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    col_to_row = np.zeros(n + 1, dtype=np.int64)  # 0 means unassigned
    way = np.zeros(n + 1, dtype=np.int64)

    for i in range(1, n + 1):
        col_to_row[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = col_to_row[j0]
            delta = inf
            j1 = -1
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[col_to_row[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if col_to_row[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            col_to_row[j0] = col_to_row[j1]
            j0 = j1

    perm = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        perm[col_to_row[j] - 1] = j - 1
    return perm


def contingency(y_true: np.ndarray, y_pred: np.ndarray, num_classes: int) -> np.ndarray:
    """Count matrix C with C[t, p] = #{i : y_true[i] == t and y_pred[i] == p}."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("label arrays must have equal length")
    if y_true.size and (y_true.min() < 0 or y_true.max() >= num_classes):
        raise ValueError("y_true entries out of range")
    if y_pred.size and (y_pred.min() < 0 or y_pred.max() >= num_classes):
        raise ValueError("y_pred entries out of range")
    mat = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(mat, (y_true, y_pred), 1)
    return mat


def cluster_accuracy(
    y_true: np.ndarray, y_pred: np.ndarray, num_classes: int
) -> tuple[float, np.ndarray]:
    """Permutation-invariant accuracy over all ``num_classes`` classes.

    Returns ``(acc, perm)`` where ``perm`` maps predicted index -> ground-truth
    index and ``acc = mean(perm[y_pred] == y_true)`` is the Hungarian optimum.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.size == 0:
        raise ValueError("empty input")
    # Reward for matching predicted class p to true class t is the pair count.
    reward = contingency(y_true, y_pred, num_classes).T.astype(np.float64)
    perm = hungarian(reward)
    matched = reward[np.arange(num_classes), perm].sum()
    return float(matched / y_true.size), perm


@dataclass(frozen=True)
class LabelMapping:
    """Bijection sending ground-truth class id g to classifier id ``map[g]``."""

    map: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.map, dtype=np.int64)
        object.__setattr__(self, "map", arr)
        k = arr.shape[0]
        if sorted(arr.tolist()) != list(range(k)):
            raise ValueError("mapping is not a bijection on {0..K-1}")

    @property
    def num_classes(self) -> int:
        return int(self.map.shape[0])

    def apply(self, labels: np.ndarray) -> np.ndarray:
        """Elementwise translation of ground-truth labels into classifier space."""
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError("label out of mapping range")
        return self.map[labels]

    def inverse(self) -> "LabelMapping":
        inv = np.empty_like(self.map)
        inv[self.map] = np.arange(self.num_classes)
        return LabelMapping(inv)

    @classmethod
    def identity(cls, num_classes: int) -> "LabelMapping":
        return cls(np.arange(num_classes))

    def to_json(self) -> str:
        return json.dumps(self.map.tolist())

    @classmethod
    def from_json(cls, text: str) -> "LabelMapping":
        return cls(np.asarray(json.loads(text), dtype=np.int64))

    def __eq__(self, other) -> bool:
        return isinstance(other, LabelMapping) and np.array_equal(self.map, other.map)


def compute_mapping(
    y_true: np.ndarray, y_pred: np.ndarray, num_classes: int
) -> LabelMapping:
    """Hungarian-optimal mapping from ground-truth ids to predicted ids.

    ``y_pred`` is expected to be the EMA model's argmax predictions on the raw
    features of the currently labeled pool.  Classes absent from ``y_true``
    correspond to all-zero reward rows and receive a deterministic completion
    from the matching.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    if y_true.size == 0:
        raise ValueError("no labeled data for mapping")
    reward = contingency(y_true, y_pred, num_classes).astype(np.float64)
    return LabelMapping(hungarian(reward))


def mapping_diff(m_init: LabelMapping, m_final: LabelMapping) -> float:
    """Fraction of classes whose mapped index changed between two mappings."""
    if m_init.num_classes != m_final.num_classes:
        raise ValueError("mappings cover different class counts")
    k = m_init.num_classes
    return float(np.count_nonzero(m_init.map != m_final.map) / k)
