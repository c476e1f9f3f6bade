"""Evaluation metrics: accuracy breakdown, novelty of queried samples, confidence histograms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assignment import cluster_accuracy
from .strategies import uncertainty_scores

__all__ = [
    "NoveltyReport",
    "AccuracyReport",
    "novelty_metrics",
    "accuracy_breakdown",
    "confidence_histogram",
]


@dataclass(frozen=True)
class NoveltyReport:
    """Coverage/ratio/uniformity/information of new-class content in a query set."""

    nov_c: float
    nov_r: float
    nov_u: float
    nov_i: float
    n_select: int
    per_new_class: dict[int, int]

    def to_dict(self) -> dict:
        return {
            "nov_c": self.nov_c,
            "nov_r": self.nov_r,
            "nov_u": self.nov_u,
            "nov_i": self.nov_i,
        }


def novelty_metrics(queried_labels: np.ndarray, num_old: int, num_new: int) -> NoveltyReport:
    """Novelty metrics of a query batch from its ground-truth labels.

    The uniformity entropy is normalized over the *total* selection count, as
    defined; with old-class contamination the distribution mass is below one,
    so nov_u can reach 1 even when nov_r < 1.  For a single new class the
    log-normalizer vanishes; the convention is nov_u = 1 when every query hits
    that class and 0 otherwise.
    """
    labels = np.asarray(queried_labels, dtype=np.int64)
    n_select = labels.size
    if n_select == 0:
        raise ValueError("novelty metrics need at least one queried sample")
    if num_new < 1:
        raise ValueError("num_new must be >= 1")

    new_labels = labels[labels >= num_old]
    covered, counts = np.unique(new_labels, return_counts=True)
    per_class = {int(c): int(n) for c, n in zip(covered, counts)}

    nov_c = covered.size / num_new
    nov_r = new_labels.size / n_select
    if num_new == 1:
        nov_u = 1.0 if new_labels.size == n_select else 0.0
    else:
        frac = counts / n_select
        nov_u = float(-(frac * np.log(frac)).sum() / np.log(num_new))
    nov_i = nov_r * nov_u
    return NoveltyReport(
        nov_c=float(nov_c),
        nov_r=float(nov_r),
        nov_u=nov_u,
        nov_i=float(nov_i),
        n_select=int(n_select),
        per_new_class=per_class,
    )


@dataclass(frozen=True)
class AccuracyReport:
    """Hungarian accuracy over all classes plus old/new sub-accuracies.

    Old and new accuracies reuse the single global permutation; a field is
    None when the corresponding ground-truth subset is empty.
    """

    acc_all: float
    acc_old: float | None
    acc_new: float | None
    permutation: np.ndarray

    def to_dict(self) -> dict:
        return {"acc_all": self.acc_all, "acc_old": self.acc_old, "acc_new": self.acc_new}


def accuracy_breakdown(
    y_true: np.ndarray, y_pred: np.ndarray, num_classes: int, num_old: int
) -> AccuracyReport:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    acc_all, perm = cluster_accuracy(y_true, y_pred, num_classes)
    correct = perm[y_pred] == y_true

    old_mask = y_true < num_old
    new_mask = ~old_mask
    acc_old = float(correct[old_mask].mean()) if old_mask.any() else None
    acc_new = float(correct[new_mask].mean()) if new_mask.any() else None
    return AccuracyReport(acc_all=acc_all, acc_old=acc_old, acc_new=acc_new, permutation=perm)


_METRIC_RANGES = {
    "msp": (0.0, 1.0),
    "margin": (0.0, 1.0),
}


def confidence_histogram(
    posteriors: np.ndarray,
    y_true: np.ndarray,
    num_old: int,
    metric: str = "margin",
    bins: int = 20,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Normalized confidence histograms split by ground-truth old/new membership.

    ``metric`` is one of "neg_entropy", "margin", "msp"; bin edges are uniform
    over the metric's full range.  Returns (hist_old, hist_new, edges); an
    empty subset yields an all-zero histogram.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    p = np.asarray(posteriors, dtype=np.float64)
    y_true = np.asarray(y_true, dtype=np.int64)
    scores = uncertainty_scores(p)
    if metric == "neg_entropy":
        values = -scores.entropy
        lo, hi = -float(np.log(p.shape[1])), 0.0
    elif metric in _METRIC_RANGES:
        values = getattr(scores, metric)
        lo, hi = _METRIC_RANGES[metric]
    else:
        raise ValueError(f"unknown confidence metric {metric!r}")

    edges = np.linspace(lo, hi, bins + 1)
    hists = []
    for mask in (y_true < num_old, y_true >= num_old):
        counts, _ = np.histogram(values[mask], bins=edges)
        total = counts.sum()
        hists.append(counts / total if total else counts.astype(np.float64))
    return hists[0], hists[1], edges
