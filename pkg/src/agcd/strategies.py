"""Sample-selection strategies for the active discovery rounds.

Each strategy maps a :class:`StrategyContext` (frozen model scores over the
pool) to exactly ``budget`` unlabeled indices.  Scores come from the live
model; the EMA model is reserved for label mapping.  All tie-breaks prefer the
lowest sample index so selections are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assignment import LabelMapping, mapping_diff
from .data import rng_from
from .kmeans import greedy_d2_seeds, kmeans_pp_seeds, lloyd, pairwise_sq_dists

__all__ = [
    "StrategyContext",
    "UncertaintyScores",
    "uncertainty_scores",
    "select_random",
    "select_entropy",
    "select_leastconf",
    "select_margin",
    "select_kmeans",
    "select_coreset",
    "select_badge",
    "select_adaptive_novel",
    "update_transfer",
    "STRATEGIES",
]


@dataclass(frozen=True)
class UncertaintyScores:
    """Per-sample confidence summaries of a posterior matrix."""

    msp: np.ndarray
    margin: np.ndarray
    entropy: np.ndarray


def uncertainty_scores(posteriors: np.ndarray) -> UncertaintyScores:
    """MSP, top-two margin and Shannon entropy (nats) per posterior row."""
    p = np.asarray(posteriors, dtype=np.float64)
    part = np.partition(p, -2, axis=1)
    top1 = part[:, -1]
    top2 = part[:, -2]
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log(p), 0.0)
    return UncertaintyScores(msp=top1, margin=top1 - top2, entropy=-plogp.sum(axis=1))


@dataclass(frozen=True)
class StrategyContext:
    """Pool state plus frozen per-sample model outputs used for selection.

    ``features`` are adapted (unit-norm) embeddings for every dataset index;
    ``posteriors``/``predictions`` are aligned the same way.  Strategies only
    read rows belonging to ``labeled``/``unlabeled``.
    """

    features: np.ndarray
    posteriors: np.ndarray
    labeled: np.ndarray
    unlabeled: np.ndarray
    budget: int
    num_old: int
    num_new: int
    seed: int
    transfer: bool = False
    uncertainty_metric: str = "margin"
    predictions: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        object.__setattr__(self, "labeled", np.sort(np.asarray(self.labeled, dtype=np.int64)))
        object.__setattr__(self, "unlabeled", np.sort(np.asarray(self.unlabeled, dtype=np.int64)))
        if self.predictions is None:
            object.__setattr__(self, "predictions", np.argmax(self.posteriors, axis=1))
        if self.budget < 0:
            raise ValueError("budget must be >= 0")
        if self.budget > self.unlabeled.size:
            raise ValueError("budget exceeds pool")


def _top_by_score(candidates: np.ndarray, scores: np.ndarray, b: int) -> np.ndarray:
    """Indices of the b highest-scoring candidates, lowest index on ties."""
    if b == 0:
        return np.empty(0, dtype=np.int64)
    order = np.lexsort((candidates, -scores))
    return candidates[order[:b]]


def select_random(ctx: StrategyContext) -> np.ndarray:
    rng = rng_from(ctx.seed, "select-random")
    picks = rng.choice(ctx.unlabeled, size=ctx.budget, replace=False)
    return np.sort(picks)


def select_entropy(ctx: StrategyContext) -> np.ndarray:
    scores = uncertainty_scores(ctx.posteriors[ctx.unlabeled])
    return np.sort(_top_by_score(ctx.unlabeled, scores.entropy, ctx.budget))


def select_leastconf(ctx: StrategyContext) -> np.ndarray:
    scores = uncertainty_scores(ctx.posteriors[ctx.unlabeled])
    return np.sort(_top_by_score(ctx.unlabeled, -scores.msp, ctx.budget))


def select_margin(ctx: StrategyContext) -> np.ndarray:
    scores = uncertainty_scores(ctx.posteriors[ctx.unlabeled])
    return np.sort(_top_by_score(ctx.unlabeled, -scores.margin, ctx.budget))


def select_kmeans(ctx: StrategyContext) -> np.ndarray:
    """Lloyd's k-means with k = budget; pick the sample nearest each centroid.

    Seeding is the deterministic argmax-D^2 k-means++ variant so the selected
    feature vectors are invariant to duplicating samples.
    """
    b = ctx.budget
    if b == 0:
        return np.empty(0, dtype=np.int64)
    x = ctx.features[ctx.unlabeled].astype(np.float64)
    if np.unique(x, axis=0).shape[0] < b:
        raise ValueError("fewer distinct points than budget")
    centroids, _, _ = lloyd(x, b, init_indices=greedy_d2_seeds(x, b))
    d2 = pairwise_sq_dists(centroids, x)
    taken = np.zeros(x.shape[0], dtype=bool)
    picks = []
    for c in range(b):
        order = np.argsort(d2[c], kind="stable")
        for j in order:
            if not taken[j]:
                taken[j] = True
                picks.append(ctx.unlabeled[j])
                break
    return np.sort(np.asarray(picks, dtype=np.int64))


def select_coreset(ctx: StrategyContext) -> np.ndarray:
    """Greedy k-center: repeatedly take the point farthest from all centers."""
    if ctx.labeled.size == 0:
        raise ValueError("coreset needs a nonempty labeled pool")
    if ctx.budget == 0:
        return np.empty(0, dtype=np.int64)
    pool = ctx.features[ctx.unlabeled].astype(np.float64)
    centers = ctx.features[ctx.labeled].astype(np.float64)
    min_d2 = pairwise_sq_dists(pool, centers).min(axis=1)
    picks = []
    for _ in range(ctx.budget):
        best = int(np.argmax(min_d2))  # argmax returns the lowest index on ties
        picks.append(ctx.unlabeled[best])
        d2_new = pairwise_sq_dists(pool, pool[[best]])[:, 0]
        min_d2 = np.minimum(min_d2, d2_new)
        min_d2[best] = -1.0
    return np.sort(np.asarray(picks, dtype=np.int64))


def select_badge(ctx: StrategyContext) -> np.ndarray:
    """k-means++ seeding over pseudo-label gradient embeddings.

    The embedding of sample x is (p - onehot(argmax p)) outer h, the gradient
    of a cross-entropy on its own pseudo-label with respect to the class
    scores, flattened.  The first seed is pinned to the max-norm embedding so
    the procedure is deterministic given the context seed.
    """
    if ctx.budget == 0:
        return np.empty(0, dtype=np.int64)
    p = ctx.posteriors[ctx.unlabeled]
    h = ctx.features[ctx.unlabeled].astype(np.float64)
    yhat = ctx.predictions[ctx.unlabeled]
    delta = p.copy()
    delta[np.arange(delta.shape[0]), yhat] -= 1.0
    g = (delta[:, :, None] * h[:, None, :]).reshape(delta.shape[0], -1)
    rng = rng_from(ctx.seed, "select-badge")
    seeds = kmeans_pp_seeds(g, ctx.budget, rng, first="maxnorm")
    return np.sort(ctx.unlabeled[seeds])


def _informativeness(scores: UncertaintyScores, metric: str) -> np.ndarray:
    """Signed scores where larger means more uncertain/informative."""
    if metric == "margin":
        return -scores.margin
    if metric == "msp":
        return -scores.msp
    if metric == "entropy":
        return scores.entropy
    raise ValueError(f"unknown uncertainty metric {metric!r}")


def select_adaptive_novel(ctx: StrategyContext) -> np.ndarray:
    """Class-wise sampling of predicted-new samples with phase-dependent margin.

    Confident phase (transfer False) wants the most certain predicted-new
    samples per class; informative phase (transfer True) the most uncertain.
    Quotas are floor(budget / num_new) per predicted-new class; leftover and
    shortfall are backfilled globally from remaining predicted-new samples,
    then from predicted-old samples, by the same criterion.
    """
    if ctx.num_new < 1:
        raise ValueError("adaptive-novel needs at least one new class")
    b = ctx.budget
    if b == 0:
        return np.empty(0, dtype=np.int64)

    scores = uncertainty_scores(ctx.posteriors[ctx.unlabeled])
    info = _informativeness(scores, ctx.uncertainty_metric)
    rank = info if ctx.transfer else -info
    preds = ctx.predictions[ctx.unlabeled]

    quota = b // ctx.num_new
    chosen_mask = np.zeros(ctx.unlabeled.size, dtype=bool)
    for cls in range(ctx.num_old, ctx.num_old + ctx.num_new):
        members = np.flatnonzero(preds == cls)
        if members.size == 0 or quota == 0:
            continue
        top = _top_by_score(members, rank[members], min(quota, members.size))
        chosen_mask[top] = True

    short = b - int(chosen_mask.sum())
    if short > 0:
        new_rest = np.flatnonzero((preds >= ctx.num_old) & ~chosen_mask)
        take = _top_by_score(new_rest, rank[new_rest], min(short, new_rest.size))
        chosen_mask[take] = True
        short = b - int(chosen_mask.sum())
    if short > 0:
        old_rest = np.flatnonzero((preds < ctx.num_old) & ~chosen_mask)
        take = _top_by_score(old_rest, rank[old_rest], min(short, old_rest.size))
        chosen_mask[take] = True

    return np.sort(ctx.unlabeled[chosen_mask])


def update_transfer(transfer: bool, m_init: LabelMapping, m_final: LabelMapping, delta: float) -> bool:
    """Latch to informative sampling once the round's mapping diff falls below delta."""
    return bool(transfer or mapping_diff(m_init, m_final) < delta)


STRATEGIES = {
    "random": select_random,
    "entropy": select_entropy,
    "leastconf": select_leastconf,
    "margin": select_margin,
    "kmeans": select_kmeans,
    "coreset": select_coreset,
    "badge": select_badge,
    "adaptive-novel": select_adaptive_novel,
}
