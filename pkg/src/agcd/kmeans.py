"""Deterministic Lloyd's k-means with k-means++ seeding.

Kept dependency-free so selection strategies and class-count estimation share
one reproducible clustering primitive.  All tie-breaks favor the lowest index.
"""

from __future__ import annotations

import numpy as np

__all__ = ["kmeans_pp_seeds", "greedy_d2_seeds", "lloyd", "pairwise_sq_dists"]


def pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between rows of ``a`` and rows of ``b``."""
    aa = np.sum(a * a, axis=1)[:, None]
    bb = np.sum(b * b, axis=1)[None, :]
    d = aa + bb - 2.0 * (a @ b.T)
    np.maximum(d, 0.0, out=d)
    return d


def kmeans_pp_seeds(
    x: np.ndarray,
    k: int,
    rng: np.random.Generator,
    first: str = "random",
) -> np.ndarray:
    """k-means++ seeding: D^2-weighted sampling of ``k`` row indices.

    ``first`` selects the initial seed: "random" draws it uniformly, "maxnorm"
    fixes it to the row with the largest norm (lowest index on ties), which
    makes gradient-embedding selection fully deterministic.  Later seeds with
    all-zero D^2 mass (duplicate points) fall back to the lowest unchosen index.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")

    if first == "maxnorm":
        norms = np.linalg.norm(x, axis=1)
        seed0 = int(np.argmax(norms))
    elif first == "random":
        seed0 = int(rng.integers(n))
    else:
        raise ValueError(f"unknown first-seed rule {first!r}")

    seeds = [seed0]
    chosen = np.zeros(n, dtype=bool)
    chosen[seed0] = True
    min_d2 = pairwise_sq_dists(x, x[[seed0]])[:, 0]
    for _ in range(k - 1):
        min_d2[chosen] = 0.0
        total = min_d2.sum()
        if total <= 0.0:
            nxt = int(np.flatnonzero(~chosen)[0])
        else:
            r = rng.random() * total
            nxt = int(np.searchsorted(np.cumsum(min_d2), r, side="right"))
            nxt = min(nxt, n - 1)
            if chosen[nxt]:  # cumsum plateau landed on a chosen point
                nxt = int(np.flatnonzero(~chosen)[0])
        seeds.append(nxt)
        chosen[nxt] = True
        min_d2 = np.minimum(min_d2, pairwise_sq_dists(x, x[[nxt]])[:, 0])
    return np.asarray(seeds, dtype=np.int64)


def greedy_d2_seeds(x: np.ndarray, k: int) -> np.ndarray:
    """Deterministic k-means++ variant: argmax-D^2 instead of D^2 sampling.

    The first seed is the point nearest the global mean; every later seed is
    the point farthest from the chosen set (lowest index on ties).  Depends
    only on point locations, so duplicating samples cannot change the result.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    d2_mean = pairwise_sq_dists(x, x.mean(axis=0, keepdims=True))[:, 0]
    seeds = [int(np.argmin(d2_mean))]
    min_d2 = pairwise_sq_dists(x, x[seeds[:1]])[:, 0]
    for _ in range(k - 1):
        nxt = int(np.argmax(min_d2))
        seeds.append(nxt)
        min_d2 = np.minimum(min_d2, pairwise_sq_dists(x, x[[nxt]])[:, 0])
    return np.asarray(seeds, dtype=np.int64)


def lloyd(
    x: np.ndarray,
    k: int,
    rng: np.random.Generator | None = None,
    max_iter: int = 100,
    tol: float = 1e-6,
    n_init: int = 1,
    init_indices: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Lloyd's algorithm; returns (centroids, assignments, inertia).

    Seeds come from ``init_indices`` when given, otherwise from ``n_init``
    k-means++ restarts (lowest inertia kept, first winner on ties).  Iteration
    stops when the relative inertia improvement drops below ``tol``.  Empty
    clusters keep their previous centroid.
    """
    x = np.asarray(x, dtype=np.float64)
    best: tuple[np.ndarray, np.ndarray, float] | None = None
    if init_indices is not None:
        n_init = 1
    for _ in range(n_init):
        if init_indices is not None:
            seeds = np.asarray(init_indices, dtype=np.int64)
        else:
            if rng is None:
                raise ValueError("rng required for k-means++ seeding")
            seeds = kmeans_pp_seeds(x, k, rng)
        centroids = x[seeds].copy()
        prev_inertia = np.inf
        for _ in range(max_iter):
            d2 = pairwise_sq_dists(x, centroids)
            assign = np.argmin(d2, axis=1)
            inertia = float(d2[np.arange(x.shape[0]), assign].sum())
            for c in range(k):
                members = x[assign == c]
                if members.shape[0]:
                    centroids[c] = members.mean(axis=0)
            if prev_inertia - inertia <= tol * max(prev_inertia, 1e-300):
                break
            prev_inertia = inertia
        d2 = pairwise_sq_dists(x, centroids)
        assign = np.argmin(d2, axis=1)
        inertia = float(d2[np.arange(x.shape[0]), assign].sum())
        if best is None or inertia < best[2]:
            best = (centroids, assign, inertia)
    assert best is not None
    return best
