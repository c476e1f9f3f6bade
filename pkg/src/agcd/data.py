"""Datasets, pool bookkeeping, the labeling oracle and the on-disk feature format.

A dataset here is a fixed matrix of per-sample embeddings; images never enter
this package.  The first ``num_old`` class ids are the "old" (initially
labeled) classes, the remainder are "new".
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "FeatureDataset",
    "PoolState",
    "SplitConfig",
    "Oracle",
    "make_split",
    "query_oracle",
    "generate_synthetic",
    "save_feature_dir",
    "load_feature_dir",
    "DataError",
]

FORMAT_VERSION = 1


class DataError(ValueError):
    """Raised for invalid or corrupt dataset input."""


def rng_from(seed: int, *tags) -> np.random.Generator:
    """Deterministic generator for (seed, purpose) pairs.

    Tags are hashed into the seed sequence so independent consumers (split,
    views, shuffling, strategies) draw from disjoint, reproducible streams.
    """
    entropy = [int(seed) & 0xFFFFFFFF]
    for tag in tags:
        if isinstance(tag, str):
            entropy.extend(tag.encode("utf-8"))
        else:
            entropy.append(int(tag) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(entropy))


@dataclass(frozen=True)
class FeatureDataset:
    """Immutable embedding matrix with ground-truth labels and old/new partition."""

    features: np.ndarray  # (N, D) float32, rows L2-normalized by producers
    labels: np.ndarray  # (N,) int64 in [0, K)
    class_names: tuple[str, ...]
    num_old: int

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float32)
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if feats.ndim != 2 or feats.shape[0] == 0 or feats.shape[1] == 0:
            raise DataError("features must be a nonempty N x D matrix")
        if not np.all(np.isfinite(feats)):
            raise DataError("features contain NaN or Inf")
        if labels.shape != (feats.shape[0],):
            raise DataError("labels length does not match features")
        k = len(self.class_names)
        if k == 0:
            raise DataError("at least one class required")
        if labels.min() < 0 or labels.max() >= k:
            raise DataError("label outside [0, num_classes)")
        if not 0 <= self.num_old <= k:
            raise DataError("num_old out of range")
        feats.setflags(write=False)
        labels.setflags(write=False)

    @property
    def num_samples(self) -> int:
        return int(self.features.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def num_new(self) -> int:
        return self.num_classes - self.num_old

    def is_new_class(self, labels: np.ndarray) -> np.ndarray:
        return np.asarray(labels) >= self.num_old


@dataclass(frozen=True)
class PoolState:
    """Labeled / unlabeled index partition plus the per-round query history."""

    labeled: np.ndarray
    unlabeled: np.ndarray
    queried_per_round: tuple[np.ndarray, ...] = field(default_factory=tuple)

    def __post_init__(self):
        labeled = np.unique(np.asarray(self.labeled, dtype=np.int64))
        unlabeled = np.unique(np.asarray(self.unlabeled, dtype=np.int64))
        queried = tuple(
            np.unique(np.asarray(q, dtype=np.int64)) for q in self.queried_per_round
        )
        object.__setattr__(self, "labeled", labeled)
        object.__setattr__(self, "unlabeled", unlabeled)
        object.__setattr__(self, "queried_per_round", queried)
        if np.intersect1d(labeled, unlabeled).size:
            raise DataError("labeled and unlabeled pools overlap")
        seen: set[int] = set()
        for q in queried:
            qset = set(q.tolist())
            if qset & seen:
                raise DataError("queried rounds are not pairwise disjoint")
            seen |= qset
            if np.setdiff1d(q, labeled).size:
                raise DataError("queried index missing from labeled pool")

    @property
    def round(self) -> int:
        return len(self.queried_per_round)

    @property
    def all_indices(self) -> np.ndarray:
        return np.union1d(self.labeled, self.unlabeled)

    @property
    def queried_all(self) -> np.ndarray:
        if not self.queried_per_round:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.concatenate(self.queried_per_round))


@dataclass(frozen=True)
class SplitConfig:
    """Initial labeled/unlabeled split protocol."""

    old_class_count: int
    label_ratio: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.label_ratio <= 1:
            raise DataError("label_ratio must be in (0, 1]")
        if self.old_class_count < 1:
            raise DataError("old_class_count must be >= 1")


class Oracle:
    """Noiseless labeling oracle backed by the dataset's ground truth."""

    def __init__(self, dataset: FeatureDataset):
        self._labels = dataset.labels

    def query(self, indices: np.ndarray) -> np.ndarray:
        return self._labels[np.asarray(indices, dtype=np.int64)]


def make_split(
    dataset: FeatureDataset,
    cfg: SplitConfig,
    indices: np.ndarray | None = None,
) -> PoolState:
    """Initial pool: per old class, floor(label_ratio * n_c) labeled samples.

    ``indices`` restricts the split to a subset (the training side of a holdout);
    default is every sample.  New-class samples are never labeled at round 0.
    """
    if cfg.old_class_count > dataset.num_classes:
        raise DataError("old_class_count exceeds dataset class count")
    if indices is None:
        indices = np.arange(dataset.num_samples, dtype=np.int64)
    else:
        indices = np.unique(np.asarray(indices, dtype=np.int64))

    rng = rng_from(cfg.seed, "split")
    labels = dataset.labels[indices]
    labeled_parts = []
    for cls in range(cfg.old_class_count):
        members = indices[labels == cls]
        if members.size == 0:
            continue
        take = int(np.floor(cfg.label_ratio * members.size))
        if take == 0:
            raise DataError(f"class too small for ratio: class {cls} has {members.size} samples")
        picked = rng.choice(members, size=take, replace=False)
        labeled_parts.append(np.sort(picked))

    labeled = np.sort(np.concatenate(labeled_parts)) if labeled_parts else np.empty(0, np.int64)
    unlabeled = np.setdiff1d(indices, labeled)
    return PoolState(labeled=labeled, unlabeled=unlabeled)


def query_oracle(pool: PoolState, oracle: Oracle, picks: np.ndarray) -> PoolState:
    """Move ``picks`` from the unlabeled to the labeled pool as a new query round.

    The oracle is consulted for side effects only at call sites (labels live in
    the dataset); an empty pick set still advances the round counter.
    """
    picks = np.unique(np.asarray(picks, dtype=np.int64))
    if np.setdiff1d(picks, pool.unlabeled).size:
        raise DataError("invalid query index: pick not in unlabeled pool")
    oracle.query(picks)
    return PoolState(
        labeled=np.union1d(pool.labeled, picks),
        unlabeled=np.setdiff1d(pool.unlabeled, picks),
        queried_per_round=pool.queried_per_round + (picks,),
    )


def generate_synthetic(
    num_classes: int,
    per_class: int,
    dim: int,
    separation: float,
    seed: int,
    num_old: int | None = None,
) -> FeatureDataset:
    """Isotropic unit-variance Gaussian clusters on an orthogonal frame.

    Class means are ``separation`` times rows of a random orthogonal matrix, so
    they sit pairwise at distance ``separation * sqrt(2)``.  Samples are
    L2-normalized, mimicking frozen self-supervised embeddings.  When
    ``num_classes > dim`` the orthogonal construction is impossible and the
    means fall back to random unit vectors (with a warning).
    """
    if num_classes < 2 or per_class < 1 or dim < 2:
        raise DataError("need num_classes >= 2, per_class >= 1, dim >= 2")
    if separation < 0:
        raise DataError("separation must be >= 0")

    rng = rng_from(seed, "synthetic")
    if num_classes <= dim:
        gauss = rng.standard_normal((dim, dim))
        q, _ = np.linalg.qr(gauss)
        frame = q[:num_classes]
    else:
        warnings.warn(
            "num_classes > dim: falling back to random (non-orthogonal) unit means",
            stacklevel=2,
        )
        frame = rng.standard_normal((num_classes, dim))
        frame /= np.linalg.norm(frame, axis=1, keepdims=True)
    means = separation * frame

    labels = np.repeat(np.arange(num_classes, dtype=np.int64), per_class)
    noise = rng.standard_normal((num_classes * per_class, dim))
    feats = means[labels] + noise
    feats /= np.linalg.norm(feats, axis=1, keepdims=True)

    names = tuple(f"class_{i:03d}" for i in range(num_classes))
    return FeatureDataset(
        features=feats.astype(np.float32),
        labels=labels,
        class_names=names,
        num_old=num_classes if num_old is None else num_old,
    )


def save_feature_dir(dataset: FeatureDataset, path: str | Path) -> None:
    """Write the version-1 feature directory (meta.json, features.bin, labels.bin)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {
        "version": FORMAT_VERSION,
        "num_samples": dataset.num_samples,
        "dim": dataset.dim,
        "num_classes": dataset.num_classes,
        "num_old": dataset.num_old,
        "class_names": list(dataset.class_names),
        "dtype": "f32le",
    }
    (path / "meta.json").write_text(json.dumps(meta, sort_keys=True))
    feats = np.ascontiguousarray(dataset.features, dtype="<f4")
    (path / "features.bin").write_bytes(feats.tobytes())
    (path / "labels.bin").write_bytes(dataset.labels.astype("<u4").tobytes())


def load_feature_dir(path: str | Path) -> FeatureDataset:
    """Load and strictly validate a version-1 feature directory."""
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.is_file():
        raise DataError(f"missing meta.json in {path}")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"corrupt feature file: unreadable meta.json ({exc})") from exc

    for key in ("version", "num_samples", "dim", "num_classes", "num_old", "class_names", "dtype"):
        if key not in meta:
            raise DataError(f"corrupt feature file: meta.json missing '{key}'")
    if meta["version"] != FORMAT_VERSION:
        raise DataError(f"unsupported feature dir version {meta['version']}")
    if meta["dtype"] != "f32le":
        raise DataError(f"unsupported dtype {meta['dtype']}")

    n, d, k = int(meta["num_samples"]), int(meta["dim"]), int(meta["num_classes"])
    names = meta["class_names"]
    if len(names) != k:
        raise DataError("corrupt feature file: class_names length mismatch")

    try:
        feat_bytes = (path / "features.bin").read_bytes()
        label_bytes = (path / "labels.bin").read_bytes()
    except OSError as exc:
        raise DataError(f"corrupt feature file: {exc}") from exc
    if len(feat_bytes) != n * d * 4:
        raise DataError("corrupt feature file: features.bin size mismatch")
    feats = np.frombuffer(feat_bytes, dtype="<f4").reshape(n, d)

    if len(label_bytes) != n * 4:
        raise DataError("corrupt feature file: labels.bin size mismatch")
    labels = np.frombuffer(label_bytes, dtype="<u4").astype(np.int64)
    if labels.size and labels.max() >= k:
        raise DataError("corrupt feature file: label value >= num_classes")

    return FeatureDataset(
        features=feats,
        labels=labels,
        class_names=tuple(str(s) for s in names),
        num_old=int(meta["num_old"]),
    )
