"""End-to-end orchestration: base training, query rounds, evaluation, persistence.

One run = holdout split -> initial pools -> (optional class-count estimation)
-> base training -> n query rounds.  Every round appends a report line to
``rounds.jsonl`` (deterministic bytes for a given config) and mirrors the
table to ``rounds.csv``; wall-clock timings go to a separate file so logs
stay reproducible.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import assignment, data, estimation, metrics, model as model_mod, strategies

__all__ = [
    "ConfigError",
    "SyntheticSpec",
    "RunConfig",
    "RoundReport",
    "holdout_split",
    "PreparedRun",
    "prepare_run",
    "run_base_training",
    "run_agcd",
    "run_experiment",
]


class ConfigError(ValueError):
    """Invalid run configuration (CLI exit code 2)."""


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic Gaussian-cluster dataset."""

    num_old: int
    num_new: int
    per_class: int
    dim: int
    separation: float

    @classmethod
    def parse(cls, text: str) -> "SyntheticSpec":
        parts = text.split(",")
        if len(parts) != 5:
            raise ConfigError("--synthetic expects K_OLD,K_NEW,PER_CLASS,DIM,SEP")
        try:
            old, new, per, dim = (int(p) for p in parts[:4])
            sep = float(parts[4])
        except ValueError as exc:
            raise ConfigError(f"bad --synthetic value: {exc}") from exc
        return cls(old, new, per, dim, sep)


@dataclass(frozen=True)
class RunConfig:
    feature_dir: str | None = None
    synthetic: SyntheticSpec | None = None
    label_ratio: float = 0.2
    test_fraction: float = 0.2
    train: model_mod.TrainConfig = field(default_factory=model_mod.TrainConfig)
    strategy: str = "adaptive-novel"
    rounds: int = 5
    budget: int = 100
    delta: float = 0.1
    estimate_range: tuple[int, int] | None = None
    initial_transfer: bool = False
    transductive: bool = False
    uncertainty_metric: str = "margin"
    out_dir: str | None = None
    seed: int = 0

    def __post_init__(self):
        if (self.feature_dir is None) == (self.synthetic is None):
            raise ConfigError("exactly one of feature_dir / synthetic is required")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.budget < 0:
            raise ConfigError("budget must be >= 0")
        if not 0.0 < self.delta <= 1.0:
            raise ConfigError("delta must lie in (0, 1]")
        if self.strategy not in strategies.STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.estimate_range is not None and self.estimate_range[0] > self.estimate_range[1]:
            raise ConfigError("estimate range MIN must be <= MAX")

    def to_dict(self) -> dict:
        d = {
            "feature_dir": self.feature_dir,
            "synthetic": None if self.synthetic is None else vars(self.synthetic).copy(),
            "label_ratio": self.label_ratio,
            "test_fraction": self.test_fraction,
            "train": vars(self.train).copy(),
            "strategy": self.strategy,
            "rounds": self.rounds,
            "budget": self.budget,
            "delta": self.delta,
            "estimate_range": list(self.estimate_range) if self.estimate_range else None,
            "initial_transfer": self.initial_transfer,
            "transductive": self.transductive,
            "uncertainty_metric": self.uncertainty_metric,
            "out_dir": self.out_dir,
            "seed": self.seed,
        }
        return d


REPORT_FIELDS = (
    "round",
    "acc_all",
    "acc_old",
    "acc_new",
    "nov_c",
    "nov_r",
    "nov_u",
    "nov_i",
    "cum_nov_c",
    "cum_nov_r",
    "cum_nov_u",
    "cum_nov_i",
    "mapping_diff",
    "transfer",
    "n_labeled",
    "n_unlabeled",
    "n_queried_round",
)


@dataclass
class RoundReport:
    round: int
    accuracy: metrics.AccuracyReport
    novelty_round: metrics.NoveltyReport | None
    novelty_cum: metrics.NoveltyReport | None
    mapping_diff: float | None
    transfer: bool
    n_labeled: int
    n_unlabeled: int
    n_queried_round: int
    transductive: metrics.AccuracyReport | None = None
    wall_clock: float = 0.0  # excluded from serialized logs to keep them reproducible

    def to_record(self) -> dict:
        rec = {
            "round": self.round,
            "acc_all": self.accuracy.acc_all,
            "acc_old": self.accuracy.acc_old,
            "acc_new": self.accuracy.acc_new,
            "nov_c": None,
            "nov_r": None,
            "nov_u": None,
            "nov_i": None,
            "cum_nov_c": None,
            "cum_nov_r": None,
            "cum_nov_u": None,
            "cum_nov_i": None,
            "mapping_diff": self.mapping_diff,
            "transfer": self.transfer,
            "n_labeled": self.n_labeled,
            "n_unlabeled": self.n_unlabeled,
            "n_queried_round": self.n_queried_round,
        }
        if self.novelty_round is not None:
            rec.update(self.novelty_round.to_dict())
        if self.novelty_cum is not None:
            rec.update({f"cum_{k}": v for k, v in self.novelty_cum.to_dict().items()})
        if self.transductive is not None:
            rec.update({f"trans_{k}": v for k, v in self.transductive.to_dict().items()})
        return rec

    def to_json_line(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True, separators=(",", ":"))


def holdout_split(
    dataset: data.FeatureDataset, test_fraction: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Stratified disjoint train/test index split; test never enters the pools."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError("test_fraction must lie in (0, 1)")
    rng = data.rng_from(seed, "holdout")
    test_parts = []
    for cls in range(dataset.num_classes):
        members = np.flatnonzero(dataset.labels == cls)
        if members.size and members.size < 2:
            raise data.DataError(f"class {cls} has fewer than 2 samples; cannot hold out")
        take = int(np.floor(test_fraction * members.size))
        if take:
            test_parts.append(np.sort(rng.choice(members, size=take, replace=False)))
    test_idx = np.sort(np.concatenate(test_parts)) if test_parts else np.empty(0, np.int64)
    train_idx = np.setdiff1d(np.arange(dataset.num_samples), test_idx)
    return train_idx, test_idx


@dataclass
class PreparedRun:
    dataset: data.FeatureDataset
    train_idx: np.ndarray
    test_idx: np.ndarray
    pool0: data.PoolState
    oracle: data.Oracle
    num_classifier_classes: int
    k_estimate: estimation.KEstimate | None

    @property
    def num_eval_classes(self) -> int:
        return max(self.num_classifier_classes, self.dataset.num_classes)


def load_dataset(config: RunConfig) -> data.FeatureDataset:
    if config.feature_dir is not None:
        return data.load_feature_dir(config.feature_dir)
    spec = config.synthetic
    return data.generate_synthetic(
        num_classes=spec.num_old + spec.num_new,
        per_class=spec.per_class,
        dim=spec.dim,
        separation=spec.separation,
        seed=config.seed,
        num_old=spec.num_old,
    )


def prepare_run(config: RunConfig) -> PreparedRun:
    dataset = load_dataset(config)
    train_idx, test_idx = holdout_split(dataset, config.test_fraction, config.seed)
    split_cfg = data.SplitConfig(
        old_class_count=dataset.num_old, label_ratio=config.label_ratio, seed=config.seed
    )
    pool0 = data.make_split(dataset, split_cfg, indices=train_idx)

    k_estimate = None
    num_classes = dataset.num_classes
    if config.estimate_range is not None:
        feats = dataset.features[train_idx]
        labeled_pos = np.searchsorted(train_idx, pool0.labeled)
        k_estimate = estimation.estimate_k(
            feats,
            labeled_pos,
            dataset.labels[train_idx],
            config.estimate_range[0],
            config.estimate_range[1],
            num_old=dataset.num_old,
            seed=config.seed,
        )
        num_classes = k_estimate.chosen

    return PreparedRun(
        dataset=dataset,
        train_idx=train_idx,
        test_idx=test_idx,
        pool0=pool0,
        oracle=data.Oracle(dataset),
        num_classifier_classes=num_classes,
        k_estimate=k_estimate,
    )


def _evaluate(model, prepared: PreparedRun, indices: np.ndarray) -> metrics.AccuracyReport:
    ds = prepared.dataset
    preds = model.predict_raw(ds.features[indices])
    return metrics.accuracy_breakdown(
        ds.labels[indices], preds, prepared.num_eval_classes, ds.num_old
    )


def _mapping_provider(prepared: PreparedRun, ema: model_mod.EmaModel, pool: data.PoolState):
    ds = prepared.dataset
    k_map = prepared.num_eval_classes

    def provider() -> assignment.LabelMapping:
        labeled = pool.labeled
        preds = ema.predict_raw(ds.features[labeled])
        return assignment.compute_mapping(ds.labels[labeled], preds, k_map)

    return provider


def run_base_training(
    config: RunConfig, prepared: PreparedRun | None = None
) -> tuple[model_mod.Model, model_mod.EmaModel, PreparedRun, RoundReport]:
    """Train the initial model on the round-0 pools and emit the round-0 report."""
    if prepared is None:
        prepared = prepare_run(config)
    ds = prepared.dataset
    tcfg = config.train
    mcfg = model_mod.ModelConfig(
        dim=ds.dim,
        num_classes=prepared.num_classifier_classes,
        proj_dim=tcfg.proj_dim,
    )
    model = model_mod.Model.initialize(mcfg, config.seed)
    ema = model_mod.EmaModel(model, tcfg.ema_decay)

    identity = assignment.LabelMapping.identity(prepared.num_eval_classes)
    start = time.perf_counter()
    model_mod.train_round(
        model,
        ema,
        ds.features,
        ds.labels,
        labeled_idx=prepared.pool0.labeled,
        unlabeled_idx=prepared.pool0.unlabeled,
        queried_idx=np.empty(0, dtype=np.int64),
        mapping_provider=lambda: identity,
        cfg=tcfg,
        epochs=tcfg.epochs_base,
        seed=config.seed,
        stage="base",
    )
    report = RoundReport(
        round=0,
        accuracy=_evaluate(model, prepared, prepared.test_idx),
        novelty_round=None,
        novelty_cum=None,
        mapping_diff=None,
        transfer=config.initial_transfer,
        n_labeled=int(prepared.pool0.labeled.size),
        n_unlabeled=int(prepared.pool0.unlabeled.size),
        n_queried_round=0,
        transductive=(
            _evaluate(model, prepared, prepared.pool0.unlabeled) if config.transductive else None
        ),
        wall_clock=time.perf_counter() - start,
    )
    return model, ema, prepared, report


def _strategy_context(
    config: RunConfig,
    prepared: PreparedRun,
    model: model_mod.Model,
    pool: data.PoolState,
    transfer: bool,
    round_index: int,
) -> strategies.StrategyContext:
    ds = prepared.dataset
    n = ds.num_samples
    h = np.zeros((n, ds.dim))
    p = np.zeros((n, model.cfg.num_classes))
    train_idx = prepared.train_idx
    h_train = model.adapt(ds.features[train_idx])
    h[train_idx] = h_train
    p[train_idx] = model.posterior(h_train)
    round_seed = int(np.random.SeedSequence([config.seed, 9100 + round_index]).generate_state(1)[0])
    return strategies.StrategyContext(
        features=h,
        posteriors=p,
        labeled=pool.labeled,
        unlabeled=pool.unlabeled,
        budget=config.budget,
        num_old=ds.num_old,
        num_new=model.cfg.num_classes - ds.num_old,
        seed=round_seed,
        transfer=transfer,
        uncertainty_metric=config.uncertainty_metric,
    )


class _RunWriter:
    """Incremental JSONL + CSV mirror under the run's output directory."""

    def __init__(self, out_dir: str | Path | None):
        self.out_dir = Path(out_dir) if out_dir else None
        self.records: list[dict] = []
        self.timings: list[float] = []
        if self.out_dir:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            (self.out_dir / "rounds.jsonl").write_text("")

    def append(self, report: RoundReport) -> None:
        self.records.append(report.to_record())
        self.timings.append(report.wall_clock)
        if not self.out_dir:
            return
        with open(self.out_dir / "rounds.jsonl", "a") as fh:
            fh.write(report.to_json_line() + "\n")
        self._write_csv()
        (self.out_dir / "timing.json").write_text(
            json.dumps({"wall_clock_per_round": self.timings})
        )

    def _write_csv(self) -> None:
        fields = list(REPORT_FIELDS)
        extra = [k for k in self.records[0] if k.startswith("trans_")] if self.records else []
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=fields + extra, extrasaction="ignore")
        writer.writeheader()
        for rec in self.records:
            writer.writerow({k: ("" if rec.get(k) is None else rec.get(k)) for k in fields + extra})
        (self.out_dir / "rounds.csv").write_text(buf.getvalue())


def run_agcd(
    config: RunConfig,
    model: model_mod.Model,
    ema: model_mod.EmaModel,
    prepared: PreparedRun,
    writer: _RunWriter | None = None,
    initial_transfer: bool | None = None,
) -> list[RoundReport]:
    """Run the query rounds from an already base-trained model."""
    ds = prepared.dataset
    pool = prepared.pool0
    transfer = config.initial_transfer if initial_transfer is None else initial_transfer
    reports: list[RoundReport] = []
    test_set = set(prepared.test_idx.tolist())

    for t in range(1, config.rounds + 1):
        start = time.perf_counter()
        if config.budget > pool.unlabeled.size:
            raise ConfigError(
                f"budget {config.budget} exceeds unlabeled pool ({pool.unlabeled.size}) at round {t}"
            )
        ctx = _strategy_context(config, prepared, model, pool, transfer, t)
        picks = strategies.STRATEGIES[config.strategy](ctx)
        pool = data.query_oracle(pool, prepared.oracle, picks)

        if test_set & set(pool.labeled.tolist()):
            raise AssertionError("holdout leak: test index entered the labeled pool")

        result = model_mod.train_round(
            model,
            ema,
            ds.features,
            ds.labels,
            labeled_idx=prepared.pool0.labeled,
            unlabeled_idx=pool.unlabeled,
            queried_idx=pool.queried_all,
            mapping_provider=_mapping_provider(prepared, ema, pool),
            cfg=config.train,
            epochs=config.train.epochs_round,
            seed=config.seed,
            stage=f"round-{t}",
        )
        diff = assignment.mapping_diff(result.m_init, result.m_final)
        transfer = strategies.update_transfer(transfer, result.m_init, result.m_final, config.delta)

        queried_labels = ds.labels[picks]
        cum_labels = ds.labels[pool.queried_all]
        report = RoundReport(
            round=t,
            accuracy=_evaluate(model, prepared, prepared.test_idx),
            novelty_round=(
                metrics.novelty_metrics(queried_labels, ds.num_old, ds.num_new)
                if picks.size
                else None
            ),
            novelty_cum=(
                metrics.novelty_metrics(cum_labels, ds.num_old, ds.num_new)
                if cum_labels.size
                else None
            ),
            mapping_diff=diff,
            transfer=transfer,
            n_labeled=int(pool.labeled.size),
            n_unlabeled=int(pool.unlabeled.size),
            n_queried_round=int(picks.size),
            transductive=(
                _evaluate(model, prepared, pool.unlabeled) if config.transductive else None
            ),
            wall_clock=time.perf_counter() - start,
        )
        reports.append(report)
        if writer is not None:
            writer.append(report)
    return reports


def run_experiment(config: RunConfig) -> list[RoundReport]:
    """Full pipeline: prepare, base-train, checkpoint, run all query rounds."""
    writer = _RunWriter(config.out_dir)
    if writer.out_dir:
        (writer.out_dir / "config.json").write_text(
            json.dumps(config.to_dict(), sort_keys=True, indent=2)
        )
    model, ema, prepared, report0 = run_base_training(config)
    writer.append(report0)
    if writer.out_dir:
        model_mod.save_checkpoint(model, ema, writer.out_dir / "checkpoint.bin")
        if prepared.k_estimate is not None:
            (writer.out_dir / "k_estimate.json").write_text(
                json.dumps(prepared.k_estimate.to_dict(), sort_keys=True)
            )
    reports = [report0]
    reports += run_agcd(config, model, ema, prepared, writer=writer)
    if writer.out_dir:
        model_mod.save_checkpoint(model, ema, writer.out_dir / "checkpoint-final.bin")
    return reports
