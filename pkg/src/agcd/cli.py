"""Command-line interface: synth | run | estimate-k | eval | report."""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import data, metrics, model as model_mod, pipeline

EXIT_CONFIG_ERROR = 2
EXIT_DATA_ERROR = 3


def _parse_range(text: str) -> tuple[int, int]:
    try:
        lo, hi = text.split(":")
        return int(lo), int(hi)
    except ValueError as exc:
        raise pipeline.ConfigError("--estimate-k expects MIN:MAX") from exc


def _add_dataset_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--features", metavar="DIR", help="feature directory (version 1)")
    p.add_argument(
        "--synthetic",
        metavar="K_OLD,K_NEW,PER_CLASS,DIM,SEP",
        help="generate a synthetic dataset instead of loading one",
    )
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="agcd",
        description="Simulation lab for active generalized category discovery",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset as a feature directory")
    _add_dataset_args(p)
    p.add_argument("--out", required=True, metavar="DIR")

    p = sub.add_parser("run", help="base training plus active query rounds")
    _add_dataset_args(p)
    p.add_argument("--label-ratio", type=float, default=0.2)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--rounds", type=int, default=5)
    p.add_argument("--budget", type=int, default=100)
    p.add_argument(
        "--strategy",
        default="adaptive-novel",
        help="one or more (comma-separated) of: "
        "random|entropy|leastconf|margin|kmeans|coreset|badge|adaptive-novel",
    )
    p.add_argument("--delta", type=float, default=0.1, help="mapping-stability threshold")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--estimate-k", metavar="MIN:MAX", help="estimate the class count first")
    p.add_argument("--epochs-base", type=int, default=200)
    p.add_argument("--epochs-round", type=int, default=15)
    p.add_argument("--lam", type=float, default=0.35)
    p.add_argument("--lambda-e", type=float, default=1.0)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch-main", type=int, default=128)
    p.add_argument("--batch-queried", type=int, default=8)
    p.add_argument("--beta", type=float, default=0.9, help="EMA decay")
    p.add_argument("--view-sigma", type=float, default=0.05)
    p.add_argument("--uncertainty-metric", default="margin", choices=["margin", "msp", "entropy"])
    p.add_argument("--initial-transfer", action="store_true", help="start in the informative phase")
    p.add_argument("--transductive", action="store_true", help="also report unlabeled-pool accuracy")
    p.add_argument("--seeds", help="comma list of extra seeds: runs strategy x seed grid")

    p = sub.add_parser("estimate-k", help="class-count estimation on the training pool")
    _add_dataset_args(p)
    p.add_argument("--range", required=True, metavar="MIN:MAX")
    p.add_argument("--label-ratio", type=float, default=0.2)
    p.add_argument("--test-fraction", type=float, default=0.2)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    _add_dataset_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["test", "train", "all"], default="test")
    p.add_argument("--test-fraction", type=float, default=0.2)

    p = sub.add_parser("report", help="summarize finished runs")
    p.add_argument("run_dirs", nargs="+", metavar="RUN_DIR")
    return parser


def _dataset_from_args(args) -> data.FeatureDataset:
    if (args.features is None) == (args.synthetic is None):
        raise pipeline.ConfigError("exactly one of --features / --synthetic is required")
    if args.features:
        return data.load_feature_dir(args.features)
    spec = pipeline.SyntheticSpec.parse(args.synthetic)
    return data.generate_synthetic(
        num_classes=spec.num_old + spec.num_new,
        per_class=spec.per_class,
        dim=spec.dim,
        separation=spec.separation,
        seed=args.seed,
        num_old=spec.num_old,
    )


def _run_config(args, strategy: str, seed: int, out_dir: Path) -> pipeline.RunConfig:
    train = model_mod.TrainConfig(
        lam=args.lam,
        lambda_e=args.lambda_e,
        lr=args.lr,
        epochs_base=args.epochs_base,
        epochs_round=args.epochs_round,
        batch_main=args.batch_main,
        batch_queried=args.batch_queried,
        ema_decay=args.beta,
        view_sigma=args.view_sigma,
    )
    return pipeline.RunConfig(
        feature_dir=args.features,
        synthetic=pipeline.SyntheticSpec.parse(args.synthetic) if args.synthetic else None,
        label_ratio=args.label_ratio,
        test_fraction=args.test_fraction,
        train=train,
        strategy=strategy,
        rounds=args.rounds,
        budget=args.budget,
        delta=args.delta,
        estimate_range=_parse_range(args.estimate_k) if args.estimate_k else None,
        initial_transfer=args.initial_transfer,
        transductive=args.transductive,
        uncertainty_metric=args.uncertainty_metric,
        out_dir=str(out_dir),
        seed=seed,
    )


def cmd_synth(args) -> int:
    dataset = _dataset_from_args(args)
    data.save_feature_dir(dataset, args.out)
    print(f"wrote {dataset.num_samples} x {dataset.dim} features to {args.out}")
    return 0


def cmd_run(args) -> int:
    strategy_list = [s.strip() for s in args.strategy.split(",") if s.strip()]
    seeds = [args.seed]
    if args.seeds:
        seeds += [int(s) for s in args.seeds.split(",") if s.strip()]
    jobs = []
    single = len(strategy_list) == 1 and len(seeds) == 1
    for strat in strategy_list:
        for seed in seeds:
            out = Path(args.out) if single else Path(args.out) / f"{strat}-seed{seed}"
            jobs.append(_run_config(args, strat, seed, out))

    threads = int(os.environ.get("AGCD_THREADS", "1"))
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(pipeline.run_experiment, jobs))
    else:
        for cfg in jobs:
            pipeline.run_experiment(cfg)
    for cfg in jobs:
        last = json.loads(Path(cfg.out_dir, "rounds.jsonl").read_text().splitlines()[-1])
        print(
            f"{cfg.strategy} seed={cfg.seed}: "
            f"acc_all={last['acc_all']:.4f} acc_old={last['acc_old']:.4f} "
            f"acc_new={last['acc_new']:.4f} -> {cfg.out_dir}"
        )
    return 0


def cmd_estimate_k(args) -> int:
    lo, hi = _parse_range(args.range)
    cfg = pipeline.RunConfig(
        feature_dir=args.features,
        synthetic=pipeline.SyntheticSpec.parse(args.synthetic) if args.synthetic else None,
        label_ratio=args.label_ratio,
        test_fraction=args.test_fraction,
        estimate_range=(lo, hi),
        seed=args.seed,
    )
    prepared = pipeline.prepare_run(cfg)
    print(json.dumps(prepared.k_estimate.to_dict(), sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    dataset = _dataset_from_args(args)
    model = model_mod.load_checkpoint(args.checkpoint)
    if model.cfg.dim != dataset.dim:
        raise pipeline.ConfigError("checkpoint dimension does not match dataset")
    if args.split == "all":
        idx = np.arange(dataset.num_samples)
    else:
        train_idx, test_idx = pipeline.holdout_split(dataset, args.test_fraction, args.seed)
        idx = test_idx if args.split == "test" else train_idx
    preds = model.predict_raw(dataset.features[idx])
    k = max(model.cfg.num_classes, dataset.num_classes)
    report = metrics.accuracy_breakdown(dataset.labels[idx], preds, k, dataset.num_old)
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def cmd_report(args) -> int:
    header = f"{'run':40s} {'round':>5s} {'acc_all':>8s} {'acc_old':>8s} {'acc_new':>8s} {'cum_nov_i':>9s} {'transfer':>8s}"
    print(header)
    for run_dir in args.run_dirs:
        path = Path(run_dir) / "rounds.jsonl"
        if not path.is_file():
            raise data.DataError(f"no rounds.jsonl under {run_dir}")
        lines = [json.loads(line) for line in path.read_text().splitlines() if line]
        last = lines[-1]

        def fmt(v, width=8):
            return f"{'-':>{width}s}" if v is None else f"{v:>{width}.4f}"

        print(
            f"{Path(run_dir).name[:40]:40s} {last['round']:>5d} "
            f"{fmt(last['acc_all'])} {fmt(last['acc_old'])} {fmt(last['acc_new'])} "
            f"{fmt(last.get('cum_nov_i'), 9)} {str(last['transfer']):>8s}"
        )
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "run": cmd_run,
    "estimate-k": cmd_estimate_k,
    "eval": cmd_eval,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except pipeline.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except data.DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
