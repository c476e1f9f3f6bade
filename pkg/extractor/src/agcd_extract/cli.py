"""CLI: agcd-extract --dataset PATH --backbone ID --out DIR."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .backbones import BackboneError, available_backbones
from .extract import ExtractJob, extract

MAX_SKIP_FRACTION = 0.01


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="agcd-extract",
        description="Export image-folder embeddings into an AGCD feature directory",
    )
    parser.add_argument("--dataset", required=True, help="folder with one subdirectory per class")
    parser.add_argument(
        "--backbone",
        default="toy-rp64",
        help=f"one of: {', '.join(available_backbones())}",
    )
    parser.add_argument("--out", required=True, metavar="DIR")
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--num-old", type=int, default=None, help="old-class count for meta.json")
    parser.add_argument("--weights", default=None, help="local state-dict path for torch backbones")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    kwargs = {}
    if args.weights:
        kwargs["weights_path"] = args.weights
    job = ExtractJob(
        dataset=Path(args.dataset),
        backbone_id=args.backbone,
        out_dir=Path(args.out),
        batch_size=args.batch_size,
        num_old=args.num_old,
        backbone_kwargs=kwargs,
    )
    try:
        result = extract(job)
    except (FileNotFoundError, ValueError, BackboneError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(
        f"wrote {result.num_rows} x {result.dim} features "
        f"({len(result.class_names)} classes) to {args.out}"
    )
    if result.skipped:
        print(f"skipped {len(result.skipped)} unreadable files (see manifest.json)", file=sys.stderr)
    if result.skip_fraction > MAX_SKIP_FRACTION:
        print(
            f"error: skip fraction {result.skip_fraction:.1%} exceeds {MAX_SKIP_FRACTION:.0%}",
            file=sys.stderr,
        )
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
