"""Image-folder traversal and export into the AGCD feature directory format.

The dataset is a directory with one subdirectory per class; class ids follow
the sorted subdirectory names and rows follow the path-lexicographic order of
the image files, so repeated extractions are byte-identical.  Output is the
version-1 feature dir (meta.json + features.bin + labels.bin) plus a
manifest.json recording the source path of every row and every skipped file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

__all__ = ["ExtractJob", "ExtractResult", "discover_images", "extract"]

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tiff", ".webp"}
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ExtractJob:
    dataset: Path
    backbone_id: str
    out_dir: Path
    batch_size: int = 32
    num_old: int | None = None  # default: all classes counted as old
    backbone_kwargs: dict = field(default_factory=dict)


@dataclass
class ExtractResult:
    num_rows: int
    dim: int
    class_names: list[str]
    skipped: list[str]

    @property
    def skip_fraction(self) -> float:
        total = self.num_rows + len(self.skipped)
        return len(self.skipped) / total if total else 0.0


def discover_images(dataset: Path) -> tuple[list[str], list[tuple[Path, int]]]:
    """Sorted (class_names, [(path, label), ...]) for a class-per-subdir folder."""
    dataset = Path(dataset)
    if not dataset.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {dataset}")
    class_dirs = sorted(p for p in dataset.iterdir() if p.is_dir())
    if not class_dirs:
        raise FileNotFoundError(f"no class subdirectories under {dataset}")
    class_names = [p.name for p in class_dirs]
    files: list[tuple[Path, int]] = []
    for label, cdir in enumerate(class_dirs):
        paths = sorted(
            p for p in cdir.rglob("*") if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
        )
        files.extend((p, label) for p in paths)
    files.sort(key=lambda item: str(item[0]))
    if not files:
        raise FileNotFoundError(f"no image files under {dataset}")
    return class_names, files


def extract(job: ExtractJob, backbone=None) -> ExtractResult:
    """Run the export; returns row counts and the list of skipped files."""
    from .backbones import get_backbone

    if backbone is None:
        backbone = get_backbone(job.backbone_id, **job.backbone_kwargs)
    class_names, files = discover_images(job.dataset)

    rows: list[np.ndarray] = []
    labels: list[int] = []
    row_paths: list[str] = []
    skipped: list[str] = []

    batch_imgs: list[Image.Image] = []
    batch_meta: list[tuple[Path, int]] = []

    def flush():
        if not batch_imgs:
            return
        feats = backbone.embed(batch_imgs)
        for img in batch_imgs:
            img.close()
        rows.extend(feats)
        labels.extend(lbl for _, lbl in batch_meta)
        row_paths.extend(str(p) for p, _ in batch_meta)
        batch_imgs.clear()
        batch_meta.clear()

    for path, label in files:
        try:
            with Image.open(path) as img:
                img.load()
                batch_imgs.append(img.copy())
        except (OSError, UnidentifiedImageError):
            skipped.append(str(path))
            continue
        batch_meta.append((path, label))
        if len(batch_imgs) >= job.batch_size:
            flush()
    flush()

    if not rows:
        raise FileNotFoundError(f"every image under {job.dataset} was unreadable")

    features = np.stack(rows).astype("<f4")
    label_arr = np.asarray(labels, dtype="<u4")
    num_classes = len(class_names)
    num_old = num_classes if job.num_old is None else job.num_old
    if not 0 <= num_old <= num_classes:
        raise ValueError("num_old outside [0, num_classes]")

    out = Path(job.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "version": FORMAT_VERSION,
        "num_samples": int(features.shape[0]),
        "dim": int(features.shape[1]),
        "num_classes": num_classes,
        "num_old": int(num_old),
        "class_names": class_names,
        "dtype": "f32le",
    }
    (out / "meta.json").write_text(json.dumps(meta, sort_keys=True))
    (out / "features.bin").write_bytes(features.tobytes())
    (out / "labels.bin").write_bytes(label_arr.tobytes())
    manifest = {
        "dataset": str(job.dataset),
        "backbone": job.backbone_id,
        "rows": row_paths,
        "skipped": skipped,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2))

    return ExtractResult(
        num_rows=int(features.shape[0]),
        dim=int(features.shape[1]),
        class_names=class_names,
        skipped=skipped,
    )
