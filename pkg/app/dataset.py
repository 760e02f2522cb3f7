"""Segmentation samples and their on-disk layout.

A dataset directory holds ``<split>/<index>.ppm`` images, ``<split>/<index>.pgm``
label maps and ``manifest.txt`` with one ``split<TAB>image<TAB>labels`` line per
sample. A leading ``# classes <K>`` comment records the class count.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.config import DTYPE, IGNORE_LABEL
from app.errors import DataError, FormatError
from app.netpbm import read_pgm, read_ppm, write_pgm, write_ppm

MANIFEST = "manifest.txt"
SPLITS = ("train", "test")


@dataclass(frozen=True)
class Sample:
    image: np.ndarray
    labels: np.ndarray


@dataclass
class Dataset:
    num_classes: int
    splits: Dict[str, List[Sample]] = field(default_factory=dict)

    @property
    def train(self) -> List[Sample]:
        return self.splits.get("train", [])

    @property
    def test(self) -> List[Sample]:
        return self.splits.get("test", [])


def check_labels(labels: np.ndarray, num_classes: int, where: str) -> None:
    """Raise DataError unless every label is in ``[0, num_classes)`` or the ignore label."""
    bad = (labels != IGNORE_LABEL) & ((labels < 0) | (labels >= num_classes))
    if bad.any():
        raise DataError(f"{where}: label {int(labels[bad][0])} out of range for {num_classes} classes")


def class_frequencies(samples: Sequence[Sample], num_classes: int) -> np.ndarray:
    """Pixel share of every class, ignore pixels excluded; sums to 1."""
    counts = np.zeros(num_classes, dtype=np.int64)
    for index, sample in enumerate(samples):
        check_labels(sample.labels, num_classes, f"sample {index}")
        labels = sample.labels[sample.labels != IGNORE_LABEL].astype(np.int64)
        counts += np.bincount(labels, minlength=num_classes)
    total = counts.sum()
    if total == 0:
        return np.zeros(num_classes)
    return counts / total


def quantize_image(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)


def save_dataset(dataset: Dataset, directory: Union[str, Path]) -> Path:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    lines = [f"# classes {dataset.num_classes}"]
    for split, samples in dataset.splits.items():
        (root / split).mkdir(exist_ok=True)
        for index, sample in enumerate(samples):
            image_rel = f"{split}/{index:06d}.ppm"
            label_rel = f"{split}/{index:06d}.pgm"
            write_ppm(root / image_rel, quantize_image(sample.image))
            write_pgm(root / label_rel, sample.labels.astype(np.uint8))
            lines.append(f"{split}\t{image_rel}\t{label_rel}")
    manifest = root / MANIFEST
    manifest.write_bytes(("\n".join(lines) + "\n").encode("utf-8"))
    return manifest


def load_sample(image_path: Union[str, Path], label_path: Optional[Union[str, Path]] = None) -> Sample:
    image = read_ppm(image_path).astype(DTYPE) / 255.0
    if label_path is None:
        labels = np.full(image.shape[:2], IGNORE_LABEL, dtype=np.int64)
    else:
        labels = read_pgm(label_path).astype(np.int64)
        if labels.shape != image.shape[:2]:
            raise DataError(f"label map {label_path} does not match image {image_path}")
    return Sample(image, labels)


def load_dataset(directory: Union[str, Path]) -> Dataset:
    root = Path(directory)
    manifest = root / MANIFEST
    if not manifest.exists():
        raise DataError(f"dataset manifest not found: {manifest}")

    num_classes: Optional[int] = None
    splits: Dict[str, List[Sample]] = {}
    origins: List[Tuple[int, Sample]] = []
    try:
        text = manifest.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise DataError(f"{manifest}: not UTF-8 text (byte {exc.start})") from exc
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            tokens = line[1:].split()
            if len(tokens) == 2 and tokens[0] == "classes":
                if not tokens[1].isdigit():
                    raise DataError(f"{manifest}:{number}: class count must be a positive integer")
                num_classes = int(tokens[1])
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{manifest}:{number}: expected split<TAB>image<TAB>labels")
        split, image_rel, label_rel = parts
        for rel in (image_rel, label_rel):
            if not (root / rel).exists():
                raise DataError(f"{manifest}:{number}: missing file {rel}")
        try:
            sample = load_sample(root / image_rel, root / label_rel)
        except FormatError as exc:
            raise FormatError(f"{manifest}:{number}: {exc}") from exc
        splits.setdefault(split, []).append(sample)
        origins.append((number, sample))

    if num_classes is None:
        present = [s.labels[s.labels != IGNORE_LABEL] for samples in splits.values() for s in samples]
        num_classes = int(max((p.max() for p in present if p.size), default=0)) + 1
    for number, sample in origins:
        check_labels(sample.labels, num_classes, f"{manifest}:{number}")
    return Dataset(num_classes, splits)
