"""Seeded "ambiguous texture" segmentation data.

Every image holds one cue patch (type A or B, different colours) and one
region whose pixels are drawn from the same distribution whatever the cue.
The region's label is ambiguous-A or ambiguous-B depending on the cue, so no
pixel-local rule can do better than chance there. Samples come in pairs that
share layout and noise and differ only in the cue type, which makes the
ambiguity exact rather than statistical.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from app.config import DTYPE
from app.dataset import Dataset, Sample
from app.errors import ConfigError
from app.schemas import SynthConfig

BACKGROUND_RGB = (0.5, 0.5, 0.5)
REGION_RGB = (0.35, 0.6, 0.35)
CUE_A_RGB = (0.9, 0.2, 0.2)
CUE_B_RGB = (0.2, 0.2, 0.9)

_SPLIT_STREAMS = {"train": 0, "test": 1}
_LAYOUT_ATTEMPTS = 100


@dataclass(frozen=True)
class LabelScheme:
    background: int
    cue_a: int
    cue_b: int
    ambiguous_a: int
    ambiguous_b: int


def label_scheme(num_classes: int) -> LabelScheme:
    """Class ids for K = 5 (separate cue labels), 4 (one cue label) or 3 (cue is background)."""
    if num_classes == 5:
        return LabelScheme(0, 1, 2, 3, 4)
    if num_classes == 4:
        return LabelScheme(0, 1, 1, 2, 3)
    if num_classes == 3:
        return LabelScheme(0, 0, 0, 1, 2)
    raise ConfigError(f"num_classes must be 3, 4 or 5 for synthetic data, got {num_classes}")


def _overlaps(a: Tuple[int, int, int], b: Tuple[int, int, int]) -> bool:
    (ay, ax, asize), (by, bx, bsize) = a, b
    return ay < by + bsize and by < ay + asize and ax < bx + bsize and bx < ax + asize


def _layout(rng: np.random.Generator, cfg: SynthConfig) -> Tuple[Tuple[int, int, int], Tuple[int, int, int]]:
    r, c = cfg.region_size, cfg.cue_size
    for _ in range(_LAYOUT_ATTEMPTS):
        region = (
            int(rng.integers(0, cfg.image_height - r + 1)),
            int(rng.integers(0, cfg.image_width - r + 1)),
            r,
        )
        candidates = [
            (y, x, c)
            for y in range(cfg.image_height - c + 1)
            for x in range(cfg.image_width - c + 1)
            if not _overlaps((y, x, c), region)
        ]
        if candidates:
            return region, candidates[int(rng.integers(0, len(candidates)))]
    raise ConfigError(
        f"could not place cue_size={c} and region_size={r} without overlap in "
        f"{cfg.image_height}x{cfg.image_width} images"
    )


def generate_pair(cfg: SynthConfig, split: str, pair_index: int) -> Tuple[Sample, Sample]:
    """The A-cue and B-cue versions of one layout, sharing every noise draw."""
    rng = np.random.default_rng([cfg.seed, _SPLIT_STREAMS[split], pair_index])
    scheme = label_scheme(cfg.num_classes)
    height, width = cfg.image_height, cfg.image_width
    region, cue = _layout(rng, cfg)
    noise = rng.uniform(-cfg.noise, cfg.noise, size=(height, width, 3))

    base = np.empty((height, width, 3))
    base[...] = BACKGROUND_RGB
    ry, rx, r = region
    base[ry : ry + r, rx : rx + r] = REGION_RGB

    labels = np.full((height, width), scheme.background, dtype=np.int64)
    cy, cx, c = cue
    pair = []
    for cue_rgb, cue_label, region_label in (
        (CUE_A_RGB, scheme.cue_a, scheme.ambiguous_a),
        (CUE_B_RGB, scheme.cue_b, scheme.ambiguous_b),
    ):
        image = base.copy()
        image[cy : cy + c, cx : cx + c] = cue_rgb
        image = np.clip(image + noise, 0.0, 1.0).astype(DTYPE)
        sample_labels = labels.copy()
        sample_labels[ry : ry + r, rx : rx + r] = region_label
        sample_labels[cy : cy + c, cx : cx + c] = cue_label
        pair.append(Sample(image, sample_labels))
    return pair[0], pair[1]


def generate_split(cfg: SynthConfig, split: str, count: int) -> List[Sample]:
    samples: List[Sample] = []
    for pair_index in range((count + 1) // 2):
        samples.extend(generate_pair(cfg, split, pair_index))
    return samples[:count]


def generate(cfg: SynthConfig) -> Dataset:
    """Train and test splits from disjoint seed streams."""
    return Dataset(
        cfg.num_classes,
        {
            "train": generate_split(cfg, "train", cfg.train_samples),
            "test": generate_split(cfg, "test", cfg.test_samples),
        },
    )
