from __future__ import annotations

import numpy as np
import pytest
from pydantic import ValidationError

from app.dataset import class_frequencies
from app.errors import ConfigError
from app.schemas import SynthConfig
from app.synthetic import generate, generate_pair, label_scheme


def test_label_schemes():
    assert label_scheme(5).cue_b == 2
    four = label_scheme(4)
    assert four.cue_a == four.cue_b == 1
    assert (four.ambiguous_a, four.ambiguous_b) == (2, 3)
    three = label_scheme(3)
    assert three.cue_a == three.background == 0
    with pytest.raises(ConfigError):
        label_scheme(6)


def test_generation_is_deterministic(tiny_synth):
    first, second = generate(tiny_synth), generate(tiny_synth)
    for a, b in zip(first.train + first.test, second.train + second.test):
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.labels, b.labels)


def test_split_sizes_and_value_ranges(tiny_synth):
    dataset = generate(tiny_synth.model_copy(update={"train_samples": 5}))
    assert len(dataset.train) == 5
    assert len(dataset.test) == 4
    for sample in dataset.train:
        assert sample.image.shape == (16, 16, 3)
        assert sample.image.min() >= 0.0 and sample.image.max() <= 1.0
        assert set(np.unique(sample.labels)) <= {0, 1, 2, 3}


def test_train_and_test_use_different_streams(tiny_synth):
    dataset = generate(tiny_synth)
    assert not np.array_equal(dataset.train[0].image, dataset.test[0].image)


@pytest.mark.parametrize("num_classes", [3, 4, 5])
def test_pair_differs_only_at_the_cue(tiny_synth, num_classes):
    cfg = tiny_synth.model_copy(update={"num_classes": num_classes})
    scheme = label_scheme(num_classes)
    first, second = generate_pair(cfg, "train", 0)

    ambiguous = np.isin(first.labels, [scheme.ambiguous_a])
    assert ambiguous.sum() == cfg.region_size**2
    np.testing.assert_array_equal(second.labels[ambiguous], scheme.ambiguous_b)
    # identical pixels on the region, so any per-pixel rule is right on at most half of them
    np.testing.assert_array_equal(first.image[ambiguous], second.image[ambiguous])

    cue = np.any(first.image != second.image, axis=2)
    assert cue.sum() == cfg.cue_size**2
    assert not np.any(cue & ambiguous)


def test_frequencies_cover_every_class(tiny_dataset):
    freqs = class_frequencies(tiny_dataset.train, 4)
    assert freqs.sum() == pytest.approx(1.0)
    assert np.all(freqs > 0)


def test_layout_that_cannot_fit_is_rejected():
    with pytest.raises(ValidationError):
        SynthConfig(image_height=8, image_width=8, cue_size=4, region_size=6)
    with pytest.raises(ValidationError):
        SynthConfig(image_height=8, image_width=8, region_size=9)


def best_stump_accuracy(values: np.ndarray, targets: np.ndarray) -> float:
    """Best single-channel threshold rule on per-pixel RGB, either polarity."""
    best = 0.0
    for channel in range(values.shape[1]):
        thresholds = np.unique(values[:, channel])
        predicted = values[:, channel][:, None] > thresholds[None, :]
        accuracy = np.mean(predicted == targets[:, None], axis=0)
        best = max(best, float(np.max(accuracy)), float(np.max(1.0 - accuracy)))
    return best


def test_no_pixel_local_rule_separates_the_ambiguous_classes(tiny_synth):
    cfg = tiny_synth.model_copy(update={"num_classes": 5, "train_samples": 20})
    scheme = label_scheme(5)
    samples = generate(cfg).train
    values, targets, from_cue = [], [], []
    for sample in samples:
        region = np.isin(sample.labels, [scheme.ambiguous_a, scheme.ambiguous_b])
        values.append(sample.image[region])
        targets.append(sample.labels[region] == scheme.ambiguous_a)
        cue = np.isin(sample.labels, [scheme.cue_a, scheme.cue_b])
        red, _, blue = sample.image[cue].mean(axis=0)
        from_cue.append(np.full(int(region.sum()), red > blue))
    values, targets, from_cue = np.concatenate(values), np.concatenate(targets), np.concatenate(from_cue)

    assert best_stump_accuracy(values, targets) <= 0.55
    assert np.mean(from_cue == targets) == 1.0


@pytest.mark.parametrize("split", ["train", "test"])
def test_cue_and_region_never_overlap(tiny_synth, split):
    cfg = tiny_synth.model_copy(update={"num_classes": 5, "train_samples": 30, "test_samples": 30})
    scheme = label_scheme(5)
    for sample in generate(cfg).splits[split]:
        cue = np.isin(sample.labels, [scheme.cue_a, scheme.cue_b])
        region = np.isin(sample.labels, [scheme.ambiguous_a, scheme.ambiguous_b])
        # the cue is painted last, so any overlap would shrink the region
        assert cue.sum() == cfg.cue_size**2
        assert region.sum() == cfg.region_size**2
