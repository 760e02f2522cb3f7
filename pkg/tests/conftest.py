"""Pytest configuration helpers used across the suite.

Ensures the project root is importable so tests can resolve modules like
``main`` when running in environments where the working directory is not on
``sys.path`` (e.g., some CI runners).
"""

from __future__ import annotations

import os
import sys
from pathlib import Path

import numpy as np
import pytest

PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from app.schemas import NetworkConfig, SynthConfig  # noqa: E402
from app.synthetic import generate  # noqa: E402


def pytest_collection_modifyitems(config, items):
    if os.getenv("SCA_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set SCA_RUN_SLOW=1 to run slow acceptance tests")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


@pytest.fixture()
def tiny_config():
    """16x16 input, s = 4: a 4x4 neuron grid."""
    return NetworkConfig(
        image_height=16,
        image_width=16,
        encoder_widths=[4, 4],
        downsample=4,
        feature_channels=4,
        sca_channels=4,
        cdp_layers=1,
        cdp_features=4,
        num_classes=4,
        mode="sca",
    )


@pytest.fixture()
def tiny_synth():
    return SynthConfig(
        image_height=16,
        image_width=16,
        num_classes=4,
        train_samples=6,
        test_samples=4,
        cue_size=3,
        region_size=8,
        seed=7,
    )


@pytest.fixture()
def tiny_dataset(tiny_synth):
    return generate(tiny_synth)
