"""Numerical constants and runtime switches with environment overrides."""

from __future__ import annotations

import os
from typing import Optional

import numpy as np


def _get_env(key: str, default: Optional[str] = None) -> str:
    """Return ``key`` from the environment or fall back to ``default``."""

    value = os.getenv(key)
    if value is None:
        if default is None:
            raise RuntimeError(f"Missing required environment variable: {key}")
        return default
    return value


def _get_dtype(key: str, default: str) -> np.dtype:
    raw = _get_env(key, default).strip().lower()
    if raw not in {"float32", "float64"}:
        raise RuntimeError(f"{key} must be float32 or float64, got {raw!r}")
    return np.dtype(raw)


# Gradient checks always run in float64 regardless of this switch.
DTYPE: np.dtype = _get_dtype("SCA_DTYPE", "float64")
DEFAULT_THREADS: int = int(_get_env("SCA_THREADS", "1"))
LOG_LEVEL: str = _get_env("SCA_LOG_LEVEL", "INFO").upper()

EPSILON: float = 1e-12
IGNORE_LABEL: int = 255
MAX_CLASS_WEIGHT: float = 16.0
FREQUENT_MASS: float = 0.85

CHECKPOINT_MAGIC: bytes = b"SCA1"
CHECKPOINT_VERSION: int = 1

GRADCHECK_TOLERANCE: float = 1e-4
GRADCHECK_STEP: float = 1e-6
