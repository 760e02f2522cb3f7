"""Context aggregation operator.

Neurons are the spatial locations of a feature map, flattened row-major over
``(h, w)``; the dependency matrix is indexed in that order. Output neuron i is

    h_i = a_ii W_d x_i + (sum_{j != i} a_ij W_c x_j) / (sum_{j != i} a_ij + eps)

The input and coefficient gradients follow the closed forms of the operator;
the weight gradients were derived by hand and are covered by the finite
difference checks in ``app.gradcheck``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from app.config import EPSILON
from app.errors import DataError, ShapeError, shape_mismatch
from app.tensor import FeatureMap, Matrix


@dataclass(frozen=True)
class ScaParams:
    w_d: Matrix
    w_c: Matrix

    def __post_init__(self) -> None:
        if self.w_d.ndim != 2 or self.w_d.shape != self.w_c.shape:
            raise ShapeError(
                f"W_d {tuple(self.w_d.shape)} and W_c {tuple(self.w_c.shape)} must be equal-shaped matrices"
            )

    @property
    def in_channels(self) -> int:
        return int(self.w_d.shape[1])

    @property
    def out_channels(self) -> int:
        return int(self.w_d.shape[0])


@dataclass(frozen=True)
class ScaGradients:
    dx: FeatureMap
    da: np.ndarray
    dw_d: Matrix
    dw_c: Matrix


def identity_dependencies(n: int) -> np.ndarray:
    """No context at all: a_ii = 1, a_ij = 0."""
    return np.eye(n)


def uniform_dependencies(n: int) -> np.ndarray:
    """Plain average of every other neuron's context feature."""
    return np.ones((n, n))


def validate_dependencies(a: np.ndarray, n: int) -> np.ndarray:
    if a.shape != (n, n):
        raise shape_mismatch("dependency matrix", (n, n), a.shape)
    if not np.all(np.isfinite(a)):
        raise DataError("dependency matrix contains non-finite values")
    if np.any(a < 0):
        raise DataError("dependency coefficients must be nonnegative")
    if not np.all(np.diag(a) == 1.0):
        raise DataError("dependency matrix must have a unit diagonal")
    return a


def _split(a: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    diag = np.diag(a).copy()
    off = a.copy()
    np.fill_diagonal(off, 0.0)
    return diag, off, off.sum(axis=1) + EPSILON


def _neurons(x: FeatureMap, a: np.ndarray, params: ScaParams) -> np.ndarray:
    if x.ndim != 3:
        raise ShapeError(f"feature map must be (height, width, channels), got {x.shape}")
    height, width, channels = x.shape
    if channels != params.in_channels:
        raise shape_mismatch("feature map channels", (params.in_channels,), (channels,))
    validate_dependencies(a, height * width)
    return x.reshape(height * width, channels)


def sca_forward(x: FeatureMap, a: np.ndarray, params: ScaParams) -> FeatureMap:
    height, width, _ = x.shape
    flat = _neurons(x, a, params)
    diag, off, denom = _split(a)
    identity = flat @ params.w_d.T
    context = (off @ (flat @ params.w_c.T)) / denom[:, None]
    out = diag[:, None] * identity + context
    return out.reshape(height, width, params.out_channels)


def sca_backward(x: FeatureMap, a: np.ndarray, params: ScaParams, dh: FeatureMap) -> ScaGradients:
    height, width, channels = x.shape
    flat = _neurons(x, a, params)
    if dh.shape != (height, width, params.out_channels):
        raise shape_mismatch("upstream gradient", (height, width, params.out_channels), dh.shape)
    grad = dh.reshape(height * width, params.out_channels)
    diag, off, denom = _split(a)

    context_features = flat @ params.w_c.T
    weighted_grad = diag[:, None] * grad
    # dC_j = sum_i a_ij / denom_i * dh_i
    dcontext = (off / denom[:, None]).T @ grad

    dx = weighted_grad @ params.w_d + dcontext @ params.w_c
    dw_d = weighted_grad.T @ flat
    dw_c = dcontext.T @ flat

    # dA_ij = dh_i . sum_k a_ik (C_j - C_k) / denom_i^2, diagonal pinned
    row_sums = off.sum(axis=1)
    aggregated = off @ context_features
    da = (
        (grad @ context_features.T) * row_sums[:, None]
        - np.einsum("im,im->i", grad, aggregated)[:, None]
    ) / (denom**2)[:, None]
    np.fill_diagonal(da, 0.0)

    return ScaGradients(dx=dx.reshape(height, width, channels), da=da, dw_d=dw_d, dw_c=dw_c)


def fully_connected_forward(x: FeatureMap, weights: np.ndarray) -> FeatureMap:
    """Naive aggregation ``h_i = sum_j W_ij x_j`` with ``weights`` of shape (n, n, M, N)."""
    height, width, channels = x.shape
    n = height * width
    if weights.shape[:2] != (n, n) or weights.shape[3] != channels:
        raise shape_mismatch("fully connected weights", (n, n, "M", channels), weights.shape)
    flat = x.reshape(n, channels)
    return np.einsum("ijmc,jc->im", weights, flat).reshape(height, width, weights.shape[2])


def equivalent_fully_connected(a: np.ndarray, params: ScaParams) -> np.ndarray:
    """Expand a fixed dependency matrix into the per-pair weights it implies."""
    diag, off, denom = _split(a)
    coeff = off / denom[:, None]
    np.fill_diagonal(coeff, diag)
    n = a.shape[0]
    weights = coeff[:, :, None, None] * params.w_c[None, None, :, :]
    weights[np.arange(n), np.arange(n)] = diag[:, None, None] * params.w_d
    return weights


def param_count(n: int, in_channels: int, out_channels: int) -> Tuple[int, int]:
    """Return ``(fully_connected, sca)`` parameter counts: ``n^2 N M`` and ``2 N M``."""
    if min(n, in_channels, out_channels) < 1:
        raise ShapeError("param_count arguments must be positive")
    return n * n * in_channels * out_channels, 2 * in_channels * out_channels
