"""Dense primitives the rest of the network is built from.

Feature maps are ``(height, width, channels)`` arrays in row-major order.
Every forward has a matching ``*_backward`` taking the forward inputs and the
upstream gradient, so each one can be checked against finite differences in
isolation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Tuple, Union

import numpy as np

from app.config import DTYPE, IGNORE_LABEL
from app.errors import DataError, ShapeError, shape_mismatch

FeatureMap = np.ndarray
Matrix = np.ndarray


def as_feature_map(data, name: str = "feature map") -> FeatureMap:
    array = np.asarray(data)
    if array.ndim != 3 or 0 in array.shape:
        raise ShapeError(f"{name} must be a non-empty (height, width, channels) array, got {array.shape}")
    if not np.all(np.isfinite(array)):
        raise DataError(f"{name} contains non-finite values")
    return array


@dataclass(frozen=True)
class ConvParams:
    """Weights and bias of one convolution layer.

    ``weight`` is ``(cout, cin)`` for 1x1 layers and ``(cout, cin, 3, 3)`` for
    3x3 layers.
    """

    weight: np.ndarray
    bias: np.ndarray

    @property
    def out_channels(self) -> int:
        return int(self.weight.shape[0])

    @property
    def in_channels(self) -> int:
        return int(self.weight.shape[1])


def he_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(DTYPE)


# -- convolutions -----------------------------------------------------------


def conv1x1(x: FeatureMap, weight: Matrix, bias: np.ndarray) -> FeatureMap:
    if x.ndim != 3 or weight.ndim != 2 or weight.shape[1] != x.shape[2]:
        raise ShapeError(
            f"conv1x1: weights {tuple(weight.shape)} do not match input {tuple(x.shape)}"
        )
    if bias.shape != (weight.shape[0],):
        raise shape_mismatch("conv1x1 bias", (weight.shape[0],), bias.shape)
    return x @ weight.T + bias


def conv1x1_backward(
    x: FeatureMap, weight: Matrix, dout: FeatureMap
) -> Tuple[FeatureMap, Matrix, np.ndarray]:
    """Return ``(dx, dweight, dbias)``."""
    dx = dout @ weight
    dweight = np.einsum("hwo,hwi->oi", dout, x)
    dbias = dout.sum(axis=(0, 1))
    return dx, dweight, dbias


def _conv3x3_check(x: FeatureMap, weight: np.ndarray, stride: int) -> Tuple[int, int]:
    if stride not in (1, 2):
        raise ShapeError(f"conv3x3: stride must be 1 or 2, got {stride}")
    if x.ndim != 3 or weight.ndim != 4 or weight.shape[2:] != (3, 3) or weight.shape[1] != x.shape[2]:
        raise ShapeError(
            f"conv3x3: weights {tuple(weight.shape)} do not match input {tuple(x.shape)}"
        )
    height, width = x.shape[:2]
    return -(-height // stride), -(-width // stride)


def _tap(padded: np.ndarray, ky: int, kx: int, out_h: int, out_w: int, stride: int) -> np.ndarray:
    return padded[ky : ky + stride * (out_h - 1) + 1 : stride, kx : kx + stride * (out_w - 1) + 1 : stride, :]


def conv3x3(x: FeatureMap, weight: np.ndarray, bias: np.ndarray, stride: int = 1) -> FeatureMap:
    """Cross-correlation with a 3x3 kernel and one pixel of zero padding.

    Output spatial size is ``ceil(in / stride)``.
    """
    out_h, out_w = _conv3x3_check(x, weight, stride)
    if bias.shape != (weight.shape[0],):
        raise shape_mismatch("conv3x3 bias", (weight.shape[0],), bias.shape)
    padded = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    out = np.zeros((out_h, out_w, weight.shape[0]), dtype=np.result_type(x, weight))
    for ky in range(3):
        for kx in range(3):
            out += _tap(padded, ky, kx, out_h, out_w, stride) @ weight[:, :, ky, kx].T
    return out + bias


def conv3x3_backward(
    x: FeatureMap, weight: np.ndarray, dout: FeatureMap, stride: int = 1
) -> Tuple[FeatureMap, np.ndarray, np.ndarray]:
    out_h, out_w = _conv3x3_check(x, weight, stride)
    padded = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    dpadded = np.zeros_like(padded, dtype=np.result_type(x, dout))
    dweight = np.zeros_like(weight, dtype=np.result_type(weight, dout))
    for ky in range(3):
        for kx in range(3):
            patch = _tap(padded, ky, kx, out_h, out_w, stride)
            dweight[:, :, ky, kx] = np.einsum("hwo,hwi->oi", dout, patch)
            _tap(dpadded, ky, kx, out_h, out_w, stride)[...] += dout @ weight[:, :, ky, kx]
    dbias = dout.sum(axis=(0, 1))
    return dpadded[1:-1, 1:-1, :], dweight, dbias


# -- upsampling -------------------------------------------------------------


def _interpolation_matrix(size: int, factor: int) -> np.ndarray:
    """Rows map output samples to input samples, align-corners-false.

    Output sample ``o`` reads input coordinate ``(o + 0.5) / factor - 0.5``,
    clamped to the valid range.
    """
    out = size * factor
    coords = (np.arange(out) + 0.5) / factor - 0.5
    coords = np.clip(coords, 0.0, size - 1)
    lower = np.floor(coords).astype(int)
    upper = np.minimum(lower + 1, size - 1)
    frac = coords - lower
    matrix = np.zeros((out, size))
    rows = np.arange(out)
    np.add.at(matrix, (rows, lower), 1.0 - frac)
    np.add.at(matrix, (rows, upper), frac)
    return matrix


def bilinear_upsample(x: FeatureMap, factor: int) -> FeatureMap:
    if factor < 1:
        raise ShapeError(f"bilinear_upsample: factor must be >= 1, got {factor}")
    if factor == 1:
        return x.copy()
    rows = _interpolation_matrix(x.shape[0], factor)
    cols = _interpolation_matrix(x.shape[1], factor)
    return np.einsum("ah,bw,hwc->abc", rows, cols, x)


def bilinear_upsample_backward(dout: FeatureMap, factor: int) -> FeatureMap:
    if factor == 1:
        return dout.copy()
    rows = _interpolation_matrix(dout.shape[0] // factor, factor)
    cols = _interpolation_matrix(dout.shape[1] // factor, factor)
    return np.einsum("ah,bw,abc->hwc", rows, cols, dout)


# -- activations ------------------------------------------------------------


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, dout: np.ndarray) -> np.ndarray:
    return dout * (x > 0)


def softplus(x: np.ndarray) -> np.ndarray:
    # logaddexp stays finite for large x
    return np.logaddexp(0.0, x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x))


def softplus_backward(x: np.ndarray, dout: np.ndarray) -> np.ndarray:
    return dout * sigmoid(x)


# -- loss -------------------------------------------------------------------


def log_softmax(logits: FeatureMap) -> FeatureMap:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def weighted_cross_entropy(
    logits: FeatureMap,
    labels: np.ndarray,
    class_weights: np.ndarray,
    ignore_label: Optional[int] = IGNORE_LABEL,
) -> Tuple[float, FeatureMap]:
    """Mean over non-ignored pixels of ``w[y] * -log softmax(logits)[y]``.

    Returns the loss and its gradient with respect to ``logits``. A map with
    no valid pixel has zero loss and zero gradient.
    """
    height, width, classes = logits.shape
    if labels.shape != (height, width):
        raise shape_mismatch("labels", (height, width), labels.shape)
    if class_weights.shape != (classes,):
        raise shape_mismatch("class weights", (classes,), class_weights.shape)

    labels = labels.astype(np.int64)
    valid = np.ones(labels.shape, dtype=bool) if ignore_label is None else labels != ignore_label
    bad = valid & ((labels < 0) | (labels >= classes))
    if bad.any():
        raise DataError(f"label {int(labels[bad][0])} out of range for {classes} classes")

    count = int(valid.sum())
    grad = np.zeros_like(logits)
    if count == 0:
        return 0.0, grad

    logp = log_softmax(logits)
    target = np.where(valid, labels, 0)
    picked = np.take_along_axis(logp, target[..., None], axis=-1)[..., 0]
    pixel_weights = np.where(valid, class_weights[target], 0.0)
    loss = float(-(pixel_weights * picked).sum() / count)

    probs = np.exp(logp)
    probs[np.arange(height)[:, None], np.arange(width)[None, :], target] -= 1.0
    grad = probs * (pixel_weights / count)[..., None]
    return loss, grad


# -- optimizer --------------------------------------------------------------


@dataclass(frozen=True)
class OptimizerState:
    velocity: Dict[str, np.ndarray]
    momentum: float = 0.9
    iteration: int = 0

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray], momentum: float = 0.9) -> "OptimizerState":
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {momentum}")
        return cls({name: np.zeros_like(value) for name, value in params.items()}, momentum, 0)


def sgd_momentum_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
    lr: Union[float, Mapping[str, float]],
) -> Tuple[Dict[str, np.ndarray], OptimizerState]:
    """Classic momentum: ``v <- mu * v + g`` then ``p <- p - lr * v``.

    ``lr`` is a single rate or one rate per parameter name. Inputs are left
    untouched; new arrays are returned.
    """
    if set(params) != set(grads) or set(params) != set(state.velocity):
        raise ShapeError("parameters, gradients and velocity must share the same names")

    new_params: Dict[str, np.ndarray] = {}
    new_velocity: Dict[str, np.ndarray] = {}
    for name, value in params.items():
        grad = grads[name]
        velocity = state.velocity[name]
        if grad.shape != value.shape or velocity.shape != value.shape:
            raise shape_mismatch(f"gradient for {name}", value.shape, grad.shape)
        rate = lr[name] if isinstance(lr, Mapping) else lr
        step_velocity = state.momentum * velocity + grad
        new_velocity[name] = step_velocity
        new_params[name] = value - rate * step_velocity
    return new_params, OptimizerState(new_velocity, state.momentum, state.iteration + 1)
