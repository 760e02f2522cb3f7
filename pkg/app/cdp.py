"""Contextual dependency predictor.

A stack of 1x1 convolutions maps every neuron to a feature vector; the
vectors are replicated horizontally and vertically into an n x n grid whose
entry (i, j) is the concatenation ``[f_i ; f_j]``; a final 1x1 convolution
with a softplus turns each entry into a nonnegative coefficient, and the
diagonal is pinned to 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from app.config import DTYPE
from app.errors import ShapeError, UsageError, shape_mismatch
from app.tensor import (
    ConvParams,
    FeatureMap,
    conv1x1,
    conv1x1_backward,
    he_uniform,
    relu,
    relu_backward,
    softplus,
    softplus_backward,
)


@dataclass(frozen=True)
class CdpParams:
    hidden: Tuple[ConvParams, ...]
    head: ConvParams

    def __post_init__(self) -> None:
        previous = None
        for index, layer in enumerate(self.hidden):
            if previous is not None and layer.in_channels != previous:
                raise ShapeError(
                    f"cdp hidden layer {index} expects {layer.in_channels} channels, previous layer gives {previous}"
                )
            previous = layer.out_channels
        if self.head.out_channels != 1:
            raise ShapeError(f"cdp head must have one output channel, got {self.head.out_channels}")
        if previous is not None and self.head.in_channels != 2 * previous:
            raise ShapeError(
                f"cdp head expects {self.head.in_channels} channels, pair tensor gives {2 * previous}"
            )

    @property
    def in_channels(self) -> int:
        if self.hidden:
            return self.hidden[0].in_channels
        return self.head.in_channels // 2

    @classmethod
    def initialize(
        cls, rng: np.random.Generator, in_channels: int, layers: int, features: int
    ) -> "CdpParams":
        hidden: List[ConvParams] = []
        channels = in_channels
        for _ in range(layers):
            hidden.append(
                ConvParams(he_uniform(rng, (features, channels), channels), np.zeros(features, dtype=DTYPE))
            )
            channels = features
        head = ConvParams(he_uniform(rng, (1, 2 * channels), 2 * channels), np.zeros(1, dtype=DTYPE))
        return cls(tuple(hidden), head)


@dataclass(frozen=True)
class CdpGradients:
    hidden: Tuple[ConvParams, ...]
    head: ConvParams


@dataclass
class CdpCache:
    layer_inputs: List[FeatureMap]
    pre_activations: List[FeatureMap]
    spatial_shape: Tuple[int, int]
    pairs: FeatureMap
    scores: np.ndarray
    params: CdpParams


def flatten_neurons(x: FeatureMap) -> np.ndarray:
    """``(H, W, C)`` -> ``(H*W, C)``, row-major over ``(h, w)``."""
    height, width, channels = x.shape
    return x.reshape(height * width, channels)


def unflatten_neurons(features: np.ndarray, height: int, width: int) -> FeatureMap:
    if features.shape[0] != height * width:
        raise shape_mismatch("neuron sequence", (height * width, features.shape[-1]), features.shape)
    return features.reshape(height, width, features.shape[1])


def pair_tensor(features: np.ndarray) -> FeatureMap:
    """Entry ``(i, j)`` is ``[f_i ; f_j]``: H-replicate then V-replicate, concatenated."""
    n, channels = features.shape
    if n < 1:
        raise ShapeError("pair tensor needs at least one neuron")
    rows = np.broadcast_to(features[:, None, :], (n, n, channels))
    cols = np.broadcast_to(features[None, :, :], (n, n, channels))
    return np.concatenate([rows, cols], axis=2)


def pair_tensor_backward(dpairs: FeatureMap) -> np.ndarray:
    channels = dpairs.shape[2] // 2
    return dpairs[:, :, :channels].sum(axis=1) + dpairs[:, :, channels:].sum(axis=0)


def cdp_forward(x: FeatureMap, params: CdpParams) -> Tuple[np.ndarray, CdpCache]:
    if x.ndim != 3 or x.shape[2] != params.in_channels:
        raise ShapeError(
            f"cdp expects {params.in_channels} input channels, got feature map {tuple(x.shape)}"
        )
    height, width, _ = x.shape
    layer_inputs: List[FeatureMap] = []
    pre_activations: List[FeatureMap] = []
    current = x
    for layer in params.hidden:
        layer_inputs.append(current)
        pre = conv1x1(current, layer.weight, layer.bias)
        pre_activations.append(pre)
        current = relu(pre)

    pairs = pair_tensor(flatten_neurons(current))
    scores = conv1x1(pairs, params.head.weight, params.head.bias)[:, :, 0]
    a = softplus(scores)
    np.fill_diagonal(a, 1.0)
    cache = CdpCache(layer_inputs, pre_activations, (height, width), pairs, scores, params)
    return a, cache


def cdp_predict(x: FeatureMap, params: CdpParams) -> np.ndarray:
    return cdp_forward(x, params)[0]


def cdp_backward(cache: CdpCache, da: np.ndarray) -> Tuple[FeatureMap, CdpGradients]:
    n = cache.scores.shape[0]
    if da.shape != (n, n):
        raise shape_mismatch("dependency gradient", (n, n), da.shape)
    if len(cache.layer_inputs) != len(cache.params.hidden):
        raise UsageError("cdp cache does not match its parameters")

    da = da.copy()
    np.fill_diagonal(da, 0.0)
    dscores = softplus_backward(cache.scores, da)
    dpairs, dhead_w, dhead_b = conv1x1_backward(
        cache.pairs, cache.params.head.weight, dscores[:, :, None]
    )
    height, width = cache.spatial_shape
    dcurrent = unflatten_neurons(pair_tensor_backward(dpairs), height, width)

    hidden_grads: List[ConvParams] = []
    for layer, layer_input, pre in zip(
        reversed(cache.params.hidden), reversed(cache.layer_inputs), reversed(cache.pre_activations)
    ):
        dpre = relu_backward(pre, dcurrent)
        dcurrent, dweight, dbias = conv1x1_backward(layer_input, layer.weight, dpre)
        hidden_grads.append(ConvParams(dweight, dbias))
    hidden_grads.reverse()
    return dcurrent, CdpGradients(tuple(hidden_grads), ConvParams(dhead_w, dhead_b))
