"""End-to-end segmentation network: encoder -> SCA -> 1x1 class head -> bilinear upsample.

Parameters live in one ordered ``name -> array`` mapping so the optimizer,
the checkpoint format and the gradient checker can treat them uniformly:

    encoder.<k>.weight / encoder.<k>.bias       conv3x3 blocks
    sca.w_d / sca.w_c                           aggregation operator
    cdp.hidden.<k>.weight / .bias, cdp.head.*   dependency predictor (sca mode only)
    decoder.weight / decoder.bias               1x1 class head
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from app.cdp import CdpCache, CdpParams, cdp_backward, cdp_forward, cdp_predict
from app.config import CHECKPOINT_MAGIC, CHECKPOINT_VERSION, DTYPE
from app.errors import FormatError, ShapeError, UsageError, shape_mismatch
from app.schemas import NetworkConfig
from app.sca import (
    ScaParams,
    identity_dependencies,
    sca_backward,
    sca_forward,
    uniform_dependencies,
)
from app.tensor import (
    ConvParams,
    FeatureMap,
    as_feature_map,
    bilinear_upsample,
    bilinear_upsample_backward,
    conv1x1,
    conv1x1_backward,
    conv3x3,
    conv3x3_backward,
    he_uniform,
    relu,
    relu_backward,
)

Params = Dict[str, np.ndarray]


@dataclass(frozen=True)
class Network:
    config: NetworkConfig
    params: Params

    def encoder_layers(self) -> List[Tuple[ConvParams, int]]:
        strided = int(math.log2(self.config.downsample))
        return [
            (
                ConvParams(self.params[f"encoder.{k}.weight"], self.params[f"encoder.{k}.bias"]),
                2 if k < strided else 1,
            )
            for k in range(self.config.encoder_blocks)
        ]

    def sca_params(self) -> ScaParams:
        return ScaParams(self.params["sca.w_d"], self.params["sca.w_c"])

    def cdp_params(self) -> Optional[CdpParams]:
        if self.config.mode != "sca":
            return None
        hidden = tuple(
            ConvParams(self.params[f"cdp.hidden.{k}.weight"], self.params[f"cdp.hidden.{k}.bias"])
            for k in range(self.config.cdp_layers)
        )
        return CdpParams(hidden, ConvParams(self.params["cdp.head.weight"], self.params["cdp.head.bias"]))

    def decoder(self) -> ConvParams:
        return ConvParams(self.params["decoder.weight"], self.params["decoder.bias"])

    def with_params(self, params: Params) -> "Network":
        if list(params) != list(self.params):
            raise ShapeError("replacement parameters must use the same names in the same order")
        for name, value in params.items():
            if value.shape != self.params[name].shape:
                raise shape_mismatch(name, self.params[name].shape, value.shape)
        return Network(self.config, dict(params))


def build_network(config: NetworkConfig, seed: int) -> Network:
    """He-uniform weights and zero biases, drawn in parameter order from ``seed``."""
    rng = np.random.default_rng(seed)
    params: Params = {}

    widths = [*config.encoder_widths, config.feature_channels]
    channels = config.in_channels
    for k, width in enumerate(widths):
        params[f"encoder.{k}.weight"] = he_uniform(rng, (width, channels, 3, 3), 9 * channels)
        params[f"encoder.{k}.bias"] = np.zeros(width, dtype=DTYPE)
        channels = width

    n_in, n_out = config.feature_channels, config.sca_channels
    params["sca.w_d"] = he_uniform(rng, (n_out, n_in), n_in)
    params["sca.w_c"] = he_uniform(rng, (n_out, n_in), n_in)

    if config.mode == "sca":
        cdp = CdpParams.initialize(rng, n_in, config.cdp_layers, config.cdp_features)
        for k, layer in enumerate(cdp.hidden):
            params[f"cdp.hidden.{k}.weight"] = layer.weight
            params[f"cdp.hidden.{k}.bias"] = layer.bias
        params["cdp.head.weight"] = cdp.head.weight
        params["cdp.head.bias"] = cdp.head.bias

    params["decoder.weight"] = he_uniform(rng, (config.num_classes, n_out), n_out)
    params["decoder.bias"] = np.zeros(config.num_classes, dtype=DTYPE)
    return Network(config, params)


def parameter_count(net: Network) -> int:
    return int(sum(value.size for value in net.params.values()))


def parameter_group(name: str) -> str:
    """``encoder`` or ``sca_and_decoder``; the two groups train at different base rates."""
    return "encoder" if name.startswith("encoder.") else "sca_and_decoder"


def parameter_groups(net: Network) -> Dict[str, str]:
    return {name: parameter_group(name) for name in net.params}


# -- forward / backward -----------------------------------------------------


@dataclass
class EncoderCache:
    inputs: List[FeatureMap]
    pre_activations: List[FeatureMap]


@dataclass
class ForwardCache:
    params: Params
    encoder: EncoderCache
    features: FeatureMap
    dependencies: np.ndarray
    cdp: Optional[CdpCache]
    context: FeatureMap


def _check_image(net: Network, image: FeatureMap) -> None:
    cfg = net.config
    expected = (cfg.image_height, cfg.image_width, cfg.in_channels)
    if image.shape != expected:
        raise shape_mismatch("image", expected, image.shape)


def encode(net: Network, image: FeatureMap) -> Tuple[FeatureMap, EncoderCache]:
    image = as_feature_map(image, "image")
    _check_image(net, image)
    cache = EncoderCache([], [])
    current = image
    for layer, stride in net.encoder_layers():
        cache.inputs.append(current)
        pre = conv3x3(current, layer.weight, layer.bias, stride)
        cache.pre_activations.append(pre)
        current = relu(pre)
    return current, cache


def _dependencies(
    net: Network, features: FeatureMap, override: Optional[np.ndarray]
) -> Tuple[np.ndarray, Optional[CdpCache]]:
    n = features.shape[0] * features.shape[1]
    if override is not None:
        return override, None
    if net.config.mode == "baseline_no":
        return identity_dependencies(n), None
    if net.config.mode == "baseline_ave":
        return uniform_dependencies(n), None
    return cdp_forward(features, net.cdp_params())


def forward(
    net: Network, image: FeatureMap, dependencies: Optional[np.ndarray] = None
) -> Tuple[FeatureMap, ForwardCache, np.ndarray]:
    """Return ``(logits, cache, A)``.

    ``dependencies`` replaces whatever the mode would produce; the ablation
    modes are exactly the sca path with A fixed to identity or all-ones.
    """
    features, encoder_cache = encode(net, image)
    a, cdp_cache = _dependencies(net, features, dependencies)
    context = sca_forward(features, a, net.sca_params())
    decoder = net.decoder()
    coarse = conv1x1(context, decoder.weight, decoder.bias)
    logits = bilinear_upsample(coarse, net.config.downsample)
    cache = ForwardCache(net.params, encoder_cache, features, a, cdp_cache, context)
    return logits, cache, a


def backward(net: Network, cache: ForwardCache, dlogits: FeatureMap) -> Params:
    if cache.params is not net.params:
        raise UsageError("forward cache belongs to a different parameter set; run forward again")
    cfg = net.config
    expected = (cfg.image_height, cfg.image_width, cfg.num_classes)
    if dlogits.shape != expected:
        raise shape_mismatch("logit gradient", expected, dlogits.shape)

    grads: Params = {}
    dcoarse = bilinear_upsample_backward(dlogits, cfg.downsample)
    decoder = net.decoder()
    dcontext, grads["decoder.weight"], grads["decoder.bias"] = conv1x1_backward(
        cache.context, decoder.weight, dcoarse
    )

    sca_grads = sca_backward(cache.features, cache.dependencies, net.sca_params(), dcontext)
    grads["sca.w_d"] = sca_grads.dw_d
    grads["sca.w_c"] = sca_grads.dw_c
    dfeatures = sca_grads.dx

    if cfg.mode == "sca":
        if cache.cdp is not None:
            dcdp_input, cdp_grads = cdp_backward(cache.cdp, sca_grads.da)
            dfeatures = dfeatures + dcdp_input
            for k, layer in enumerate(cdp_grads.hidden):
                grads[f"cdp.hidden.{k}.weight"] = layer.weight
                grads[f"cdp.hidden.{k}.bias"] = layer.bias
            grads["cdp.head.weight"] = cdp_grads.head.weight
            grads["cdp.head.bias"] = cdp_grads.head.bias
        else:
            # A was supplied from outside, so the predictor took no part
            for name in net.params:
                if name.startswith("cdp."):
                    grads[name] = np.zeros_like(net.params[name])

    layers = net.encoder_layers()
    for k in reversed(range(len(layers))):
        layer, stride = layers[k]
        dpre = relu_backward(cache.encoder.pre_activations[k], dfeatures)
        dfeatures, grads[f"encoder.{k}.weight"], grads[f"encoder.{k}.bias"] = conv3x3_backward(
            cache.encoder.inputs[k], layer.weight, dpre, stride
        )

    return {name: grads[name] for name in net.params}


def predict_labels(logits: FeatureMap) -> np.ndarray:
    """Per-pixel argmax; ties go to the lowest class index."""
    return np.argmax(logits, axis=2)


# -- dependency masks -------------------------------------------------------


def _dependency_rows(net: Network, image: FeatureMap) -> np.ndarray:
    if net.config.mode != "sca":
        raise UsageError(f"dependency masks need a network in sca mode, got {net.config.mode}")
    features, _ = encode(net, image)
    return cdp_predict(features, net.cdp_params())


def _normalize(row: np.ndarray, shape: Tuple[int, int]) -> FeatureMap:
    peak = row.max()
    mask = row / peak if peak > 0 else np.zeros_like(row)
    return mask.reshape(shape[0], shape[1], 1)


def dependency_mask(net: Network, image: FeatureMap, neuron: int) -> FeatureMap:
    """Row ``neuron`` of A on the neuron grid, scaled so its maximum is 1."""
    a = _dependency_rows(net, image)
    n = a.shape[0]
    if not 0 <= neuron < n:
        raise UsageError(f"neuron index {neuron} out of range [0, {n})")
    return _normalize(a[neuron], net.config.grid_shape)


def region_dependency_mask(net: Network, image: FeatureMap, neurons: Sequence[int]) -> FeatureMap:
    """Mean dependency row over a set of neurons, normalized like ``dependency_mask``."""
    a = _dependency_rows(net, image)
    n = a.shape[0]
    indices = list(neurons)
    if not indices:
        raise UsageError("a region needs at least one neuron")
    for neuron in indices:
        if not 0 <= neuron < n:
            raise UsageError(f"neuron index {neuron} out of range [0, {n})")
    return _normalize(a[indices].mean(axis=0), net.config.grid_shape)


def grid_neurons(n: int) -> List[int]:
    """Every ``ceil(n / 16)``-th neuron, at most 16 of them."""
    step = -(-n // 16)
    return list(range(0, n, step))


# -- checkpoints ------------------------------------------------------------


def serialize(net: Network) -> bytes:
    """SCA1 container: magic, u32 version, u32-prefixed config JSON, manifest, '<f8' payloads."""
    out = bytearray(CHECKPOINT_MAGIC)
    out += struct.pack("<I", CHECKPOINT_VERSION)
    config_blob = net.config.model_dump_json().encode("utf-8")
    out += struct.pack("<I", len(config_blob)) + config_blob
    out += struct.pack("<I", len(net.params))
    for name, value in net.params.items():
        encoded = name.encode("utf-8")
        out += struct.pack("<I", len(encoded)) + encoded
        out += struct.pack("<I", value.ndim)
        out += struct.pack(f"<{value.ndim}I", *value.shape)
    for value in net.params.values():
        out += np.ascontiguousarray(value, dtype="<f8").tobytes()
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.data):
            raise FormatError(f"checkpoint truncated while reading {what}", self.offset)
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def deserialize(data: bytes) -> Network:
    reader = _Reader(data)
    if reader.take(4, "magic") != CHECKPOINT_MAGIC:
        raise FormatError("not an SCA1 checkpoint", 0)
    version_offset = reader.offset
    version = reader.u32("version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", version_offset)

    config_offset = reader.offset
    config_blob = reader.take(reader.u32("config length"), "config")
    try:
        config = NetworkConfig.model_validate_json(config_blob)
    except ValidationError as exc:
        raise FormatError(f"invalid network config in checkpoint: {exc}", config_offset) from exc

    expected = build_network(config, seed=0).params
    count_offset = reader.offset
    count = reader.u32("tensor count")
    if count != len(expected):
        raise FormatError(f"checkpoint holds {count} tensors, config needs {len(expected)}", count_offset)

    manifest: List[Tuple[str, Tuple[int, ...]]] = []
    for _ in range(count):
        entry_offset = reader.offset
        name = reader.take(reader.u32("name length"), "tensor name").decode("utf-8", errors="replace")
        rank = reader.u32("rank")
        shape = struct.unpack(f"<{rank}I", reader.take(4 * rank, "dims"))
        if name not in expected or expected[name].shape != shape:
            raise FormatError(f"unexpected tensor {name} with shape {shape}", entry_offset)
        manifest.append((name, shape))

    params: Params = {}
    for name, shape in manifest:
        size = int(np.prod(shape, dtype=np.int64))
        payload = reader.take(8 * size, f"payload of {name}")
        params[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(DTYPE)
    if reader.offset != len(data):
        raise FormatError("trailing bytes after last tensor", reader.offset)
    if list(params) != list(expected):
        raise FormatError("tensor order does not match the network layout", count_offset)
    return Network(config, params)


def save_checkpoint(net: Network, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(serialize(net))
    return path


def load_checkpoint(path: Union[str, Path]) -> Network:
    return deserialize(Path(path).read_bytes())
