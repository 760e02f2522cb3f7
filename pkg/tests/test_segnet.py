from __future__ import annotations

import numpy as np
import pytest
from pydantic import ValidationError

from app.errors import FormatError, ShapeError, UsageError
from app.gradcheck import check_network, numerical_gradient, relative_error
from app.schemas import NetworkConfig
from app.segnet import (
    Network,
    backward,
    build_network,
    dependency_mask,
    deserialize,
    encode,
    forward,
    grid_neurons,
    load_checkpoint,
    parameter_count,
    parameter_groups,
    predict_labels,
    region_dependency_mask,
    save_checkpoint,
    serialize,
)
from app.tensor import weighted_cross_entropy


def as_mode(net: Network, mode: str) -> Network:
    config = net.config.model_copy(update={"mode": mode})
    params = {k: v for k, v in net.params.items() if mode == "sca" or not k.startswith("cdp.")}
    return Network(config, params)


def test_build_is_deterministic(tiny_config):
    assert serialize(build_network(tiny_config, 3)) == serialize(build_network(tiny_config, 3))
    assert serialize(build_network(tiny_config, 3)) != serialize(build_network(tiny_config, 4))


def test_baseline_modes_have_no_predictor(tiny_config):
    for mode in ("baseline_no", "baseline_ave"):
        net = build_network(tiny_config.model_copy(update={"mode": mode}), 0)
        assert net.cdp_params() is None
        assert not any(name.startswith("cdp.") for name in net.params)


def test_parameter_count_by_hand(tiny_config):
    net = build_network(tiny_config, 0)
    encoder = (4 * 3 * 9 + 4) + 2 * (4 * 4 * 9 + 4)
    sca = 2 * 4 * 4
    cdp = (4 * 4 + 4) + (1 * 8 + 1)
    decoder = 4 * 4 + 4
    assert parameter_count(net) == encoder + sca + cdp + decoder


def test_parameter_groups_split_encoder_from_the_rest(tiny_config):
    groups = parameter_groups(build_network(tiny_config, 0))
    assert groups["encoder.0.weight"] == "encoder"
    assert groups["sca.w_c"] == "sca_and_decoder"
    assert groups["cdp.head.bias"] == "sca_and_decoder"
    assert groups["decoder.weight"] == "sca_and_decoder"


def test_config_rejects_bad_geometry():
    with pytest.raises(ValidationError):
        NetworkConfig(downsample=3)
    with pytest.raises(ValidationError):
        NetworkConfig(image_height=30, downsample=4)
    with pytest.raises(ValidationError):
        NetworkConfig(encoder_widths=[], downsample=4)


def test_forward_shapes(tiny_config, rng):
    net = build_network(tiny_config, 0)
    logits, _, a = forward(net, rng.uniform(size=(16, 16, 3)))
    assert logits.shape == (16, 16, 4)
    assert a.shape == (16, 16)
    assert predict_labels(logits).shape == (16, 16)


def test_forward_rejects_wrong_image_size(tiny_config, rng):
    with pytest.raises(ShapeError):
        forward(build_network(tiny_config, 0), rng.uniform(size=(8, 8, 3)))


@pytest.mark.parametrize("mode,dependencies", [("baseline_no", np.eye(16)), ("baseline_ave", np.ones((16, 16)))])
def test_baselines_are_the_sca_path_with_fixed_dependencies(tiny_config, rng, mode, dependencies):
    net = build_network(tiny_config, 5)
    image = rng.uniform(size=(16, 16, 3))
    baseline_logits, _, baseline_a = forward(as_mode(net, mode), image)
    forced_logits, _, _ = forward(net, image, dependencies=dependencies)
    np.testing.assert_array_equal(baseline_a, dependencies)
    np.testing.assert_array_equal(baseline_logits, forced_logits)


def test_backward_rejects_a_stale_cache(tiny_config, rng):
    net = build_network(tiny_config, 0)
    logits, cache, _ = forward(net, rng.uniform(size=(16, 16, 3)))
    moved = net.with_params({k: v + 0.0 for k, v in net.params.items()})
    with pytest.raises(UsageError):
        backward(moved, cache, np.zeros_like(logits))


def test_forced_dependencies_leave_the_predictor_untouched(tiny_config, rng):
    net = build_network(tiny_config, 0)
    logits, cache, _ = forward(net, rng.uniform(size=(16, 16, 3)), dependencies=np.ones((16, 16)))
    grads = backward(net, cache, rng.standard_normal(logits.shape))
    assert list(grads) == list(net.params)
    assert all(not grads[name].any() for name in grads if name.startswith("cdp."))


def test_encoder_and_decoder_gradients_match_finite_differences():
    errors = check_network(np.random.default_rng(0), seed=0)
    assert errors["encoder"] < 1e-4
    assert errors["decoder"] < 1e-4


def test_aggregation_and_predictor_gradients_through_the_network(tiny_config, rng):
    net = build_network(tiny_config.model_copy(update={"num_classes": 3}), 2)
    image = rng.uniform(size=(16, 16, 3))
    labels = rng.integers(0, 3, size=(16, 16))
    weights = np.array([1.0, 2.0, 4.0])

    def loss():
        logits, _, _ = forward(net, image)
        return weighted_cross_entropy(logits, labels, weights)[0]

    logits, cache, _ = forward(net, image)
    grads = backward(net, cache, weighted_cross_entropy(logits, labels, weights)[1])
    for name in ("sca.w_d", "sca.w_c", "cdp.hidden.0.weight", "cdp.head.weight"):
        assert relative_error(grads[name], numerical_gradient(loss, net.params[name])) < 1e-4, name


def test_encoder_commutes_with_horizontal_flip(rng):
    config = NetworkConfig(
        image_height=8,
        image_width=8,
        encoder_widths=[3],
        downsample=1,
        feature_channels=4,
        sca_channels=4,
        num_classes=3,
        mode="baseline_no",
    )
    net = build_network(config, 0)
    params = dict(net.params)
    for name, value in params.items():
        if name.startswith("encoder.") and name.endswith(".weight"):
            params[name] = 0.5 * (value + value[:, :, :, ::-1])
    net = net.with_params(params)
    image = rng.uniform(size=(8, 8, 3))

    features, _ = encode(net, image)
    flipped, _ = encode(net, image[:, ::-1].copy())
    np.testing.assert_allclose(flipped, features[:, ::-1], atol=1e-12)


def test_dependency_mask_is_normalized(tiny_config, rng):
    net = build_network(tiny_config, 0)
    image = rng.uniform(size=(16, 16, 3))
    mask = dependency_mask(net, image, 5)
    assert mask.shape == (4, 4, 1)
    assert mask.max() == pytest.approx(1.0)
    assert mask.min() >= 0.0


def test_dependency_mask_edge_cases(tiny_config, rng):
    net = build_network(tiny_config, 0)
    image = rng.uniform(size=(16, 16, 3))
    with pytest.raises(UsageError):
        dependency_mask(net, image, 16)
    with pytest.raises(UsageError):
        dependency_mask(as_mode(net, "baseline_ave"), image, 0)


def test_region_mask_of_one_neuron_is_its_mask(tiny_config, rng):
    net = build_network(tiny_config, 0)
    image = rng.uniform(size=(16, 16, 3))
    np.testing.assert_allclose(region_dependency_mask(net, image, [7]), dependency_mask(net, image, 7))
    with pytest.raises(UsageError):
        region_dependency_mask(net, image, [])


def test_grid_neurons_spacing():
    assert grid_neurons(64) == list(range(0, 64, 4))
    assert grid_neurons(10) == list(range(10))
    assert len(grid_neurons(1000)) <= 16


def test_checkpoint_round_trip(tiny_config, rng, tmp_path):
    net = build_network(tiny_config, 9)
    path = save_checkpoint(net, tmp_path / "net.sca")
    loaded = load_checkpoint(path)
    assert loaded.config == net.config
    assert list(loaded.params) == list(net.params)
    for name in net.params:
        np.testing.assert_array_equal(loaded.params[name], net.params[name])
    image = rng.uniform(size=(16, 16, 3))
    np.testing.assert_array_equal(forward(loaded, image)[0], forward(net, image)[0])


def test_checkpoint_rejects_bad_magic(tiny_config):
    data = serialize(build_network(tiny_config, 0))
    with pytest.raises(FormatError) as excinfo:
        deserialize(b"XXXX" + data[4:])
    assert excinfo.value.offset == 0


def test_checkpoint_rejects_truncation_and_trailing_bytes(tiny_config):
    data = serialize(build_network(tiny_config, 0))
    with pytest.raises(FormatError, match="truncated"):
        deserialize(data[:-3])
    with pytest.raises(FormatError, match="trailing"):
        deserialize(data + b"\x00")


def test_checkpoint_rejects_unknown_version(tiny_config):
    data = bytearray(serialize(build_network(tiny_config, 0)))
    data[4] = 2
    with pytest.raises(FormatError) as excinfo:
        deserialize(bytes(data))
    assert excinfo.value.offset == 4
