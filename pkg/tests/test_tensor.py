from __future__ import annotations

import math

import numpy as np
import pytest

from app.errors import DataError, ShapeError
from app.gradcheck import numerical_gradient, relative_error
from app.tensor import (
    OptimizerState,
    bilinear_upsample,
    bilinear_upsample_backward,
    conv1x1,
    conv1x1_backward,
    conv3x3,
    conv3x3_backward,
    relu,
    relu_backward,
    sgd_momentum_step,
    softplus,
    softplus_backward,
    weighted_cross_entropy,
)


def test_bilinear_upsample_matches_hand_values():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])[:, :, None]
    out = bilinear_upsample(x, 2)[:, :, 0]
    expected = np.array(
        [
            [1.0, 1.25, 1.75, 2.0],
            [1.5, 1.75, 2.25, 2.5],
            [2.5, 2.75, 3.25, 3.5],
            [3.0, 3.25, 3.75, 4.0],
        ]
    )
    np.testing.assert_allclose(out, expected, atol=1e-15)


def test_bilinear_upsample_factor_one_is_identity(rng):
    x = rng.standard_normal((3, 5, 2))
    np.testing.assert_array_equal(bilinear_upsample(x, 1), x)


def test_bilinear_upsample_backward_is_adjoint(rng):
    x = rng.standard_normal((3, 4, 2))
    dout = rng.standard_normal((12, 16, 2))
    lhs = np.sum(bilinear_upsample(x, 4) * dout)
    rhs = np.sum(x * bilinear_upsample_backward(dout, 4))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_conv3x3_identity_kernel_copies_input(rng):
    x = rng.standard_normal((5, 6, 3))
    weight = np.zeros((3, 3, 3, 3))
    for c in range(3):
        weight[c, c, 1, 1] = 1.0
    np.testing.assert_allclose(conv3x3(x, weight, np.zeros(3)), x, atol=1e-15)


@pytest.mark.parametrize("height,width,stride,expected", [(8, 8, 2, (4, 4)), (7, 5, 2, (4, 3)), (4, 6, 1, (4, 6))])
def test_conv3x3_output_size_is_ceil(rng, height, width, stride, expected):
    x = rng.standard_normal((height, width, 2))
    out = conv3x3(x, rng.standard_normal((3, 2, 3, 3)), np.zeros(3), stride)
    assert out.shape == (*expected, 3)


def test_conv3x3_rejects_mismatched_channels(rng):
    with pytest.raises(ShapeError):
        conv3x3(rng.standard_normal((4, 4, 2)), rng.standard_normal((3, 5, 3, 3)), np.zeros(3))


@pytest.mark.parametrize("stride", [1, 2])
def test_conv3x3_backward_matches_finite_differences(rng, stride):
    x = rng.standard_normal((5, 4, 2))
    weight = rng.standard_normal((3, 2, 3, 3))
    bias = rng.standard_normal(3)
    upstream = rng.standard_normal(conv3x3(x, weight, bias, stride).shape)

    def loss():
        return float(np.sum(conv3x3(x, weight, bias, stride) * upstream))

    dx, dweight, dbias = conv3x3_backward(x, weight, upstream, stride)
    assert relative_error(dx, numerical_gradient(loss, x)) < 1e-6
    assert relative_error(dweight, numerical_gradient(loss, weight)) < 1e-6
    assert relative_error(dbias, numerical_gradient(loss, bias)) < 1e-6


def test_conv1x1_backward_matches_finite_differences(rng):
    x = rng.standard_normal((3, 3, 4))
    weight = rng.standard_normal((2, 4))
    bias = rng.standard_normal(2)
    upstream = rng.standard_normal((3, 3, 2))

    def loss():
        return float(np.sum(conv1x1(x, weight, bias) * upstream))

    dx, dweight, dbias = conv1x1_backward(x, weight, upstream)
    assert relative_error(dx, numerical_gradient(loss, x)) < 1e-6
    assert relative_error(dweight, numerical_gradient(loss, weight)) < 1e-6
    assert relative_error(dbias, numerical_gradient(loss, bias)) < 1e-6


def test_softplus_values():
    assert softplus(np.array(0.0)) == pytest.approx(math.log(2.0), abs=1e-15)
    assert np.isfinite(softplus(np.array(1000.0)))
    assert softplus(np.array(1000.0)) == pytest.approx(1000.0)
    assert np.all(softplus(np.linspace(-50, 50, 11)) >= 0.0)


def test_softplus_backward_is_sigmoid():
    x = np.array([-2.0, 0.0, 3.0])
    np.testing.assert_allclose(softplus_backward(x, np.ones(3)), 1.0 / (1.0 + np.exp(-x)), rtol=1e-12)


def test_relu_backward_masks_nonpositive_inputs():
    x = np.array([-1.0, 0.0, 2.0])
    np.testing.assert_array_equal(relu(x), [0.0, 0.0, 2.0])
    np.testing.assert_array_equal(relu_backward(x, np.array([5.0, 5.0, 5.0])), [0.0, 0.0, 5.0])


def test_cross_entropy_uniform_logits_is_weighted_log_k():
    logits = np.zeros((2, 2, 4))
    labels = np.array([[0, 1], [2, 3]])
    weights = np.array([1.0, 2.0, 2.0, 4.0])
    loss, _ = weighted_cross_entropy(logits, labels, weights)
    assert loss == pytest.approx(np.mean(weights) * math.log(4.0), rel=1e-12)


def test_cross_entropy_ignores_label_255():
    logits = np.zeros((1, 2, 3))
    labels = np.array([[1, 255]])
    loss, grad = weighted_cross_entropy(logits, labels, np.ones(3))
    assert loss == pytest.approx(math.log(3.0))
    np.testing.assert_array_equal(grad[0, 1], np.zeros(3))


def test_cross_entropy_all_ignored_is_zero():
    loss, grad = weighted_cross_entropy(np.ones((2, 2, 3)), np.full((2, 2), 255), np.ones(3))
    assert loss == 0.0
    assert not grad.any()


def test_cross_entropy_rejects_out_of_range_labels():
    with pytest.raises(DataError):
        weighted_cross_entropy(np.zeros((1, 1, 3)), np.array([[3]]), np.ones(3))


def test_cross_entropy_gradient_matches_finite_differences(rng):
    logits = rng.standard_normal((3, 3, 4))
    labels = rng.integers(0, 4, size=(3, 3))
    labels[0, 0] = 255
    weights = np.array([1.0, 2.0, 4.0, 8.0])

    def loss():
        return weighted_cross_entropy(logits, labels, weights)[0]

    _, grad = weighted_cross_entropy(logits, labels, weights)
    assert relative_error(grad, numerical_gradient(loss, logits)) < 1e-6


def test_momentum_step_accumulates_velocity():
    params = {"w": np.array([1.0, -1.0])}
    grads = {"w": np.array([0.5, 0.5])}
    state = OptimizerState.zeros_like(params, momentum=0.9)

    first, state = sgd_momentum_step(params, grads, state, 0.1)
    np.testing.assert_allclose(first["w"], [0.95, -1.05])
    second, state = sgd_momentum_step(first, grads, state, 0.1)
    np.testing.assert_allclose(second["w"], first["w"] - 0.1 * (0.9 * 0.5 + 0.5))
    assert state.iteration == 2
    np.testing.assert_array_equal(params["w"], [1.0, -1.0])


def test_momentum_step_uses_per_parameter_rates():
    params = {"a": np.ones(1), "b": np.ones(1)}
    grads = {"a": np.ones(1), "b": np.ones(1)}
    new, _ = sgd_momentum_step(params, grads, OptimizerState.zeros_like(params), {"a": 0.0, "b": 0.5})
    assert new["a"][0] == 1.0
    assert new["b"][0] == 0.5


def test_conv1x1_identity_and_zero_weights(rng):
    x = rng.standard_normal((3, 4, 5))
    np.testing.assert_array_equal(conv1x1(x, np.eye(5), np.zeros(5)), x)
    bias = np.array([0.5, -2.0])
    out = conv1x1(x, np.zeros((2, 5)), bias)
    np.testing.assert_array_equal(out, np.broadcast_to(bias, (3, 4, 2)))


def test_conv1x1_matches_a_per_location_loop(rng):
    x = rng.standard_normal((2, 2, 3))
    weight = rng.standard_normal((4, 3))
    bias = rng.standard_normal(4)
    expected = np.zeros((2, 2, 4))
    for h in range(2):
        for w in range(2):
            for o in range(4):
                expected[h, w, o] = bias[o] + sum(weight[o, i] * x[h, w, i] for i in range(3))
    np.testing.assert_allclose(conv1x1(x, weight, bias), expected, rtol=1e-12, atol=1e-12)


def test_conv1x1_is_linear_in_its_input(rng):
    x, y = rng.standard_normal((2, 3, 4, 3))
    weight = rng.standard_normal((2, 3))
    zero = np.zeros(2)
    combined = conv1x1(2.5 * x - 0.75 * y, weight, zero)
    separate = 2.5 * conv1x1(x, weight, zero) - 0.75 * conv1x1(y, weight, zero)
    np.testing.assert_allclose(combined, separate, atol=1e-12)


def test_conv3x3_all_ones_kernel_on_a_constant_map():
    value = 0.7
    out = conv3x3(np.full((5, 6, 1), value), np.ones((1, 1, 3, 3)), np.zeros(1))
    np.testing.assert_allclose(out[1:-1, 1:-1, 0], 9 * value, rtol=1e-14)
    # zero padding: corners see four pixels, edges six
    assert out[0, 0, 0] == pytest.approx(4 * value)
    assert out[0, 2, 0] == pytest.approx(6 * value)


@pytest.mark.parametrize("stride", [1, 2])
def test_conv3x3_matches_a_direct_loop(rng, stride):
    x = rng.standard_normal((5, 4, 2))
    weight = rng.standard_normal((3, 2, 3, 3))
    bias = rng.standard_normal(3)
    out = conv3x3(x, weight, bias, stride)

    expected = np.zeros(out.shape)
    for oh in range(out.shape[0]):
        for ow in range(out.shape[1]):
            for o in range(3):
                total = bias[o]
                for ky in range(3):
                    for kx in range(3):
                        h, w = oh * stride + ky - 1, ow * stride + kx - 1
                        if 0 <= h < 5 and 0 <= w < 4:
                            total += sum(weight[o, i, ky, kx] * x[h, w, i] for i in range(2))
                expected[oh, ow, o] = total
    np.testing.assert_allclose(out, expected, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("factor", [2, 4])
def test_bilinear_upsample_keeps_constant_maps_constant(factor):
    x = np.full((3, 5, 2), -1.25)
    np.testing.assert_allclose(bilinear_upsample(x, factor), np.full((3 * factor, 5 * factor, 2), -1.25), rtol=1e-14)


def test_cross_entropy_gradient_sums_to_zero_over_channels(rng):
    logits = rng.standard_normal((4, 3, 5))
    labels = rng.integers(0, 5, size=(4, 3))
    labels[0, 0] = 255
    _, grad = weighted_cross_entropy(logits, labels, np.array([1.0, 2.0, 4.0, 8.0, 16.0]))
    np.testing.assert_allclose(grad.sum(axis=2), 0.0, atol=1e-15)
