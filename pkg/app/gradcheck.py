"""Central finite differences against the analytic backward passes.

Errors are reported per gradient group as
``max |analytic - numeric| / max(max |analytic|, max |numeric|)``, which stays
meaningful when individual entries are close to zero.
"""

from __future__ import annotations

from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.cdp import CdpParams, cdp_backward, cdp_forward
from app.config import GRADCHECK_STEP, GRADCHECK_TOLERANCE
from app.errors import UsageError
from app.schemas import GradcheckResult, NetworkConfig
from app.sca import ScaParams, sca_backward, sca_forward
from app.segnet import Network, backward, build_network, forward
from app.tensor import ConvParams, weighted_cross_entropy

# ReLU inputs closer to zero than this may cross the kink under a finite-difference step
KINK_MARGIN = 100 * GRADCHECK_STEP
_DRAW_ATTEMPTS = 100

GROUPS = ("dX", "dA", "dW_d", "dW_c", "CDP params", "encoder", "decoder")


def numerical_gradient(
    loss: Callable[[], float],
    array: np.ndarray,
    step: float = GRADCHECK_STEP,
    entries: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Perturb ``array`` in place one entry at a time; it is restored afterwards.

    ``entries`` is an optional boolean mask; unmasked entries stay zero.
    """
    grad = np.zeros_like(array, dtype=np.float64)
    flat = array.reshape(-1)
    out = grad.reshape(-1)
    selected = np.ones(flat.size, dtype=bool) if entries is None else entries.reshape(-1)
    for index in np.flatnonzero(selected):
        original = flat[index]
        flat[index] = original + step
        upper = loss()
        flat[index] = original - step
        lower = loss()
        flat[index] = original
        out[index] = (upper - lower) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric)) / scale)


def _compare(group: str, analytic: np.ndarray, numeric: np.ndarray, perturb: Optional[str]) -> float:
    if group == perturb:
        analytic = analytic * 1.01
    return relative_error(analytic, numeric)


def random_dependencies(rng: np.random.Generator, n: int) -> np.ndarray:
    a = rng.uniform(0.1, 2.0, size=(n, n))
    np.fill_diagonal(a, 1.0)
    return a


def random_bias(rng: np.random.Generator, size: int) -> np.ndarray:
    """Nonzero biases, magnitudes in [0.1, 0.5] with random signs."""
    return rng.uniform(0.1, 0.5, size=size) * rng.choice([-1.0, 1.0], size=size)


def clear_of_kinks(pre_activations: Sequence[np.ndarray], margin: float = KINK_MARGIN) -> bool:
    """True when no ReLU input lies within ``margin`` of zero."""
    return all(float(np.min(np.abs(pre), initial=np.inf)) >= margin for pre in pre_activations)


def check_operator(
    rng: np.random.Generator,
    height: int,
    width: int,
    in_channels: int,
    out_channels: int,
    perturb: Optional[str] = None,
) -> Dict[str, float]:
    """dX, dA, dW_d, dW_c of the aggregation operator under a random linear loss."""
    n = height * width
    x = rng.standard_normal((height, width, in_channels))
    a = random_dependencies(rng, n)
    w_d = rng.standard_normal((out_channels, in_channels))
    w_c = rng.standard_normal((out_channels, in_channels))
    upstream = rng.standard_normal((height, width, out_channels))

    def loss() -> float:
        return float(np.sum(sca_forward(x, a, ScaParams(w_d, w_c)) * upstream))

    grads = sca_backward(x, a, ScaParams(w_d, w_c), upstream)
    # the diagonal is pinned to 1, so only off-diagonal entries are perturbed
    off_diagonal = ~np.eye(n, dtype=bool)
    return {
        "dX": _compare("dX", grads.dx, numerical_gradient(loss, x), perturb),
        "dA": _compare("dA", grads.da, numerical_gradient(loss, a, entries=off_diagonal), perturb),
        "dW_d": _compare("dW_d", grads.dw_d, numerical_gradient(loss, w_d), perturb),
        "dW_c": _compare("dW_c", grads.dw_c, numerical_gradient(loss, w_c), perturb),
    }


def predictor_instance(
    rng: np.random.Generator,
    height: int,
    width: int,
    in_channels: int,
    layers: int = 2,
    features: int = 4,
) -> Tuple[np.ndarray, CdpParams]:
    """Input and float64 predictor parameters whose hidden ReLU inputs avoid the kink."""
    for _ in range(_DRAW_ATTEMPTS):
        x = rng.standard_normal((height, width, in_channels))
        drawn = CdpParams.initialize(rng, in_channels, layers, features)
        cdp = CdpParams(
            tuple(
                ConvParams(layer.weight.astype(np.float64), random_bias(rng, layer.out_channels))
                for layer in drawn.hidden
            ),
            ConvParams(drawn.head.weight.astype(np.float64), random_bias(rng, 1)),
        )
        _, cache = cdp_forward(x, cdp)
        if clear_of_kinks(cache.pre_activations):
            return x, cdp
    raise UsageError(f"no kink-free predictor instance in {_DRAW_ATTEMPTS} draws")


def check_predictor(
    rng: np.random.Generator,
    height: int,
    width: int,
    in_channels: int,
    out_channels: int,
    layers: int = 2,
    features: int = 4,
    perturb: Optional[str] = None,
) -> Dict[str, float]:
    """Predictor composed with the operator; the input gradient covers both paths."""
    x, cdp = predictor_instance(rng, height, width, in_channels, layers, features)
    sca = ScaParams(rng.standard_normal((out_channels, in_channels)), rng.standard_normal((out_channels, in_channels)))
    upstream = rng.standard_normal((height, width, out_channels))

    def loss() -> float:
        a, _ = cdp_forward(x, cdp)
        return float(np.sum(sca_forward(x, a, sca) * upstream))

    a, cache = cdp_forward(x, cdp)
    op_grads = sca_backward(x, a, sca, upstream)
    dx_cdp, cdp_grads = cdp_backward(cache, op_grads.da)

    analytic, numeric = [], []
    for layer, grad in zip((*cdp.hidden, cdp.head), (*cdp_grads.hidden, cdp_grads.head)):
        for value, dvalue in ((layer.weight, grad.weight), (layer.bias, grad.bias)):
            analytic.append(dvalue.ravel())
            numeric.append(numerical_gradient(loss, value).ravel())
    return {
        "CDP params": _compare("CDP params", np.concatenate(analytic), np.concatenate(numeric), perturb),
        "dX": _compare("dX", op_grads.dx + dx_cdp, numerical_gradient(loss, x), perturb),
    }


GRADCHECK_NETWORK = NetworkConfig(
    image_height=16,
    image_width=16,
    encoder_widths=[4, 4],
    downsample=4,
    feature_channels=4,
    sca_channels=4,
    cdp_layers=1,
    cdp_features=4,
    num_classes=3,
    mode="sca",
)


def network_instance(rng: np.random.Generator, seed: int) -> Tuple[Network, np.ndarray]:
    """Float64 network with nonzero biases and an image that keeps every ReLU input off the kink."""
    net = build_network(GRADCHECK_NETWORK, seed)
    for _ in range(_DRAW_ATTEMPTS):
        params = {
            name: random_bias(rng, value.size) if name.endswith(".bias") else value.astype(np.float64)
            for name, value in net.params.items()
        }
        candidate = net.with_params(params)
        image = rng.uniform(0.0, 1.0, size=(16, 16, 3))
        _, cache, _ = forward(candidate, image)
        if clear_of_kinks([*cache.encoder.pre_activations, *cache.cdp.pre_activations]):
            return candidate, image
    raise UsageError(f"no kink-free network instance in {_DRAW_ATTEMPTS} draws")


def check_network(rng: np.random.Generator, seed: int, perturb: Optional[str] = None) -> Dict[str, float]:
    """Encoder and decoder gradients of a 16x16, 3-class, s=4 network under the training loss."""
    net, image = network_instance(rng, seed)
    labels = rng.integers(0, 3, size=(16, 16))
    weights = np.array([1.0, 2.0, 4.0])

    def loss() -> float:
        logits, _, _ = forward(net, image)
        return weighted_cross_entropy(logits, labels, weights)[0]

    logits, cache, _ = forward(net, image)
    _, dlogits = weighted_cross_entropy(logits, labels, weights)
    grads = backward(net, cache, dlogits)

    errors: Dict[str, float] = {}
    for group, prefix in (("encoder", "encoder."), ("decoder", "decoder.")):
        names = [name for name in net.params if name.startswith(prefix)]
        analytic = np.concatenate([grads[name].ravel() for name in names])
        numeric = np.concatenate([numerical_gradient(loss, net.params[name]).ravel() for name in names])
        errors[group] = _compare(group, analytic, numeric, perturb)
    return errors


def run_gradcheck(
    seed: int = 0,
    seeds: int = 20,
    height: int = 4,
    width: int = 4,
    in_channels: int = 8,
    out_channels: int = 8,
    network: bool = True,
    tolerance: float = GRADCHECK_TOLERANCE,
    perturb: Optional[str] = None,
) -> List[GradcheckResult]:
    """Worst error per group over ``seeds`` consecutive seeds starting at ``seed``.

    ``perturb`` names a group whose analytic gradient is scaled by 1.01 before
    comparison, to show the harness notices a broken backward.
    """
    if perturb is not None and perturb not in GROUPS:
        raise ValueError(f"unknown gradient group {perturb!r}; choose from {', '.join(GROUPS)}")
    worst: Dict[str, float] = {}
    for offset in range(seeds):
        rng = np.random.default_rng(seed + offset)
        found = [
            check_operator(rng, height, width, in_channels, out_channels, perturb),
            check_predictor(rng, height, width, in_channels, out_channels, perturb=perturb),
        ]
        if network:
            found.append(check_network(rng, seed + offset, perturb))
        for errors in found:
            for group, error in errors.items():
                worst[group] = max(worst.get(group, 0.0), error)

    return [
        GradcheckResult(group=group, max_relative_error=worst[group], passed=worst[group] < tolerance)
        for group in GROUPS
        if group in worst
    ]
