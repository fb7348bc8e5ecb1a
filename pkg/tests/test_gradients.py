"""Central-finite-difference checks of every hand-written backward pass.

Each architecture is exercised on random tiny instances (hidden sizes <= 4,
sequence lengths <= 6) with every structural variant (layer norm, weight
norm, dropout, multi-layer) represented.
"""

import numpy as np
import pytest

from rulkit.regressors.base import TabularRegressorSpec
from rulkit.regressors.mlp import MLPModel
from rulkit.regressors.recurrent import RecurrentNet
from rulkit.regressors.tcn import TCNNet
from rulkit.seeding import rng_for

FD_STEP = 1e-6
REL_TOL = 1e-4
# Floor on the relative-error denominator: central differences of a loss of
# order 1 carry ~1e-10 of roundoff, so gradients this small cannot be
# resolved by FD at all and would otherwise divide noise by noise.
DENOM_FLOOR = 1e-4


def randomize_params(params: dict, rng, scale: float = 0.3) -> None:
    """Move every parameter to a generic point. Zero-initialized biases and
    heads would otherwise park ReLU preactivations exactly on the kink, where
    finite differences measure the subgradient ambiguity instead of the
    backward pass."""
    for name, array in params.items():
        params[name] = array + scale * rng.standard_normal(array.shape)


def max_relative_gradient_error(loss_fn, grads, params) -> float:
    worst = 0.0
    for name, array in params.items():
        flat = array.reshape(-1)
        grad_flat = np.asarray(grads[name], dtype=float).reshape(-1)
        for idx in range(flat.size):
            original = flat[idx]
            flat[idx] = original + FD_STEP
            up = loss_fn(params)
            flat[idx] = original - FD_STEP
            down = loss_fn(params)
            flat[idx] = original
            fd = (up - down) / (2.0 * FD_STEP)
            scale = max(abs(fd), abs(grad_flat[idx]), DENOM_FLOOR)
            worst = max(worst, abs(fd - grad_flat[idx]) / scale)
    return worst


def random_batch(rng, n_channels, with_mask=True):
    B, T = int(rng.integers(2, 4)), int(rng.integers(3, 7))
    X = rng.standard_normal((B, T, n_channels))
    Y = rng.standard_normal((B, T))
    M = np.ones((B, T))
    if with_mask and B > 1:
        M[-1, int(rng.integers(1, T)) :] = 0.0
    return X, Y, M


def recurrent_cases(cell):
    # (hidden, layers, dropout, layer_norm) covering every variant
    return [
        (3, 1, 0.0, False),
        (4, 2, 0.0, False),
        (3, 2, 0.3, False),
        (4, 1, 0.0, True),
        (3, 2, 0.25, True),
    ]


@pytest.mark.parametrize("cell", ["gru", "lstm"])
def test_recurrent_gradients(cell):
    case_index = 0
    for hidden, layers, dropout, layer_norm in recurrent_cases(cell):
        for rep in range(4):
            rng = rng_for(11, cell, case_index, rep)
            n_channels = int(rng.integers(1, 4))
            net = RecurrentNet(cell, n_channels, hidden, layers, dropout, layer_norm,
                               seed=int(rng.integers(1 << 30)))
            randomize_params(net.params, rng)
            X, Y, M = random_batch(rng, n_channels)
            masks = net.make_masks(rng_for(12, cell, case_index, rep), X.shape[0], X.shape[1])
            _, grads = net.loss_and_grads(net.params, X, Y, M, masks)
            err = max_relative_gradient_error(
                lambda p: net.loss_value(p, X, Y, M, masks), grads, net.params
            )
            assert err < REL_TOL, f"{cell} case {case_index} rep {rep}: rel err {err:.2e}"
        case_index += 1


TCN_CASES = [
    # (channels, kernel, levels, dropout, weight_norm)
    (3, 2, 1, 0.0, False),
    (4, 3, 2, 0.0, False),
    (3, 2, 2, 0.3, False),
    (4, 3, 1, 0.0, True),
    (3, 2, 3, 0.25, True),
]


def test_tcn_gradients():
    for case_index, (channels, kernel, levels, dropout, weight_norm) in enumerate(TCN_CASES):
        for rep in range(4):
            rng = rng_for(21, "tcn", case_index, rep)
            n_channels = int(rng.integers(1, 4))
            net = TCNNet(n_channels, channels, kernel, levels, dropout, weight_norm,
                         seed=int(rng.integers(1 << 30)))
            randomize_params(net.params, rng)
            X, Y, M = random_batch(rng, n_channels)
            masks = net.make_masks(rng_for(22, "tcn", case_index, rep), X.shape[0], X.shape[1])
            _, grads = net.loss_and_grads(net.params, X, Y, M, masks)
            err = max_relative_gradient_error(
                lambda p: net.loss_value(p, X, Y, M, masks), grads, net.params
            )
            assert err < REL_TOL, f"tcn case {case_index} rep {rep}: rel err {err:.2e}"


MLP_CASES = [
    ("relu", 1, 0.0),
    ("tanh", 1, 0.0),
    ("relu", 2, 0.25),
    ("tanh", 3, 0.4),
    ("relu", 3, 0.0),
]


def test_mlp_gradients():
    for case_index, (activation, layers, dropout) in enumerate(MLP_CASES):
        for rep in range(4):
            rng = rng_for(31, "mlp", case_index, rep)
            n_features = int(rng.integers(2, 5))
            params = {"activation": activation, "lr_schedule": "constant",
                      "hidden_size": 4, "num_layers": layers, "learning_rate": 0.01}
            if layers > 1:
                params["dropout"] = dropout
            spec = TabularRegressorSpec("mlp", params)
            model = MLPModel(spec, tuple(f"f{i}" for i in range(n_features)),
                             seed=int(rng.integers(1 << 30)))
            randomize_params(model.params, rng)
            B = int(rng.integers(3, 7))
            X = rng.standard_normal((B, n_features))
            y = rng.standard_normal(B)
            masks = None
            if layers > 1 and dropout > 0:
                mask_rng = rng_for(32, "mlp", case_index, rep)
                masks = [
                    (mask_rng.random((B, 4)) < 1 - dropout) / (1 - dropout)
                    for _ in range(layers)
                ]
            _, grads = model.loss_and_grads(model.params, X, y, masks)
            err = max_relative_gradient_error(
                lambda p: model.loss_value(p, X, y, masks), grads, model.params
            )
            assert err < REL_TOL, f"mlp case {case_index} rep {rep}: rel err {err:.2e}"
