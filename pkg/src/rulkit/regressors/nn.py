"""Shared numeric kernel for the hand-written neural regressors.

All networks train in float64 with analytic gradients (verified against
central finite differences in the test suite), gradient descent with
momentum, decoupled weight decay and global-norm gradient clipping.
Parameters live in plain ``dict[str, np.ndarray]`` trees so finite-difference
checks and serialization stay trivial.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..seeding import rng_for


def init_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    """Uniform init scaled by fan-in."""
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


def copy_params(params: dict) -> dict:
    return {k: v.copy() for k, v in params.items()}


def global_norm(grads: dict) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    return float(np.sqrt(total))


def clip_grads(grads: dict, max_norm: float) -> dict:
    norm = global_norm(grads)
    if max_norm > 0.0 and norm > max_norm:
        scale = max_norm / norm
        return {k: g * scale for k, g in grads.items()}
    return grads


# -- activations -------------------------------------------------------------


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_grad(x: np.ndarray) -> np.ndarray:
    return (x > 0.0).astype(float)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# -- layer normalization ------------------------------------------------------

_LN_EPS = 1e-5


def layer_norm_forward(x: np.ndarray, gain: np.ndarray, bias: np.ndarray):
    """Normalize over the last axis; returns output and backward cache."""
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv
    return xhat * gain + bias, (xhat, inv, gain)


def layer_norm_backward(dout: np.ndarray, cache):
    xhat, inv, gain = cache
    n = xhat.shape[-1]
    dgain = np.sum(dout * xhat, axis=tuple(range(dout.ndim - 1)))
    dbias = np.sum(dout, axis=tuple(range(dout.ndim - 1)))
    dxhat = dout * gain
    dx = (
        dxhat - dxhat.mean(axis=-1, keepdims=True)
        - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True)
    ) * inv
    return dx, dgain, dbias


# -- dropout -------------------------------------------------------------------


def dropout_mask(rng: np.random.Generator, shape: tuple, rate: float) -> np.ndarray:
    """Inverted-dropout mask; multiply activations by it during training."""
    if rate <= 0.0:
        return np.ones(shape)
    keep = 1.0 - rate
    return (rng.random(shape) < keep).astype(float) / keep


# -- optimizer -----------------------------------------------------------------


class MomentumOptimizer:
    """EMA momentum: ``v = beta*v + (1-beta)*g``; decoupled weight decay."""

    def __init__(self, learning_rate: float, momentum_beta: float,
                 weight_decay: float = 0.0, grad_clip: float = 0.0):
        self.learning_rate = learning_rate
        self.momentum_beta = momentum_beta
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict, lr_scale: float = 1.0) -> None:
        grads = clip_grads(grads, self.grad_clip)
        lr = self.learning_rate * lr_scale
        for name, p in params.items():
            g = grads[name]
            v = self.velocity.get(name)
            if v is None:
                v = np.zeros_like(p)
            v = self.momentum_beta * v + (1.0 - self.momentum_beta) * g
            self.velocity[name] = v
            p -= lr * (v + self.weight_decay * p)

    def state(self) -> dict:
        return {k: v.copy() for k, v in self.velocity.items()}

    def load_state(self, state: dict) -> None:
        self.velocity = {k: v.copy() for k, v in state.items()}


# -- epoch loop ----------------------------------------------------------------


@dataclass
class TrainState:
    """Everything needed to resume training exactly where it stopped."""

    consumed_epochs: int = 0
    best_loss: float = np.inf
    best_params: dict | None = None
    epochs_since_improvement: int = 0
    optimizer_state: dict = field(default_factory=dict)
    hit_deadline: bool = False


def lr_scale_for(schedule: str, epoch: int) -> float:
    if schedule == "inv_sqrt":
        return 1.0 / np.sqrt(1.0 + epoch / 10.0)
    return 1.0


def run_epochs(
    *,
    params: dict,
    optimizer: MomentumOptimizer,
    n_examples: int,
    batch_size: int,
    batch_step,  # (params, indices, epoch, batch_idx) -> (loss, grads)
    full_loss,  # (params) -> float
    extra_epochs: int,
    seed: int,
    state: TrainState,
    patience: int | None = None,
    lr_schedule: str = "constant",
    deadline: float | None = None,
) -> TrainState:
    """Run ``extra_epochs`` more epochs on top of ``state``.

    Epoch indices are absolute (continuing a fit replays the exact same
    shuffle and dropout streams a single longer fit would have used), so
    ``fit(b1)`` then ``continue(b2)`` reproduces ``fit(b1 + b2)`` bit for bit.
    """
    optimizer.load_state(state.optimizer_state)
    if state.best_params is None:
        state.best_loss = full_loss(params)
        state.best_params = copy_params(params)
    batch_size = max(1, min(batch_size, n_examples))
    end_epoch = state.consumed_epochs + extra_epochs
    for epoch in range(state.consumed_epochs, end_epoch):
        if patience is not None and state.epochs_since_improvement >= patience:
            break
        if deadline is not None and time.monotonic() >= deadline:
            state.hit_deadline = True
            break
        order = rng_for(seed, "epoch-shuffle", epoch).permutation(n_examples)
        for batch_idx in range(0, n_examples, batch_size):
            if deadline is not None and time.monotonic() >= deadline:
                state.hit_deadline = True
                break
            indices = order[batch_idx : batch_idx + batch_size]
            loss, grads = batch_step(params, indices, epoch, batch_idx)
            if not np.isfinite(loss):
                raise FloatingPointError("training loss diverged to a non-finite value")
            optimizer.step(params, grads, lr_scale_for(lr_schedule, epoch))
        if state.hit_deadline:
            break
        state.consumed_epochs = epoch + 1
        epoch_loss = full_loss(params)
        if not np.isfinite(epoch_loss):
            raise FloatingPointError("training loss diverged to a non-finite value")
        if epoch_loss < state.best_loss - 1e-12:
            state.best_loss = epoch_loss
            state.best_params = copy_params(params)
            state.epochs_since_improvement = 0
        else:
            state.epochs_since_improvement += 1
    state.optimizer_state = optimizer.state()
    return state
