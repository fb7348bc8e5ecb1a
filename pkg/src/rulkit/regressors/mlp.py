"""Feed-forward regressor with hand-written backprop.

Inputs and targets are standardized internally; the output layer is
zero-initialized so an untrained network predicts the training-target mean.
"""

from __future__ import annotations

import numpy as np

from ..errors import DataError
from ..seeding import rng_for
from .base import FittedRegressor, TabularRegressorSpec, check_training_data
from .nn import (
    MomentumOptimizer,
    TrainState,
    dropout_mask,
    init_uniform,
    relu,
    relu_grad,
    run_epochs,
)

_BATCH_SIZE = 64
_MOMENTUM = 0.9
_GRAD_CLIP = 10.0


class MLPModel(FittedRegressor):
    kind = "mlp"

    def __init__(self, spec: TabularRegressorSpec, columns, seed: int):
        p = spec.hyperparams
        self.hyperparams = p
        self._columns = tuple(columns)
        self.seed = seed
        self.activation = p["activation"]
        self.num_layers = p["num_layers"]
        self.dropout = p.get("dropout", 0.0)
        self.consumed_budget = 0
        self.x_center = self.x_scale = None
        self.y_center, self.y_scale = 0.0, 1.0

        rng = rng_for(seed, "init")
        hidden = p["hidden_size"]
        self.params: dict[str, np.ndarray] = {}
        n_prev = len(self._columns)
        for layer in range(self.num_layers):
            self.params[f"l{layer}_W"] = init_uniform(rng, (n_prev, hidden), n_prev)
            self.params[f"l{layer}_b"] = np.zeros(hidden)
            n_prev = hidden
        self.params["head_W"] = np.zeros((hidden, 1))
        self.params["head_b"] = np.zeros(1)
        self.state = TrainState()

    @property
    def signature(self):
        return self._columns

    def _act(self, z):
        return relu(z) if self.activation == "relu" else np.tanh(z)

    def _act_grad(self, z, a):
        return relu_grad(z) if self.activation == "relu" else 1.0 - a * a

    def forward(self, params: dict, X: np.ndarray, masks=None):
        h = X
        caches = []
        for layer in range(self.num_layers):
            z = h @ params[f"l{layer}_W"] + params[f"l{layer}_b"]
            a = self._act(z)
            mask = masks[layer] if masks is not None else None
            out = a * mask if mask is not None else a
            caches.append((h, z, a, mask))
            h = out
        pred = (h @ params["head_W"] + params["head_b"]).ravel()
        return pred, (caches, h)

    def loss_value(self, params: dict, X, y, masks=None) -> float:
        pred, _ = self.forward(params, X, masks)
        return float(np.mean((pred - y) ** 2))

    def loss_and_grads(self, params: dict, X, y, masks=None):
        pred, (caches, h_last) = self.forward(params, X, masks)
        diff = pred - y
        loss = float(np.mean(diff**2))
        n = X.shape[0]
        dpred = (2.0 / n) * diff
        grads = {
            "head_W": h_last.T @ dpred[:, None],
            "head_b": np.array([dpred.sum()]),
        }
        dh = dpred[:, None] @ params["head_W"].T
        for layer in range(self.num_layers - 1, -1, -1):
            h_in, z, a, mask = caches[layer]
            if mask is not None:
                dh = dh * mask
            dz = dh * self._act_grad(z, a)
            grads[f"l{layer}_W"] = h_in.T @ dz
            grads[f"l{layer}_b"] = dz.sum(axis=0)
            dh = dz @ params[f"l{layer}_W"].T
        return loss, grads

    # -- training -------------------------------------------------------------

    def _standardize(self, X: np.ndarray) -> np.ndarray:
        return (X - self.x_center) / self.x_scale

    def fit_more(self, X, y, extra_budget: int, deadline: float | None = None) -> "MLPModel":
        X, y = check_training_data(X, y)
        if self.consumed_budget == 0:
            self.x_center = X.mean(axis=0)
            scale = X.std(axis=0)
            self.x_scale = np.where(scale > 0.0, scale, 1.0)
            self.y_center = float(np.mean(y))
            y_sd = float(np.std(y))
            self.y_scale = y_sd if y_sd > 0.0 else 1.0
        Xn = self._standardize(X)
        yn = (y - self.y_center) / self.y_scale
        use_dropout = self.dropout > 0.0 and self.num_layers > 1

        def batch_step(params, indices, epoch, batch_idx):
            masks = None
            if use_dropout:
                rng = rng_for(self.seed, "dropout", epoch, batch_idx)
                masks = [
                    dropout_mask(rng, (len(indices), params[f"l{l}_W"].shape[1]), self.dropout)
                    for l in range(self.num_layers)
                ]
            return self.loss_and_grads(params, Xn[indices], yn[indices], masks)

        optimizer = MomentumOptimizer(
            learning_rate=self.hyperparams["learning_rate"],
            momentum_beta=_MOMENTUM,
            grad_clip=_GRAD_CLIP,
        )
        try:
            self.state = run_epochs(
                params=self.params,
                optimizer=optimizer,
                n_examples=X.shape[0],
                batch_size=_BATCH_SIZE,
                batch_step=batch_step,
                full_loss=lambda p: self.loss_value(p, Xn, yn),
                extra_epochs=extra_budget,
                seed=self.seed,
                state=self.state,
                lr_schedule=self.hyperparams["lr_schedule"],
                deadline=deadline,
            )
        except FloatingPointError as exc:
            raise DataError(str(exc)) from None
        self.consumed_budget = self.state.consumed_epochs
        return self

    @property
    def deadline_hit(self) -> bool:
        return self.state.hit_deadline

    def predict(self, X: np.ndarray) -> np.ndarray:
        params = self.state.best_params or self.params
        pred, _ = self.forward(params, self._standardize(np.asarray(X, dtype=float)))
        return self.y_center + self.y_scale * pred
