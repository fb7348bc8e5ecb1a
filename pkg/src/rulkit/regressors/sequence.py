"""Sequence-to-sequence regression wrapper.

Packs variable-length sequences into padded, masked batches, standardizes
channels and targets on the training data, and trains the underlying network
(GRU/LSTM/TCN) with the shared epoch loop. Prediction returns the network
output at the final timestep of a prefix.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, DataError, FitError
from ..seeding import rng_for
from .base import FittedRegressor, SequenceRegressorSpec
from .nn import MomentumOptimizer, TrainState, run_epochs
from .recurrent import RecurrentNet
from .tcn import TCNNet


def _pack(sequences):
    """(values (d, T), targets (T,)) pairs -> padded (B, Tmax, d), (B, Tmax),
    and validity mask."""
    if not sequences:
        raise FitError("no training sequences")
    d = sequences[0][0].shape[0]
    lengths = []
    for values, targets in sequences:
        if values.ndim != 2 or values.shape[0] != d:
            raise ContractError("sequences disagree on channel count")
        if targets.shape != (values.shape[1],):
            raise ContractError("per-timestep targets must match the sequence length")
        if not np.isfinite(values).all() or not np.isfinite(targets).all():
            raise DataError("sequence data contains non-finite values")
        lengths.append(values.shape[1])
    t_max = max(lengths)
    B = len(sequences)
    X = np.zeros((B, t_max, d))
    Y = np.zeros((B, t_max))
    M = np.zeros((B, t_max))
    for b, (values, targets) in enumerate(sequences):
        t = values.shape[1]
        X[b, :t, :] = values.T
        Y[b, :t] = targets
        M[b, :t] = 1.0
    return X, Y, M, np.array(lengths)


class SequenceRegressorModel(FittedRegressor):
    def __init__(self, spec: SequenceRegressorSpec, n_channels: int, seed: int):
        self.kind = spec.kind
        self.spec = spec
        self.n_channels = n_channels
        self.seed = seed
        self.consumed_budget = 0
        p = spec.hyperparams
        if spec.kind in ("gru", "lstm"):
            self.net = RecurrentNet(
                cell=spec.kind,
                n_channels=n_channels,
                hidden_size=p["hidden_size"],
                num_layers=p["num_layers"],
                dropout=p.get("dropout", 0.0),
                layer_norm=p["layer_norm"],
                seed=seed,
            )
        else:
            self.net = TCNNet(
                n_channels=n_channels,
                channels=p["channels"],
                kernel_size=p["kernel_size"],
                levels=p["levels"],
                dropout=p.get("dropout", 0.0),
                weight_norm=p["weight_norm"],
                seed=seed,
            )
        self.state = TrainState()
        self.x_center = self.x_scale = None
        self.y_center, self.y_scale = 0.0, 1.0

    @property
    def signature(self) -> int:
        return self.n_channels

    @property
    def deadline_hit(self) -> bool:
        return self.state.hit_deadline

    def check_channels(self, n_channels: int) -> None:
        if n_channels != self.n_channels:
            raise ContractError(
                f"{self.kind}: expected {self.n_channels} channels, got {n_channels}"
            )

    def _standardize(self, X: np.ndarray) -> np.ndarray:
        return (X - self.x_center) / self.x_scale

    def fit_more(self, sequences, extra_epochs: int, deadline: float | None = None):
        X, Y, M, _lengths = _pack(sequences)
        self.check_channels(X.shape[2])
        if self.consumed_budget == 0 and self.state.best_params is None:
            valid = M.astype(bool)
            self.x_center = np.array([X[:, :, c][valid].mean() for c in range(X.shape[2])])
            scale = np.array([X[:, :, c][valid].std() for c in range(X.shape[2])])
            self.x_scale = np.where(scale > 0.0, scale, 1.0)
            self.y_center = float(Y[valid].mean())
            y_sd = float(Y[valid].std())
            self.y_scale = y_sd if y_sd > 0.0 else 1.0
        Xn = self._standardize(X) * M[:, :, None]
        Yn = (Y - self.y_center) / self.y_scale * M

        def batch_step(params, indices, epoch, batch_idx):
            xb, yb, mb = Xn[indices], Yn[indices], M[indices]
            t_max = int(mb.sum(axis=1).max())
            xb, yb, mb = xb[:, :t_max], yb[:, :t_max], mb[:, :t_max]
            masks = self.net.make_masks(
                rng_for(self.seed, "dropout", epoch, batch_idx), xb.shape[0], t_max
            )
            return self.net.loss_and_grads(params, xb, yb, mb, masks)

        optimizer = MomentumOptimizer(
            learning_rate=self.spec.optimizer["learning_rate"],
            momentum_beta=self.spec.optimizer["momentum_beta"],
            weight_decay=self.spec.optimizer["weight_decay"],
            grad_clip=self.spec.optimizer["grad_clip"],
        )
        try:
            self.state = run_epochs(
                params=self.net.params,
                optimizer=optimizer,
                n_examples=X.shape[0],
                batch_size=self.spec.trainer["batch_size"],
                batch_step=batch_step,
                full_loss=lambda p: self.net.loss_value(p, Xn, Yn, M),
                extra_epochs=extra_epochs,
                seed=self.seed,
                state=self.state,
                patience=self.spec.trainer["patience"],
                deadline=deadline,
            )
        except FloatingPointError as exc:
            raise DataError(str(exc)) from None
        self.consumed_budget = self.state.consumed_epochs
        return self

    def predict_per_timestep(self, values: np.ndarray) -> np.ndarray:
        """Model output at every timestep of one (d, T) series."""
        self.check_channels(values.shape[0])
        params = self.state.best_params or self.net.params
        x = self._standardize(values.T[None, :, :])
        preds, _ = self.net.forward(params, x)
        return self.y_center + self.y_scale * preds[0]

    def predict_last(self, values: np.ndarray) -> float:
        return float(self.predict_per_timestep(values)[-1])
