"""Epoch-trained linear regressors (SGD and passive-aggressive).

One budget unit is one pass over the training rows. The row order of epoch
``e`` depends only on ``(seed, e)`` and the underlying learners keep their
optimizer state across calls, so continued fits replay exactly what a single
longer fit would have done.
"""

from __future__ import annotations

import time

import numpy as np
from sklearn.linear_model import PassiveAggressiveRegressor, SGDRegressor

from ..errors import DataError
from ..seeding import rng_for
from .base import FittedRegressor, TabularRegressorSpec, check_training_data


class EpochLinearModel(FittedRegressor):
    def __init__(self, spec: TabularRegressorSpec, columns, seed: int):
        self.kind = spec.kind
        self.hyperparams = spec.hyperparams
        self._columns = tuple(columns)
        self.seed = seed
        self.consumed_budget = 0
        self.deadline_hit = False
        self.y_center = 0.0
        self.y_scale = 1.0
        p = spec.hyperparams
        if spec.kind == "sgd":
            self.model = SGDRegressor(
                loss="squared_error",
                penalty=p["penalty"],
                alpha=p["alpha"],
                l1_ratio=p.get("l1_ratio", 0.15),
                learning_rate="invscaling",
                eta0=p["eta0"],
                power_t=p["power_t"],
                average=bool(p["average"]),
                shuffle=False,
            )
        else:
            self.model = PassiveAggressiveRegressor(
                C=p["c"],
                loss=p["loss"],
                epsilon=p["epsilon"],
                average=bool(p["average"]),
                shuffle=False,
            )

    @property
    def signature(self):
        return self._columns

    def fit_more(self, X, y, extra_budget: int, deadline: float | None = None) -> "EpochLinearModel":
        X, y = check_training_data(X, y)
        if self.consumed_budget == 0:
            self.y_center = float(np.mean(y))
            scale = float(np.std(y))
            self.y_scale = scale if scale > 0.0 else 1.0
        y_norm = (y - self.y_center) / self.y_scale
        n = X.shape[0]
        for epoch in range(self.consumed_budget, self.consumed_budget + extra_budget):
            if deadline is not None and time.monotonic() >= deadline:
                self.deadline_hit = True
                break
            order = rng_for(self.seed, "epoch-order", epoch).permutation(n)
            self.model.partial_fit(X[order], y_norm[order])
            if not np.isfinite(self.model.coef_).all():
                raise DataError(f"{self.kind}: coefficients diverged during epoch {epoch}")
            self.consumed_budget = epoch + 1
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        raw = self.model.predict(np.asarray(X, dtype=float))
        preds = self.y_center + self.y_scale * raw
        if not np.isfinite(preds).all():
            raise DataError(f"{self.kind}: predictions are non-finite")
        return preds
