"""Budgeted regressors: six tabular learners and three sequence learners.

Budget semantics: trees for forests, stages for boosting, epochs for
everything else. ``fit(b1)`` followed by ``continue_fit(b2)`` reproduces
``fit(b1 + b2)`` exactly. Predictions are clipped below at 0 (remaining
useful life is non-negative).
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError
from .base import (
    SEQUENCE_KINDS,
    TABULAR_KINDS,
    FittedRegressor,
    SequenceRegressorSpec,
    TabularRegressorSpec,
)
from .linear import EpochLinearModel
from .mlp import MLPModel
from .sequence import SequenceRegressorModel
from .trees import BaggedForest, GradientBoostedTrees, fit_forest_like

__all__ = [
    "TABULAR_KINDS",
    "SEQUENCE_KINDS",
    "TabularRegressorSpec",
    "SequenceRegressorSpec",
    "FittedRegressor",
    "BaggedForest",
    "GradientBoostedTrees",
    "MLPModel",
    "EpochLinearModel",
    "SequenceRegressorModel",
    "fit_tabular",
    "continue_fit",
    "predict_tabular",
    "fit_sequence",
    "continue_fit_sequence",
    "predict_sequence",
]


def _default_columns(n: int) -> tuple[str, ...]:
    return tuple(f"x{i}" for i in range(n))


def fit_tabular(
    spec: TabularRegressorSpec,
    X: np.ndarray,
    y: np.ndarray,
    budget: int,
    seed: int,
    columns=None,
    deadline: float | None = None,
):
    if budget < 1:
        raise ContractError(f"budget must be >= 1, got {budget}")
    X = np.asarray(X, dtype=float)
    columns = tuple(columns) if columns is not None else _default_columns(X.shape[1])
    if len(columns) != X.shape[1]:
        raise ContractError("column names do not match the matrix width")
    if spec.kind in ("random_forest", "extra_trees", "gradient_boosting"):
        return fit_forest_like(spec, X, y, budget, seed, columns, deadline)
    if spec.kind == "mlp":
        return MLPModel(spec, columns, seed).fit_more(X, y, budget, deadline)
    return EpochLinearModel(spec, columns, seed).fit_more(X, y, budget, deadline)


def continue_fit(
    fitted,
    X: np.ndarray,
    y: np.ndarray,
    extra_budget: int,
    columns=None,
    deadline: float | None = None,
):
    if extra_budget < 1:
        raise ContractError(f"extra_budget must be >= 1, got {extra_budget}")
    X = np.asarray(X, dtype=float)
    columns = tuple(columns) if columns is not None else _default_columns(X.shape[1])
    fitted.check_columns(columns)
    return fitted.fit_more(X, y, extra_budget, deadline)


def predict_tabular(fitted, X: np.ndarray, columns=None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if columns is not None:
        fitted.check_columns(tuple(columns))
    elif X.shape[1] != len(fitted.signature):
        raise ContractError(
            f"{fitted.kind}: expected {len(fitted.signature)} columns, got {X.shape[1]}"
        )
    preds = np.asarray(fitted.predict(X), dtype=float)
    return np.maximum(preds, 0.0)


def fit_sequence(
    spec: SequenceRegressorSpec,
    sequences,
    budget_epochs: int,
    seed: int,
    deadline: float | None = None,
) -> SequenceRegressorModel:
    if budget_epochs < 1:
        raise ContractError(f"budget_epochs must be >= 1, got {budget_epochs}")
    if not sequences:
        raise ContractError("no training sequences")
    n_channels = np.asarray(sequences[0][0]).shape[0]
    model = SequenceRegressorModel(spec, n_channels, seed)
    return model.fit_more(sequences, budget_epochs, deadline)


def continue_fit_sequence(
    fitted: SequenceRegressorModel, sequences, extra_epochs: int, deadline: float | None = None
) -> SequenceRegressorModel:
    if extra_epochs < 1:
        raise ContractError(f"extra_epochs must be >= 1, got {extra_epochs}")
    return fitted.fit_more(sequences, extra_epochs, deadline)


def predict_sequence(fitted: SequenceRegressorModel, prefix: np.ndarray) -> float:
    prefix = np.asarray(prefix, dtype=float)
    if prefix.ndim != 2:
        raise ContractError("prefix must be a (d, T) matrix")
    return max(fitted.predict_last(prefix), 0.0)
