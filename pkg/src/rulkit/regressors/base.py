"""Regressor specs and the fitted-model contract.

Budget semantics: forests count trees, boosting counts stages, everything
else counts epochs. Every learner supports continuing a fit; the combined
result of ``fit(b1)`` + ``continue(b2)`` is identical to ``fit(b1 + b2)``
because per-tree/per-epoch randomness is keyed by absolute index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, DataError, FitError

TABULAR_KINDS = (
    "extra_trees",
    "gradient_boosting",
    "mlp",
    "passive_aggressive",
    "random_forest",
    "sgd",
)
SEQUENCE_KINDS = ("gru", "lstm", "tcn")


def _required_params(kind: str, hyperparams: dict) -> set[str]:
    base = {
        "extra_trees": {
            "criterion",
            "bootstrap",
            "max_features_fraction",
            "min_samples_leaf",
            "min_samples_split",
        },
        "gradient_boosting": {
            "learning_rate",
            "max_depth",
            "min_samples_leaf",
            "subsample",
            "max_features_fraction",
            "l2_reg",
        },
        "mlp": {"activation", "lr_schedule", "hidden_size", "num_layers", "learning_rate"},
        "passive_aggressive": {"loss", "average", "c", "epsilon"},
        "random_forest": {"bootstrap", "max_features_fraction", "min_samples_leaf"},
        "sgd": {"penalty", "average", "alpha", "eta0", "power_t"},
        "gru": {"layer_norm", "hidden_size", "num_layers"},
        "lstm": {"layer_norm", "hidden_size", "num_layers"},
        "tcn": {"weight_norm", "channels", "kernel_size", "levels"},
    }[kind]
    required = set(base)
    if kind in ("mlp", "gru", "lstm") and hyperparams.get("num_layers", 1) > 1:
        required.add("dropout")
    if kind == "tcn" and hyperparams.get("levels", 1) > 1:
        required.add("dropout")
    if kind == "sgd" and hyperparams.get("penalty") == "elasticnet":
        required.add("l1_ratio")
    return required


def _validate_params(kind: str, hyperparams: dict) -> None:
    required = _required_params(kind, hyperparams)
    got = set(hyperparams)
    if got != required:
        missing, extra = sorted(required - got), sorted(got - required)
        raise ContractError(
            f"{kind}: hyperparameters do not match the declared set "
            f"(missing={missing}, unexpected={extra})"
        )


@dataclass(frozen=True)
class TabularRegressorSpec:
    kind: str
    hyperparams: dict

    def __post_init__(self):
        if self.kind not in TABULAR_KINDS:
            raise ContractError(f"unknown tabular regressor kind {self.kind!r}")
        _validate_params(self.kind, self.hyperparams)
        object.__setattr__(self, "hyperparams", dict(self.hyperparams))


_OPTIMIZER_KEYS = {"learning_rate", "weight_decay", "momentum_beta", "grad_clip"}
_TRAINER_KEYS = {"batch_size", "patience"}


@dataclass(frozen=True)
class SequenceRegressorSpec:
    kind: str
    hyperparams: dict
    optimizer: dict = field(default_factory=dict)
    trainer: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SEQUENCE_KINDS:
            raise ContractError(f"unknown sequence regressor kind {self.kind!r}")
        _validate_params(self.kind, self.hyperparams)
        if set(self.optimizer) != _OPTIMIZER_KEYS:
            raise ContractError(f"optimizer settings must be exactly {sorted(_OPTIMIZER_KEYS)}")
        if set(self.trainer) != _TRAINER_KEYS:
            raise ContractError(f"trainer settings must be exactly {sorted(_TRAINER_KEYS)}")
        object.__setattr__(self, "hyperparams", dict(self.hyperparams))
        object.__setattr__(self, "optimizer", dict(self.optimizer))
        object.__setattr__(self, "trainer", dict(self.trainer))


class FittedRegressor:
    """Common surface of all fitted models."""

    kind: str
    consumed_budget: int

    @property
    def signature(self):
        raise NotImplementedError

    def check_columns(self, columns) -> None:
        if tuple(columns) != tuple(self.signature):
            raise ContractError(
                f"{self.kind}: input columns do not match the fitted signature "
                f"(got {len(tuple(columns))} columns, fitted on {len(tuple(self.signature))})"
            )


def check_training_data(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise FitError(f"need a 2-D matrix with >= 2 rows, got shape {X.shape}")
    if y.shape != (X.shape[0],):
        raise ContractError(f"targets of shape {y.shape} do not match {X.shape[0]} rows")
    if not np.isfinite(X).all() or not np.isfinite(y).all():
        raise DataError("training data contains non-finite values")
    return X, y
