"""Assembling configurations into executable pipelines.

A pipeline is cleaning (impute, encode, optional smoothing, scaling) followed
by window generation, feature generation, optional feature selection and a
regressor. The tabular template feeds windows as independent rows; the
seq2seq template feeds each instance's ordered window-feature vectors to a
sequence regressor. Transforms fit on training data only.
"""

from __future__ import annotations

import json
import pickle
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .configspace import Configuration
from .dataset import Instance, RunToFailureDataset, TestInstance, truncate_for_testing
from .errors import ContractError, FitError, RulkitError, WindowError
from .features import (
    FEATURE_IDS,
    FeatureMatrix,
    PCAReducer,
    WindowConfig,
    end_anchored_starts,
    extract_stat_features,
    flatten_names,
    flatten_window,
    fresh_select,
    make_windows,
    select_percentile,
    stat_feature_names,
    trailing_window,
)
from .metrics import rmse
from .preprocessing import CategoricalEncoder, Scaler, impute, impute_dataset, smooth_matrix
from .regressors import (
    SequenceRegressorSpec,
    TabularRegressorSpec,
    continue_fit,
    continue_fit_sequence,
    fit_sequence,
    fit_tabular,
    predict_sequence,
    predict_tabular,
)


class TrialTimeout(RulkitError):
    """The wall-clock deadline expired before the candidate finished fitting."""


# Validation scores each held-out instance at this many truncation points;
# a single point per instance makes candidate selection far too noisy.
VAL_CUTS_PER_INSTANCE = 3


_PREFIXES = {
    "extra_trees": "et_",
    "gradient_boosting": "gb_",
    "mlp": "mlp_",
    "passive_aggressive": "pa_",
    "random_forest": "rf_",
    "sgd": "sgd_",
    "gru": "gru_",
    "lstm": "lstm_",
    "tcn": "tcn_",
}


def _collect_params(config: Configuration, kind: str) -> dict:
    prefix = _PREFIXES[kind]
    return {
        name[len(prefix) :]: value
        for name, value in config.assignments.items()
        if name.startswith(prefix)
    }


@dataclass(frozen=True)
class Pipeline:
    """Step specs resolved from a configuration, before any fitting."""

    config: Configuration
    template: str
    impute_strategy: str
    smoothing: tuple[float, int] | None  # (alpha, min_periods)
    scaler_kind: str
    scaler_quantiles: tuple[float, float]
    window: WindowConfig
    feature_gen: str
    catalog_flags: tuple[bool, ...]
    feature_sel: str
    feature_sel_params: dict
    regressor_spec: TabularRegressorSpec | SequenceRegressorSpec


def instantiate(config: Configuration) -> Pipeline:
    """Resolve a valid configuration into pipeline step specs."""
    template = config["template"]
    smoothing = None
    if config["smoothing"]:
        smoothing = (config["smoothing_alpha"], config["smoothing_min_periods"])
    scaler_kind = config["scaler"]
    quantiles = (
        (config["robust_q_lo"], config["robust_q_hi"]) if scaler_kind == "robust" else (25.0, 75.0)
    )
    window = WindowConfig(config["window_length"], config["window_stride"])
    feature_gen = config["feature_gen"]
    flags = tuple(
        bool(config.get(f"feat_{fid}", False)) for fid in FEATURE_IDS
    ) if feature_gen == "stat_catalog" else ()

    feature_sel = config["feature_sel"]
    sel_params: dict = {}
    if feature_sel == "pca":
        sel_params = {"keep_variance": config["pca_keep_variance"], "whiten": config["pca_whiten"]}
    elif feature_sel == "percentile":
        sel_params = {"percentile": config["percentile_value"], "score": config["percentile_score"]}
    elif feature_sel == "rates":
        sel_params = {
            "alpha": config["rates_alpha"],
            "test": config["rates_test"],
            "mode": config["rates_mode"],
        }

    if template == "tabular":
        kind = config["tabular_regressor"]
        regressor_spec = TabularRegressorSpec(kind=kind, hyperparams=_collect_params(config, kind))
    else:
        kind = config["seq_regressor"]
        regressor_spec = SequenceRegressorSpec(
            kind=kind,
            hyperparams=_collect_params(config, kind),
            optimizer={
                "learning_rate": config["opt_learning_rate"],
                "weight_decay": config["opt_weight_decay"],
                "momentum_beta": config["opt_momentum_beta"],
                "grad_clip": config["opt_grad_clip"],
            },
            trainer={
                "batch_size": config["trainer_batch_size"],
                "patience": config["trainer_patience"],
            },
        )
    return Pipeline(
        config=config,
        template=template,
        impute_strategy=config["impute_strategy"],
        smoothing=smoothing,
        scaler_kind=scaler_kind,
        scaler_quantiles=quantiles,
        window=window,
        feature_gen=feature_gen,
        catalog_flags=flags,
        feature_sel=feature_sel,
        feature_sel_params=sel_params,
        regressor_spec=regressor_spec,
    )


@dataclass
class FittedPipeline:
    pipeline: Pipeline
    encoder: CategoricalEncoder
    scaler: Scaler
    input_names: tuple[str, ...]  # raw channel names expected at predict time
    feature_columns: tuple[str, ...]  # columns produced by feature generation
    selected_columns: tuple[str, ...] | None  # subset selection, None = keep all
    pca: PCAReducer | None
    regressor: object
    consumed_budget: int
    fit_seconds: float
    seed: int

    # -- transforms -----------------------------------------------------------

    def _clean_matrix(self, values: np.ndarray, levels_by_col=None) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if np.isnan(values).any():
            values = np.vstack(
                [
                    impute(
                        values[c],
                        "neighbor" if c in self.encoder.columns else self.pipeline.impute_strategy,
                    )
                    for c in range(values.shape[0])
                ]
            )
        values = self.encoder.transform_matrix(values, levels_by_col)
        if self.pipeline.smoothing is not None:
            alpha, min_periods = self.pipeline.smoothing
            values = smooth_matrix(values, alpha, min_periods)
        return self.scaler.transform(values.T).T

    def _window_features(self, window: np.ndarray) -> np.ndarray:
        if self.pipeline.feature_gen == "flatten":
            return flatten_window(window)
        return extract_stat_features(window, np.array(self.pipeline.catalog_flags))

    def _select(self, X: np.ndarray) -> np.ndarray:
        if self.pca is not None:
            return self.pca.transform(X)
        if self.selected_columns is not None:
            idx = [self.feature_columns.index(c) for c in self.selected_columns]
            return X[:, idx]
        return X

    def _feature_sequence(self, values: np.ndarray) -> np.ndarray:
        """End-anchored window-feature sequence of a cleaned (d, T) matrix,
        shaped (n_features, n_windows)."""
        starts = end_anchored_starts(values.shape[1], self.pipeline.window)
        rows = np.stack(
            [
                self._window_features(values[:, s : s + self.pipeline.window.window_length])
                for s in starts
            ]
        )
        return self._select(rows).T

    # -- prediction ------------------------------------------------------------

    def predict_matrix(self, values: np.ndarray, levels_by_col=None) -> float:
        """RUL prediction at the final timestep of a raw (d, T) prefix."""
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[0] != len(self.input_names):
            raise ContractError(
                f"expected a ({len(self.input_names)}, T) matrix, got {values.shape}"
            )
        if values.shape[1] < self.pipeline.window.window_length:
            raise WindowError(
                f"prefix of length {values.shape[1]} is shorter than the fitted "
                f"window length {self.pipeline.window.window_length}"
            )
        cleaned = self._clean_matrix(values, levels_by_col)
        if self.pipeline.template == "tabular":
            window = trailing_window(cleaned, self.pipeline.window.window_length)
            row = self._select(self._window_features(window)[None, :])
            return float(predict_tabular(self.regressor, row)[0])
        return predict_sequence(self.regressor, self._feature_sequence(cleaned))

    def predict(self, test: TestInstance, levels_by_col=None) -> float:
        return self.predict_matrix(test.values, levels_by_col)


def predict_rul(fitted: FittedPipeline, test: TestInstance, levels_by_col=None) -> float:
    """Apply the fitted transforms to the prefix and predict the RUL at its
    final timestep (always >= 0)."""
    return fitted.predict(test, levels_by_col)


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


def _fit_selection(pipeline: Pipeline, matrix: FeatureMatrix):
    """Returns (selected_columns | None, fitted PCA | None)."""
    kind = pipeline.feature_sel
    if kind == "none":
        return None, None
    if kind == "pca":
        reducer = PCAReducer(**pipeline.feature_sel_params).fit(matrix.values)
        return None, reducer
    if kind == "percentile":
        return select_percentile(matrix, **pipeline.feature_sel_params), None
    return fresh_select(matrix, **pipeline.feature_sel_params), None


def _deadline_overrun(regressor, deadline: float) -> bool:
    return bool(getattr(regressor, "deadline_hit", False)) or time.monotonic() >= deadline


def fit(
    pipeline: Pipeline,
    train: RunToFailureDataset,
    val: RunToFailureDataset,
    budget: int,
    deadline_seconds: float,
    seed: int,
    val_cut_seed: int | None = None,
    warm_start: FittedPipeline | None = None,
) -> tuple[FittedPipeline, np.ndarray, float]:
    """Fit on ``train`` at the given budget and score on truncated ``val``
    prefixes.

    Validation instances are cut at a seeded random fraction in [0.3, 0.9] of
    their length (``val_cut_seed`` keeps the cuts fixed across every candidate
    of a search run). ``warm_start`` continues a lower-budget fit of the same
    configuration instead of starting over; ``budget`` is the total. Raises
    :class:`TrialTimeout` when the wall-clock deadline expires first.
    """
    if budget < 1:
        raise ContractError(f"budget must be >= 1, got {budget}")
    if deadline_seconds <= 0:
        raise ContractError("deadline_seconds must be positive")
    start = time.monotonic()
    deadline = start + deadline_seconds

    if warm_start is not None:
        fitted = warm_start
        if fitted.pipeline.config != pipeline.config:
            raise ContractError("warm_start pipeline was fitted with a different configuration")
        extra = budget - fitted.consumed_budget
        if extra < 1:
            raise ContractError(
                f"warm start already consumed {fitted.consumed_budget} >= budget {budget}"
            )
        train_data = _prepare_training_data(pipeline, train, fitted=fitted)
        if pipeline.template == "tabular":
            X, y, columns = train_data
            continue_fit(fitted.regressor, X, y, extra, columns=columns, deadline=deadline)
        else:
            sequences = train_data
            continue_fit_sequence(fitted.regressor, sequences, extra, deadline=deadline)
        fitted.consumed_budget = fitted.regressor.consumed_budget
    else:
        fitted = _fit_transforms_and_regressor(pipeline, train, budget, seed, deadline)

    if _deadline_overrun(fitted.regressor, deadline):
        raise TrialTimeout(f"deadline of {deadline_seconds:.1f}s expired during fitting")

    cut_seed = val_cut_seed if val_cut_seed is not None else seed
    val_tests = truncate_for_testing(val, seed=cut_seed, cuts_per_instance=VAL_CUTS_PER_INSTANCE)
    levels = {c: val.levels_for(c) for c in val.categorical_columns} or None
    predictions = np.array([fitted.predict(t, levels) for t in val_tests])
    targets = np.array([t.true_rul for t in val_tests])
    if time.monotonic() >= deadline:
        raise TrialTimeout(f"deadline of {deadline_seconds:.1f}s expired during validation")
    fitted.fit_seconds = time.monotonic() - start
    return fitted, predictions, rmse(predictions, targets)


def fit_full(
    pipeline: Pipeline,
    dataset: RunToFailureDataset,
    budget: int,
    seed: int,
    deadline_seconds: float = 300.0,
) -> FittedPipeline:
    """Fit transforms and regressor on the whole dataset, without validation
    scoring (used to finalize models on train+validation)."""
    if budget < 1:
        raise ContractError(f"budget must be >= 1, got {budget}")
    start = time.monotonic()
    deadline = start + deadline_seconds
    fitted = _fit_transforms_and_regressor(pipeline, dataset, budget, seed, deadline)
    if _deadline_overrun(fitted.regressor, deadline):
        raise TrialTimeout(f"deadline of {deadline_seconds:.1f}s expired during final fit")
    fitted.fit_seconds = time.monotonic() - start
    return fitted


def _prepare_training_data(pipeline: Pipeline, train: RunToFailureDataset, fitted: FittedPipeline):
    """Re-derive the regressor's training inputs using already-fitted
    transforms (warm-start path)."""
    cleaned = [fitted._clean_matrix(inst.values) for inst in train.instances]
    return _training_inputs(pipeline, train, cleaned, fitted)


def _training_inputs(pipeline, train, cleaned_matrices, fitted):
    rows, targets, sequences = [], [], []
    usable = 0
    for inst, cleaned in zip(train.instances, cleaned_matrices):
        if inst.length < pipeline.window.window_length:
            continue  # instance too short for the window: skipped
        usable += 1
        pairs = make_windows(
            Instance(id=inst.id, values=cleaned, rul=inst.rul), pipeline.window
        )
        feats = np.stack([fitted._window_features(w) for w, _ in pairs])
        tgts = np.array([t for _, t in pairs])
        if pipeline.template == "tabular":
            rows.append(feats)
            targets.append(tgts)
        else:
            sequences.append((feats, tgts))
    if usable == 0:
        raise FitError(
            f"window length {pipeline.window.window_length} exceeds every training instance"
        )
    if pipeline.template == "tabular":
        X = fitted._select(np.concatenate(rows))
        y = np.concatenate(targets)
        columns = _selected_names(fitted)
        return X, y, columns
    return [(fitted._select(f).T, t) for f, t in sequences]


def _selected_names(fitted: FittedPipeline) -> tuple[str, ...]:
    if fitted.pca is not None:
        return tuple(f"pc{i}" for i in range(fitted.pca.n_components))
    if fitted.selected_columns is not None:
        return fitted.selected_columns
    return fitted.feature_columns


def _fit_transforms_and_regressor(pipeline, train, budget, seed, deadline) -> FittedPipeline:
    ds = impute_dataset(train, pipeline.impute_strategy)
    encoder = CategoricalEncoder().fit(ds)
    ds = encoder.transform(ds)
    if pipeline.smoothing is not None:
        alpha, min_periods = pipeline.smoothing
        ds = ds.replace_instances(
            [
                Instance(id=inst.id, values=smooth_matrix(inst.values, alpha, min_periods), rul=inst.rul)
                for inst in ds.instances
            ]
        )
    stacked = np.concatenate([inst.values.T for inst in ds.instances], axis=0)
    scaler = Scaler(
        kind=pipeline.scaler_kind,
        q_lo=pipeline.scaler_quantiles[0],
        q_hi=pipeline.scaler_quantiles[1],
    ).fit(stacked)

    channel_names = encoder.transformed_names(train.sensor_names)
    if pipeline.feature_gen == "flatten":
        feature_columns = flatten_names(channel_names, pipeline.window.window_length)
    else:
        feature_columns = stat_feature_names(channel_names, np.array(pipeline.catalog_flags))

    fitted = FittedPipeline(
        pipeline=pipeline,
        encoder=encoder,
        scaler=scaler,
        input_names=tuple(train.sensor_names),
        feature_columns=feature_columns,
        selected_columns=None,
        pca=None,
        regressor=None,
        consumed_budget=0,
        fit_seconds=0.0,
        seed=seed,
    )

    cleaned = [scaler.transform(inst.values.T).T for inst in ds.instances]

    # feature matrix over all usable windows, for selection fitting
    rows, targets = [], []
    for inst, values in zip(ds.instances, cleaned):
        if inst.length < pipeline.window.window_length:
            continue
        pairs = make_windows(
            Instance(id=inst.id, values=values, rul=inst.rul), pipeline.window
        )
        rows.append(np.stack([fitted._window_features(w) for w, _ in pairs]))
        targets.append(np.array([t for _, t in pairs]))
    if not rows:
        raise FitError(
            f"window length {pipeline.window.window_length} exceeds every training instance"
        )
    matrix = FeatureMatrix(
        values=np.concatenate(rows), columns=feature_columns, targets=np.concatenate(targets)
    )
    fitted.selected_columns, fitted.pca = _fit_selection(pipeline, matrix)

    if pipeline.template == "tabular":
        X = fitted._select(matrix.values)
        y = matrix.targets
        fitted.regressor = fit_tabular(
            pipeline.regressor_spec,
            X,
            y,
            budget,
            seed,
            columns=_selected_names(fitted),
            deadline=deadline,
        )
    else:
        sequences = [
            (fitted._select(f).T, t) for f, t in zip(rows, targets)
        ]
        fitted.regressor = fit_sequence(
            pipeline.regressor_spec, sequences, budget, seed, deadline=deadline
        )
    fitted.consumed_budget = fitted.regressor.consumed_budget
    return fitted


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def save_bundle(fitted: FittedPipeline, directory, metrics: dict | None = None) -> None:
    """Write a pipeline bundle: human-readable manifest plus pickled state."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config": _jsonable(fitted.pipeline.config.assignments),
        "template": fitted.pipeline.template,
        "regressor": fitted.pipeline.regressor_spec.kind,
        "budget": fitted.consumed_budget,
        "seed": fitted.seed,
        "fit_seconds": fitted.fit_seconds,
        "input_channels": list(fitted.input_names),
        "metrics": metrics or {},
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    (directory / "pipeline.pkl").write_bytes(pickle.dumps(fitted))


def load_bundle(directory) -> FittedPipeline:
    payload = Path(directory) / "pipeline.pkl"
    if not payload.exists():
        raise ContractError(f"{directory} does not contain a pipeline bundle")
    return pickle.loads(payload.read_bytes())


def _jsonable(assignments: dict) -> dict:
    out = {}
    for k, v in assignments.items():
        if isinstance(v, (np.integer,)):
            v = int(v)
        elif isinstance(v, (np.floating,)):
            v = float(v)
        elif isinstance(v, (np.bool_,)):
            v = bool(v)
        out[k] = v
    return out
