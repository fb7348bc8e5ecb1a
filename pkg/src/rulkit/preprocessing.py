"""Data-cleaning steps: imputation, categorical encoding, exponential
smoothing and scaling.

All transforms are fit on training data only and are immutable afterwards;
applying a fitted transform never reads statistics from the data it is
applied to.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .dataset import Instance, RunToFailureDataset
from .errors import FitError, ImputationError, ShapeError

IMPUTE_STRATEGIES = ("neighbor", "mean", "median")
SCALER_KINDS = ("robust", "minmax", "standard", "unit_norm", "none")


# ---------------------------------------------------------------------------
# Imputation
# ---------------------------------------------------------------------------


def impute(series: np.ndarray, strategy: str) -> np.ndarray:
    """Fill missing entries of a 1-D series.

    neighbor: forward-fill, then backward-fill for leading gaps.
    mean/median: replace by the statistic of the observed entries.
    """
    if strategy not in IMPUTE_STRATEGIES:
        raise ShapeError(f"unknown imputation strategy {strategy!r}")
    x = np.asarray(series, dtype=float).copy()
    missing = np.isnan(x)
    if not missing.any():
        return x
    if missing.all():
        raise ImputationError("series has no observed values")
    if strategy == "neighbor":
        idx = np.arange(x.size)
        filled = np.where(missing, -1, idx)
        np.maximum.accumulate(filled, out=filled)
        x = np.where(filled >= 0, x[np.maximum(filled, 0)], x)
        # leading gap: backward-fill from the first observed value
        still = np.isnan(x)
        if still.any():
            first = x[~still][0]
            x[still] = first
        return x
    stat = np.nanmean(x) if strategy == "mean" else np.nanmedian(x)
    x[missing] = stat
    return x


def impute_dataset(dataset: RunToFailureDataset, strategy: str) -> RunToFailureDataset:
    """Impute every channel of every instance. Categorical channels always
    use neighbor filling (symbol codes have no meaningful mean)."""
    out = []
    for inst in dataset.instances:
        values = inst.values
        if np.isnan(values).any():
            values = values.copy()
            for c in range(values.shape[0]):
                if not np.isnan(values[c]).any():
                    continue
                chan_strategy = "neighbor" if c in dataset.categorical_columns else strategy
                try:
                    values[c] = impute(values[c], chan_strategy)
                except ImputationError:
                    raise ImputationError(
                        f"channel {dataset.sensor_names[c]!r} of instance {inst.id!r} "
                        "has no observed values"
                    ) from None
        out.append(Instance(id=inst.id, values=values, rul=inst.rul))
    return dataset.replace_instances(out)


# ---------------------------------------------------------------------------
# Categorical encoding
# ---------------------------------------------------------------------------


@dataclass
class CategoricalEncoder:
    """One-hot encoding of categorical channels, fitted on training data.

    Indicator channels are ordered lexicographically by symbol; symbols not
    seen during fitting map to an all-zeros row at transform time.
    """

    columns: tuple[int, ...] = ()
    symbols: dict = None  # col -> tuple of training symbols
    source_levels: dict = None  # col -> symbol table used to decode raw codes

    def fit(self, dataset: RunToFailureDataset) -> "CategoricalEncoder":
        self.columns = tuple(sorted(dataset.categorical_columns))
        self.symbols = {}
        self.source_levels = {}
        for col in self.columns:
            levels = dataset.levels_for(col)
            observed = set()
            for inst in dataset.instances:
                codes = inst.values[col]
                for code in np.unique(codes[~np.isnan(codes)]):
                    observed.add(self._decode(levels, code))
            self.symbols[col] = tuple(sorted(observed))
            self.source_levels[col] = levels
        return self

    @staticmethod
    def _decode(levels, code) -> str:
        if levels is not None and 0 <= int(code) < len(levels):
            return levels[int(code)]
        return repr(float(code))

    def transform_matrix(self, values: np.ndarray, levels_by_col: dict | None = None) -> np.ndarray:
        """Encode a raw (d, T) matrix; ``levels_by_col`` decodes the incoming
        categorical codes (defaults to the training symbol tables)."""
        if not self.columns:
            return values
        blocks = []
        for c in range(values.shape[0]):
            if c not in self.columns:
                blocks.append(values[c : c + 1])
                continue
            levels = (levels_by_col or self.source_levels).get(c, self.source_levels[c])
            train_symbols = self.symbols[c]
            onehot = np.zeros((len(train_symbols), values.shape[1]))
            for t in range(values.shape[1]):
                code = values[c, t]
                if np.isnan(code):
                    continue
                symbol = self._decode(levels, code)
                if symbol in train_symbols:
                    onehot[train_symbols.index(symbol), t] = 1.0
            blocks.append(onehot)
        return np.concatenate(blocks, axis=0)

    def transformed_names(self, sensor_names) -> tuple[str, ...]:
        names = []
        for c, name in enumerate(sensor_names):
            if c in self.columns:
                names.extend(f"{name}={s}" for s in self.symbols[c])
            else:
                names.append(name)
        return tuple(names)

    def transform(self, dataset: RunToFailureDataset) -> RunToFailureDataset:
        if not self.columns:
            return dataset
        levels_by_col = {c: dataset.levels_for(c) for c in self.columns}
        instances = [
            Instance(
                id=inst.id,
                values=self.transform_matrix(inst.values, levels_by_col),
                rul=inst.rul,
            )
            for inst in dataset.instances
        ]
        return RunToFailureDataset(
            instances=tuple(instances),
            sensor_names=self.transformed_names(dataset.sensor_names),
        )


def encode_categoricals(dataset: RunToFailureDataset) -> tuple[CategoricalEncoder, RunToFailureDataset]:
    encoder = CategoricalEncoder().fit(dataset)
    return encoder, encoder.transform(dataset)


# ---------------------------------------------------------------------------
# Exponential smoothing
# ---------------------------------------------------------------------------


def exp_smooth(series: np.ndarray, alpha: float, min_periods: int = 1) -> np.ndarray:
    """Causal exponential smoothing ``s[t] = alpha*x[t] + (1-alpha)*s[t-1]``
    with ``s[0] = x[0]``; the first ``min_periods - 1`` outputs stay raw."""
    if not 0 < alpha <= 1:
        raise ShapeError(f"alpha must be in (0, 1], got {alpha}")
    if min_periods < 1:
        raise ShapeError(f"min_periods must be >= 1, got {min_periods}")
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        return x.copy()
    smoothed, _ = lfilter([alpha], [1.0, -(1.0 - alpha)], x, zi=[(1.0 - alpha) * x[0]])
    out = smoothed.copy()
    warmup = min(min_periods - 1, x.size)
    out[:warmup] = x[:warmup]
    return out


def smooth_matrix(values: np.ndarray, alpha: float, min_periods: int = 1) -> np.ndarray:
    return np.vstack([exp_smooth(values[c], alpha, min_periods) for c in range(values.shape[0])])


# ---------------------------------------------------------------------------
# Scaling
# ---------------------------------------------------------------------------


@dataclass
class Scaler:
    """Column-wise scaling with fit-on-train statistics.

    Degenerate columns (zero range / std / IQR) map to 0 instead of raising,
    so candidate pipelines survive constant channels. ``unit_norm`` is
    stateless and normalizes rows; zero rows pass through unchanged.
    """

    kind: str
    q_lo: float = 25.0
    q_hi: float = 75.0
    center_: np.ndarray | None = None
    scale_: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in SCALER_KINDS:
            raise ShapeError(f"unknown scaler kind {self.kind!r}")
        if self.kind == "robust" and not 0 < self.q_lo < self.q_hi < 100:
            raise ShapeError(
                f"robust scaler needs 0 < q_lo < q_hi < 100, got ({self.q_lo}, {self.q_hi})"
            )

    def fit(self, X: np.ndarray) -> "Scaler":
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] == 0:
            raise FitError("scaler needs a non-empty 2-D matrix to fit")
        if self.kind == "minmax":
            self.center_ = X.min(axis=0)
            self.scale_ = X.max(axis=0) - self.center_
        elif self.kind == "standard":
            self.center_ = X.mean(axis=0)
            self.scale_ = X.std(axis=0)
        elif self.kind == "robust":
            self.center_ = np.median(X, axis=0)
            lo, hi = np.percentile(X, [self.q_lo, self.q_hi], axis=0)
            self.scale_ = hi - lo
        else:  # unit_norm / none keep no statistics
            self.center_ = np.zeros(X.shape[1])
            self.scale_ = np.ones(X.shape[1])
        return self

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.kind == "none":
            return X.copy()
        if self.kind == "unit_norm":
            norms = np.linalg.norm(X, axis=1, keepdims=True)
            return X / np.where(norms > 0.0, norms, 1.0)
        if self.center_ is None:
            raise FitError("scaler is not fitted")
        safe = np.where(self.scale_ > 0.0, self.scale_, 1.0)
        out = (X - self.center_) / safe
        return np.where(self.scale_ > 0.0, out, 0.0)


def fit_scaler(X: np.ndarray, kind: str, q_lo: float = 25.0, q_hi: float = 75.0) -> Scaler:
    return Scaler(kind=kind, q_lo=q_lo, q_hi=q_hi).fit(X)
