"""Feature engineering: sliding windows, the statistical feature catalog,
hypothesis-test feature selection, PCA und percentile selection.

Windows are generated start-anchored for training (starts ``0, s, 2s, ...``)
and end-anchored for prediction so the final window always ends at the last
observed timestep. All catalog features are total functions: degenerate
windows (zero variance, too short for a lag) yield 0 for moment ratios,
correlations and trend R².
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .dataset import Instance
from .errors import FitError, InsufficientDataError, ShapeError, WindowError

# Catalog order is part of the public contract: flag vectors, feature names
# and reports all use this ordering.
FEATURE_IDS: tuple[str, ...] = (
    "mean",
    "median",
    "std",
    "variance",
    "minimum",
    "maximum",
    "value_range",
    "total",
    "abs_energy",
    "rms",
    "skewness",
    "kurtosis",
    "mean_abs_change",
    "mean_change",
    "mean_second_derivative",
    "count_above_mean",
    "count_below_mean",
    "first_loc_max",
    "first_loc_min",
    "last_loc_max",
    "last_loc_min",
    "longest_strike_above_mean",
    "longest_strike_below_mean",
    "n_peaks",
    "n_mean_crossings",
    "autocorr_lag1",
    "autocorr_lag2",
    "autocorr_lag3",
    "quantile_10",
    "quantile_25",
    "quantile_75",
    "quantile_90",
    "iqr",
    "trend_slope",
    "trend_intercept",
    "trend_r2",
    "abs_sum_changes",
    "complexity",
    "binned_entropy",
    "energy_ratio_last_third",
    "spectral_centroid",
    "dominant_freq_index",
    "beyond_2sigma_ratio",
)

N_CATALOG_FEATURES = len(FEATURE_IDS)


@dataclass(frozen=True)
class WindowConfig:
    window_length: int
    stride: int

    def __post_init__(self):
        if self.window_length < 2:
            raise ShapeError(f"window_length must be >= 2, got {self.window_length}")
        if self.stride < 1:
            raise ShapeError(f"stride must be >= 1, got {self.stride}")
        if self.stride >= self.window_length:
            raise ShapeError(
                f"stride ({self.stride}) must be smaller than window_length "
                f"({self.window_length})"
            )


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray  # (n_rows, n_columns)
    columns: tuple[str, ...]
    targets: np.ndarray  # (n_rows,)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        targets = np.asarray(self.targets, dtype=float)
        if values.ndim != 2 or values.shape[1] != len(self.columns):
            raise ShapeError("feature matrix shape does not match column names")
        if targets.shape != (values.shape[0],):
            raise ShapeError("targets must align with feature rows")
        if not np.isfinite(values).all():
            raise ShapeError("feature matrix contains non-finite values")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "columns", tuple(self.columns))

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]


# ---------------------------------------------------------------------------
# Window generation
# ---------------------------------------------------------------------------


def window_starts(length: int, cfg: WindowConfig) -> list[int]:
    if length < cfg.window_length:
        raise WindowError(
            f"series of length {length} is shorter than window_length {cfg.window_length}"
        )
    n = (length - cfg.window_length) // cfg.stride + 1
    return [i * cfg.stride for i in range(n)]


def end_anchored_starts(length: int, cfg: WindowConfig) -> list[int]:
    """Window starts placed backwards from the series end, ascending; the last
    window always ends at the final timestep (used at prediction time)."""
    if length < cfg.window_length:
        raise WindowError(
            f"series of length {length} is shorter than window_length {cfg.window_length}"
        )
    last = length - cfg.window_length
    starts = list(range(last, -1, -cfg.stride))
    return starts[::-1]


def make_windows(instance: Instance, cfg: WindowConfig) -> list[tuple[np.ndarray, float]]:
    """Slice a labelled instance into (window, target) pairs; the target is
    the RUL at each window's final timestep."""
    if instance.rul is None:
        raise ShapeError(f"instance {instance.id!r} has no RUL targets")
    out = []
    for s in window_starts(instance.length, cfg):
        end = s + cfg.window_length
        out.append((instance.values[:, s:end], float(instance.rul[end - 1])))
    return out


def trailing_window(values: np.ndarray, window_length: int) -> np.ndarray:
    """The window covering the last ``window_length`` timesteps."""
    if values.shape[1] < window_length:
        raise WindowError(
            f"series of length {values.shape[1]} is shorter than window_length {window_length}"
        )
    return values[:, values.shape[1] - window_length :]


def flatten_window(window: np.ndarray) -> np.ndarray:
    """Channel-major flattening of a (d, w) window to a length d*w vector."""
    return np.asarray(window, dtype=float).reshape(-1)


def flatten_names(channel_names, window_length: int) -> tuple[str, ...]:
    return tuple(
        f"{ch}__lag{t}" for ch in channel_names for t in range(window_length)
    )


# ---------------------------------------------------------------------------
# Statistical feature catalog
# ---------------------------------------------------------------------------


def _autocorr(x: np.ndarray, lag: int, mean: float, var: float) -> float:
    n = x.size
    if var <= 0.0 or n <= lag:
        return 0.0
    c = x - mean
    return float(np.dot(c[:-lag], c[lag:]) / ((n - lag) * var))


def _longest_run(mask: np.ndarray) -> int:
    best = run = 0
    for flag in mask:
        run = run + 1 if flag else 0
        best = max(best, run)
    return best


def _catalog_1d(x: np.ndarray) -> np.ndarray:
    """All 43 catalog features of one channel, in :data:`FEATURE_IDS` order."""
    n = x.size
    mean = float(np.mean(x))
    var = float(np.var(x))
    std = math.sqrt(var)
    mn, mx = float(np.min(x)), float(np.max(x))
    diffs = np.diff(x) if n > 1 else np.zeros(0)
    centered = x - mean

    if var > 0.0:
        m3 = float(np.mean(centered**3))
        m4 = float(np.mean(centered**4))
        skewness = m3 / var**1.5
        kurtosis = m4 / var**2 - 3.0
    else:
        skewness = kurtosis = 0.0

    # linear trend on t = 0..n-1
    if n > 1:
        t = np.arange(n, dtype=float)
        tc = t - t.mean()
        denom = float(np.dot(tc, tc))
        slope = float(np.dot(tc, centered) / denom)
        intercept = mean - slope * t.mean()
        ss_tot = float(np.dot(centered, centered))
        r2 = slope * slope * denom / ss_tot if ss_tot > 0.0 else 0.0
    else:
        slope, intercept, r2 = 0.0, float(x[0]), 0.0

    q10, q25, q75, q90 = np.quantile(x, [0.1, 0.25, 0.75, 0.9])

    above = x > mean
    below = x < mean
    if n >= 3:
        inner = x[1:-1]
        peaks = int(np.sum((inner > x[:-2]) & (inner > x[2:])))
        second = (x[2:] - 2.0 * x[1:-1] + x[:-2]) / 2.0
        mean_second = float(np.mean(second))
    else:
        peaks = 0
        mean_second = 0.0
    crossings = int(np.sum(centered[:-1] * centered[1:] < 0)) if n > 1 else 0

    if n > 1:
        counts, _ = np.histogram(x, bins=10)
        p = counts[counts > 0] / n
        entropy = float(-np.sum(p * np.log(p)))
    else:
        entropy = 0.0

    energy = float(np.dot(x, x))
    tail = x[(2 * n) // 3 :]
    energy_ratio = float(np.dot(tail, tail) / energy) if energy > 0.0 else 0.0

    spectrum = np.abs(np.fft.rfft(centered))
    total_mag = float(spectrum.sum())
    if total_mag > 0.0:
        k = np.arange(spectrum.size, dtype=float)
        centroid = float(np.dot(k, spectrum) / total_mag)
        dominant = float(np.argmax(spectrum))
    else:
        centroid = dominant = 0.0

    loc_scale = float(n - 1) if n > 1 else 1.0
    return np.array(
        [
            mean,
            float(np.median(x)),
            std,
            var,
            mn,
            mx,
            mx - mn,
            float(np.sum(x)),
            energy,
            math.sqrt(energy / n),
            skewness,
            kurtosis,
            float(np.mean(np.abs(diffs))) if diffs.size else 0.0,
            float(diffs.mean()) if diffs.size else 0.0,
            mean_second,
            int(above.sum()),
            int(below.sum()),
            float(np.argmax(x)) / loc_scale,
            float(np.argmin(x)) / loc_scale,
            float(n - 1 - np.argmax(x[::-1])) / loc_scale,
            float(n - 1 - np.argmin(x[::-1])) / loc_scale,
            _longest_run(above),
            _longest_run(below),
            peaks,
            crossings,
            _autocorr(x, 1, mean, var),
            _autocorr(x, 2, mean, var),
            _autocorr(x, 3, mean, var),
            q10,
            q25,
            q75,
            q90,
            q75 - q25,
            slope,
            intercept,
            r2,
            float(np.sum(np.abs(diffs))) if diffs.size else 0.0,
            math.sqrt(float(np.dot(diffs, diffs))) if diffs.size else 0.0,
            entropy,
            energy_ratio,
            centroid,
            dominant,
            float(np.mean(np.abs(centered) > 2.0 * std)) if std > 0.0 else 0.0,
        ],
        dtype=float,
    )


def extract_stat_features(
    window: np.ndarray, enabled: np.ndarray | list[bool]
) -> np.ndarray:
    """Per-channel catalog features for one (d, w) window.

    ``enabled`` holds one flag per catalog entry; the result concatenates the
    enabled features channel by channel.
    """
    enabled = np.asarray(enabled, dtype=bool)
    if enabled.shape != (N_CATALOG_FEATURES,):
        raise ShapeError(f"expected {N_CATALOG_FEATURES} feature flags, got {enabled.shape}")
    if not enabled.any():
        raise ShapeError("at least one catalog feature must be enabled")
    window = np.asarray(window, dtype=float)
    return np.concatenate([_catalog_1d(window[c])[enabled] for c in range(window.shape[0])])


def stat_feature_names(channel_names, enabled) -> tuple[str, ...]:
    enabled = np.asarray(enabled, dtype=bool)
    ids = [fid for fid, on in zip(FEATURE_IDS, enabled) if on]
    return tuple(f"{ch}__{fid}" for ch in channel_names for fid in ids)


# ---------------------------------------------------------------------------
# Feature selection
# ---------------------------------------------------------------------------


def association_pvalues(X: np.ndarray, y: np.ndarray, test: str) -> np.ndarray:
    """Per-column p-value for association with ``y``; NaN for constant columns."""
    if test not in ("kendall", "pearson"):
        raise ShapeError(f"unknown test {test!r}")
    pvals = np.full(X.shape[1], np.nan)
    y_const = np.ptp(y) == 0.0
    for j in range(X.shape[1]):
        col = X[:, j]
        if np.ptp(col) == 0.0 or y_const:
            continue
        if test == "kendall":
            res = stats.kendalltau(col, y, method="asymptotic")
        else:
            res = stats.pearsonr(col, y)
        pvals[j] = res.pvalue
    return pvals


def association_scores(X: np.ndarray, y: np.ndarray, score: str) -> np.ndarray:
    """Per-column |correlation| with ``y``; 0 for constant columns."""
    if score not in ("kendall", "pearson"):
        raise ShapeError(f"unknown score {score!r}")
    out = np.zeros(X.shape[1])
    y_const = np.ptp(y) == 0.0
    for j in range(X.shape[1]):
        col = X[:, j]
        if np.ptp(col) == 0.0 or y_const:
            continue
        if score == "kendall":
            out[j] = abs(stats.kendalltau(col, y).statistic)
        else:
            out[j] = abs(stats.pearsonr(col, y).statistic)
    return out


def benjamini_hochberg(pvals: np.ndarray, alpha: float) -> np.ndarray:
    """Step-up FDR mask assuming independence (used as a comparison oracle)."""
    return _step_up(pvals, alpha, harmonic_correction=False)


def benjamini_yekutieli(pvals: np.ndarray, alpha: float) -> np.ndarray:
    """Step-up FDR mask valid under arbitrary dependence."""
    return _step_up(pvals, alpha, harmonic_correction=True)


def _step_up(pvals: np.ndarray, alpha: float, harmonic_correction: bool) -> np.ndarray:
    pvals = np.asarray(pvals, dtype=float)
    m = pvals.size
    if m == 0:
        return np.zeros(0, dtype=bool)
    c_m = float(np.sum(1.0 / np.arange(1, m + 1))) if harmonic_correction else 1.0
    order = np.argsort(pvals, kind="stable")
    ranked = pvals[order]
    thresholds = (np.arange(1, m + 1) / (m * c_m)) * alpha
    passing = np.nonzero(ranked <= thresholds)[0]
    mask = np.zeros(m, dtype=bool)
    if passing.size:
        mask[order[: passing[-1] + 1]] = True
    return mask


def fresh_select(
    features: FeatureMatrix, alpha: float, test: str = "kendall", mode: str = "fdr_by"
) -> tuple[str, ...]:
    """Select columns associated with the target via per-column hypothesis
    tests plus a multiple-testing rule.

    Constant columns are always dropped. If nothing passes, the single
    smallest-p column is kept so downstream steps always see >= 1 feature.
    """
    if mode not in ("fdr_by", "fpr", "fwe_bonferroni"):
        raise ShapeError(f"unknown mode {mode!r}")
    if features.n_rows < 20:
        raise InsufficientDataError(
            f"hypothesis-test selection needs >= 20 rows, got {features.n_rows}"
        )
    pvals = association_pvalues(features.values, features.targets, test)
    testable = ~np.isnan(pvals)
    if not testable.any():
        raise FitError("all feature columns are constant")
    p_sub = pvals[testable]
    m = p_sub.size
    if mode == "fpr":
        keep_sub = p_sub < alpha
    elif mode == "fwe_bonferroni":
        keep_sub = p_sub < alpha / m
    else:
        keep_sub = benjamini_yekutieli(p_sub, alpha)
    keep = np.zeros(len(features.columns), dtype=bool)
    keep[np.nonzero(testable)[0][keep_sub]] = True
    if not keep.any():
        keep[np.nonzero(testable)[0][np.argmin(p_sub)]] = True
    return tuple(c for c, k in zip(features.columns, keep) if k)


def select_percentile(
    features: FeatureMatrix, percentile: float, score: str = "pearson"
) -> tuple[str, ...]:
    """Keep the top ``ceil(percentile% * m)`` columns by |association score|."""
    if not 0 < percentile <= 100:
        raise ShapeError(f"percentile must be in (0, 100], got {percentile}")
    m = len(features.columns)
    if m < 2:
        raise InsufficientDataError("need at least 2 columns")
    scores = association_scores(features.values, features.targets, score)
    n_keep = min(m, max(1, math.ceil(percentile / 100.0 * m)))
    order = np.argsort(-scores, kind="stable")[:n_keep]
    keep = np.zeros(m, dtype=bool)
    keep[order] = True
    return tuple(c for c, k in zip(features.columns, keep) if k)


class PCAReducer:
    """Principal-component reduction keeping the smallest component count
    whose cumulative explained variance reaches ``keep_variance``."""

    def __init__(self, keep_variance: float, whiten: bool = False):
        if not 0.5 < keep_variance <= 0.999:
            raise ShapeError(f"keep_variance must be in (0.5, 0.999], got {keep_variance}")
        self.keep_variance = keep_variance
        self.whiten = whiten
        self.mean_: np.ndarray | None = None
        self.components_: np.ndarray | None = None  # (k, m)
        self.scale_: np.ndarray | None = None

    def fit(self, X: np.ndarray) -> "PCAReducer":
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] < 2:
            raise FitError("PCA needs a 2-D matrix with at least 2 rows")
        self.mean_ = X.mean(axis=0)
        centered = X - self.mean_
        _, s, vt = np.linalg.svd(centered, full_matrices=False)
        total = float(np.sum(s**2))
        if total <= 0.0:
            raise FitError("PCA fit matrix has rank 0 (all rows identical)")
        ratio = np.cumsum(s**2) / total
        k = int(np.searchsorted(ratio, self.keep_variance - 1e-12) + 1)
        k = min(k, s.size)
        self.components_ = vt[:k]
        self.scale_ = s[:k] / math.sqrt(X.shape[0] - 1)
        return self

    @property
    def n_components(self) -> int:
        return self.components_.shape[0]

    def transform(self, X: np.ndarray) -> np.ndarray:
        if self.components_ is None:
            raise FitError("PCA reducer is not fitted")
        scores = (np.asarray(X, dtype=float) - self.mean_) @ self.components_.T
        if self.whiten:
            scale = np.where(self.scale_ > 0.0, self.scale_, 1.0)
            scores = scores / scale
        return scores
