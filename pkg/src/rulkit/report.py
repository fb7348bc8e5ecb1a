"""Run statistics, ensemble composition tables, Wilcoxon comparisons and
regret-curve export."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .ensemble import Ensemble
from .errors import ContractError, InsufficientDataError
from .search import RunHistory

_EXACT_WILCOXON_MAX_N = 15


def report_run_statistics(history: RunHistory) -> dict[str, int]:
    """Counters over the evaluated configurations: total, per-status, and how
    many ran at the full budget."""
    return history.counters()


def report_ensemble_composition(ensemble: Ensemble) -> dict[str, dict[str, float]]:
    """Weight-weighted fraction of ensemble members per template, feature
    generation choice and regressor kind. Each category sums to 1 (up to
    rounding when displayed)."""
    categories: dict[str, dict[str, float]] = {
        "template": {},
        "feature_generation": {},
        "regressor": {},
    }
    for member in ensemble.members:
        weight = ensemble.weight(member)
        config = member.config
        template = config["template"]
        regressor = config.get("tabular_regressor") or config.get("seq_regressor")
        for category, value in (
            ("template", template),
            ("feature_generation", config["feature_gen"]),
            ("regressor", regressor),
        ):
            categories[category][value] = categories[category].get(value, 0.0) + weight
    return categories


def format_composition_table(composition: dict[str, dict[str, float]]) -> str:
    lines = []
    for category, fractions in composition.items():
        parts = ", ".join(
            f"{name} ({fraction:.2f})"
            for name, fraction in sorted(fractions.items(), key=lambda kv: -kv[1])
        )
        lines.append(f"{category}: {parts}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank test
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_value: float
    significant: bool


def _exact_two_sided_p(ranks: np.ndarray, w_plus: float) -> float:
    """Exact two-sided p by enumerating all sign assignments of the ranks."""
    n = ranks.size
    bits = (np.arange(2**n)[:, None] >> np.arange(n)) & 1
    w_distribution = bits @ ranks
    n_le = int(np.sum(w_distribution <= w_plus + 1e-9))
    n_ge = int(np.sum(w_distribution >= w_plus - 1e-9))
    return min(1.0, 2.0 * min(n_le, n_ge) / 2**n)


def _approx_two_sided_p(d: np.ndarray, ranks: np.ndarray, w_plus: float) -> float:
    """Normal approximation with tie and continuity corrections."""
    n = d.size
    mu = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    var -= float(np.sum(tie_counts**3 - tie_counts)) / 48.0
    if var <= 0:
        return 1.0
    if w_plus > mu:
        z = (w_plus - mu - 0.5) / math.sqrt(var)
    elif w_plus < mu:
        z = (w_plus - mu + 0.5) / math.sqrt(var)
    else:
        z = 0.0
    return min(1.0, 2.0 * (1.0 - 0.5 * (1.0 + math.erf(abs(z) / math.sqrt(2.0)))))


def wilcoxon_signed_rank(sample_a, sample_b, alpha: float = 0.05) -> WilcoxonResult:
    """Two-sided paired test. Zero differences are dropped; the null
    distribution is enumerated exactly for n <= 15 and approximated by a
    continuity-corrected normal beyond that. All differences zero means no
    signal (p = 1)."""
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ContractError("samples must be equal-length vectors")
    d = a - b
    d = d[d != 0.0]
    if d.size == 0:
        return WilcoxonResult(statistic=0.0, p_value=1.0, significant=False)
    if d.size < 5:
        raise InsufficientDataError(
            f"need >= 5 nonzero paired differences, got {d.size}"
        )
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    statistic = min(w_plus, w_minus)
    if d.size <= _EXACT_WILCOXON_MAX_N:
        p = _exact_two_sided_p(ranks, w_plus)
    else:
        p = _approx_two_sided_p(d, ranks, w_plus)
    return WilcoxonResult(statistic=statistic, p_value=p, significant=p < alpha)


# ---------------------------------------------------------------------------
# Regret curves
# ---------------------------------------------------------------------------


def write_regret_csv(points: list[tuple[float, float]], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seconds", "regret"])
        for seconds, regret in points:
            writer.writerow([repr(float(seconds)), repr(float(regret))])


def read_regret_csv(path) -> list[tuple[float, float]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["seconds", "regret"]:
            raise ContractError(f"unexpected regret CSV header: {header}")
        return [(float(s), float(r)) for s, r in reader]


def aggregate_regret(
    curves: list[list[tuple[float, float]]], n_points: int = 50
) -> list[tuple[float, float]]:
    """Mean regret over runs on a common time grid. Each curve is treated as
    a step function forward-filled from its first improvement."""
    curves = [c for c in curves if c]
    if not curves:
        return []
    t_max = max(c[-1][0] for c in curves)
    grid = np.linspace(0.0, t_max, n_points)
    means = []
    for t in grid:
        values = []
        for curve in curves:
            value = curve[0][1]
            for seconds, regret in curve:
                if seconds <= t:
                    value = regret
                else:
                    break
            values.append(value)
        means.append((float(t), float(np.mean(values))))
    return means
