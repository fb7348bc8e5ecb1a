"""The hierarchical pipeline search space.

The space mixes structural selectors (which algorithm fills each pipeline
slot) with per-algorithm hyperparameters that are only active while their
algorithm is selected. Sampling, perturbation and vectorization all respect
the activation conditions and the cross-parameter constraints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .errors import SamplingError, ShapeError
from .features import FEATURE_IDS

CATEGORICAL = "categorical"
UNIFORM_INT = "uniform_int"
UNIFORM_FLOAT = "uniform_float"
LOG_FLOAT = "log_float"

_NUMERIC_KINDS = (UNIFORM_INT, UNIFORM_FLOAT, LOG_FLOAT)

# Sentinel for inactive dimensions in vectorized configurations.
INACTIVE = -1.0

_MAX_SAMPLING_RETRIES = 1000
_NEIGHBOR_STEP = 0.2


@dataclass(frozen=True)
class Hyperparameter:
    name: str
    kind: str
    choices: tuple = ()
    lo: float = 0.0
    hi: float = 0.0
    default: Any = None
    # audit tag: which pipeline algorithm owns this hyperparameter; None for
    # structural selectors that pick between algorithms
    algorithm: str | None = None
    structural: bool = False

    def __post_init__(self):
        if self.kind == CATEGORICAL:
            if len(self.choices) < 2:
                raise ShapeError(f"{self.name}: categorical needs >= 2 choices")
        elif self.kind in _NUMERIC_KINDS:
            if not self.lo < self.hi:
                raise ShapeError(f"{self.name}: requires lo < hi")
            if self.kind == LOG_FLOAT and self.lo <= 0:
                raise ShapeError(f"{self.name}: log range requires lo > 0")
        else:
            raise ShapeError(f"{self.name}: unknown kind {self.kind!r}")

    def contains(self, value) -> bool:
        if self.kind == CATEGORICAL:
            return value in self.choices
        if self.kind == UNIFORM_INT:
            return isinstance(value, (int, np.integer)) and self.lo <= value <= self.hi
        return np.isreal(value) and self.lo <= value <= self.hi

    def normalize(self, value) -> float:
        """Map an in-range value to [0, 1] (log kinds in log domain)."""
        if self.kind == CATEGORICAL:
            idx = self.choices.index(value)
            return idx / (len(self.choices) - 1)
        if self.kind == LOG_FLOAT:
            return (math.log(value) - math.log(self.lo)) / (
                math.log(self.hi) - math.log(self.lo)
            )
        return (float(value) - self.lo) / (self.hi - self.lo)

    def denormalize(self, u: float):
        u = min(max(u, 0.0), 1.0)
        if self.kind == CATEGORICAL:
            idx = min(int(round(u * (len(self.choices) - 1))), len(self.choices) - 1)
            return self.choices[idx]
        if self.kind == LOG_FLOAT:
            return math.exp(math.log(self.lo) + u * (math.log(self.hi) - math.log(self.lo)))
        value = self.lo + u * (self.hi - self.lo)
        if self.kind == UNIFORM_INT:
            return int(min(max(round(value), self.lo), self.hi))
        return value

    def draw(self, rng: np.random.Generator):
        if self.kind == CATEGORICAL:
            return self.choices[int(rng.integers(len(self.choices)))]
        if self.kind == UNIFORM_INT:
            return int(rng.integers(int(self.lo), int(self.hi) + 1))
        if self.kind == LOG_FLOAT:
            return float(math.exp(rng.uniform(math.log(self.lo), math.log(self.hi))))
        return float(rng.uniform(self.lo, self.hi))


@dataclass(frozen=True)
class Condition:
    """Child hyperparameter is active iff its parent is active and the parent
    value lies in ``active_when``."""

    child: str
    parent: str
    active_when: frozenset

    def __post_init__(self):
        object.__setattr__(self, "active_when", frozenset(self.active_when))


@dataclass(frozen=True)
class Constraint:
    name: str
    description: str
    predicate: Callable[[dict], bool]


@dataclass
class ConfigurationSpace:
    hyperparameters: list[Hyperparameter]
    conditions: list[Condition] = field(default_factory=list)
    constraints: list[Constraint] = field(default_factory=list)

    def __post_init__(self):
        names = [hp.name for hp in self.hyperparameters]
        if len(set(names)) != len(names):
            raise ShapeError("hyperparameter names must be unique")
        index = {n: i for i, n in enumerate(names)}
        by_child = {}
        for cond in self.conditions:
            if cond.child not in index or cond.parent not in index:
                raise ShapeError(
                    f"condition references undeclared names: {cond.child}/{cond.parent}"
                )
            if index[cond.parent] >= index[cond.child]:
                raise ShapeError(
                    f"parent {cond.parent!r} must be declared before child {cond.child!r}"
                )
            if cond.child in by_child:
                raise ShapeError(f"multiple conditions on child {cond.child!r}")
            by_child[cond.child] = cond
        self._by_name = {hp.name: hp for hp in self.hyperparameters}
        self._condition_by_child = by_child

    def get(self, name: str) -> Hyperparameter:
        return self._by_name[name]

    def condition_for(self, name: str) -> Condition | None:
        return self._condition_by_child.get(name)

    def is_active(self, name: str, assignments: dict) -> bool:
        cond = self.condition_for(name)
        if cond is None:
            return True
        return cond.parent in assignments and assignments[cond.parent] in cond.active_when

    def constraints_ok(self, assignments: dict) -> bool:
        return all(c.predicate(assignments) for c in self.constraints)

    @property
    def names(self) -> list[str]:
        return [hp.name for hp in self.hyperparameters]


@dataclass(frozen=True)
class Configuration:
    """One concrete point of a space: values for exactly the active names."""

    assignments: dict

    def __post_init__(self):
        object.__setattr__(self, "assignments", dict(self.assignments))

    def __getitem__(self, name: str):
        return self.assignments[name]

    def get(self, name: str, default=None):
        return self.assignments.get(name, default)

    def __contains__(self, name: str) -> bool:
        return name in self.assignments

    def key(self) -> tuple:
        """Canonical hashable identity (used to deduplicate proposals)."""
        return tuple(sorted((k, repr(v)) for k, v in self.assignments.items()))

    def __eq__(self, other) -> bool:
        return isinstance(other, Configuration) and self.key() == other.key()

    def __hash__(self) -> int:
        return hash(self.key())


def validate(space: ConfigurationSpace, config: Configuration) -> None:
    """Raise unless exactly the active names are assigned, all values are in
    range and every constraint holds."""
    assignments = config.assignments
    for hp in space.hyperparameters:
        active = space.is_active(hp.name, assignments)
        if active and hp.name not in assignments:
            raise ShapeError(f"active hyperparameter {hp.name!r} is unassigned")
        if not active and hp.name in assignments:
            raise ShapeError(f"inactive hyperparameter {hp.name!r} is assigned")
        if active and not hp.contains(assignments[hp.name]):
            raise ShapeError(
                f"{hp.name!r} = {assignments[hp.name]!r} is outside its range"
            )
    extra = set(assignments) - set(space.names)
    if extra:
        raise ShapeError(f"assignments for undeclared hyperparameters: {sorted(extra)}")
    if not space.constraints_ok(assignments):
        raise ShapeError("configuration violates a space constraint")


def sample(space: ConfigurationSpace, seed: int) -> Configuration:
    """Uniform sample over active ranges; constraint violations are resampled
    (bounded retries). Deterministic per seed."""
    rng = np.random.default_rng(seed)
    return _sample_with_rng(space, rng)


def _sample_with_rng(space: ConfigurationSpace, rng: np.random.Generator) -> Configuration:
    for _ in range(_MAX_SAMPLING_RETRIES):
        assignments: dict = {}
        for hp in space.hyperparameters:
            if space.is_active(hp.name, assignments):
                assignments[hp.name] = hp.draw(rng)
        if space.constraints_ok(assignments):
            return Configuration(assignments)
    raise SamplingError(
        f"could not satisfy space constraints after {_MAX_SAMPLING_RETRIES} samples"
    )


def _perturb_value(hp: Hyperparameter, value, rng: np.random.Generator):
    if hp.kind == CATEGORICAL:
        others = [c for c in hp.choices if c != value]
        return others[int(rng.integers(len(others)))]
    u = hp.normalize(value) + _NEIGHBOR_STEP * rng.standard_normal()
    new = hp.denormalize(u)
    if hp.kind == UNIFORM_INT and new == value:
        # Gaussian step rounded back onto the same integer: nudge one step.
        direction = 1 if (value < hp.hi and (value <= hp.lo or rng.random() < 0.5)) else -1
        new = int(value + direction)
    return new


def _repair(space: ConfigurationSpace, assignments: dict, rng: np.random.Generator) -> dict:
    """Re-evaluate activations after a change: keep still-active values, drop
    deactivated ones, draw fresh values for newly active children."""
    repaired: dict = {}
    for hp in space.hyperparameters:
        if space.is_active(hp.name, repaired):
            repaired[hp.name] = assignments.get(hp.name, hp.draw(rng))
    return repaired


def neighbors(
    config: Configuration, space: ConfigurationSpace, k: int, seed: int
) -> list[Configuration]:
    """``k`` valid configurations, each differing from ``config`` in exactly
    one active hyperparameter (plus any activation changes that implies)."""
    rng = np.random.default_rng(seed)
    active_names = [n for n in space.names if n in config.assignments]
    out: list[Configuration] = []
    for _ in range(k):
        for _ in range(_MAX_SAMPLING_RETRIES):
            name = active_names[int(rng.integers(len(active_names)))]
            hp = space.get(name)
            new_value = _perturb_value(hp, config.assignments[name], rng)
            if new_value == config.assignments[name]:
                continue
            candidate = dict(config.assignments)
            candidate[name] = new_value
            candidate = _repair(space, candidate, rng)
            if space.constraints_ok(candidate) and candidate != config.assignments:
                out.append(Configuration(candidate))
                break
        else:
            raise SamplingError("could not generate a valid neighbor")
    return out


def vectorize(config: Configuration, space: ConfigurationSpace) -> np.ndarray:
    """Fixed-length encoding: one slot per declared hyperparameter, active
    values normalized to [0, 1], inactive slots set to the -1 sentinel."""
    vec = np.full(len(space.hyperparameters), INACTIVE)
    for i, hp in enumerate(space.hyperparameters):
        if hp.name in config.assignments:
            vec[i] = hp.normalize(config.assignments[hp.name])
    return vec


def count_structures(space: ConfigurationSpace) -> int:
    """Number of distinct algorithm-choice combinations, by exhaustive
    enumeration of the structural selectors (numeric/flag settings ignored)."""
    structural = [hp for hp in space.hyperparameters if hp.structural]

    def rec(i: int, partial: dict) -> int:
        if i == len(structural):
            return 1
        hp = structural[i]
        if not space.is_active(hp.name, partial):
            return rec(i + 1, partial)
        total = 0
        for choice in hp.choices:
            partial[hp.name] = choice
            total += rec(i + 1, partial)
            del partial[hp.name]
        return total

    return rec(0, {})


# ---------------------------------------------------------------------------
# The full pipeline space
# ---------------------------------------------------------------------------

TABULAR_REGRESSORS = (
    "extra_trees",
    "gradient_boosting",
    "mlp",
    "passive_aggressive",
    "random_forest",
    "sgd",
)
SEQUENCE_REGRESSORS = ("gru", "lstm", "tcn")
SCALERS = ("robust", "minmax", "standard", "unit_norm", "none")
FEATURE_GENERATORS = ("flatten", "stat_catalog")
FEATURE_SELECTORS = ("none", "pca", "percentile", "rates")

# Reference figure published for the system this design mirrors.
REFERENCE_STRUCTURE_COUNT = 624

# Expected (categorical, numeric, conditional-within-algorithm) counts used
# by the space audit. Zero-hyperparameter algorithms are plain selector
# choices.
ALGORITHM_HYPERPARAMETER_TABLE: dict[str, tuple[int, int, int]] = {
    "imputation": (1, 0, 0),
    "exp_smoothing": (0, 2, 0),
    "robust_scaler": (0, 2, 0),
    "normalizer": (0, 0, 0),
    "minmax_scaler": (0, 0, 0),
    "standardizer": (0, 0, 0),
    "window_generation": (0, 2, 0),
    "flattening": (0, 0, 0),
    "stat_catalog": (43, 0, 0),
    "pca": (1, 1, 0),
    "select_percentile": (1, 1, 0),
    "select_rates": (2, 1, 0),
    "extra_trees": (2, 3, 0),
    "gradient_boosting": (0, 6, 0),
    "mlp": (2, 4, 1),
    "passive_aggressive": (2, 2, 0),
    "random_forest": (1, 2, 0),
    "sgd": (2, 4, 1),
    "gru": (1, 3, 1),
    "lstm": (1, 3, 1),
    "tcn": (1, 4, 1),
    "optimizer": (0, 4, 0),
    "trainer": (0, 2, 0),
}


def define_space() -> ConfigurationSpace:
    """The full pipeline search space: template choice, cleaning, window
    generation, feature generation/selection and the regressor families."""
    hps: list[Hyperparameter] = []
    conds: list[Condition] = []

    def cat(name, choices, default, algorithm=None, structural=False, parent=None, when=None):
        hps.append(
            Hyperparameter(
                name=name,
                kind=CATEGORICAL,
                choices=tuple(choices),
                default=default,
                algorithm=algorithm,
                structural=structural,
            )
        )
        if parent is not None:
            conds.append(Condition(child=name, parent=parent, active_when=frozenset(when)))

    def num(name, kind, lo, hi, default, algorithm=None, parent=None, when=None):
        hps.append(
            Hyperparameter(
                name=name, kind=kind, lo=lo, hi=hi, default=default, algorithm=algorithm
            )
        )
        if parent is not None:
            conds.append(Condition(child=name, parent=parent, active_when=frozenset(when)))

    cat("template", ("tabular", "seq2seq"), "tabular", structural=True)

    # -- data cleaning ------------------------------------------------------
    cat("impute_strategy", ("neighbor", "mean", "median"), "neighbor", algorithm="imputation")
    cat("smoothing", (False, True), False, structural=True)
    num("smoothing_alpha", UNIFORM_FLOAT, 0.05, 1.0, 0.3, algorithm="exp_smoothing",
        parent="smoothing", when=(True,))
    num("smoothing_min_periods", UNIFORM_INT, 1, 20, 1, algorithm="exp_smoothing",
        parent="smoothing", when=(True,))
    cat("scaler", SCALERS, "standard", structural=True)
    num("robust_q_lo", UNIFORM_FLOAT, 1.0, 30.0, 25.0, algorithm="robust_scaler",
        parent="scaler", when=("robust",))
    num("robust_q_hi", UNIFORM_FLOAT, 70.0, 99.0, 75.0, algorithm="robust_scaler",
        parent="scaler", when=("robust",))

    # -- feature engineering ------------------------------------------------
    num("window_length", UNIFORM_INT, 4, 30, 10, algorithm="window_generation")
    num("window_stride", UNIFORM_INT, 1, 16, 1, algorithm="window_generation")
    cat("feature_gen", FEATURE_GENERATORS, "stat_catalog", structural=True)
    for fid in FEATURE_IDS:
        cat(f"feat_{fid}", (False, True), True, algorithm="stat_catalog",
            parent="feature_gen", when=("stat_catalog",))
    cat("feature_sel", FEATURE_SELECTORS, "none", structural=True)
    num("pca_keep_variance", UNIFORM_FLOAT, 0.5, 0.999, 0.95, algorithm="pca",
        parent="feature_sel", when=("pca",))
    cat("pca_whiten", (False, True), False, algorithm="pca",
        parent="feature_sel", when=("pca",))
    num("percentile_value", UNIFORM_FLOAT, 1.0, 100.0, 50.0, algorithm="select_percentile",
        parent="feature_sel", when=("percentile",))
    cat("percentile_score", ("kendall", "pearson"), "pearson", algorithm="select_percentile",
        parent="feature_sel", when=("percentile",))
    num("rates_alpha", UNIFORM_FLOAT, 0.01, 0.5, 0.05, algorithm="select_rates",
        parent="feature_sel", when=("rates",))
    cat("rates_test", ("kendall", "pearson"), "pearson", algorithm="select_rates",
        parent="feature_sel", when=("rates",))
    cat("rates_mode", ("fdr_by", "fpr", "fwe_bonferroni"), "fdr_by", algorithm="select_rates",
        parent="feature_sel", when=("rates",))

    # -- tabular regressors --------------------------------------------------
    cat("tabular_regressor", TABULAR_REGRESSORS, "random_forest", structural=True,
        parent="template", when=("tabular",))
    cat("et_criterion", ("squared_error", "friedman_mse"), "squared_error",
        algorithm="extra_trees", parent="tabular_regressor", when=("extra_trees",))
    cat("et_bootstrap", (False, True), False, algorithm="extra_trees",
        parent="tabular_regressor", when=("extra_trees",))
    num("et_max_features_fraction", UNIFORM_FLOAT, 0.1, 1.0, 1.0, algorithm="extra_trees",
        parent="tabular_regressor", when=("extra_trees",))
    num("et_min_samples_leaf", UNIFORM_INT, 1, 20, 1, algorithm="extra_trees",
        parent="tabular_regressor", when=("extra_trees",))
    num("et_min_samples_split", UNIFORM_INT, 2, 20, 2, algorithm="extra_trees",
        parent="tabular_regressor", when=("extra_trees",))
    num("gb_learning_rate", LOG_FLOAT, 1e-3, 0.5, 0.1, algorithm="gradient_boosting",
        parent="tabular_regressor", when=("gradient_boosting",))
    num("gb_max_depth", UNIFORM_INT, 2, 10, 3, algorithm="gradient_boosting",
        parent="tabular_regressor", when=("gradient_boosting",))
    num("gb_min_samples_leaf", UNIFORM_INT, 1, 50, 5, algorithm="gradient_boosting",
        parent="tabular_regressor", when=("gradient_boosting",))
    num("gb_subsample", UNIFORM_FLOAT, 0.5, 1.0, 1.0, algorithm="gradient_boosting",
        parent="tabular_regressor", when=("gradient_boosting",))
    num("gb_max_features_fraction", UNIFORM_FLOAT, 0.1, 1.0, 1.0,
        algorithm="gradient_boosting", parent="tabular_regressor",
        when=("gradient_boosting",))
    num("gb_l2_reg", LOG_FLOAT, 1e-8, 1.0, 1e-4, algorithm="gradient_boosting",
        parent="tabular_regressor", when=("gradient_boosting",))
    cat("mlp_activation", ("relu", "tanh"), "relu", algorithm="mlp",
        parent="tabular_regressor", when=("mlp",))
    cat("mlp_lr_schedule", ("constant", "inv_sqrt"), "constant", algorithm="mlp",
        parent="tabular_regressor", when=("mlp",))
    num("mlp_hidden_size", UNIFORM_INT, 16, 128, 32, algorithm="mlp",
        parent="tabular_regressor", when=("mlp",))
    num("mlp_num_layers", UNIFORM_INT, 1, 3, 1, algorithm="mlp",
        parent="tabular_regressor", when=("mlp",))
    num("mlp_learning_rate", LOG_FLOAT, 1e-4, 1e-1, 1e-2, algorithm="mlp",
        parent="tabular_regressor", when=("mlp",))
    num("mlp_dropout", UNIFORM_FLOAT, 0.0, 0.5, 0.0, algorithm="mlp",
        parent="mlp_num_layers", when=(2, 3))
    cat("pa_loss", ("epsilon_insensitive", "squared_epsilon_insensitive"),
        "epsilon_insensitive", algorithm="passive_aggressive",
        parent="tabular_regressor", when=("passive_aggressive",))
    cat("pa_average", (False, True), False, algorithm="passive_aggressive",
        parent="tabular_regressor", when=("passive_aggressive",))
    num("pa_c", LOG_FLOAT, 1e-5, 10.0, 1.0, algorithm="passive_aggressive",
        parent="tabular_regressor", when=("passive_aggressive",))
    num("pa_epsilon", UNIFORM_FLOAT, 0.01, 1.0, 0.1, algorithm="passive_aggressive",
        parent="tabular_regressor", when=("passive_aggressive",))
    cat("rf_bootstrap", (False, True), True, algorithm="random_forest",
        parent="tabular_regressor", when=("random_forest",))
    num("rf_max_features_fraction", UNIFORM_FLOAT, 0.1, 1.0, 1.0,
        algorithm="random_forest", parent="tabular_regressor", when=("random_forest",))
    num("rf_min_samples_leaf", UNIFORM_INT, 1, 20, 1, algorithm="random_forest",
        parent="tabular_regressor", when=("random_forest",))
    cat("sgd_penalty", ("l2", "elasticnet"), "l2", algorithm="sgd",
        parent="tabular_regressor", when=("sgd",))
    cat("sgd_average", (False, True), False, algorithm="sgd",
        parent="tabular_regressor", when=("sgd",))
    num("sgd_alpha", LOG_FLOAT, 1e-7, 1e-1, 1e-4, algorithm="sgd",
        parent="tabular_regressor", when=("sgd",))
    num("sgd_eta0", LOG_FLOAT, 1e-5, 1e-1, 1e-2, algorithm="sgd",
        parent="tabular_regressor", when=("sgd",))
    num("sgd_power_t", UNIFORM_FLOAT, 0.1, 0.9, 0.25, algorithm="sgd",
        parent="tabular_regressor", when=("sgd",))
    num("sgd_l1_ratio", UNIFORM_FLOAT, 0.05, 0.95, 0.15, algorithm="sgd",
        parent="sgd_penalty", when=("elasticnet",))

    # -- sequence regressors -------------------------------------------------
    cat("seq_regressor", SEQUENCE_REGRESSORS, "gru", structural=True,
        parent="template", when=("seq2seq",))
    cat("gru_layer_norm", (False, True), False, algorithm="gru",
        parent="seq_regressor", when=("gru",))
    num("gru_hidden_size", UNIFORM_INT, 8, 64, 32, algorithm="gru",
        parent="seq_regressor", when=("gru",))
    num("gru_num_layers", UNIFORM_INT, 1, 3, 1, algorithm="gru",
        parent="seq_regressor", when=("gru",))
    num("gru_dropout", UNIFORM_FLOAT, 0.0, 0.5, 0.0, algorithm="gru",
        parent="gru_num_layers", when=(2, 3))
    cat("lstm_layer_norm", (False, True), False, algorithm="lstm",
        parent="seq_regressor", when=("lstm",))
    num("lstm_hidden_size", UNIFORM_INT, 8, 64, 32, algorithm="lstm",
        parent="seq_regressor", when=("lstm",))
    num("lstm_num_layers", UNIFORM_INT, 1, 3, 1, algorithm="lstm",
        parent="seq_regressor", when=("lstm",))
    num("lstm_dropout", UNIFORM_FLOAT, 0.0, 0.5, 0.0, algorithm="lstm",
        parent="lstm_num_layers", when=(2, 3))
    cat("tcn_weight_norm", (False, True), False, algorithm="tcn",
        parent="seq_regressor", when=("tcn",))
    num("tcn_channels", UNIFORM_INT, 8, 64, 32, algorithm="tcn",
        parent="seq_regressor", when=("tcn",))
    num("tcn_kernel_size", UNIFORM_INT, 2, 8, 3, algorithm="tcn",
        parent="seq_regressor", when=("tcn",))
    num("tcn_levels", UNIFORM_INT, 1, 4, 2, algorithm="tcn",
        parent="seq_regressor", when=("tcn",))
    num("tcn_dropout", UNIFORM_FLOAT, 0.0, 0.5, 0.0, algorithm="tcn",
        parent="tcn_levels", when=(2, 3, 4))
    num("opt_learning_rate", LOG_FLOAT, 1e-4, 1e-1, 1e-2, algorithm="optimizer",
        parent="template", when=("seq2seq",))
    num("opt_weight_decay", LOG_FLOAT, 1e-8, 1e-2, 1e-6, algorithm="optimizer",
        parent="template", when=("seq2seq",))
    num("opt_momentum_beta", UNIFORM_FLOAT, 0.8, 0.999, 0.9, algorithm="optimizer",
        parent="template", when=("seq2seq",))
    num("opt_grad_clip", UNIFORM_FLOAT, 0.1, 10.0, 1.0, algorithm="optimizer",
        parent="template", when=("seq2seq",))
    num("trainer_batch_size", UNIFORM_INT, 16, 256, 32, algorithm="trainer",
        parent="template", when=("seq2seq",))
    num("trainer_patience", UNIFORM_INT, 5, 50, 10, algorithm="trainer",
        parent="template", when=("seq2seq",))

    constraints = [
        Constraint(
            name="stride_lt_window",
            description="window_stride < window_length",
            predicate=lambda a: a["window_stride"] < a["window_length"],
        ),
        Constraint(
            name="catalog_not_empty",
            description="stat_catalog requires at least one enabled feature flag",
            predicate=lambda a: a.get("feature_gen") != "stat_catalog"
            or any(a[f"feat_{fid}"] for fid in FEATURE_IDS),
        ),
    ]
    return ConfigurationSpace(hyperparameters=hps, conditions=conds, constraints=constraints)


def algorithm_counts(space: ConfigurationSpace) -> dict[str, tuple[int, int, int]]:
    """Observed (categorical, numeric, conditional-within-algorithm) counts
    per algorithm, for auditing against the published inventory."""
    counts: dict[str, list[int]] = {
        name: [0, 0, 0] for name in ALGORITHM_HYPERPARAMETER_TABLE
    }
    for hp in space.hyperparameters:
        if hp.algorithm is None:
            continue
        entry = counts.setdefault(hp.algorithm, [0, 0, 0])
        entry[0 if hp.kind == CATEGORICAL else 1] += 1
        cond = space.condition_for(hp.name)
        if cond is not None and space.get(cond.parent).algorithm == hp.algorithm:
            entry[2] += 1
    return {name: tuple(v) for name, v in counts.items()}


def space_manifest(space: ConfigurationSpace) -> str:
    """Structured text description of the space, for documentation and
    reproducibility."""
    lines = ["# pipeline search space manifest", ""]
    lines.append(f"hyperparameters: {len(space.hyperparameters)}")
    lines.append(f"structure_count: {count_structures(space)}")
    lines.append(f"reference_structure_count: {REFERENCE_STRUCTURE_COUNT}")
    lines.append("")
    lines.append("## hyperparameters (name | algorithm | kind | domain | condition)")
    for hp in space.hyperparameters:
        domain = (
            "{" + ", ".join(str(c) for c in hp.choices) + "}"
            if hp.kind == CATEGORICAL
            else f"[{hp.lo}, {hp.hi}]"
        )
        cond = space.condition_for(hp.name)
        cond_str = (
            f"{cond.parent} in {{{', '.join(str(v) for v in sorted(cond.active_when, key=str))}}}"
            if cond
            else "-"
        )
        tag = hp.algorithm or ("selector" if hp.structural else "-")
        lines.append(f"{hp.name} | {tag} | {hp.kind} | {domain} | {cond_str}")
    lines.append("")
    lines.append("## constraints")
    for c in space.constraints:
        lines.append(f"{c.name}: {c.description}")
    lines.append("")
    lines.append("## per-algorithm hyperparameter counts (categorical/numeric/conditional)")
    for name, (n_cat, n_num, n_cond) in sorted(algorithm_counts(space).items()):
        lines.append(f"{name}: total={n_cat + n_num} cat={n_cat} num={n_num} cond={n_cond}")
    return "\n".join(lines) + "\n"
