"""Run-to-failure datasets: ingestion, RUL labelling, splitting, synthesis.

A dataset is a bag of instances; each instance is one engineered system
recorded from setup until failure as a ``(d, T)`` float matrix (``NaN``
marks a missing reading). Timesteps are equidistant integer indices; input
with irregular spacing is rejected at load time instead of resampled.
Datasets are immutable after construction and safe to share across
concurrent workers.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DuplicateKeyError,
    InsufficientDataError,
    ParseError,
    SchemaError,
    ShapeError,
)
from .seeding import rng_for

_RUL_STEP_TOL = 1e-9


@dataclass(frozen=True)
class Instance:
    """One run-to-failure series with optional per-timestep RUL targets."""

    id: str
    values: np.ndarray  # (d, T), float64, NaN = missing
    rul: np.ndarray | None = None  # (T,), non-negative, non-increasing

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ShapeError(
                f"instance {self.id!r}: values must be a (d, T) matrix with d,T >= 1, "
                f"got shape {values.shape}"
            )
        object.__setattr__(self, "values", values)
        if self.rul is not None:
            rul = np.asarray(self.rul, dtype=float)
            if rul.shape != (values.shape[1],):
                raise ShapeError(
                    f"instance {self.id!r}: rul length {rul.shape} does not match T={values.shape[1]}"
                )
            if rul[-1] < -_RUL_STEP_TOL:
                raise ShapeError(f"instance {self.id!r}: final RUL must be >= 0")
            steps = rul[:-1] - rul[1:]
            if steps.size and (steps.min() < -_RUL_STEP_TOL or steps.max() > 1 + _RUL_STEP_TOL):
                raise ShapeError(
                    f"instance {self.id!r}: RUL must be non-increasing with per-step drop <= 1"
                )
            object.__setattr__(self, "rul", rul)

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class TestInstance:
    """A series truncated before failure, with the RUL left at its end."""

    id: str
    values: np.ndarray  # (d, T')
    true_rul: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ShapeError(f"test instance {self.id!r}: values must be a (d, T') matrix")
        object.__setattr__(self, "values", values)
        if self.true_rul < 0:
            raise ShapeError(f"test instance {self.id!r}: true_rul must be >= 0")

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class RunToFailureDataset:
    instances: tuple[Instance, ...]
    sensor_names: tuple[str, ...]
    categorical_columns: frozenset[int] = frozenset()
    # symbol table per categorical column: matrix values are indices into it
    categorical_levels: tuple[tuple[int, tuple[str, ...]], ...] = ()

    def __post_init__(self):
        instances = tuple(self.instances)
        object.__setattr__(self, "instances", instances)
        object.__setattr__(self, "sensor_names", tuple(self.sensor_names))
        object.__setattr__(self, "categorical_columns", frozenset(self.categorical_columns))
        object.__setattr__(
            self,
            "categorical_levels",
            tuple((int(c), tuple(levels)) for c, levels in self.categorical_levels),
        )
        d = len(self.sensor_names)
        ids = set()
        for inst in instances:
            if inst.n_channels != d:
                raise ShapeError(
                    f"instance {inst.id!r} has {inst.n_channels} channels, expected {d}"
                )
            if inst.id in ids:
                raise ShapeError(f"duplicate instance id {inst.id!r}")
            ids.add(inst.id)
        for col in self.categorical_columns:
            if not 0 <= col < d:
                raise ShapeError(f"categorical column {col} out of range for d={d}")

    @property
    def n_instances(self) -> int:
        return len(self.instances)

    @property
    def n_channels(self) -> int:
        return len(self.sensor_names)

    @property
    def instance_ids(self) -> tuple[str, ...]:
        return tuple(inst.id for inst in self.instances)

    def levels_for(self, col: int) -> tuple[str, ...] | None:
        for c, levels in self.categorical_levels:
            if c == col:
                return levels
        return None

    def replace_instances(self, instances) -> "RunToFailureDataset":
        """Same metadata, different instance list."""
        return RunToFailureDataset(
            instances=tuple(instances),
            sensor_names=self.sensor_names,
            categorical_columns=self.categorical_columns,
            categorical_levels=self.categorical_levels,
        )


# ---------------------------------------------------------------------------
# C-MAPSS-style text format
# ---------------------------------------------------------------------------


def _parse_numeric_row(tokens: list[str], line_no: int) -> list[float]:
    row = []
    for tok in tokens:
        try:
            row.append(float(tok))
        except ValueError:
            raise ParseError(f"non-numeric token {tok!r}", line=line_no) from None
    return row


def _read_unit_cycle_file(path) -> dict[int, list[tuple[int, list[float]]]]:
    """Read rows of (unit, cycle, d values); returns unit -> [(cycle, values)]."""
    units: dict[int, list[tuple[int, list[float]]]] = {}
    n_cols = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            row = _parse_numeric_row(tokens, line_no)
            if len(row) < 3:
                raise ParseError(
                    f"expected at least 3 columns (unit, cycle, sensors), got {len(row)}",
                    line=line_no,
                )
            if n_cols is None:
                n_cols = len(row)
            elif len(row) != n_cols:
                raise ParseError(
                    f"inconsistent column count: expected {n_cols}, got {len(row)}",
                    line=line_no,
                )
            unit, cycle = int(row[0]), int(row[1])
            units.setdefault(unit, []).append((cycle, row[2:]))
    if not units:
        raise ParseError(f"{path}: file contains no data rows")
    return units


def _units_to_matrices(units: dict) -> dict[int, np.ndarray]:
    """Order each unit by cycle, enforce equidistant cycles, return (d, T)."""
    out = {}
    for unit in sorted(units):
        rows = sorted(units[unit], key=lambda r: r[0])
        cycles = np.array([r[0] for r in rows])
        if len(cycles) > 1:
            steps = np.diff(cycles)
            if len(set(steps.tolist())) != 1 or steps[0] <= 0:
                raise ShapeError(
                    f"unit {unit}: cycles are not equidistant/strictly increasing"
                )
        out[unit] = np.array([r[1] for r in rows], dtype=float).T
    return out


def _cmapss_sensor_names(d: int) -> tuple[str, ...]:
    # Standard turbofan layout: 3 operating settings followed by 21 sensors.
    if d == 24:
        return tuple(
            [f"setting_{i}" for i in range(1, 4)] + [f"sensor_{i}" for i in range(1, 22)]
        )
    return tuple(f"col_{i}" for i in range(d))


def load_cmapss_series(path) -> list[tuple[str, np.ndarray]]:
    """Read one unit/cycle text file into (unit id, (d, T) matrix) pairs,
    ordered by unit (used for prediction-only inputs)."""
    units = _units_to_matrices(_read_unit_cycle_file(path))
    return [(str(u), units[u]) for u in sorted(units)]


def load_cmapss(train_path, test_path, rul_path):
    """Load whitespace-separated (unit, cycle, sensors...) files.

    Returns the training dataset (RUL targets not yet attached; see
    :func:`label_rul`) and one :class:`TestInstance` per test unit, with the
    end-of-series RUL read from ``rul_path`` in unit order.
    """
    train_units = _units_to_matrices(_read_unit_cycle_file(train_path))
    test_units = _units_to_matrices(_read_unit_cycle_file(test_path))

    d_train = next(iter(train_units.values())).shape[0]
    d_test = next(iter(test_units.values())).shape[0]
    if d_train != d_test:
        raise ShapeError(
            f"train file has {d_train} value columns but test file has {d_test}"
        )

    ruls = []
    with open(rul_path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != 1:
                raise ParseError("expected one RUL value per line", line=line_no)
            ruls.extend(_parse_numeric_row(tokens, line_no))
    if len(ruls) != len(test_units):
        raise ShapeError(
            f"RUL file has {len(ruls)} lines but test file has {len(test_units)} units"
        )

    instances = [Instance(id=str(u), values=train_units[u]) for u in sorted(train_units)]
    dataset = RunToFailureDataset(
        instances=tuple(instances), sensor_names=_cmapss_sensor_names(d_train)
    )
    tests = [
        TestInstance(id=str(u), values=test_units[u], true_rul=float(r))
        for u, r in zip(sorted(test_units), ruls)
    ]
    return dataset, tests


# ---------------------------------------------------------------------------
# Long CSV format
# ---------------------------------------------------------------------------

_ROLES = {"instance_id", "timestep", "sensor", "categorical", "target"}


def load_long_csv(path, schema: dict[str, str]) -> RunToFailureDataset:
    """Load a header-ed long-format CSV.

    ``schema`` maps column names to roles: exactly one ``instance_id`` and one
    ``timestep`` column, any number of ``sensor``/``categorical`` columns and
    at most one ``target`` column. File columns absent from the schema are
    ignored; schema entries naming a missing column raise :class:`SchemaError`.
    Empty sensor cells become missing values, imputed downstream.
    """
    for col, role in schema.items():
        if role not in _ROLES:
            raise SchemaError(f"unknown role {role!r} for column {col!r}")
    id_cols = [c for c, r in schema.items() if r == "instance_id"]
    ts_cols = [c for c, r in schema.items() if r == "timestep"]
    target_cols = [c for c, r in schema.items() if r == "target"]
    if len(id_cols) != 1 or len(ts_cols) != 1 or len(target_cols) > 1:
        raise SchemaError(
            "schema needs exactly one instance_id, one timestep and at most one target column"
        )
    value_cols = [c for c, r in schema.items() if r in ("sensor", "categorical")]
    if not value_cols:
        raise SchemaError("schema declares no sensor or categorical columns")

    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in schema if c not in header]
        if missing:
            raise SchemaError(f"schema columns not present in file: {missing}")
        rows = list(reader)
    if not rows:
        raise ParseError(f"{path}: file contains no data rows")

    id_col, ts_col = id_cols[0], ts_cols[0]
    target_col = target_cols[0] if target_cols else None
    cat_cols = [c for c in value_cols if schema[c] == "categorical"]

    per_instance: dict[str, dict[int, dict]] = {}
    order: list[str] = []
    for line_no, row in enumerate(rows, start=2):
        iid = row[id_col]
        try:
            ts = int(row[ts_col])
        except (TypeError, ValueError):
            raise ParseError(f"non-integer timestep {row[ts_col]!r}", line=line_no) from None
        if iid not in per_instance:
            per_instance[iid] = {}
            order.append(iid)
        if ts in per_instance[iid]:
            raise DuplicateKeyError(f"duplicate (instance_id, timestep) = ({iid!r}, {ts})")
        per_instance[iid][ts] = (line_no, row)

    # Symbol tables, lexicographic per categorical column.
    levels: dict[str, list[str]] = {}
    for col in cat_cols:
        symbols = sorted(
            {r[col] for _, cells in per_instance.items() for _, r in cells.values() if r[col] != ""}
        )
        levels[col] = symbols

    instances = []
    for iid in order:
        cells = per_instance[iid]
        timesteps = sorted(cells)
        if len(timesteps) > 1:
            steps = np.diff(timesteps)
            if len(set(steps.tolist())) != 1 or steps[0] <= 0:
                raise ShapeError(f"instance {iid!r}: timesteps are not equidistant")
        matrix = np.full((len(value_cols), len(timesteps)), np.nan)
        rul = np.full(len(timesteps), np.nan) if target_col else None
        for t_idx, ts in enumerate(timesteps):
            line_no, row = cells[ts]
            for c_idx, col in enumerate(value_cols):
                cell = row[col]
                if cell == "" or cell is None:
                    continue
                if schema[col] == "categorical":
                    matrix[c_idx, t_idx] = levels[col].index(cell)
                else:
                    try:
                        matrix[c_idx, t_idx] = float(cell)
                    except ValueError:
                        raise ParseError(
                            f"non-numeric value {cell!r} in column {col!r}", line=line_no
                        ) from None
            if target_col:
                try:
                    rul[t_idx] = float(row[target_col])
                except (TypeError, ValueError):
                    raise ParseError(
                        f"non-numeric target {row[target_col]!r}", line=line_no
                    ) from None
        if rul is not None and np.isnan(rul).any():
            raise ParseError(f"instance {iid!r}: target column has missing cells")
        instances.append(Instance(id=iid, values=matrix, rul=rul))

    cat_indices = frozenset(i for i, c in enumerate(value_cols) if schema[c] == "categorical")
    cat_levels = tuple(
        (value_cols.index(col), tuple(levels[col])) for col in cat_cols
    )
    return RunToFailureDataset(
        instances=tuple(instances),
        sensor_names=tuple(value_cols),
        categorical_columns=cat_indices,
        categorical_levels=cat_levels,
    )


def write_long_csv(dataset: RunToFailureDataset, path) -> None:
    """Write a dataset back to the long CSV format (round-trips with
    :func:`load_long_csv` under the natural schema)."""
    has_rul = all(inst.rul is not None for inst in dataset.instances)
    header = ["instance_id", "timestep", *dataset.sensor_names]
    if has_rul:
        header.append("rul")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for inst in dataset.instances:
            for t in range(inst.length):
                row = [inst.id, t]
                for c in range(dataset.n_channels):
                    v = inst.values[c, t]
                    if np.isnan(v):
                        row.append("")
                    elif c in dataset.categorical_columns:
                        row.append(dataset.levels_for(c)[int(v)])
                    else:
                        row.append(repr(float(v)))
                if has_rul:
                    row.append(repr(float(inst.rul[t])))
                writer.writerow(row)


def natural_schema(dataset: RunToFailureDataset, with_target: bool = True) -> dict[str, str]:
    """The schema under which :func:`write_long_csv` output reloads."""
    schema = {"instance_id": "instance_id", "timestep": "timestep"}
    for i, name in enumerate(dataset.sensor_names):
        schema[name] = "categorical" if i in dataset.categorical_columns else "sensor"
    if with_target and all(inst.rul is not None for inst in dataset.instances):
        schema["rul"] = "target"
    return schema


# ---------------------------------------------------------------------------
# Labelling, splitting, synthesis
# ---------------------------------------------------------------------------


def label_rul(dataset: RunToFailureDataset, cap: float | None = None) -> RunToFailureDataset:
    """Attach linear RUL targets: ``rul[t] = (T-1) - t``, optionally capped.

    Instances are assumed to end at failure. ``cap=None`` (the default) gives
    the pure linear labelling; a finite cap yields the piecewise-constant
    variant ``min(cap, (T-1) - t)``.
    """
    if cap is not None and cap < 0:
        raise ShapeError(f"cap must be non-negative, got {cap}")
    labelled = []
    for inst in dataset.instances:
        rul = np.arange(inst.length - 1, -1, -1, dtype=float)
        if cap is not None:
            rul = np.minimum(rul, float(cap))
        labelled.append(Instance(id=inst.id, values=inst.values, rul=rul))
    return dataset.replace_instances(labelled)


def split_train_val(
    dataset: RunToFailureDataset, fraction: float, seed: int
) -> tuple[RunToFailureDataset, RunToFailureDataset]:
    """Split by whole instance into (train, val); deterministic per seed.

    ``|train| = round(fraction * N)`` with at least one instance per part.
    """
    if not 0 < fraction < 1:
        raise ShapeError(f"fraction must be in (0, 1), got {fraction}")
    n = dataset.n_instances
    if n < 2:
        raise InsufficientDataError(f"need at least 2 instances to split, got {n}")
    n_train = int(math.floor(fraction * n + 0.5))
    n_train = min(max(n_train, 1), n - 1)
    perm = rng_for(seed, "instance-split").permutation(n)
    train_idx = sorted(perm[:n_train].tolist())
    val_idx = sorted(perm[n_train:].tolist())
    train = dataset.replace_instances([dataset.instances[i] for i in train_idx])
    val = dataset.replace_instances([dataset.instances[i] for i in val_idx])
    return train, val


def generate_synthetic(
    n_instances: int, d: int, base_length: int, noise_sd: float, seed: int
) -> RunToFailureDataset:
    """Synthetic degradation data for tests and demos.

    Channel 0 carries a monotone trend (linear plus exponential tail) with
    additive Gaussian noise; remaining channels mix an attenuated copy of the
    trend with pure noise. Lengths are drawn from
    ``[0.5 * base_length, 1.5 * base_length]`` and RUL is labelled linearly.
    """
    if n_instances < 1 or d < 1 or base_length < 1:
        raise ShapeError("n_instances, d and base_length must all be >= 1")
    if noise_sd < 0:
        raise ShapeError("noise_sd must be >= 0")
    lo = max(1, math.ceil(0.5 * base_length))
    hi = max(lo, math.floor(1.5 * base_length))
    instances = []
    for i in range(n_instances):
        rng = rng_for(seed, "synthetic", i)
        length = int(rng.integers(lo, hi + 1))
        t = np.arange(length, dtype=float)
        t_norm = t / (length - 1) if length > 1 else np.zeros(1)
        # Trend parameters vary mildly across instances: the degradation
        # family stays recognizable, so remaining life is inferable from the
        # local level and slope, while lengths still vary threefold.
        slope = rng.uniform(0.9, 1.1)
        tail = rng.uniform(0.5, 0.7)
        sharp = rng.uniform(2.5, 3.5)
        trend = slope * t_norm + tail * np.expm1(sharp * t_norm) / np.expm1(sharp)
        channels = [trend + noise_sd * rng.standard_normal(length)]
        for _ in range(1, d):
            mix = rng.uniform(0.2, 0.8)
            channels.append(mix * trend + noise_sd * rng.standard_normal(length))
        rul = np.arange(length - 1, -1, -1, dtype=float)
        instances.append(Instance(id=f"synthetic-{i}", values=np.array(channels), rul=rul))
    return RunToFailureDataset(
        instances=tuple(instances), sensor_names=tuple(f"s{k}" for k in range(d))
    )


def truncate_for_testing(
    dataset: RunToFailureDataset,
    seed: int,
    lo: float = 0.3,
    hi: float = 0.9,
    min_length: int = 1,
    cuts_per_instance: int = 1,
) -> list[TestInstance]:
    """Cut each labelled instance at seeded random fractions of its length,
    yielding test-style prefixes with known end-of-prefix RUL.

    ``min_length`` floors the prefix length (when the instance allows it), so
    generated test sets stay consumable by windowed pipelines.
    ``cuts_per_instance`` > 1 scores several prediction points per series.
    """
    tests = []
    for inst in dataset.instances:
        if inst.rul is None:
            raise ShapeError(f"instance {inst.id!r} has no RUL targets to truncate against")
        for j in range(cuts_per_instance):
            frac = rng_for(seed, "truncate", inst.id, j).uniform(lo, hi)
            cut = max(1, min_length, int(round(frac * inst.length)))
            cut = min(cut, inst.length)
            suffix = f"#cut{j}" if cuts_per_instance > 1 else ""
            tests.append(
                TestInstance(
                    id=inst.id + suffix,
                    values=inst.values[:, :cut],
                    true_rul=float(inst.rul[cut - 1]),
                )
            )
    return tests
