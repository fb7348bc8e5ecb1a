"""Pipeline search: Bayesian proposals over the configuration space, Hyperband
budget allocation, parallel trial execution with hard timeouts, and run-history
bookkeeping.

A single coordinator owns the history and surrogate. Workers are forked
processes receiving immutable tasks; a worker that overruns its deadline is
killed and recorded as a timeout. With one worker and a fixed seed the whole
run is reproducible record for record (wall-clock fields aside), because every
piece of randomness is derived from the run seed and a structural tag.
"""

from __future__ import annotations

import json
import math
import multiprocessing
import os
import pickle
import time
from dataclasses import dataclass, field

import numpy as np

from . import pipeline as pl
from .configspace import Configuration, ConfigurationSpace, neighbors, sample, vectorize
from .dataset import RunToFailureDataset, split_train_val, truncate_for_testing
from .errors import ContractError, SamplingError, SearchFailedError, ShapeError
from .metrics import rmse
from .regressors import TabularRegressorSpec
from .regressors.trees import BaggedForest
from .seeding import derive_seed

__all__ = [
    "rmse",
    "hyperband_schedule",
    "expected_improvement",
    "fit_surrogate",
    "propose",
    "TrialRecord",
    "RunHistory",
    "SearchBudget",
    "run_search",
    "compute_regret",
    "SUCCESS",
    "FAILED",
    "TIMEOUT",
]

SUCCESS = "success"
FAILED = "failed"
TIMEOUT = "timeout"

_KILL_GRACE = 1.05  # hard-kill workers at timeout * grace
_SURROGATE_TREES = 50
_SURROGATE_MIN_POINTS = 8
_RANDOM_INTERLEAVE = 3  # every 3rd proposal is a pure random sample
_N_RANDOM_CANDIDATES = 500
_N_INCUMBENT_NEIGHBORS = 10
_N_TOP_INCUMBENTS = 5


# ---------------------------------------------------------------------------
# Closed-form pieces
# ---------------------------------------------------------------------------


def hyperband_schedule(R: int, eta: int) -> list[list[tuple[int, int]]]:
    """Bracket layout: for each bracket a list of (n_configs, budget) rungs.

    Bracket ``s`` (from ``s_max = floor(log_eta R)`` down to 0) starts with
    ``ceil((s_max+1)/(s+1) * eta**s)`` configurations at budget
    ``R * eta**-s``; each rung keeps the top ``1/eta`` and multiplies the
    budget by ``eta`` until it reaches ``R``.
    """
    if eta < 2:
        raise ContractError(f"eta must be >= 2, got {eta}")
    if R < eta:
        raise ContractError(f"max budget R ({R}) must be >= eta ({eta})")
    s_max = int(math.floor(math.log(R) / math.log(eta) + 1e-12))
    brackets = []
    for s in range(s_max, -1, -1):
        n0 = math.ceil((s_max + 1) / (s + 1) * eta**s)
        rungs = []
        for i in range(s + 1):
            n_i = n0 // eta**i
            r_i = max(1, round(R / eta ** (s - i)))
            rungs.append((n_i, r_i))
        brackets.append(rungs)
    return brackets


def _norm_pdf(z: float) -> float:
    return math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def _norm_cdf(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def expected_improvement(mu: float, sigma: float, f_min: float) -> float:
    """Expected reduction below ``f_min`` for a Gaussian belief N(mu, sigma)."""
    if sigma < 0:
        raise ContractError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0.0:
        return max(0.0, f_min - mu)
    z = (f_min - mu) / sigma
    return (f_min - mu) * _norm_cdf(z) + sigma * _norm_pdf(z)


# ---------------------------------------------------------------------------
# Trial records and run history
# ---------------------------------------------------------------------------


@dataclass
class TrialRecord:
    trial_id: int
    config: Configuration
    budget: int
    seed: int
    status: str
    val_rmse: float | None = None
    val_predictions: np.ndarray | None = None
    fit_seconds: float = 0.0
    wall_clock_at_completion: float = 0.0
    bracket_id: int = 0
    rung: int = 0
    parent_trial_id: int | None = None
    message: str | None = None

    def __post_init__(self):
        if self.status not in (SUCCESS, FAILED, TIMEOUT):
            raise ShapeError(f"unknown trial status {self.status!r}")
        if self.budget < 1:
            raise ShapeError("trial budget must be >= 1")
        has_loss = self.val_rmse is not None and np.isfinite(self.val_rmse)
        if (self.status == SUCCESS) != has_loss:
            raise ShapeError("val_rmse must be finite exactly for successful trials")
        if self.val_predictions is not None:
            self.val_predictions = np.asarray(self.val_predictions, dtype=float)


class RunHistory:
    """Append-only log of trial records plus the search-level metadata needed
    to rebuild ensembles and reports from disk."""

    def __init__(self, meta: dict | None = None):
        self.meta = dict(meta or {})
        self.records: list[TrialRecord] = []
        self._incumbent: TrialRecord | None = None
        self._seen_pairs: set[tuple] = set()

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: TrialRecord) -> None:
        self.records.append(record)
        self._seen_pairs.add((record.config.key(), record.budget))
        if record.status == SUCCESS and (
            self._incumbent is None or record.val_rmse < self._incumbent.val_rmse
        ):
            self._incumbent = record

    @property
    def incumbent(self) -> TrialRecord | None:
        """Best-so-far successful trial (lowest validation loss, earliest on
        ties)."""
        return self._incumbent

    def successes(self, budget: int | None = None) -> list[TrialRecord]:
        return [
            r
            for r in self.records
            if r.status == SUCCESS and (budget is None or r.budget == budget)
        ]

    def seen(self, config: Configuration, budget: int) -> bool:
        return (config.key(), budget) in self._seen_pairs

    def counters(self) -> dict[str, int]:
        """Run-statistics counters; full-budget means budget == max_budget."""
        R = self.meta.get("max_budget")
        n_success = sum(1 for r in self.records if r.status == SUCCESS)
        n_failed = sum(1 for r in self.records if r.status == FAILED)
        n_timeout = sum(1 for r in self.records if r.status == TIMEOUT)
        return {
            "n_configurations": len(self.records),
            "n_success": n_success,
            "n_failed": n_failed,
            "n_timeout": n_timeout,
            "n_full_budget": sum(1 for r in self.records if R is not None and r.budget == R),
        }

    def fingerprint(self) -> tuple:
        """Deterministic identity of the run, excluding wall-clock fields."""
        return tuple(
            (
                r.trial_id,
                r.config.key(),
                r.budget,
                r.seed,
                r.status,
                r.val_rmse,
                None if r.val_predictions is None else tuple(r.val_predictions.tolist()),
                r.bracket_id,
                r.rung,
                r.parent_trial_id,
            )
            for r in self.records
        )

    # -- persistence -----------------------------------------------------------

    def to_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"type": "meta", **_jsonable(self.meta)}) + "\n")
            for r in self.records:
                fh.write(
                    json.dumps(
                        {
                            "type": "trial",
                            "trial_id": r.trial_id,
                            "config": _jsonable(r.config.assignments),
                            "budget": r.budget,
                            "seed": r.seed,
                            "status": r.status,
                            "val_rmse": r.val_rmse,
                            "val_predictions": None
                            if r.val_predictions is None
                            else r.val_predictions.tolist(),
                            "fit_seconds": r.fit_seconds,
                            "timestamp": r.wall_clock_at_completion,
                            "bracket_id": r.bracket_id,
                            "rung": r.rung,
                            "parent_trial_id": r.parent_trial_id,
                            "message": r.message,
                        }
                    )
                    + "\n"
                )

    @classmethod
    def from_jsonl(cls, path) -> "RunHistory":
        history = cls()
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                kind = obj.pop("type")
                if kind == "meta":
                    history.meta = obj
                    continue
                history.append(
                    TrialRecord(
                        trial_id=obj["trial_id"],
                        config=Configuration(obj["config"]),
                        budget=obj["budget"],
                        seed=obj["seed"],
                        status=obj["status"],
                        val_rmse=obj["val_rmse"],
                        val_predictions=None
                        if obj["val_predictions"] is None
                        else np.array(obj["val_predictions"]),
                        fit_seconds=obj["fit_seconds"],
                        wall_clock_at_completion=obj["timestamp"],
                        bracket_id=obj["bracket_id"],
                        rung=obj["rung"],
                        parent_trial_id=obj["parent_trial_id"],
                        message=obj["message"],
                    )
                )
        return history


def _jsonable(obj: dict) -> dict:
    out = {}
    for k, v in obj.items():
        if isinstance(v, np.integer):
            v = int(v)
        elif isinstance(v, np.floating):
            v = float(v)
        elif isinstance(v, np.bool_):
            v = bool(v)
        elif isinstance(v, np.ndarray):
            v = v.tolist()
        out[k] = v
    return out


# ---------------------------------------------------------------------------
# Surrogate and proposals
# ---------------------------------------------------------------------------


class Surrogate:
    """Random forest over vectorized configurations; the predictive spread is
    the disagreement between trees (floored so EI stays defined)."""

    def __init__(self, forest: BaggedForest, budget: int, f_min: float):
        self.forest = forest
        self.budget = budget
        self.f_min = f_min

    def predict(self, vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        per_tree = self.forest.per_tree_predictions(np.atleast_2d(vectors))
        mu = per_tree.mean(axis=0)
        sigma = np.maximum(per_tree.std(axis=0), 1e-6)
        return mu, sigma


def fit_surrogate(
    history: RunHistory, space: ConfigurationSpace, min_points: int = _SURROGATE_MIN_POINTS
) -> Surrogate | None:
    """Fit on the highest budget level holding >= ``min_points`` successes;
    returns None (not ready) when no level qualifies."""
    cached = getattr(history, "_surrogate_cache", None)
    if cached is not None and cached[0] == len(history.records):
        return cached[1]
    by_budget: dict[int, list[TrialRecord]] = {}
    for r in history.successes():
        by_budget.setdefault(r.budget, []).append(r)
    levels = [b for b, recs in by_budget.items() if len(recs) >= min_points]
    surrogate = None
    if levels:
        level = max(levels)
        records = by_budget[level]
        X = np.stack([vectorize(r.config, space) for r in records])
        y = np.array([r.val_rmse for r in records])
        spec = TabularRegressorSpec(
            "random_forest",
            {"bootstrap": False, "max_features_fraction": 0.8, "min_samples_leaf": 1},
        )
        forest = BaggedForest(spec, columns=tuple(space.names), seed=derive_seed(0, "surrogate"))
        forest.fit_more(X, y, _SURROGATE_TREES)
        surrogate = Surrogate(forest, level, float(y.min()))
    history._surrogate_cache = (len(history.records), surrogate)
    return surrogate


def _fresh_random(space, seed: int, exclude: set, budget: int | None) -> Configuration:
    for attempt in range(200):
        config = sample(space, derive_seed(seed, "random", attempt))
        if budget is None or (config.key(), budget) not in exclude:
            return config
    raise SamplingError("could not sample an unevaluated configuration")


def propose(
    history: RunHistory,
    space: ConfigurationSpace,
    seed: int,
    budget: int | None = None,
    proposal_index: int | None = None,
    exclude: set | None = None,
) -> Configuration:
    """Next candidate: expected-improvement argmax under the surrogate over
    fresh random samples plus neighbors of the best trials; every third
    proposal (and every proposal before the surrogate is ready) is a pure
    random sample. Never re-proposes a (configuration, budget) pair already
    evaluated in this run."""
    exclude = set(exclude or ())
    if budget is not None:
        exclude |= history._seen_pairs
    if proposal_index is None:
        proposal_index = len(history.records)
    if (proposal_index + 1) % _RANDOM_INTERLEAVE == 0:
        return _fresh_random(space, seed, exclude, budget)
    surrogate = fit_surrogate(history, space)
    if surrogate is None:
        return _fresh_random(space, seed, exclude, budget)

    candidates = [
        sample(space, derive_seed(seed, "candidate", i)) for i in range(_N_RANDOM_CANDIDATES)
    ]
    top = sorted(history.successes(), key=lambda r: (r.val_rmse, r.trial_id))
    for j, record in enumerate(top[:_N_TOP_INCUMBENTS]):
        candidates.extend(
            neighbors(record.config, space, k=_N_INCUMBENT_NEIGHBORS, seed=derive_seed(seed, "nbr", j))
        )
    if budget is not None:
        candidates = [c for c in candidates if (c.key(), budget) not in exclude]
    if not candidates:
        return _fresh_random(space, seed, exclude, budget)
    vectors = np.stack([vectorize(c, space) for c in candidates])
    mu, sigma = surrogate.predict(vectors)
    ei = np.array(
        [expected_improvement(m, s, surrogate.f_min) for m, s in zip(mu, sigma)]
    )
    return candidates[int(np.argmax(ei))]


# ---------------------------------------------------------------------------
# Parallel trial execution
# ---------------------------------------------------------------------------


@dataclass
class SearchBudget:
    total_walltime_seconds: float = 3600.0
    per_trial_timeout_seconds: float = 300.0
    max_budget: int = 81
    eta: int = 3
    n_workers: int = field(default_factory=lambda: os.cpu_count() or 1)
    max_brackets: int | None = None  # optional deterministic stop for tests

    def __post_init__(self):
        if (
            self.total_walltime_seconds <= 0
            or self.per_trial_timeout_seconds <= 0
            or self.max_budget < 1
            or self.eta < 2
            or self.n_workers < 1
        ):
            raise ShapeError("all search budget fields must be positive (eta >= 2)")


@dataclass
class _Task:
    trial_id: int
    config: Configuration
    budget: int
    seed: int
    bracket_id: int
    rung: int
    parent_trial_id: int | None = None
    warm_bundle: bytes | None = None


def default_trial_runner(task: _Task, context: dict) -> tuple:
    """Fit one candidate pipeline; returns
    ``(status, val_rmse, val_predictions, fit_seconds, bundle_bytes, message)``.
    """
    start = time.monotonic()
    try:
        candidate = pl.instantiate(task.config)
        warm = pickle.loads(task.warm_bundle) if task.warm_bundle is not None else None
        fitted, predictions, loss = pl.fit(
            candidate,
            context["train"],
            context["val"],
            budget=task.budget,
            deadline_seconds=context["timeout"],
            seed=task.seed,
            val_cut_seed=context["val_cut_seed"],
            warm_start=warm,
        )
        return (SUCCESS, loss, predictions, fitted.fit_seconds, pickle.dumps(fitted), None)
    except pl.TrialTimeout as exc:
        return (TIMEOUT, None, None, time.monotonic() - start, None, str(exc))
    except Exception as exc:  # any step failure becomes a recorded status
        return (
            FAILED,
            None,
            None,
            time.monotonic() - start,
            None,
            f"{type(exc).__name__}: {exc}",
        )


def _worker_entry(conn, fit_fn, task: _Task, context: dict) -> None:
    try:
        outcome = fit_fn(task, context)
    except Exception as exc:
        outcome = (FAILED, None, None, 0.0, None, f"worker error: {type(exc).__name__}: {exc}")
    try:
        conn.send(outcome)
    except Exception:
        pass
    conn.close()


class _Executor:
    """Runs one cohort of tasks with at most ``n_workers`` forked processes,
    killing any worker past ``timeout * grace``."""

    def __init__(self, n_workers: int, timeout: float, fit_fn, context: dict):
        self.n_workers = n_workers
        self.timeout = timeout
        self.fit_fn = fit_fn
        self.context = context
        self.ctx = multiprocessing.get_context("fork")

    def run(self, tasks: list[_Task], launch_allowed) -> list[tuple[_Task, tuple, float]]:
        """Returns (task, outcome, completed_at_monotonic) in completion order."""
        pending = list(tasks)
        running: dict[int, tuple] = {}
        done: list[tuple[_Task, tuple, float]] = []
        while pending or running:
            while pending and len(running) < self.n_workers and launch_allowed():
                task = pending.pop(0)
                parent_conn, child_conn = self.ctx.Pipe(duplex=False)
                proc = self.ctx.Process(
                    target=_worker_entry,
                    args=(child_conn, self.fit_fn, task, self.context),
                )
                proc.start()
                child_conn.close()
                running[task.trial_id] = (proc, parent_conn, time.monotonic(), task)
            if not running:
                if pending and not launch_allowed():
                    break  # walltime exhausted; unlaunched tasks are dropped
                continue
            finished = []
            for trial_id, (proc, conn, started, task) in running.items():
                outcome = None
                if conn.poll(0.01):
                    try:
                        outcome = conn.recv()
                    except EOFError:
                        outcome = (FAILED, None, None, time.monotonic() - started, None,
                                   "worker closed the channel without a result")
                elif not proc.is_alive():
                    outcome = (FAILED, None, None, time.monotonic() - started, None,
                               f"worker died with exit code {proc.exitcode}")
                elif time.monotonic() - started > self.timeout * _KILL_GRACE:
                    proc.terminate()
                    outcome = (TIMEOUT, None, None, time.monotonic() - started, None,
                               f"killed after exceeding the {self.timeout:.1f}s deadline")
                if outcome is not None:
                    proc.join()
                    conn.close()
                    finished.append((trial_id, task, outcome))
            for trial_id, task, outcome in finished:
                del running[trial_id]
                done.append((task, outcome, time.monotonic()))
        return done


# ---------------------------------------------------------------------------
# The search loop
# ---------------------------------------------------------------------------


def run_search(
    space: ConfigurationSpace,
    train: RunToFailureDataset,
    budget: SearchBudget,
    seed: int,
    fit_fn=None,
    history_path=None,
) -> tuple[RunHistory, pl.FittedPipeline | None]:
    """Hyperband brackets cycled until the walltime budget is exhausted; rung
    cohorts come from :func:`propose`, promotions continue lower-budget fits.

    Returns the history and the incumbent refit at the maximum budget. Raises
    :class:`SearchFailedError` (carrying the history) when no trial succeeds.
    ``fit_fn`` replaces the default pipeline trial runner in tests.
    """
    t0 = time.monotonic()
    train_part, val_part = split_train_val(train, 0.8, derive_seed(seed, "split"))
    val_cut_seed = derive_seed(seed, "valcut")
    val_tests = truncate_for_testing(
        val_part, seed=val_cut_seed, cuts_per_instance=pl.VAL_CUTS_PER_INSTANCE
    )
    history = RunHistory(
        meta={
            "seed": seed,
            "max_budget": budget.max_budget,
            "eta": budget.eta,
            "total_walltime_seconds": budget.total_walltime_seconds,
            "per_trial_timeout_seconds": budget.per_trial_timeout_seconds,
            "n_workers": budget.n_workers,
            "val_instance_ids": [t.id for t in val_tests],
            "val_targets": [t.true_rul for t in val_tests],
            "val_cut_seed": val_cut_seed,
        }
    )
    fit_fn = fit_fn or default_trial_runner
    context = {
        "train": train_part,
        "val": val_part,
        "timeout": budget.per_trial_timeout_seconds,
        "val_cut_seed": val_cut_seed,
    }
    executor = _Executor(budget.n_workers, budget.per_trial_timeout_seconds, fit_fn, context)
    brackets = hyperband_schedule(budget.max_budget, budget.eta)

    def walltime_left() -> bool:
        return time.monotonic() - t0 < budget.total_walltime_seconds

    bundles: dict[int, bytes] = {}
    incumbent_bundle: bytes | None = None
    trial_counter = 0
    proposal_counter = 0
    bracket_counter = 0

    def record_outcomes(outcomes, rung_records):
        nonlocal incumbent_bundle
        for task, outcome, completed_at in outcomes:
            status, loss, predictions, fit_seconds, bundle, message = outcome
            record = TrialRecord(
                trial_id=task.trial_id,
                config=task.config,
                budget=task.budget,
                seed=task.seed,
                status=status,
                val_rmse=loss,
                val_predictions=predictions,
                fit_seconds=fit_seconds,
                wall_clock_at_completion=completed_at - t0,
                bracket_id=task.bracket_id,
                rung=task.rung,
                parent_trial_id=task.parent_trial_id,
                message=message,
            )
            history.append(record)
            rung_records.append(record)
            if bundle is not None:
                bundles[task.trial_id] = bundle
            if history.incumbent is record and bundle is not None:
                incumbent_bundle = bundle

    while walltime_left() and (
        budget.max_brackets is None or bracket_counter < budget.max_brackets
    ):
        rungs = brackets[bracket_counter % len(brackets)]
        bracket_id = bracket_counter
        bracket_counter += 1
        previous: list[TrialRecord] = []
        for rung_index, (n_configs, rung_budget) in enumerate(rungs):
            if not walltime_left():
                break
            tasks: list[_Task] = []
            if rung_index == 0:
                pending_keys: set = set()
                for _ in range(n_configs):
                    try:
                        config = propose(
                            history,
                            space,
                            derive_seed(seed, "proposal", proposal_counter),
                            budget=rung_budget,
                            proposal_index=proposal_counter,
                            exclude=pending_keys,
                        )
                    except SamplingError:
                        break
                    proposal_counter += 1
                    pending_keys.add((config.key(), rung_budget))
                    tasks.append(
                        _Task(
                            trial_id=trial_counter,
                            config=config,
                            budget=rung_budget,
                            seed=derive_seed(seed, "trial", trial_counter),
                            bracket_id=bracket_id,
                            rung=rung_index,
                        )
                    )
                    trial_counter += 1
            else:
                survivors = sorted(
                    (r for r in previous if r.status == SUCCESS),
                    key=lambda r: (r.val_rmse, r.trial_id),
                )[:n_configs]
                for parent in survivors:
                    tasks.append(
                        _Task(
                            trial_id=trial_counter,
                            config=parent.config,
                            budget=rung_budget,
                            seed=parent.seed,
                            bracket_id=bracket_id,
                            rung=rung_index,
                            parent_trial_id=parent.trial_id,
                            warm_bundle=bundles.get(parent.trial_id),
                        )
                    )
                    trial_counter += 1
            if not tasks:
                break
            rung_records: list[TrialRecord] = []
            record_outcomes(executor.run(tasks, walltime_left), rung_records)
            previous = rung_records
        # keep only the incumbent bundle across brackets
        bundles.clear()
        if history_path is not None:
            history.to_jsonl(history_path)

    if history.incumbent is None:
        if history_path is not None:
            history.to_jsonl(history_path)
        raise SearchFailedError("no successful trials within the walltime budget", history)

    incumbent_pipeline = _refit_incumbent(
        history, budget, context, incumbent_bundle
    )
    if history_path is not None:
        history.to_jsonl(history_path)
    return history, incumbent_pipeline


def _refit_incumbent(history, budget, context, incumbent_bundle) -> pl.FittedPipeline | None:
    """Bring the incumbent to the maximum budget, continuing its saved state
    when available; falls back to the recorded fit if the refit fails."""
    record = history.incumbent
    fallback = (
        pickle.loads(incumbent_bundle) if incumbent_bundle is not None else None
    )
    try:
        warm = None
        if fallback is not None and fallback.consumed_budget < budget.max_budget:
            warm = fallback
        elif fallback is not None:
            return fallback
        fitted, _, _ = pl.fit(
            pl.instantiate(record.config),
            context["train"],
            context["val"],
            budget=budget.max_budget,
            deadline_seconds=context["timeout"],
            seed=record.seed,
            val_cut_seed=context["val_cut_seed"],
            warm_start=warm,
        )
        return fitted
    except Exception:
        return fallback


def compute_regret(history: RunHistory, reference_best: float) -> list[tuple[float, float]]:
    """Step function of |incumbent loss - reference_best| sampled at every
    successful trial completion."""
    points = []
    best = math.inf
    for record in sorted(history.records, key=lambda r: r.wall_clock_at_completion):
        if record.status == SUCCESS:
            best = min(best, record.val_rmse)
            points.append((record.wall_clock_at_completion, abs(best - reference_best)))
    return points
