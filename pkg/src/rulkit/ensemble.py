"""Greedy ensemble selection over the run history's validation predictions.

The bag starts with the single best trial and repeatedly adds (with
replacement) whichever candidate most reduces the bagged-mean validation
RMSE, stopping at the round limit, when nothing improves, or when another
distinct member would exceed the cap. Weights are selection counts divided
by the bag size, so the ensemble's validation RMSE can never exceed the best
single member's.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .configspace import Configuration
from .errors import EnsembleError
from .metrics import rmse
from .search import SUCCESS, RunHistory

_POOL_LIMIT = 50
_POOL_MIN_PER_LEVEL = 5
DEFAULT_MAX_DISTINCT = 10
DEFAULT_ROUNDS = 25


@dataclass
class EnsembleMember:
    trial_id: int
    config: Configuration
    seed: int
    budget: int
    count: int  # times selected into the bag
    val_rmse: float
    pipeline: pl.FittedPipeline | None = None


@dataclass
class Ensemble:
    members: list[EnsembleMember]
    val_rmse: float
    warnings: list[str] = field(default_factory=list)

    @property
    def total_count(self) -> int:
        return sum(m.count for m in self.members)

    def weight(self, member: EnsembleMember) -> float:
        return member.count / self.total_count

    @property
    def weights(self) -> dict[int, float]:
        return {m.trial_id: self.weight(m) for m in self.members}


def build_ensemble(
    history: RunHistory,
    max_distinct: int = DEFAULT_MAX_DISTINCT,
    rounds: int = DEFAULT_ROUNDS,
) -> Ensemble:
    """Greedy selection-with-replacement over the top successful trials."""
    if max_distinct < 1 or rounds < 1:
        raise EnsembleError("max_distinct and rounds must both be >= 1")
    targets = history.meta.get("val_targets")
    if targets is None:
        raise EnsembleError("run history carries no validation targets")
    targets = np.asarray(targets, dtype=float)
    candidates = [
        r
        for r in history.successes()
        if r.val_predictions is not None and r.val_predictions.shape == targets.shape
    ]
    if not candidates:
        raise EnsembleError("no successful trials with stored validation predictions")
    # validation losses at different fidelities are not comparable: restrict
    # the pool to the highest budget level with enough candidates
    by_budget: dict[int, list] = {}
    for r in candidates:
        by_budget.setdefault(r.budget, []).append(r)
    eligible = [b for b, recs in by_budget.items() if len(recs) >= _POOL_MIN_PER_LEVEL]
    if eligible:
        candidates = by_budget[max(eligible)]
    pool = sorted(candidates, key=lambda r: (r.val_rmse, r.trial_id))[:_POOL_LIMIT]

    counts = {pool[0].trial_id: 1}
    bag_sum = pool[0].val_predictions.copy()
    bag_size = 1
    current = rmse(bag_sum / bag_size, targets)
    while bag_size < rounds:
        best_candidate = None
        best_rmse = current
        for record in pool:
            if record.trial_id not in counts and len(counts) >= max_distinct:
                continue
            trial_rmse = rmse((bag_sum + record.val_predictions) / (bag_size + 1), targets)
            if trial_rmse < best_rmse - 1e-12:
                best_rmse = trial_rmse
                best_candidate = record
        if best_candidate is None:
            break
        counts[best_candidate.trial_id] = counts.get(best_candidate.trial_id, 0) + 1
        bag_sum += best_candidate.val_predictions
        bag_size += 1
        current = best_rmse

    by_id = {r.trial_id: r for r in pool}
    members = [
        EnsembleMember(
            trial_id=tid,
            config=by_id[tid].config,
            seed=by_id[tid].seed,
            budget=by_id[tid].budget,
            count=count,
            val_rmse=by_id[tid].val_rmse,
        )
        for tid, count in sorted(counts.items())
    ]
    return Ensemble(members=members, val_rmse=current)


def refit_final(
    ensemble: Ensemble,
    full_train,
    R: int,
    deadline_seconds: float = 300.0,
) -> Ensemble:
    """Refit each distinct member on the full training data at budget ``R``
    with its recorded seed. Members whose refit fails are dropped and the
    remaining weights renormalize; an ensemble with no survivors is an error.
    """
    survivors: list[EnsembleMember] = []
    warnings: list[str] = []
    for member in ensemble.members:
        try:
            fitted = pl.fit_full(
                pl.instantiate(member.config),
                full_train,
                budget=R,
                seed=member.seed,
                deadline_seconds=deadline_seconds,
            )
            survivors.append(
                EnsembleMember(
                    trial_id=member.trial_id,
                    config=member.config,
                    seed=member.seed,
                    budget=R,
                    count=member.count,
                    val_rmse=member.val_rmse,
                    pipeline=fitted,
                )
            )
        except Exception as exc:
            warnings.append(
                f"member {member.trial_id} dropped: refit failed with "
                f"{type(exc).__name__}: {exc}"
            )
    if not survivors:
        raise EnsembleError("every ensemble member failed to refit; " + "; ".join(warnings))
    return Ensemble(members=survivors, val_rmse=ensemble.val_rmse, warnings=warnings)


def ensemble_predict(ensemble: Ensemble, test, levels_by_col=None) -> float:
    """Weight-averaged member predictions (each member clips at 0)."""
    total = ensemble.total_count
    prediction = 0.0
    for member in ensemble.members:
        if member.pipeline is None:
            raise EnsembleError(f"member {member.trial_id} has not been refit")
        try:
            prediction += (member.count / total) * member.pipeline.predict(test, levels_by_col)
        except Exception as exc:
            raise EnsembleError(
                f"member {member.trial_id} failed to predict: {type(exc).__name__}: {exc}"
            ) from exc
    return prediction


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_ensemble(ensemble: Ensemble, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "val_rmse": ensemble.val_rmse,
        "warnings": ensemble.warnings,
        "members": [
            {
                "trial_id": m.trial_id,
                "weight": ensemble.weight(m),
                "count": m.count,
                "seed": m.seed,
                "budget": m.budget,
                "val_rmse": m.val_rmse,
                "config": pl._jsonable(m.config.assignments),
            }
            for m in ensemble.members
        ],
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    for member in ensemble.members:
        if member.pipeline is not None:
            pl.save_bundle(
                member.pipeline,
                directory / "members" / str(member.trial_id),
                metrics={"val_rmse": member.val_rmse},
            )


def load_ensemble(directory) -> Ensemble:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise EnsembleError(f"{directory} does not contain an ensemble manifest")
    manifest = json.loads(manifest_path.read_text())
    members = []
    for entry in manifest["members"]:
        bundle_dir = directory / "members" / str(entry["trial_id"])
        fitted = pl.load_bundle(bundle_dir) if bundle_dir.exists() else None
        members.append(
            EnsembleMember(
                trial_id=entry["trial_id"],
                config=Configuration(entry["config"]),
                seed=entry["seed"],
                budget=entry["budget"],
                count=entry["count"],
                val_rmse=entry["val_rmse"],
                pipeline=fitted,
            )
        )
    return Ensemble(
        members=members, val_rmse=manifest["val_rmse"], warnings=manifest.get("warnings", [])
    )
