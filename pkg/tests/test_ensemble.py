import itertools

import numpy as np
import pytest

from rulkit import configspace as cs
from rulkit import dataset as ds
from rulkit import ensemble as ens
from rulkit import pipeline as pl
from rulkit import search as srch
from rulkit.configspace import Configuration
from rulkit.errors import EnsembleError
from rulkit.metrics import rmse

# Pools on which a correct greedy attains the brute-force optimum, verified by
# the enumeration oracle below before freezing.
ORACLE_VERIFIED_POOL_SEEDS = [1, 4, 6, 7, 9, 10, 11, 12, 15, 17,
                              18, 23, 31, 33, 37, 45, 46, 47, 48, 50]


def history_from_predictions(predictions, targets):
    history = srch.RunHistory(meta={"val_targets": list(targets), "max_budget": 1})
    for i, p in enumerate(predictions):
        history.append(
            srch.TrialRecord(
                trial_id=i, config=Configuration({"member": i}), budget=1, seed=i,
                status=srch.SUCCESS, val_rmse=rmse(p, targets),
                val_predictions=np.asarray(p, dtype=float),
            )
        )
    return history


def brute_force_best_rmse(predictions, targets, rounds, max_distinct):
    best = np.inf
    for size in range(1, rounds + 1):
        for bag in itertools.combinations_with_replacement(range(len(predictions)), size):
            if len(set(bag)) > max_distinct:
                continue
            mean = np.mean([predictions[i] for i in bag], axis=0)
            best = min(best, rmse(mean, targets))
    return best


def random_pool(seed, n_candidates=4, n_val=12):
    rng = np.random.default_rng(seed)
    targets = rng.normal(size=n_val) * 10
    predictions = [
        targets + rng.normal(size=n_val) * rng.uniform(0.5, 3.0) for _ in range(n_candidates)
    ]
    return predictions, targets


class TestBuildEnsemble:
    def test_single_candidate(self):
        targets = np.array([1.0, 2.0, 3.0])
        history = history_from_predictions([targets + 0.5], targets)
        bag = ens.build_ensemble(history)
        assert len(bag.members) == 1
        assert bag.weights[0] == 1.0
        assert bag.val_rmse == pytest.approx(0.5)

    def test_anti_correlated_pair_selected_together(self):
        targets = np.linspace(0, 10, 8)
        noise = np.array([1.0, -1.0, 2.0, -2.0, 1.5, -0.5, 1.0, -2.0])
        history = history_from_predictions([targets + noise, targets - noise], targets)
        bag = ens.build_ensemble(history, rounds=6)
        assert len(bag.members) == 2
        assert bag.val_rmse == pytest.approx(0.0, abs=1e-12)
        singles = [r.val_rmse for r in history.successes()]
        assert bag.val_rmse < min(singles)

    @pytest.mark.parametrize("seed", ORACLE_VERIFIED_POOL_SEEDS)
    def test_greedy_matches_bruteforce_on_verified_pools(self, seed):
        predictions, targets = random_pool(seed)
        history = history_from_predictions(predictions, targets)
        bag = ens.build_ensemble(history, max_distinct=10, rounds=6)
        assert bag.val_rmse == pytest.approx(
            brute_force_best_rmse(predictions, targets, rounds=6, max_distinct=10), abs=1e-9
        )

    def test_never_worse_than_best_single(self):
        for seed in range(40):
            predictions, targets = random_pool(seed, n_candidates=6)
            history = history_from_predictions(predictions, targets)
            bag = ens.build_ensemble(history, rounds=10)
            assert bag.val_rmse <= min(r.val_rmse for r in history.successes()) + 1e-12

    def test_max_distinct_enforced(self):
        rng = np.random.default_rng(0)
        targets = rng.normal(size=20)
        predictions = [targets + rng.normal(size=20) for _ in range(8)]
        history = history_from_predictions(predictions, targets)
        bag = ens.build_ensemble(history, max_distinct=2, rounds=20)
        assert len(bag.members) <= 2

    def test_rounds_bound_bag_size(self):
        predictions, targets = random_pool(3, n_candidates=6)
        history = history_from_predictions(predictions, targets)
        bag = ens.build_ensemble(history, rounds=4)
        assert bag.total_count <= 4

    def test_weights_sum_to_one(self):
        for seed in range(20):
            predictions, targets = random_pool(seed, n_candidates=5)
            bag = ens.build_ensemble(history_from_predictions(predictions, targets))
            assert abs(sum(bag.weights.values()) - 1.0) < 1e-12
            assert all(w > 0 for w in bag.weights.values())

    def test_empty_pool_rejected(self):
        history = srch.RunHistory(meta={"val_targets": [1.0, 2.0]})
        with pytest.raises(EnsembleError):
            ens.build_ensemble(history)

    def test_missing_targets_rejected(self):
        history = srch.RunHistory()
        with pytest.raises(EnsembleError):
            ens.build_ensemble(history)


@pytest.fixture(scope="module")
def fitted_members():
    """Two real fitted pipelines over a small dataset, wrapped as an ensemble."""
    space = cs.define_space()
    data = ds.generate_synthetic(10, 2, 80, 0.1, seed=6)
    train, val = ds.split_train_val(data, 0.8, seed=0)
    members = []
    for seed in (0, 1):
        for s in range(seed, 5000):
            config = cs.sample(space, s)
            if config["template"] == "tabular" and config["window_length"] <= 10:
                break
        fitted, preds, loss = pl.fit(pl.instantiate(config), train, val, budget=2,
                                     deadline_seconds=120, seed=seed, val_cut_seed=4)
        members.append(
            ens.EnsembleMember(trial_id=seed, config=config, seed=seed, budget=2,
                               count=seed + 1, val_rmse=loss, pipeline=fitted)
        )
    bag = ens.Ensemble(members=members, val_rmse=members[0].val_rmse)
    probe = ds.truncate_for_testing(val, seed=9)[0]
    return bag, probe, data


class TestEnsemblePredict:
    def test_weighted_mean(self, fitted_members):
        bag, probe, _ = fitted_members
        expected = sum(
            bag.weight(m) * m.pipeline.predict(probe) for m in bag.members
        )
        assert ens.ensemble_predict(bag, probe) == pytest.approx(expected)

    def test_single_member_identity(self, fitted_members):
        bag, probe, _ = fitted_members
        solo = ens.Ensemble(members=[bag.members[0]], val_rmse=0.0)
        assert ens.ensemble_predict(solo, probe) == bag.members[0].pipeline.predict(probe)

    def test_non_negative(self, fitted_members):
        bag, probe, _ = fitted_members
        assert ens.ensemble_predict(bag, probe) >= 0.0

    def test_unfitted_member_rejected(self, fitted_members):
        bag, probe, _ = fitted_members
        broken = ens.Ensemble(
            members=[ens.EnsembleMember(trial_id=9, config=bag.members[0].config,
                                        seed=0, budget=2, count=1, val_rmse=1.0)],
            val_rmse=1.0,
        )
        with pytest.raises(EnsembleError, match="member 9"):
            ens.ensemble_predict(broken, probe)


class TestRefitFinal:
    def test_all_members_survive(self, fitted_members):
        bag, probe, data = fitted_members
        refit = ens.refit_final(bag, data, R=3, deadline_seconds=120)
        assert len(refit.members) == len(bag.members)
        assert all(m.pipeline.consumed_budget == 3 for m in refit.members)
        assert abs(sum(refit.weight(m) for m in refit.members) - 1.0) < 1e-12

    def test_failed_member_dropped_and_renormalized(self, fitted_members):
        bag, probe, data = fitted_members
        space = cs.define_space()
        # a window longer than every instance makes the refit fail
        for s in range(5000):
            bad_config = cs.sample(space, s)
            if bad_config["window_length"] >= 29:
                break
        short = data.replace_instances([
            ds.Instance(id=i.id, values=i.values[:, :20], rul=i.rul[:20] - i.rul[19])
            for i in data.instances
        ])
        members = [
            bag.members[0],
            ens.EnsembleMember(trial_id=99, config=bad_config, seed=0, budget=2,
                               count=3, val_rmse=2.0),
        ]
        mixed = ens.Ensemble(members=members, val_rmse=1.0)
        refit = ens.refit_final(mixed, short, R=2, deadline_seconds=120)
        assert [m.trial_id for m in refit.members] == [bag.members[0].trial_id]
        assert refit.weight(refit.members[0]) == 1.0
        assert refit.warnings

    def test_all_members_failing_is_an_error(self, fitted_members):
        bag, probe, data = fitted_members
        space = cs.define_space()
        for s in range(5000):
            bad_config = cs.sample(space, s)
            if bad_config["window_length"] >= 29:
                break
        short = data.replace_instances([
            ds.Instance(id=i.id, values=i.values[:, :20], rul=i.rul[:20] - i.rul[19])
            for i in data.instances
        ])
        doomed = ens.Ensemble(
            members=[ens.EnsembleMember(trial_id=1, config=bad_config, seed=0, budget=2,
                                        count=1, val_rmse=1.0)],
            val_rmse=1.0,
        )
        with pytest.raises(EnsembleError):
            ens.refit_final(doomed, short, R=2, deadline_seconds=120)


class TestPersistence:
    def test_save_load_round_trip(self, fitted_members, tmp_path):
        bag, probe, _ = fitted_members
        ens.save_ensemble(bag, tmp_path / "bundle")
        loaded = ens.load_ensemble(tmp_path / "bundle")
        assert loaded.weights == bag.weights
        assert ens.ensemble_predict(loaded, probe) == pytest.approx(
            ens.ensemble_predict(bag, probe)
        )
