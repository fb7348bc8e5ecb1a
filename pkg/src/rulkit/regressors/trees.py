"""Tree-ensemble regressors: bagged forests and gradient boosting.

Ensembles are assembled tree by tree on top of scikit-learn's tree
primitives; tree ``i`` always draws its randomness from a seed derived from
``(fit_seed, i)``, which makes warm continuation exact: the trees built by
``fit(10)`` followed by ``continue(20)`` are the trees ``fit(30)`` builds.
"""

from __future__ import annotations

import time

import numpy as np
from sklearn.tree import DecisionTreeRegressor, ExtraTreeRegressor

from ..errors import ContractError
from ..seeding import derive_seed
from .base import FittedRegressor, TabularRegressorSpec, check_training_data

_SEED_MOD = 2**32


def _tree_seed(seed: int, index: int) -> int:
    return derive_seed(seed, "tree", index) % _SEED_MOD


def _deadline_passed(deadline: float | None) -> bool:
    return deadline is not None and time.monotonic() >= deadline


class BaggedForest(FittedRegressor):
    """Random forest / extra trees; prediction is the mean over member trees."""

    def __init__(self, spec: TabularRegressorSpec, columns, seed: int):
        self.kind = spec.kind
        self.hyperparams = spec.hyperparams
        self._columns = tuple(columns)
        self.seed = seed
        self.trees: list = []
        self.consumed_budget = 0
        self.deadline_hit = False

    @property
    def signature(self):
        return self._columns

    def _build_tree(self, X: np.ndarray, y: np.ndarray, index: int):
        p = self.hyperparams
        tree_seed = _tree_seed(self.seed, index)
        rng = np.random.default_rng(tree_seed)
        if p["bootstrap"]:
            idx = rng.integers(0, X.shape[0], size=X.shape[0])
            Xb, yb = X[idx], y[idx]
        else:
            Xb, yb = X, y
        if self.kind == "random_forest":
            tree = DecisionTreeRegressor(
                max_features=p["max_features_fraction"],
                min_samples_leaf=p["min_samples_leaf"],
                random_state=tree_seed,
            )
        else:
            tree = ExtraTreeRegressor(
                criterion=p["criterion"],
                max_features=p["max_features_fraction"],
                min_samples_leaf=p["min_samples_leaf"],
                min_samples_split=p["min_samples_split"],
                random_state=tree_seed,
            )
        tree.fit(Xb, yb)
        return tree

    def fit_more(self, X, y, extra_budget: int, deadline: float | None = None) -> "BaggedForest":
        X, y = check_training_data(X, y)
        for index in range(self.consumed_budget, self.consumed_budget + extra_budget):
            if _deadline_passed(deadline):
                self.deadline_hit = True
                break
            self.trees.append(self._build_tree(X, y, index))
        self.consumed_budget = len(self.trees)
        return self

    def per_tree_predictions(self, X: np.ndarray) -> np.ndarray:
        return np.stack([tree.predict(X) for tree in self.trees])

    def predict(self, X: np.ndarray) -> np.ndarray:
        if not self.trees:
            raise ContractError(f"{self.kind}: model has no trees")
        return self.per_tree_predictions(np.asarray(X, dtype=float)).mean(axis=0)


class GradientBoostedTrees(FittedRegressor):
    """Least-squares gradient boosting over regression trees.

    Leaf values are re-estimated with L2 shrinkage
    ``sum(residuals) / (count + l2_reg)`` after each tree is grown.
    """

    kind = "gradient_boosting"

    def __init__(self, spec: TabularRegressorSpec, columns, seed: int):
        self.hyperparams = spec.hyperparams
        self._columns = tuple(columns)
        self.seed = seed
        self.base_prediction = 0.0
        self.stages: list[tuple] = []  # (tree, leaf_values)
        self.consumed_budget = 0
        self.deadline_hit = False

    @property
    def signature(self):
        return self._columns

    def _stage_contribution(self, stage, X: np.ndarray) -> np.ndarray:
        tree, leaf_values = stage
        return leaf_values[tree.apply(X)]

    def raw_predict(self, X: np.ndarray) -> np.ndarray:
        pred = np.full(X.shape[0], self.base_prediction)
        lr = self.hyperparams["learning_rate"]
        for stage in self.stages:
            pred += lr * self._stage_contribution(stage, X)
        return pred

    predict = raw_predict

    def fit_more(self, X, y, extra_budget: int, deadline: float | None = None) -> "GradientBoostedTrees":
        X, y = check_training_data(X, y)
        p = self.hyperparams
        if not self.stages and self.consumed_budget == 0:
            self.base_prediction = float(np.mean(y))
        current = self.raw_predict(X)
        n = X.shape[0]
        n_sub = max(1, int(round(p["subsample"] * n)))
        for index in range(self.consumed_budget, self.consumed_budget + extra_budget):
            if _deadline_passed(deadline):
                self.deadline_hit = True
                break
            stage_seed = _tree_seed(self.seed, index)
            rng = np.random.default_rng(stage_seed)
            residual = y - current
            if n_sub < n:
                idx = rng.choice(n, size=n_sub, replace=False)
            else:
                idx = np.arange(n)
            tree = DecisionTreeRegressor(
                max_depth=p["max_depth"],
                min_samples_leaf=p["min_samples_leaf"],
                max_features=p["max_features_fraction"],
                random_state=stage_seed,
            )
            tree.fit(X[idx], residual[idx])
            leaves = tree.apply(X[idx])
            node_count = tree.tree_.node_count
            sums = np.bincount(leaves, weights=residual[idx], minlength=node_count)
            counts = np.bincount(leaves, minlength=node_count)
            leaf_values = sums / (counts + p["l2_reg"])
            stage = (tree, leaf_values)
            self.stages.append(stage)
            current = current + p["learning_rate"] * self._stage_contribution(stage, X)
        self.consumed_budget = len(self.stages)
        return self


def fit_forest_like(
    spec: TabularRegressorSpec, X, y, budget: int, seed: int, columns, deadline=None
):
    if spec.kind == "gradient_boosting":
        model = GradientBoostedTrees(spec, columns, seed)
    else:
        model = BaggedForest(spec, columns, seed)
    return model.fit_more(X, y, budget, deadline)
