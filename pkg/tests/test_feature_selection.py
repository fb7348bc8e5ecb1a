import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rulkit import features as ft
from rulkit.errors import FitError, InsufficientDataError


def matrix(values, targets, prefix="c"):
    values = np.asarray(values, dtype=float)
    return ft.FeatureMatrix(
        values=values,
        columns=tuple(f"{prefix}{j}" for j in range(values.shape[1])),
        targets=np.asarray(targets, dtype=float),
    )


def step_up_bruteforce(pvals, alpha, harmonic):
    """Loop-based reference for the step-up procedures."""
    m = len(pvals)
    c = sum(1.0 / i for i in range(1, m + 1)) if harmonic else 1.0
    order = np.argsort(pvals, kind="stable")
    ranked = np.asarray(pvals)[order]
    mask = np.zeros(m, dtype=bool)
    for k in range(m, 0, -1):
        if ranked[k - 1] <= k * alpha / (m * c):
            mask[order[:k]] = True
            break
    return mask


class TestStepUpProcedures:
    @given(
        st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=1, max_size=40),
        st.floats(min_value=0.01, max_value=0.2),
    )
    @settings(max_examples=200, deadline=None)
    def test_matches_bruteforce_and_by_subset_of_bh(self, pvals, alpha):
        pvals = np.array(pvals)
        bh = ft.benjamini_hochberg(pvals, alpha)
        by = ft.benjamini_yekutieli(pvals, alpha)
        assert np.array_equal(bh, step_up_bruteforce(pvals, alpha, harmonic=False))
        assert np.array_equal(by, step_up_bruteforce(pvals, alpha, harmonic=True))
        assert not np.any(by & ~bh)  # BY never selects outside the BH set


class TestFreshSelect:
    def build(self, n=200, seed=0):
        rng = np.random.default_rng(seed)
        y = rng.normal(size=n)
        cols = np.column_stack([y, rng.normal(size=n), np.full(n, 3.0)])
        return matrix(cols, y)

    @pytest.mark.parametrize("mode", ["fdr_by", "fpr", "fwe_bonferroni"])
    @pytest.mark.parametrize("test", ["kendall", "pearson"])
    def test_target_copy_always_selected(self, mode, test):
        m = self.build()
        kept = ft.fresh_select(m, alpha=0.05, test=test, mode=mode)
        assert "c0" in kept

    def test_constant_columns_always_dropped(self):
        kept = ft.fresh_select(self.build(), alpha=1.0, mode="fpr")
        assert "c2" not in kept

    def test_fpr_alpha_one_keeps_all_nonconstant(self):
        kept = ft.fresh_select(self.build(), alpha=1.0, mode="fpr")
        assert set(kept) == {"c0", "c1"}

    def test_fallback_keeps_single_best(self):
        rng = np.random.default_rng(5)
        y = rng.normal(size=60)
        noise = rng.normal(size=(60, 4))
        kept = ft.fresh_select(matrix(noise, y), alpha=1e-12, mode="fwe_bonferroni")
        assert len(kept) == 1

    def test_requires_20_rows(self):
        rng = np.random.default_rng(1)
        with pytest.raises(InsufficientDataError):
            ft.fresh_select(matrix(rng.normal(size=(19, 2)), rng.normal(size=19)), 0.05)

    def test_null_column_rejected_with_high_probability(self):
        # independent noise column at n=1000: rejected by BY at alpha=0.05 in
        # at least 95 of 100 seeds
        rejected = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            y = rng.normal(size=1000)
            cols = np.column_stack([y + 0.2 * rng.normal(size=1000), rng.normal(size=1000)])
            kept = ft.fresh_select(matrix(cols, y), alpha=0.05, test="pearson", mode="fdr_by")
            if "c1" not in kept:
                rejected += 1
        assert rejected >= 95

    def test_fdr_screening_informative_vs_null(self):
        # 5 informative + 50 nulls, n=1000: medians over 20 seeds must keep
        # >= 4 informative and <= 5 nulls (thresholds frozen from the
        # pre-build Monte-Carlo run)
        informative_kept, nulls_kept = [], []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            X = rng.normal(size=(1000, 55))
            y = X[:, :5].sum(axis=1) + 2.0 * rng.normal(size=1000)
            kept = ft.fresh_select(matrix(X, y), alpha=0.05, test="kendall", mode="fdr_by")
            kept_idx = {int(c[1:]) for c in kept}
            informative_kept.append(len(kept_idx & set(range(5))))
            nulls_kept.append(len(kept_idx - set(range(5))))
        assert np.median(informative_kept) >= 4
        assert np.median(nulls_kept) <= 5


class TestSelectPercentile:
    def test_keep_all_at_100(self):
        rng = np.random.default_rng(0)
        m = matrix(rng.normal(size=(30, 7)), rng.normal(size=30))
        assert len(ft.select_percentile(m, 100.0)) == 7

    def test_ceiling_arithmetic(self):
        rng = np.random.default_rng(0)
        m = matrix(rng.normal(size=(30, 10)), rng.normal(size=30))
        assert len(ft.select_percentile(m, 30.0)) == 3

    @pytest.mark.parametrize("score", ["kendall", "pearson"])
    def test_target_copy_ranks_first(self, score):
        rng = np.random.default_rng(2)
        y = rng.normal(size=50)
        m = matrix(np.column_stack([rng.normal(size=50), y]), y)
        assert ft.select_percentile(m, 10.0, score=score) == ("c1",)

    def test_at_least_one_kept(self):
        rng = np.random.default_rng(0)
        m = matrix(rng.normal(size=(30, 2)), rng.normal(size=30))
        assert len(ft.select_percentile(m, 1.0)) == 1


class TestPCA:
    def test_exact_low_rank(self):
        rng = np.random.default_rng(0)
        direction = np.array([1.0, 2.0, -1.0])
        X = rng.normal(size=(50, 1)) * direction
        reducer = ft.PCAReducer(keep_variance=0.9).fit(X)
        assert reducer.n_components == 1

    def test_full_rank_isotropic_keeps_all(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(100, 6))
        reducer = ft.PCAReducer(keep_variance=0.999).fit(X)
        assert reducer.n_components == 6

    def test_scores_uncorrelated(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(80, 4)) @ rng.normal(size=(4, 4))
        reducer = ft.PCAReducer(keep_variance=0.999).fit(X)
        scores = reducer.transform(X)
        cov = np.cov(scores, rowvar=False)
        off_diag = cov - np.diag(np.diag(cov))
        assert np.abs(off_diag).max() < 1e-8

    def test_whiten_unit_variance(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(80, 3)) * np.array([10.0, 1.0, 0.1])
        reducer = ft.PCAReducer(keep_variance=0.999, whiten=True).fit(X)
        scores = reducer.transform(X)
        assert np.allclose(scores.std(axis=0, ddof=1), 1.0, atol=1e-8)

    def test_rank_zero_rejected(self):
        with pytest.raises(FitError):
            ft.PCAReducer(keep_variance=0.9).fit(np.ones((10, 3)))

    def test_fit_applies_to_new_data(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(40, 3))
        reducer = ft.PCAReducer(keep_variance=0.9).fit(X)
        other = rng.normal(size=(5, 3))
        out = reducer.transform(other)
        assert out.shape == (5, reducer.n_components)
