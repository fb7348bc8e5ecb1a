import numpy as np
import pytest

from rulkit import dataset as ds
from rulkit import features as ft
from rulkit.errors import ShapeError, WindowError

ALL_ON = np.ones(ft.N_CATALOG_FEATURES, dtype=bool)


def feature(window, name):
    idx = ft.FEATURE_IDS.index(name)
    return ft._catalog_1d(np.asarray(window, dtype=float))[idx]


class TestWindows:
    def make_instance(self, T):
        values = np.arange(T, dtype=float)[None, :]
        rul = np.arange(T - 1, -1, -1, dtype=float)
        return ds.Instance(id="a", values=values, rul=rul)

    def test_count_formula(self):
        cfg = ft.WindowConfig(window_length=4, stride=2)
        windows = ft.make_windows(self.make_instance(10), cfg)
        assert len(windows) == 4
        starts = [int(w[0][0, 0]) for w in windows]
        assert starts == [0, 2, 4, 6]

    def test_exact_length_gives_one_window(self):
        cfg = ft.WindowConfig(window_length=5, stride=2)
        assert len(ft.make_windows(self.make_instance(5), cfg)) == 1

    def test_stride_one(self):
        cfg = ft.WindowConfig(window_length=4, stride=1)
        assert len(ft.make_windows(self.make_instance(10), cfg)) == 7

    def test_targets_align_with_window_end(self):
        cfg = ft.WindowConfig(window_length=3, stride=2)
        inst = self.make_instance(9)
        for window, target in ft.make_windows(inst, cfg):
            end_time = int(window[0, -1])
            assert target == inst.rul[end_time]

    def test_too_short(self):
        cfg = ft.WindowConfig(window_length=5, stride=1)
        with pytest.raises(WindowError):
            ft.make_windows(self.make_instance(4), cfg)

    def test_stride_must_be_smaller(self):
        with pytest.raises(ShapeError):
            ft.WindowConfig(window_length=4, stride=4)

    def test_end_anchored_last_window_covers_series_end(self):
        cfg = ft.WindowConfig(window_length=4, stride=3)
        for T in range(4, 20):
            starts = ft.end_anchored_starts(T, cfg)
            assert starts[-1] == T - 4
            assert all(s >= 0 for s in starts)
            assert starts == sorted(starts)


class TestFlatten:
    def test_channel_major_order(self):
        window = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(ft.flatten_window(window), [1, 2, 3, 4])

    def test_length(self):
        window = np.zeros((3, 5))
        assert ft.flatten_window(window).shape == (15,)

    def test_bijective(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            d, w = rng.integers(1, 6), rng.integers(2, 9)
            window = rng.normal(size=(d, w))
            assert np.array_equal(ft.flatten_window(window).reshape(d, w), window)

    def test_names(self):
        names = ft.flatten_names(("a", "b"), 2)
        assert names == ("a__lag0", "a__lag1", "b__lag0", "b__lag1")


class TestCatalog:
    def test_exactly_43_features(self):
        assert ft.N_CATALOG_FEATURES == 43
        assert len(set(ft.FEATURE_IDS)) == 43

    def test_all_flags_on_d_channels(self):
        window = np.random.default_rng(0).normal(size=(3, 8))
        out = ft.extract_stat_features(window, ALL_ON)
        assert out.shape == (43 * 3,)
        names = ft.stat_feature_names(("a", "b", "c"), ALL_ON)
        assert len(names) == 43 * 3 and names[0] == "a__mean"

    def test_constant_window_degenerate_rules(self):
        w = [5.0, 5.0, 5.0, 5.0]
        assert feature(w, "mean") == 5.0
        assert feature(w, "std") == 0.0
        assert feature(w, "skewness") == 0.0
        assert feature(w, "kurtosis") == 0.0
        assert feature(w, "trend_slope") == 0.0
        assert feature(w, "trend_r2") == 0.0
        assert feature(w, "autocorr_lag1") == 0.0
        assert feature(w, "binned_entropy") == 0.0
        assert feature(w, "beyond_2sigma_ratio") == 0.0

    def test_ramp_hand_values(self):
        w = [1.0, 2.0, 3.0, 4.0]
        assert feature(w, "trend_slope") == pytest.approx(1.0)
        assert feature(w, "mean_change") == pytest.approx(1.0)
        assert feature(w, "abs_sum_changes") == pytest.approx(3.0)
        assert feature(w, "complexity") == pytest.approx(np.sqrt(3.0))
        assert feature(w, "trend_r2") == pytest.approx(1.0)
        assert feature(w, "total") == pytest.approx(10.0)
        assert feature(w, "abs_energy") == pytest.approx(30.0)

    def test_counts_and_strikes(self):
        w = [0.0, 10.0, 0.0, 10.0, 10.0]  # mean 6
        assert feature(w, "count_above_mean") == 3
        assert feature(w, "count_below_mean") == 2
        assert feature(w, "longest_strike_above_mean") == 2
        assert feature(w, "longest_strike_below_mean") == 1
        assert feature(w, "n_mean_crossings") == 3
        assert feature(w, "n_peaks") == 1

    def test_locations(self):
        w = [3.0, 9.0, 1.0, 9.0, 2.0]
        assert feature(w, "first_loc_max") == pytest.approx(1 / 4)
        assert feature(w, "last_loc_max") == pytest.approx(3 / 4)
        assert feature(w, "first_loc_min") == pytest.approx(2 / 4)
        assert feature(w, "last_loc_min") == pytest.approx(2 / 4)

    def test_autocorrelation_against_definition(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=40)
        mean, var = x.mean(), x.var()
        for lag, name in ((1, "autocorr_lag1"), (2, "autocorr_lag2"), (3, "autocorr_lag3")):
            expected = np.dot(x[:-lag] - mean, x[lag:] - mean) / ((x.size - lag) * var)
            assert feature(x, name) == pytest.approx(expected)

    def test_quantiles(self):
        x = np.arange(11, dtype=float)
        assert feature(x, "quantile_10") == pytest.approx(np.quantile(x, 0.1))
        assert feature(x, "iqr") == pytest.approx(np.quantile(x, 0.75) - np.quantile(x, 0.25))

    @pytest.mark.parametrize(
        "name",
        ["std", "variance", "skewness", "kurtosis", "autocorr_lag1", "autocorr_lag2",
         "count_above_mean", "count_below_mean", "n_mean_crossings", "n_peaks",
         "mean_abs_change", "abs_sum_changes", "complexity", "trend_slope",
         "longest_strike_above_mean", "beyond_2sigma_ratio", "spectral_centroid"],
    )
    def test_translation_invariant_features(self, name):
        rng = np.random.default_rng(7)
        x = rng.normal(size=30)
        assert feature(x + 17.3, name) == pytest.approx(feature(x, name), abs=1e-8)

    @pytest.mark.parametrize(
        "name", ["mean", "median", "minimum", "maximum", "quantile_10", "quantile_25",
                 "quantile_75", "quantile_90", "trend_intercept"]
    )
    def test_translation_shifts_location_features(self, name):
        rng = np.random.default_rng(8)
        x = rng.normal(size=30)
        assert feature(x + 17.3, name) == pytest.approx(feature(x, name) + 17.3)

    def test_energy_ratio_last_third(self):
        x = np.array([0.0, 0.0, 0.0, 0.0, 2.0, 2.0])
        assert feature(x, "energy_ratio_last_third") == pytest.approx(1.0)

    def test_requires_one_enabled_flag(self):
        with pytest.raises(ShapeError):
            ft.extract_stat_features(np.zeros((1, 4)), np.zeros(43, dtype=bool))

    def test_all_features_finite_on_varied_windows(self):
        rng = np.random.default_rng(5)
        windows = [
            rng.normal(size=6),
            np.zeros(6),
            np.array([1.0, 1.0, 1.0, 2.0, 2.0, 2.0]),
            np.array([1e12, -1e12, 1e12, -1e12, 0.0, 5.0]),
            np.arange(2.0),
        ]
        for w in windows:
            assert np.isfinite(ft._catalog_1d(w)).all()
