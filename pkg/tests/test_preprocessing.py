import numpy as np
import pytest

from rulkit import dataset as ds
from rulkit import preprocessing as pp
from rulkit.errors import FitError, ImputationError

MISS = np.nan


class TestImpute:
    def test_mean(self):
        assert np.allclose(pp.impute([1.0, MISS, 3.0], "mean"), [1, 2, 3])

    def test_median(self):
        assert np.allclose(pp.impute([1.0, MISS, 3.0, 3.0], "median"), [1, 3, 3, 3])

    def test_neighbor_forward_fill(self):
        assert np.allclose(pp.impute([1.0, MISS, MISS, 4.0], "neighbor"), [1, 1, 1, 4])

    def test_neighbor_leading_gap_backfills(self):
        assert np.allclose(pp.impute([MISS, 2.0], "neighbor"), [2, 2])

    def test_all_missing(self):
        with pytest.raises(ImputationError):
            pp.impute([MISS, MISS], "neighbor")

    def test_idempotent_on_complete(self):
        x = np.array([3.0, 1.0, 4.0])
        for strategy in pp.IMPUTE_STRATEGIES:
            assert np.array_equal(pp.impute(x, strategy), x)

    def test_dataset_error_names_channel(self):
        inst = ds.Instance(id="u", values=np.array([[1.0, 2.0], [MISS, MISS]]))
        data = ds.RunToFailureDataset(instances=(inst,), sensor_names=("ok", "bad"))
        with pytest.raises(ImputationError, match="bad"):
            pp.impute_dataset(data, "mean")


class TestEncoder:
    def build(self, symbols_per_t, extra_sensor=True):
        rows = ["instance_id,timestep,s,mode"]
        for t, sym in enumerate(symbols_per_t):
            rows.append(f"a,{t},{float(t)},{sym}")
        return "\n".join(rows) + "\n"

    def load(self, tmp_path, text):
        path = tmp_path / "d.csv"
        path.write_text(text)
        return ds.load_long_csv(
            path,
            {"instance_id": "instance_id", "timestep": "timestep",
             "s": "sensor", "mode": "categorical"},
        )

    def test_one_hot_lexicographic(self, tmp_path):
        data = self.load(tmp_path, self.build(["b", "a", "b"]))
        encoder, out = pp.encode_categoricals(data)
        assert out.sensor_names == ("s", "mode=a", "mode=b")
        assert np.array_equal(out.instances[0].values[1], [0, 1, 0])  # "a" indicator
        assert np.array_equal(out.instances[0].values[2], [1, 0, 1])  # "b" indicator

    def test_unseen_symbol_maps_to_zeros(self, tmp_path):
        train = self.load(tmp_path, self.build(["a", "b", "a"]))
        encoder, _ = pp.encode_categoricals(train)
        other = self.load(tmp_path, self.build(["c", "a", "c"]))
        out = encoder.transform(other)
        assert np.array_equal(out.instances[0].values[1], [0, 1, 0])
        assert np.array_equal(out.instances[0].values[2], [0, 0, 0])

    def test_no_categoricals_is_identity(self):
        data = ds.generate_synthetic(2, 2, 10, 0.1, seed=1)
        encoder, out = pp.encode_categoricals(data)
        assert out is data


class TestExpSmooth:
    def test_alpha_one_is_identity(self):
        x = np.array([3.0, -1.0, 2.0])
        assert np.allclose(pp.exp_smooth(x, 1.0), x)

    def test_hand_recurrence(self):
        assert np.allclose(pp.exp_smooth([0.0, 1.0], 0.5, min_periods=1), [0.0, 0.5])

    def test_constant_series_unchanged(self):
        x = np.full(10, 4.2)
        for alpha in (0.1, 0.5, 0.9):
            assert np.allclose(pp.exp_smooth(x, alpha), x)

    def test_min_periods_passthrough(self):
        x = np.array([1.0, 5.0, 9.0, 2.0])
        out = pp.exp_smooth(x, 0.5, min_periods=3)
        assert np.array_equal(out[:2], x[:2])

    def test_causal(self):
        x = np.arange(20, dtype=float)
        full = pp.exp_smooth(x, 0.3)
        for cut in (3, 8, 15):
            assert np.allclose(pp.exp_smooth(x[:cut], 0.3), full[:cut])


class TestScalers:
    def test_minmax_hand_case(self):
        X = np.array([[0.0], [5.0], [10.0]])
        out = pp.fit_scaler(X, "minmax").transform(X)
        assert np.allclose(out.ravel(), [0, 0.5, 1])

    def test_standard_moments(self):
        rng = np.random.default_rng(0)
        X = rng.normal(3.0, 2.0, size=(200, 3))
        out = pp.fit_scaler(X, "standard").transform(X)
        assert np.allclose(out.mean(axis=0), 0, atol=1e-12)
        assert np.allclose(out.std(axis=0), 1, atol=1e-12)

    def test_robust_centers_median(self):
        X = np.array([[1.0], [2.0], [3.0], [4.0], [100.0]])
        scaler = pp.fit_scaler(X, "robust", q_lo=25, q_hi=75)
        out = scaler.transform(np.array([[3.0]]))
        assert np.allclose(out, 0.0)

    def test_degenerate_columns_map_to_zero(self):
        X = np.column_stack([np.full(5, 7.0), np.arange(5.0)])
        for kind in ("minmax", "standard", "robust"):
            out = pp.fit_scaler(X, kind).transform(X)
            assert np.allclose(out[:, 0], 0.0)

    def test_unit_norm_rows(self):
        X = np.array([[3.0, 4.0], [0.0, 0.0]])
        out = pp.fit_scaler(X, "unit_norm").transform(X)
        assert np.allclose(out[0], [0.6, 0.8])
        assert np.allclose(out[1], [0.0, 0.0])

    def test_fit_statistics_frozen(self):
        rng = np.random.default_rng(1)
        train = rng.normal(size=(50, 2))
        scaler = pp.fit_scaler(train, "standard")
        other = rng.normal(10, 5, size=(50, 2))
        a = scaler.transform(other)
        scaler2 = pp.fit_scaler(train, "standard")
        assert np.array_equal(a, scaler2.transform(other))

    def test_empty_fit_matrix(self):
        with pytest.raises(FitError):
            pp.fit_scaler(np.zeros((0, 3)), "minmax")
