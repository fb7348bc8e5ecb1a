import numpy as np
import pytest

from rulkit import dataset as ds
from rulkit.errors import (
    DuplicateKeyError,
    InsufficientDataError,
    ParseError,
    SchemaError,
    ShapeError,
)


def write(path, text):
    path.write_text(text)
    return str(path)


class TestLoadCmapss:
    def test_three_line_file(self, tmp_path):
        train = write(tmp_path / "train.txt", "1 1 0.5\n1 2 0.6\n2 1 0.4\n")
        test = write(tmp_path / "test.txt", "1 1 0.7\n")
        rul = write(tmp_path / "rul.txt", "12\n")
        data, tests = ds.load_cmapss(train, test, rul)
        assert data.n_instances == 2
        assert data.n_channels == 1
        assert [inst.length for inst in data.instances] == [2, 1]
        assert np.allclose(data.instances[0].values, [[0.5, 0.6]])
        assert len(tests) == 1 and tests[0].true_rul == 12.0

    def test_parse_error_reports_line(self, tmp_path):
        train = write(tmp_path / "train.txt", "1 1 abc\n")
        test = write(tmp_path / "test.txt", "1 1 0.7\n")
        rul = write(tmp_path / "rul.txt", "12\n")
        with pytest.raises(ParseError, match="line 1"):
            ds.load_cmapss(train, test, rul)

    def test_inconsistent_columns(self, tmp_path):
        train = write(tmp_path / "train.txt", "1 1 0.5 0.2\n1 2 0.6\n")
        test = write(tmp_path / "test.txt", "1 1 0.7 0.1\n")
        rul = write(tmp_path / "rul.txt", "3\n")
        with pytest.raises(ParseError, match="line 2"):
            ds.load_cmapss(train, test, rul)

    def test_rul_count_mismatch(self, tmp_path):
        train = write(tmp_path / "train.txt", "1 1 0.5\n")
        test = write(tmp_path / "test.txt", "1 1 0.7\n2 1 0.2\n")
        rul = write(tmp_path / "rul.txt", "3\n")
        with pytest.raises(ShapeError, match="2 units"):
            ds.load_cmapss(train, test, rul)

    def test_24_column_sensor_names(self, tmp_path):
        row = " ".join(["1", "1"] + ["0.1"] * 24)
        row2 = " ".join(["1", "2"] + ["0.2"] * 24)
        train = write(tmp_path / "train.txt", f"{row}\n{row2}\n")
        test = write(tmp_path / "test.txt", f"{row}\n")
        rul = write(tmp_path / "rul.txt", "5\n")
        data, _ = ds.load_cmapss(train, test, rul)
        assert data.sensor_names[:3] == ("setting_1", "setting_2", "setting_3")
        assert data.sensor_names[-1] == "sensor_21"

    def test_non_equidistant_cycles_rejected(self, tmp_path):
        train = write(tmp_path / "train.txt", "1 1 0.5\n1 2 0.6\n1 5 0.7\n")
        test = write(tmp_path / "test.txt", "1 1 0.7\n")
        rul = write(tmp_path / "rul.txt", "3\n")
        with pytest.raises(ShapeError, match="equidistant"):
            ds.load_cmapss(train, test, rul)


class TestLoadLongCsv:
    SCHEMA = {"instance_id": "instance_id", "timestep": "timestep", "s": "sensor"}

    def test_grouping(self, tmp_path):
        path = write(tmp_path / "d.csv", "instance_id,timestep,s\na,0,1.0\na,1,2.0\nb,0,3.0\n")
        data = ds.load_long_csv(path, self.SCHEMA)
        assert data.n_instances == 2
        assert [inst.length for inst in data.instances] == [2, 1]

    def test_missing_cell_becomes_nan(self, tmp_path):
        path = write(tmp_path / "d.csv", "instance_id,timestep,s\na,0,\na,1,2.0\n")
        data = ds.load_long_csv(path, self.SCHEMA)
        assert np.isnan(data.instances[0].values[0, 0])

    def test_duplicate_key(self, tmp_path):
        path = write(tmp_path / "d.csv", "instance_id,timestep,s\na,0,1.0\na,0,2.0\n")
        with pytest.raises(DuplicateKeyError):
            ds.load_long_csv(path, self.SCHEMA)

    def test_unknown_schema_column(self, tmp_path):
        path = write(tmp_path / "d.csv", "instance_id,timestep,s\na,0,1.0\n")
        with pytest.raises(SchemaError, match="missing"):
            ds.load_long_csv(path, {**self.SCHEMA, "missing": "sensor"})

    def test_categorical_levels(self, tmp_path):
        path = write(
            tmp_path / "d.csv",
            "instance_id,timestep,s,mode\na,0,1.0,idle\na,1,2.0,load\n",
        )
        schema = {**self.SCHEMA, "mode": "categorical"}
        data = ds.load_long_csv(path, schema)
        assert data.categorical_columns == frozenset({1})
        assert data.levels_for(1) == ("idle", "load")
        assert np.allclose(data.instances[0].values[1], [0.0, 1.0])

    def test_round_trip(self, tmp_path):
        original = ds.label_rul(ds.generate_synthetic(4, 3, 20, 0.2, seed=3))
        out = tmp_path / "rt.csv"
        ds.write_long_csv(original, out)
        reloaded = ds.load_long_csv(out, ds.natural_schema(original))
        assert reloaded.instance_ids == original.instance_ids
        assert reloaded.sensor_names == original.sensor_names
        for a, b in zip(original.instances, reloaded.instances):
            assert np.array_equal(a.values, b.values)
            assert np.array_equal(a.rul, b.rul)


class TestLabelRul:
    def test_linear(self):
        data = ds.RunToFailureDataset(
            instances=(ds.Instance(id="a", values=np.zeros((1, 5))),), sensor_names=("s",)
        )
        labelled = ds.label_rul(data)
        assert np.array_equal(labelled.instances[0].rul, [4, 3, 2, 1, 0])

    def test_cap(self):
        data = ds.RunToFailureDataset(
            instances=(ds.Instance(id="a", values=np.zeros((1, 5))),), sensor_names=("s",)
        )
        labelled = ds.label_rul(data, cap=2)
        assert np.array_equal(labelled.instances[0].rul, [2, 2, 2, 1, 0])

    def test_single_timestep(self):
        data = ds.RunToFailureDataset(
            instances=(ds.Instance(id="a", values=np.zeros((1, 1))),), sensor_names=("s",)
        )
        assert np.array_equal(ds.label_rul(data).instances[0].rul, [0])

    def test_infinite_cap_equals_no_cap(self):
        data = ds.generate_synthetic(5, 2, 30, 0.1, seed=0)
        a = ds.label_rul(data)
        b = ds.label_rul(data, cap=np.inf)
        for x, y in zip(a.instances, b.instances):
            assert np.array_equal(x.rul, y.rul)


class TestSplit:
    def test_80_20(self):
        data = ds.generate_synthetic(10, 1, 10, 0.0, seed=0)
        train, val = ds.split_train_val(data, 0.8, seed=1)
        assert train.n_instances == 8 and val.n_instances == 2
        assert set(train.instance_ids).isdisjoint(val.instance_ids)
        assert set(train.instance_ids) | set(val.instance_ids) == set(data.instance_ids)

    def test_deterministic(self):
        data = ds.generate_synthetic(10, 1, 10, 0.0, seed=0)
        a = ds.split_train_val(data, 0.8, seed=5)
        b = ds.split_train_val(data, 0.8, seed=5)
        assert a[0].instance_ids == b[0].instance_ids

    def test_minimum_per_part(self):
        data = ds.generate_synthetic(2, 1, 10, 0.0, seed=0)
        train, val = ds.split_train_val(data, 0.8, seed=1)
        assert train.n_instances == 1 and val.n_instances == 1

    def test_too_few_instances(self):
        data = ds.generate_synthetic(1, 1, 10, 0.0, seed=0)
        with pytest.raises(InsufficientDataError):
            ds.split_train_val(data, 0.8, seed=1)

    def test_disjoint_for_many_seeds(self):
        data = ds.generate_synthetic(7, 1, 10, 0.0, seed=0)
        for seed in range(50):
            train, val = ds.split_train_val(data, 0.6, seed=seed)
            assert set(train.instance_ids).isdisjoint(val.instance_ids)
            assert set(train.instance_ids) | set(val.instance_ids) == set(data.instance_ids)


class TestSynthetic:
    def test_monotone_trend_without_noise(self):
        data = ds.generate_synthetic(5, 1, 40, 0.0, seed=2)
        for inst in data.instances:
            assert np.all(np.diff(inst.values[0]) > 0)

    def test_deterministic(self):
        a = ds.generate_synthetic(3, 2, 30, 0.3, seed=9)
        b = ds.generate_synthetic(3, 2, 30, 0.3, seed=9)
        for x, y in zip(a.instances, b.instances):
            assert np.array_equal(x.values, y.values)

    def test_length_bounds(self):
        data = ds.generate_synthetic(30, 1, 200, 0.1, seed=4)
        lengths = [inst.length for inst in data.instances]
        assert data.n_instances == 30
        assert min(lengths) >= 100 and max(lengths) <= 300

    def test_rul_is_linear(self):
        data = ds.generate_synthetic(2, 1, 20, 0.1, seed=4)
        inst = data.instances[0]
        assert inst.rul[-1] == 0 and inst.rul[0] == inst.length - 1


class TestInvariantValidation:
    def test_increasing_rul_rejected(self):
        with pytest.raises(ShapeError, match="non-increasing"):
            ds.Instance(id="a", values=np.zeros((1, 3)), rul=np.array([0.0, 1.0, 2.0]))

    def test_rul_step_above_one_rejected(self):
        with pytest.raises(ShapeError):
            ds.Instance(id="a", values=np.zeros((1, 3)), rul=np.array([5.0, 2.0, 0.0]))

    def test_duplicate_ids_rejected(self):
        inst = ds.Instance(id="a", values=np.zeros((1, 3)))
        with pytest.raises(ShapeError, match="duplicate"):
            ds.RunToFailureDataset(instances=(inst, inst), sensor_names=("s",))

    def test_channel_mismatch_rejected(self):
        a = ds.Instance(id="a", values=np.zeros((1, 3)))
        b = ds.Instance(id="b", values=np.zeros((2, 3)))
        with pytest.raises(ShapeError):
            ds.RunToFailureDataset(instances=(a, b), sensor_names=("s",))


def test_truncate_for_testing_targets():
    data = ds.label_rul(ds.generate_synthetic(6, 2, 50, 0.1, seed=11))
    tests = ds.truncate_for_testing(data, seed=3)
    for inst, t in zip(data.instances, tests):
        assert 0.25 <= t.length / inst.length <= 0.95
        assert t.true_rul == inst.rul[t.length - 1]
        assert np.array_equal(t.values, inst.values[:, : t.length])
