import numpy as np
import pytest

from unbiased_implicit import fileio
from unbiased_implicit.core import ClickDataset, ValidationError
from unbiased_implicit.mf import init_factors
from unbiased_implicit.propensity import PropensityScores


class TestClicks:
    def test_round_trip(self, tmp_path):
        ds = ClickDataset.from_dense(np.array([[1, 0, 0], [0, 1, 0]]))
        fileio.write_clicks(tmp_path / "c.tsv", ds)
        assert fileio.read_clicks(tmp_path / "c.tsv") == ds

    def test_sentinel_row_keeps_shape(self, tmp_path):
        ds = ClickDataset.from_dense(np.array([[1, 0, 0], [0, 0, 0], [0, 0, 0]]))
        fileio.write_clicks(tmp_path / "c.tsv", ds)
        lines = (tmp_path / "c.tsv").read_text().splitlines()
        assert lines[-1] == "2\t2\t0"
        assert fileio.read_clicks(tmp_path / "c.tsv").shape == (3, 3)

    def test_no_sentinel_when_last_clicked(self, tmp_path):
        ds = ClickDataset.from_dense(np.array([[0, 0], [0, 1]]))
        fileio.write_clicks(tmp_path / "c.tsv", ds)
        assert (tmp_path / "c.tsv").read_text().splitlines() == ["user_id\titem_id\tclick", "1\t1\t1"]

    def test_bad_header(self, tmp_path):
        (tmp_path / "c.tsv").write_text("u\ti\tc\n0\t0\t1\n")
        with pytest.raises(ValidationError):
            fileio.read_clicks(tmp_path / "c.tsv")

    def test_bad_value(self, tmp_path):
        (tmp_path / "c.tsv").write_text("user_id\titem_id\tclick\n0\tx\t1\n")
        with pytest.raises(ValidationError):
            fileio.read_clicks(tmp_path / "c.tsv")

    def test_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            fileio.read_clicks(tmp_path / "nope.tsv")


class TestLabels:
    def test_negatives_kept(self, tmp_path):
        (tmp_path / "l.tsv").write_text("user_id\titem_id\tclick\n0\t1\t1\n0\t2\t0\n")
        labels = fileio.read_labels(tmp_path / "l.tsv")
        np.testing.assert_array_equal(labels.items[0], [1, 2])
        np.testing.assert_array_equal(labels.relevance[0], [1, 0])

    def test_duplicate(self, tmp_path):
        (tmp_path / "l.tsv").write_text("user_id\titem_id\tclick\n0\t1\t1\n0\t1\t0\n")
        with pytest.raises(ValidationError):
            fileio.read_labels(tmp_path / "l.tsv")


class TestPropensities:
    def test_round_trip_exact(self, tmp_path):
        theta = np.random.default_rng(0).uniform(0.01, 1, 7)
        fileio.write_propensities(tmp_path / "p.tsv", PropensityScores(theta))
        np.testing.assert_array_equal(fileio.read_propensities(tmp_path / "p.tsv").theta, theta)

    def test_missing_item(self, tmp_path):
        (tmp_path / "p.tsv").write_text("item_id\tpropensity\n0\t0.5\n2\t0.5\n")
        with pytest.raises(ValidationError):
            fileio.read_propensities(tmp_path / "p.tsv")


class TestMatrices:
    def test_round_trip_exact(self, tmp_path):
        a = np.random.default_rng(1).random((4, 5))
        fileio.write_matrix(tmp_path / "a.tsv", a)
        np.testing.assert_array_equal(fileio.read_matrix(tmp_path / "a.tsv"), a)

    def test_single_row(self, tmp_path):
        fileio.write_matrix(tmp_path / "a.tsv", np.array([[0.25, 0.5]]))
        assert fileio.read_matrix(tmp_path / "a.tsv").shape == (1, 2)

    def test_rejects_vector(self, tmp_path):
        with pytest.raises(ValueError):
            fileio.write_matrix(tmp_path / "a.tsv", np.zeros(3))


class TestCheckpoint:
    def test_predictions_bit_exact(self, tmp_path):
        model = init_factors(6, 9, 4, seed=2, link="sigmoid")
        fileio.save_model(tmp_path / "m.npz", model)
        loaded = fileio.load_model(tmp_path / "m.npz")
        assert loaded.link == "sigmoid"
        np.testing.assert_array_equal(loaded.predict_matrix(), model.predict_matrix())

    def test_bad_version(self, tmp_path):
        model = init_factors(2, 2, 2, seed=0)
        np.savez(
            tmp_path / "m.npz", format_version=99, num_users=2, num_items=2, latent_dim=2,
            link=np.array("identity"), user_factors=model.user_factors, item_factors=model.item_factors,
        )
        with pytest.raises(ValidationError):
            fileio.load_model(tmp_path / "m.npz")


class TestCsv:
    def test_format_value(self):
        assert fileio.format_value(None) == ""
        assert fileio.format_value(True) == "true"
        assert fileio.format_value(0.1) == "0.1"
        assert fileio.format_value(np.float64(1 / 3)) == repr(1 / 3)

    def test_round_trip(self, tmp_path):
        fileio.write_csv(tmp_path / "x.csv", ("a", "b"), [(1, 0.5), (2, None)])
        assert fileio.read_csv(tmp_path / "x.csv") == [{"a": "1", "b": "0.5"}, {"a": "2", "b": ""}]
