"""Dataset generation determinism, normalization, CSV round trips."""

import numpy as np
import pytest

import dememlab.datasets as ds
from dememlab.errors import FormatError, InputError


class TestGenerateDataset:
    def test_noiseless_gaussians_sit_on_distinct_means(self):
        data = ds.generate_dataset("two_gaussians", 10, 0.0, 3)
        points = {tuple(row) for row in data.features}
        assert points == {(0.0, 0.0), (1.0, 1.0)}
        for row, label in zip(data.features, data.labels):
            assert tuple(row) == ((0.0, 0.0) if label == 0 else (1.0, 1.0))

    def test_deterministic_from_seed(self):
        a = ds.generate_dataset("rings", 100, 0.05, 9)
        b = ds.generate_dataset("rings", 100, 0.05, 9)
        assert a.features.tobytes() == b.features.tobytes()
        assert a.labels.tobytes() == b.labels.tobytes()

    def test_linear_discriminant_separates_gaussians(self):
        data = ds.generate_dataset("two_gaussians", 1000, 0.1, 4)
        mu0 = data.features[data.labels == 0].mean(axis=0)
        mu1 = data.features[data.labels == 1].mean(axis=0)
        w = mu1 - mu0
        threshold = w @ (mu0 + mu1) / 2.0
        pred = (data.features @ w > threshold).astype(int)
        assert np.mean(pred == data.labels) >= 0.95

    @pytest.mark.parametrize("kind", ds.KINDS)
    def test_features_in_unit_box_and_balanced(self, kind):
        for n in (11, 40):
            data = ds.generate_dataset(kind, n, 0.08, 7)
            assert data.n == n
            assert data.features.min() >= 0.0 and data.features.max() <= 1.0
            counts = np.bincount(data.labels, minlength=2)
            assert abs(int(counts[0]) - int(counts[1])) <= 1

    def test_unknown_kind_rejected(self):
        with pytest.raises(InputError):
            ds.generate_dataset("spirals", 10, 0.1, 0)

    def test_tiny_n_rejected(self):
        with pytest.raises(InputError):
            ds.generate_dataset("two_gaussians", 3, 0.1, 0)

    def test_negative_noise_rejected(self):
        with pytest.raises(InputError):
            ds.generate_dataset("two_gaussians", 10, -0.1, 0)


class TestCsvRoundTrip:
    def test_save_load_identity(self, tmp_path):
        data = ds.generate_dataset("xor_grid", 50, 0.05, 5)
        path = tmp_path / "data.csv"
        ds.save_csv(data, path)
        loaded = ds.load_csv(path)
        np.testing.assert_array_equal(loaded.features, data.features)
        np.testing.assert_array_equal(loaded.labels, data.labels)

    def test_three_row_file(self, tmp_path):
        path = tmp_path / "tiny.csv"
        path.write_text("a,b,label\n0.1,5.0,0\n0.9,2.5,1\n0.4,0.0,1\n")
        data = ds.load_csv(path)
        assert data.n == 3
        assert data.features.min() >= 0.0 and data.features.max() <= 1.0

    def test_minmax_normalization_hand_case(self, tmp_path):
        path = tmp_path / "col.csv"
        path.write_text("x,y,label\n2,1,0\n4,1,1\n6,1,0\n")
        data = ds.load_csv(path)
        np.testing.assert_allclose(data.features[:, 0], [0.0, 0.5, 1.0])
        # constant column maps to 0
        np.testing.assert_array_equal(data.features[:, 1], [0.0, 0.0, 0.0])

    def test_non_numeric_cell_cites_position(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c,label\n1,2,3,0\n4,5,abc,1\n")
        with pytest.raises(FormatError, match="row 2, column 3"):
            ds.load_csv(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(FormatError, match="empty"):
            ds.load_csv(path)

    def test_single_class_rejected(self, tmp_path):
        path = tmp_path / "one.csv"
        path.write_text("a,label\n1,0\n2,0\n")
        with pytest.raises(FormatError, match="single class"):
            ds.load_csv(path)

    def test_non_integer_label_rejected(self, tmp_path):
        path = tmp_path / "frac.csv"
        path.write_text("a,label\n1,0.5\n2,1\n")
        with pytest.raises(FormatError, match="non-integer label"):
            ds.load_csv(path)

    def test_ragged_row_rejected(self, tmp_path):
        path = tmp_path / "ragged.csv"
        path.write_text("a,b,label\n1,2,0\n1,1\n")
        with pytest.raises(FormatError, match="row 2"):
            ds.load_csv(path)

    def test_labels_remapped_contiguous(self, tmp_path):
        path = tmp_path / "gap.csv"
        path.write_text("a,label\n1,3\n2,7\n3,3\n")
        data = ds.load_csv(path)
        assert sorted(np.unique(data.labels)) == [0, 1]


class TestDatasetType:
    def test_subset_and_drop(self):
        data = ds.generate_dataset("two_gaussians", 10, 0.1, 1)
        sub = data.subset(np.arange(4))
        assert sub.n == 4
        assert data.drop(0).n == 9

    def test_invariants_enforced(self):
        with pytest.raises(InputError):
            ds.Dataset(np.array([[np.inf, 0.0]]), np.array([0]))
        with pytest.raises(InputError):
            ds.Dataset(np.zeros((2, 2)), np.array([0, -1]))
        with pytest.raises(InputError):
            ds.Dataset(np.zeros((2, 2)), np.array([0]))
