import logging

import numpy as np
import pytest

from polygrad.data import (
    PIMA_FEATURES,
    PIMA_ZERO_MISSING,
    Dataset,
    fit_preprocess,
    load_csv,
    make_blobs,
    make_pima_like,
    preprocess_pima,
    save_csv,
    stratified_split,
    subsample_fraction,
)
from polygrad.errors import CsvParseError, ShapeError

ZERO_INFLATED_COUNTS = {
    "glucose": 5,
    "blood_pressure": 35,
    "skin_thickness": 227,
    "insulin": 374,
    "bmi": 11,
}


class TestDatasetValidation:
    def test_shape_checks(self):
        with pytest.raises(ShapeError):
            Dataset(np.zeros(4), np.zeros(4, dtype=np.int64), ["a"], 2)
        with pytest.raises(ShapeError):
            Dataset(np.zeros((4, 2)), np.zeros(3, dtype=np.int64), ["a", "b"], 2)
        with pytest.raises(ShapeError):
            Dataset(np.zeros((4, 2)), np.zeros(4, dtype=np.int64), ["a"], 2)
        with pytest.raises(ShapeError):
            Dataset(np.zeros((4, 2)), np.array([0, 1, 2, 0]), ["a", "b"], 2)

    def test_properties(self):
        ds = Dataset(np.zeros((5, 3)), np.zeros(5, dtype=np.int64), ["a", "b", "c"], 2)
        assert (ds.n, ds.d) == (5, 3)


class TestSurrogateTable:
    def test_frozen_defaults(self):
        ds = make_pima_like(seed=7)
        assert (ds.n, ds.d, ds.class_count) == (768, 8, 2)
        assert ds.feature_names == PIMA_FEATURES
        assert int(ds.labels.sum()) == 270

    def test_frozen_zero_inflation(self):
        ds = make_pima_like(seed=7)
        for name, count in ZERO_INFLATED_COUNTS.items():
            j = ds.feature_names.index(name)
            assert int((ds.features[:, j] == 0).sum()) == count, name
        # pregnancies zeros are genuine (nulliparous), not missingness
        assert "pregnancies" not in PIMA_ZERO_MISSING
        assert int((ds.features[:, ds.feature_names.index("pregnancies")] == 0).sum()) == 47
        for name in ("pedigree", "age"):
            assert int((ds.features[:, ds.feature_names.index(name)] == 0).sum()) == 0

    def test_zero_counts_scale_with_sample_count(self):
        ds = make_pima_like(seed=7, n_samples=384)
        assert ds.n == 384
        assert int(ds.labels.sum()) == 137
        scaled = {"glucose": 3, "blood_pressure": 18, "skin_thickness": 114,
                  "insulin": 187, "bmi": 6}
        for name, count in scaled.items():
            j = ds.feature_names.index(name)
            assert int((ds.features[:, j] == 0).sum()) == count, name

    def test_deterministic_per_seed(self):
        a = make_pima_like(seed=7)
        b = make_pima_like(seed=7)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.labels, b.labels)
        c = make_pima_like(seed=8)
        assert not np.array_equal(a.features, c.features)

    def test_value_ranges(self):
        ds = make_pima_like(seed=7)
        col = {n: ds.features[:, i] for i, n in enumerate(ds.feature_names)}
        g = col["glucose"][col["glucose"] != 0]
        assert g.min() >= 44 and g.max() <= 199
        assert col["age"].min() >= 21 and col["age"].max() <= 81
        assert col["pregnancies"].min() >= 0 and col["pregnancies"].max() <= 17
        bmi = col["bmi"][col["bmi"] != 0]
        assert bmi.min() >= 18.2 and bmi.max() <= 67.1
        # count-like columns are integral
        for name in ("pregnancies", "glucose", "blood_pressure", "age", "insulin"):
            assert np.all(col[name] == np.round(col[name])), name


class TestCsvRoundTrip:
    def test_bitwise_roundtrip(self, tmp_path):
        ds = make_pima_like(seed=7, n_samples=64)
        p1 = tmp_path / "a.csv"
        save_csv(p1, ds)
        back = load_csv(p1)
        np.testing.assert_array_equal(back.features, ds.features)
        np.testing.assert_array_equal(back.labels, ds.labels)
        assert back.feature_names == ds.feature_names
        p2 = tmp_path / "b.csv"
        save_csv(p2, back)
        assert p1.read_bytes() == p2.read_bytes()

    def test_labels_remapped_sorted(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("a,b,outcome\n1,2,7\n3,4,3\n5,6,7\n")
        ds = load_csv(p)
        np.testing.assert_array_equal(ds.labels, [1, 0, 1])
        assert ds.class_count == 2

    def test_blank_lines_skipped(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("a,outcome\n1,0\n\n2,1\n")
        assert load_csv(p).n == 2

    def test_non_numeric_cell_names_row_and_column(self, tmp_path):
        p = tmp_path / "t.csv"
        rows = ["a,b,outcome"] + [f"{i},{i},0" for i in range(1, 5)] + ["5,oops,1"]
        p.write_text("\n".join(rows) + "\n")
        with pytest.raises(CsvParseError) as exc:
            load_csv(p)
        assert exc.value.row == 5
        assert exc.value.column == "b"
        assert "row 5" in str(exc.value) and "'b'" in str(exc.value)

    def test_ragged_row_rejected(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("a,b,outcome\n1,2,0\n1,2\n")
        with pytest.raises(CsvParseError) as exc:
            load_csv(p)
        assert exc.value.row == 2

    def test_missing_label_column(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(CsvParseError, match="outcome"):
            load_csv(p)

    def test_empty_and_header_only_files(self, tmp_path):
        empty = tmp_path / "e.csv"
        empty.write_text("")
        with pytest.raises(CsvParseError, match="empty"):
            load_csv(empty)
        header = tmp_path / "h.csv"
        header.write_text("a,outcome\n")
        with pytest.raises(CsvParseError, match="no data rows"):
            load_csv(header)

    def test_fractional_label_rejected(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("a,outcome\n1,0\n2,0.5\n")
        with pytest.raises(CsvParseError) as exc:
            load_csv(p)
        assert exc.value.row == 2


class TestPreprocess:
    def test_impute_uses_nonzero_median(self):
        X = np.array([[0.0], [2.0], [4.0]])
        stats = fit_preprocess(X, ["glucose"])
        assert stats.impute_values["glucose"] == 3.0
        out = stats.transform(X)
        # after imputation column is [3, 2, 4]: mean 3, std sqrt(2/3)
        np.testing.assert_allclose(out[:, 0], (np.array([3.0, 2.0, 4.0]) - 3.0)
                                   / np.sqrt(2.0 / 3.0), atol=1e-12)

    def test_columns_outside_missing_set_untouched(self):
        X = np.array([[0.0, 0.0], [2.0, 2.0], [4.0, 4.0]])
        stats = fit_preprocess(X, ["pregnancies", "glucose"])
        assert "pregnancies" not in stats.impute_values
        assert stats.impute_values == {"glucose": 3.0}

    def test_stats_come_only_from_fit_rows(self):
        rng = np.random.default_rng(3)
        X = rng.normal(100.0, 10.0, size=(40, 2))
        fit_idx = np.arange(10)
        stats = fit_preprocess(X, ["glucose", "bmi"], fit_idx=fit_idx)
        np.testing.assert_allclose(stats.means, X[:10].mean(axis=0), atol=1e-12)
        leaky = fit_preprocess(X, ["glucose", "bmi"])
        assert not np.allclose(stats.means, leaky.means)

    def test_constant_column_keeps_unit_std(self):
        X = np.full((5, 1), 9.0)
        stats = fit_preprocess(X, ["age"])
        assert stats.stds[0] == 1.0
        np.testing.assert_array_equal(stats.transform(X)[:, 0], np.zeros(5))

    def test_all_zero_missing_column_warns(self, caplog):
        X = np.zeros((4, 1))
        with caplog.at_level(logging.WARNING):
            stats = fit_preprocess(X, ["insulin"])
        assert stats.impute_values["insulin"] == 0.0
        assert any("all zeros" in r.message for r in caplog.records)

    def test_impute_flag_off(self):
        X = np.array([[0.0], [2.0], [4.0]])
        stats = fit_preprocess(X, ["glucose"], impute=False)
        assert stats.impute_values == {}
        np.testing.assert_allclose(stats.means, [2.0], atol=1e-12)

    def test_preprocess_pima_schema_check(self):
        ds = Dataset(np.zeros((4, 2)), np.array([0, 1, 0, 1]), ["a", "b"], 2)
        with pytest.raises(ShapeError):
            preprocess_pima(ds)

    def test_preprocess_pima_standardizes(self):
        ds = make_pima_like(seed=7, n_samples=256)
        out = preprocess_pima(ds)
        assert out.standardization is not None
        np.testing.assert_allclose(out.features.mean(axis=0), np.zeros(8), atol=1e-9)
        np.testing.assert_allclose(out.features.std(axis=0), np.ones(8), atol=1e-9)
        np.testing.assert_array_equal(out.labels, ds.labels)


class TestStratifiedSplit:
    def test_small_toy_counts(self):
        labels = np.array([0, 0, 0, 0, 0, 0, 1, 1, 1, 1])
        train, evals = stratified_split(labels, eval_fraction=0.2, seed=0)
        assert evals.size == 2 + 1  # ceil(0.2*6), ceil(0.2*4)
        assert train.size == 7
        ev_labels = labels[evals]
        assert int((ev_labels == 0).sum()) == 2 and int((ev_labels == 1).sum()) == 1

    def test_partition_properties(self):
        ds = make_pima_like(seed=7)
        train, evals = stratified_split(ds.labels, seed=3)
        combined = np.concatenate([train, evals])
        assert np.array_equal(np.sort(combined), np.arange(ds.n))
        assert np.array_equal(train, np.sort(train))
        assert np.array_equal(evals, np.sort(evals))

    def test_canonical_eval_counts(self):
        # class sizes 498/270 with eval_fraction 0.2 give eval (100, 54)
        ds = make_pima_like(seed=7)
        _, evals = stratified_split(ds.labels, seed=0)
        ev = ds.labels[evals]
        assert int((ev == 0).sum()) == 100
        assert int((ev == 1).sum()) == 54

    def test_deterministic_and_seed_sensitive(self):
        labels = make_pima_like(seed=7).labels
        a = stratified_split(labels, seed=5)
        b = stratified_split(labels, seed=5)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])
        c = stratified_split(labels, seed=6)
        assert not np.array_equal(a[1], c[1])

    def test_accepts_dataset_argument(self):
        ds = make_blobs(30, 2, 2, seed=1)
        a = stratified_split(ds, seed=2)
        b = stratified_split(ds.labels, seed=2)
        np.testing.assert_array_equal(a[0], b[0])

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            stratified_split(np.array([0, 0, 1, 1]), eval_fraction=0.0)
        with pytest.raises(ValueError):
            stratified_split(np.array([0, 0, 1, 1]), eval_fraction=1.0)
        with pytest.raises(ValueError, match="class 1"):
            stratified_split(np.array([0, 0, 0, 1]))
        with pytest.raises(ValueError, match="too small"):
            stratified_split(np.array([0, 0, 1, 1]), eval_fraction=0.6)


class TestSubsampleFraction:
    def setup_method(self):
        self.ds = make_pima_like(seed=7)
        self.train, _ = stratified_split(self.ds.labels, seed=0)

    def counts(self, idx):
        sub = self.ds.labels[idx]
        return idx.size, int((sub == 0).sum()), int((sub == 1).sum())

    def test_canonical_fraction_chain(self):
        # train side is 398 + 216 = 614 rows; the sweep plan uses ceil
        # rounding at its smallest fraction and round-half-up elsewhere
        assert self.train.size == 614
        expected = {
            (0.05, "ceil"): (31, 20, 11),
            (0.1, "round"): (61, 40, 21),
            (0.25, "round"): (154, 100, 54),
            (0.5, "round"): (307, 199, 108),
            (1.0, "round"): (614, 398, 216),
        }
        for (f, mode), want in expected.items():
            got = self.counts(subsample_fraction(self.train, self.ds.labels, f, seed=0,
                                                 rounding=mode))
            assert got == want, (f, mode)

    def test_subsets_nest_across_fractions(self):
        for seed in (0, 3):
            prev = None
            for f, mode in ((0.05, "ceil"), (0.1, "round"), (0.25, "round"),
                            (0.5, "round"), (1.0, "round")):
                idx = subsample_fraction(self.train, self.ds.labels, f, seed=seed,
                                         rounding=mode)
                if prev is not None:
                    assert set(prev).issubset(set(idx)), (seed, f)
                prev = idx

    def test_full_fraction_is_identity(self):
        idx = subsample_fraction(self.train, self.ds.labels, 1.0, seed=9)
        np.testing.assert_array_equal(idx, np.sort(self.train))

    def test_deterministic_and_seed_sensitive(self):
        a = subsample_fraction(self.train, self.ds.labels, 0.25, seed=1)
        b = subsample_fraction(self.train, self.ds.labels, 0.25, seed=1)
        np.testing.assert_array_equal(a, b)
        c = subsample_fraction(self.train, self.ds.labels, 0.25, seed=2)
        assert not np.array_equal(a, c)

    def test_subset_drawn_from_train_only(self):
        idx = subsample_fraction(self.train, self.ds.labels, 0.1, seed=4)
        assert set(idx).issubset(set(self.train))

    def test_starved_class_rejected(self):
        labels = np.array([0] * 50 + [1] * 2)
        train = np.arange(52)
        with pytest.raises(ValueError, match="class 1"):
            subsample_fraction(train, labels, 0.05, seed=0)

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            subsample_fraction(self.train, self.ds.labels, 0.0)
        with pytest.raises(ValueError):
            subsample_fraction(self.train, self.ds.labels, 1.5)
        with pytest.raises(ValueError, match="rounding"):
            subsample_fraction(self.train, self.ds.labels, 0.5, rounding="floor")


class TestBlobs:
    def test_counts_and_schema(self):
        ds = make_blobs(200, 3, 2, seed=0)
        assert np.bincount(ds.labels).tolist() == [67, 67, 66]
        assert ds.feature_names == ["x0", "x1"]
        assert ds.class_count == 3

    def test_deterministic(self):
        a = make_blobs(50, 2, 3, seed=4)
        b = make_blobs(50, 2, 3, seed=4)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_clusters_are_separated(self):
        ds = make_blobs(300, 3, 2, center_radius=6.0, noise=0.5, seed=1)
        for c in range(3):
            members = ds.features[ds.labels == c]
            center = members.mean(axis=0)
            spread = np.linalg.norm(members - center, axis=1).max()
            others = ds.features[ds.labels != c]
            nearest = np.linalg.norm(others - center, axis=1).min()
            assert nearest > spread * 0.5

    def test_rejects_bad_dimensions(self):
        with pytest.raises(ValueError):
            make_blobs(10, 1, 2)
        with pytest.raises(ValueError):
            make_blobs(10, 3, 1)
