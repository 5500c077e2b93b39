#!/usr/bin/env python3
"""
Test Grouped Datasets
CSV ingestion, synthetic layouts, stratified splitting and subsampling
"""

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from recourse.models.dataset import (
    GroupedDataset,
    PreprocessSpec,
    SyntheticKind,
    SyntheticSpec,
    load_csv,
    load_named,
    make_synthetic,
    roundtrip_spec,
    split,
    subsample,
    write_csv,
)
from recourse.utils.errors import ContractViolation, CsvParseError, DataError, SchemaError


def small_dataset():
    features = np.arange(16, dtype=float).reshape(8, 2)
    labels = [1, 1, -1, -1, 1, 1, -1, -1]
    groups = [1, -1, 1, -1, 1, -1, 1, -1]
    return GroupedDataset(features, labels, groups)


def test_arrays_are_read_only_copies():
    raw = np.zeros((2, 1))
    ds = GroupedDataset(raw, [1, -1], [1, -1])
    raw[0, 0] = 5.0
    assert ds.features[0, 0] == 0.0
    with pytest.raises(ValueError):
        ds.features[0, 0] = 1.0
    assert ds.feature_names == ("x1",)


def test_single_group_rejected():
    with pytest.raises(DataError):
        GroupedDataset(np.zeros((2, 1)), [1, -1], [1, 1])


def test_bad_label_values_rejected():
    with pytest.raises(DataError):
        GroupedDataset(np.zeros((2, 1)), [0, 1], [1, -1])


def test_synthetic_is_deterministic_and_balanced():
    spec = SyntheticSpec(kind=SyntheticKind.LINEAR_SHIFTED_GAUSSIANS, n_per_cell=25, seed=7)
    first, second = make_synthetic(spec), make_synthetic(spec)
    assert_array_equal(first.features, second.features)
    assert first.n_samples == 100
    for idx in first.cell_indices().values():
        assert len(idx) == 25


def test_ring_layout_puts_negatives_outside():
    ds = make_synthetic(SyntheticSpec(kind=SyntheticKind.RING_VS_CLUSTER, n_per_cell=50, seed=1))
    radii = np.linalg.norm(ds.features, axis=1)
    assert radii[ds.labels == -1].mean() > 2.0 * radii[ds.labels == 1].mean()
    far_group = radii[(ds.labels == -1) & (ds.groups == -1)].mean()
    near_group = radii[(ds.labels == -1) & (ds.groups == 1)].mean()
    assert far_group > near_group


def test_csv_roundtrip_is_exact(tmp_path):
    ds = make_synthetic(SyntheticSpec(n_per_cell=10, seed=3))
    path = write_csv(ds, tmp_path / "d.csv")
    loaded = load_csv(path, roundtrip_spec())
    assert_array_equal(loaded.features, ds.features)
    assert_array_equal(loaded.labels, ds.labels)
    assert_array_equal(loaded.groups, ds.groups)
    assert loaded.feature_names == ds.feature_names


def test_load_csv_missing_column(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("a,label\n1,1\n2,-1\n")
    with pytest.raises(SchemaError):
        load_csv(path, roundtrip_spec())


def test_load_csv_bad_cell_without_drop(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("a,label,group\n1,1,1\nabc,-1,-1\n3,1,-1\n")
    with pytest.raises(CsvParseError):
        load_csv(path, roundtrip_spec())


def test_load_csv_drops_bad_rows_and_standardizes(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text(
        "age,const,credit,sex\n"
        "20,5,good,male\n"
        "30,5,bad,female\n"
        ",5,good,female\n"
        "40,5,bad,male\n"
    )
    spec = PreprocessSpec(
        target_column="credit",
        positive_target_values=frozenset({"good"}),
        group_column="sex",
        positive_group_values=frozenset({"male"}),
    )
    ds = load_csv(path, spec)
    assert ds.n_samples == 3
    assert_array_equal(ds.labels, [1, -1, -1])
    assert_array_equal(ds.groups, [1, -1, 1])
    assert np.allclose(ds.features[:, 0], [-1.0, 0.0, 1.0])
    assert np.all(ds.features[:, 1] == 0.0)


def test_load_csv_missing_file(tmp_path):
    with pytest.raises(DataError):
        load_csv(tmp_path / "nope.csv", roundtrip_spec())


def test_split_is_stratified_and_deterministic():
    ds = make_synthetic(SyntheticSpec(n_per_cell=50, seed=0))
    train, test = split(ds, 0.8, seed=4)
    again_train, _ = split(ds, 0.8, seed=4)
    assert train.n_samples == 160 and test.n_samples == 40
    assert_array_equal(train.features, again_train.features)
    for idx in train.cell_indices().values():
        assert len(idx) == 40
    for idx in test.cell_indices().values():
        assert len(idx) == 10


def test_split_partitions_rows():
    ds = small_dataset()
    train, test = split(ds, 0.5, seed=1)
    rows = {tuple(r) for r in train.features} | {tuple(r) for r in test.features}
    assert len(rows) == ds.n_samples
    assert train.n_samples + test.n_samples == ds.n_samples


def test_single_row_cells_leave_every_group_in_test():
    # cells (1,1):1, (1,-1):1, (-1,1):1, (-1,-1):2
    features = np.arange(10, dtype=float).reshape(5, 2)
    ds = GroupedDataset(features, [1, 1, -1, -1, -1], [1, -1, 1, -1, -1])
    train, test = split(ds, 0.5, seed=0)
    for part in (train, test):
        assert set(part.groups.tolist()) == {1, -1}
    assert train.n_samples + test.n_samples == 5
    # the lone group -1 positive still goes to train
    assert any(np.array_equal(features[1], r) for r in train.features)


def test_single_row_cell_goes_to_train_when_group_has_test_rows():
    features = np.arange(14, dtype=float).reshape(7, 2)
    ds = GroupedDataset(features, [1, 1, -1, -1, -1, -1, -1], [1, -1, 1, -1, -1, 1, 1])
    train, test = split(ds, 0.5, seed=0)
    for row in features[:2]:
        assert any(np.array_equal(row, r) for r in train.features)
    assert set(test.groups.tolist()) == {1, -1}


def test_split_rejects_single_row_group():
    ds = GroupedDataset(np.arange(8, dtype=float).reshape(4, 2), [1, -1, -1, 1], [1, -1, -1, -1])
    with pytest.raises(DataError, match="split"):
        split(ds, 0.5, seed=0)


def test_split_fraction_bounds():
    with pytest.raises(ContractViolation):
        split(small_dataset(), 1.0, seed=0)


def test_subsample_keeps_both_groups():
    ds = make_synthetic(SyntheticSpec(n_per_cell=20, seed=0))
    sub = subsample(ds, 30, seed=2)
    assert sub.n_samples == 30
    assert set(np.unique(sub.groups)) == {-1, 1}
    assert subsample(ds, 500, seed=2) is ds


GERMAN_ROWS = """duration,credit_amount,age,checking_status,purpose,housing,sex,credit
6,1169,67,A11,A43,A152,male,1
48,5951,22,A12,A43,A152,female,2
12,2096,49,A14,A46,A152,male,1
42,7882,45,A11,A42,A153,male,1
24,4870,53,A11,A40,A153,male,2
36,9055,35,A14,A46,A153,male,1
24,2835,53,A14,A42,A152,female,1
36,6948,35,A12,A41,A151,female,1
"""


def test_german_preset_encodes_categoricals(tmp_path):
    (tmp_path / "german.csv").write_text(GERMAN_ROWS, encoding="utf-8")
    ds = load_named("german", tmp_path)
    # 3 numeric columns + checking_status (3 values) + purpose (5) + housing (3)
    assert ds.n_features == 14
    assert ds.feature_names[:3] == ("duration", "credit_amount", "age")
    assert "purpose=A43" in ds.feature_names and "housing=A151" in ds.feature_names
    assert_array_equal(ds.groups, [1, -1, 1, 1, 1, 1, -1, -1])
    assert_array_equal(ds.labels, [1, -1, 1, 1, -1, 1, 1, 1])
    assert np.allclose(ds.features.mean(axis=0), 0.0)


def test_categorical_columns_become_indicator_columns(tmp_path):
    path = tmp_path / "raw.csv"
    path.write_text("x,color,y,g\n1.5,red,1,1\n2.5,blue,0,0\n3.5,red,1,0\n", encoding="utf-8")
    spec = PreprocessSpec(
        target_column="y",
        positive_target_values={"1"},
        group_column="g",
        positive_group_values={"1"},
        standardize=False,
        categorical_columns=("color",),
    )
    ds = load_csv(path, spec)
    assert ds.feature_names == ("x", "color=blue", "color=red")
    assert_array_equal(ds.features, [[1.5, 0.0, 1.0], [2.5, 1.0, 0.0], [3.5, 0.0, 1.0]])


def test_unknown_named_dataset(tmp_path):
    with pytest.raises(DataError):
        load_named("nope", tmp_path)
