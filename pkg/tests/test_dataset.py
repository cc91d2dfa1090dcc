import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hte_cells.dataset import (STRATA, Dataset, SplitPlan, load_csv, make_split_plan,
                               stratified_cv_folds, stratified_test_split, time_folds)
from hte_cells.errors import EmptyArm, MissingColumn, MissingTime, NonBinaryValue

from conftest import random_trial


def strata_dataset(sizes):
    """Dataset whose (T, Y) strata have the given sizes, in STRATA order."""
    t = np.concatenate([np.full(s, a) for (a, _), s in zip(STRATA, sizes)])
    y = np.concatenate([np.full(s, b) for (_, b), s in zip(STRATA, sizes)])
    X = (np.arange(len(t)) % 2)[:, None]
    return Dataset(X, ["f"], t, {"y": y})


def test_gi_sized_split_has_expected_test_size():
    # control: 3908 no-event, 121 events; treated: 3991 no-event, 56 events
    d = strata_dataset([3908, 121, 3991, 56])
    plan = stratified_test_split(d, "y", 0.2, seed=3)
    assert d.n == 8076
    assert len(plan.test_indices) == 1616
    counts = [np.isin(d.strata("y")[s], plan.test_indices).sum() for s in STRATA]
    for c, size in zip(counts, [3908, 121, 3991, 56]):
        assert abs(c - 0.2 * size) <= 1
    assert sum(d.outcome("y")[plan.test_indices]) == counts[1] + counts[3]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 60), min_size=4, max_size=4), st.sampled_from([0.1, 0.2, 0.25, 0.3]),
       st.integers(0, 10_000))
def test_test_split_properties(sizes, frac, seed):
    d = strata_dataset(sizes)
    plan = stratified_test_split(d, "y", frac, seed)
    test, train = plan.test_indices, plan.train_indices
    assert len(test) == math.ceil(d.n * frac - 1e-9)
    assert len(np.intersect1d(test, train)) == 0
    assert np.array_equal(np.union1d(test, train), np.arange(d.n))
    for s, size in zip(STRATA, sizes):
        c = np.isin(d.strata("y")[s], test).sum()
        assert abs(c - frac * size) <= 1 + 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(40, 300), st.integers(2, 6), st.integers(0, 10_000))
def test_cv_folds_partition_and_balance(n, k, seed):
    d = random_trial(n=n, seed=seed % 97)
    f = stratified_cv_folds(d, "y", k, seed)
    assert sorted(np.unique(f.fold)) == list(range(1, k + 1))
    sizes = np.bincount(f.fold)[1:]
    assert sizes.max() - sizes.min() <= 1
    for members in d.strata("y").values():
        per = np.bincount(f.fold[np.isin(f.indices, members)], minlength=k + 1)[1:]
        assert per.max() - per.min() <= 1


def test_time_folds_are_contiguous_blocks():
    d = random_trial(n=103)
    f = time_folds(d, 4)
    sizes = np.bincount(f.fold)[1:]
    assert list(sizes) == [26, 26, 26, 25]
    for a in range(1, 4):
        assert d.enrollment_time[f.members(a)].max() <= d.enrollment_time[f.members(a + 1)].min()


def test_time_folds_need_time():
    d = random_trial(time=False)
    with pytest.raises(MissingTime):
        time_folds(d, 4)


def test_split_plan_is_deterministic_and_round_trips():
    d = random_trial(n=500)
    a = make_split_plan(d, "y", seed=11)
    b = make_split_plan(d, "y", seed=11)
    c = make_split_plan(d, "y", seed=12)
    assert a.to_json() == b.to_json()
    assert a.to_json() != c.to_json()
    assert [f.name for f in a.cv_folds] == ["cv_orig", "cv_0", "cv_1"]
    assert SplitPlan.from_dict(a.to_dict()).to_json() == a.to_json()
    for f in a.cv_folds:
        assert np.array_equal(f.indices, a.train_indices)


def test_load_csv_round_trip_and_errors(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("T,Y,A,B,age\n1,0,1,0,61\n0,1,0,1,40\n1,1,,1,70\n0,0,1,1,55\n")
    schema = {"treatment": "T", "outcomes": ["Y"], "features": ["A", "B"], "aux": ["age"],
              "fill": {"A": 0}}
    d = load_csv(path, schema)
    assert d.n == 4 and d.feature_names == ("A", "B")
    assert list(d.feature("A")) == [1, 0, 0, 1]
    assert list(d.aux["age"]) == [61, 40, 70, 55]

    with pytest.raises(NonBinaryValue) as exc:
        load_csv(path, {**schema, "fill": {}})
    assert exc.value.row == 2 and exc.value.column == "A"

    with pytest.raises(MissingColumn):
        load_csv(path, {**schema, "features": ["A", "C"]})

    path.write_text("T,Y,A\n1,0,1\n1,1,0\n")
    with pytest.raises(EmptyArm):
        load_csv(path, {"treatment": "T", "outcomes": ["Y"], "features": ["A"]})


def test_nonbinary_value_reports_position():
    X = np.array([[0, 1], [1, 2]])
    with pytest.raises(NonBinaryValue) as exc:
        Dataset(X, ["a", "b"], [0, 1], {"y": [0, 1]})
    assert (exc.value.column, exc.value.row) == ("b", 1)


def test_with_feature_replaces_column():
    d = random_trial(n=50)
    new = (d.aux["age"] > 60).astype(int)
    d2 = d.with_feature("old", new, replaces="f2")
    assert d2.feature_names[2] == "old"
    assert np.array_equal(d2.feature("old"), new)
    assert np.array_equal(d.feature("f2"), random_trial(n=50).feature("f2"))
