import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hte_cells.cellsearch import (Cell, cell_overlap_matrix, cell_search, cell_search_step,
                                  covers_to_json, enumerate_cells, feature_importance,
                                  pack_rows, popcount, prune_subcells, select_features,
                                  stab_scores, stabilized_cell_search, step_candidates,
                                  CoverRun)
from hte_cells.dataset import Dataset


# ------------------------------------------------------------ brute force

def brute_cells(p, m):
    for size in range(1, m + 1):
        for cols in itertools.combinations(range(p), size):
            for vals in itertools.product((0, 1), repeat=size):
                yield tuple(zip(cols, vals))


def brute_candidates(X, top, residual, m, band):
    """Candidate literal sets computed with explicit loops and Python sets."""
    scored = {}
    for lits in brute_cells(X.shape[1], m):
        inside = residual.copy()
        for j, v in lits:
            inside &= X[:, j] == v
        scored[frozenset(lits)] = (int((inside & top).sum()), int((inside & ~top).sum()))
    dmax = max(tp - fp for tp, fp in scored.values())
    if dmax <= 0:
        return set()
    cut = max(0.0, dmax - band * top.sum())
    cand = {c for c, (tp, fp) in scored.items() if tp - fp >= cut and tp > 0}
    return {c for c in cand if not any(o < c for o in cand)}


def lattice_candidates(X, top, residual, m, band):
    names = [f"x{j}" for j in range(X.shape[1])]
    lat = enumerate_cells(X, names, m)
    tp, fp = lat.counts(top, residual)
    idx = step_candidates(tp, fp, lat.literal_mask, int(top.sum()), band)
    return {frozenset((int(f[1:]), v) for f, v in lat.cells[i].literals) for i in idx}


def random_instance(rng, p, n):
    X = (rng.random((n, p)) < rng.uniform(0.2, 0.8, p)).astype(np.int8)
    # top leans on a random pair of literals so that the best cells are not trivial
    j, k = rng.choice(p, 2, replace=p < 2)
    signal = (X[:, j] == 1) & (X[:, k] == rng.integers(0, 2))
    top = np.where(signal, rng.random(n) < 0.8, rng.random(n) < 0.15)
    residual = rng.random(n) < rng.uniform(0.5, 1.0)
    return X, top, residual


def test_candidates_match_brute_force_on_random_instances():
    rng = np.random.default_rng(2024)
    for trial in range(100):
        p = int(rng.integers(2, 13))
        m = 2 if trial < 80 else 3
        if m == 3:
            p = min(p, 8)
        X, top, residual = random_instance(rng, p, int(rng.integers(30, 200)))
        band = float(rng.choice([0.0, 0.02, 0.05, 0.2]))
        assert lattice_candidates(X, top, residual, m, band) == \
            brute_candidates(X, top, residual, m, band), trial


def test_lattice_size_and_unique_cells():
    X = np.random.default_rng(0).integers(0, 2, (50, 5))
    lat = enumerate_cells(X, [f"x{j}" for j in range(5)], m=3)
    expected = sum(len(list(itertools.combinations(range(5), s))) * 2**s for s in (1, 2, 3))
    assert len(lat.cells) == expected == len(set(lat.cells))
    assert len(set(lat.literal_mask.tolist())) == expected
    with pytest.raises(ValueError):
        enumerate_cells(np.zeros((4, 32), dtype=int), [f"x{j}" for j in range(32)], 1)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 130))
def test_tp_plus_fp_is_cell_size_on_residual(seed, p, n):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 2, (n, p))
    top, residual = rng.random(n) < 0.4, rng.random(n) < 0.7
    lat = enumerate_cells(X, [f"x{j}" for j in range(p)], m=min(p, 2))
    tp, fp = lat.counts(top, residual)
    for i in range(len(lat.cells)):
        members = lat.members(i)
        assert tp[i] + fp[i] == (members & residual).sum()
        assert tp[i] == (members & residual & top).sum()


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(1, 255), min_size=1, max_size=12))
def test_pruning_keeps_exactly_the_minimal_literal_sets(masks):
    keep = set(prune_subcells(masks).tolist())
    for i, a in enumerate(masks):
        has_proper_subset = any((b & a) == b and b != a for b in masks)
        assert (i in keep) == (not has_proper_subset)


def test_popcount_matches_sum():
    rng = np.random.default_rng(1)
    for n in (1, 63, 64, 65, 1000):
        mask = rng.random(n) < 0.3
        assert popcount(pack_rows(mask)) == mask.sum()


def test_step_picks_a_dominant_cell():
    rng = np.random.default_rng(0)
    X = rng.integers(0, 2, (400, 4))
    top = (X[:, 0] == 1) & (X[:, 1] == 1)
    lat = enumerate_cells(X, ["a", "b", "c", "d"], m=3)
    tp, fp = lat.counts(top, np.ones(400, bool))
    i = cell_search_step(tp, fp, lat.literal_mask, top.sum(), rng, band=0.0)
    assert lat.cells[i] == Cell.of(a=1, b=1)


def test_step_splits_evenly_between_two_maximal_cells():
    # block A (x0 = 1) and block B (x1 = 1) are equal-sized top groups
    X = np.array([[1, 0]] * 30 + [[0, 1]] * 30 + [[0, 0]] * 100)
    top = np.r_[np.ones(60, bool), np.zeros(100, bool)]
    lat = enumerate_cells(X, ["x0", "x1"], m=2)
    tp, fp = lat.counts(top, np.ones(len(X), bool))
    cand = step_candidates(tp, fp, lat.literal_mask, 60, band=0.0)
    assert {lat.cells[i] for i in cand} == {Cell.of(x0=1), Cell.of(x1=1)}
    rng = np.random.default_rng(7)
    draws = [cell_search_step(tp, fp, lat.literal_mask, 60, rng, 0.0) for _ in range(2000)]
    frac = np.mean([lat.cells[i] == Cell.of(x0=1) for i in draws])
    assert abs(frac - 0.5) < 3 * np.sqrt(0.25 / 2000)


def test_step_stops_without_positive_gain():
    X = np.zeros((50, 3), dtype=int)
    top = np.arange(50) < 10
    lat = enumerate_cells(X, ["a", "b", "c"], m=2)
    tp, fp = lat.counts(top, np.ones(50, bool))
    assert cell_search_step(tp, fp, lat.literal_mask, 10, np.random.default_rng(0)) is None


def test_cover_recovers_planted_cell_then_stops():
    rng = np.random.default_rng(3)
    X = rng.integers(0, 2, (2000, 6))
    top = (X[:, 2] == 1) & (X[:, 4] == 0)
    lat = enumerate_cells(X, [f"x{j}" for j in range(6)], m=3)
    run = cell_search(lat, top, rng, max_iter=3, band=0.0)
    assert run.cells == [Cell.of(x2=1, x4=0)]
    assert run.residual_sizes[0] == 2000 and len(run.residual_sizes) == 2


def test_cover_of_union_finds_both_parts():
    rng = np.random.default_rng(4)
    X = rng.integers(0, 2, (3000, 5))
    top = ((X[:, 0] == 1) & (X[:, 1] == 1)) | ((X[:, 2] == 0) & (X[:, 3] == 0))
    lat = enumerate_cells(X, [f"x{j}" for j in range(5)], m=2)
    run = cell_search(lat, top, rng, max_iter=3, band=0.0)
    assert set(run.cells) == {Cell.of(x0=1, x1=1), Cell.of(x2=0, x3=0)}


def test_stab_examples():
    c, sub = Cell.of(x0=1), Cell.of(x0=1, x1=0)
    sizes = {c: 100, sub: 50}
    always = stab_scores([CoverRun([c])] * 4, sizes)
    assert always[c] == 1.0
    mixed = stab_scores([CoverRun([sub]), CoverRun([c]), CoverRun([]), CoverRun([])], sizes)
    assert mixed[sub] == 0.25
    assert mixed[c] == pytest.approx((0.5 + 1.0) / 4)


def test_stabilized_table_orders_by_mean_and_applies_threshold():
    a, b = Cell.of(x0=1), Cell.of(x1=1)
    sizes = {a: 10, b: 10}
    runs = {0.2: [CoverRun([a]), CoverRun([a, b]), CoverRun([a])],
            0.3: [CoverRun([b]), CoverRun([a]), CoverRun([a])]}
    table = stabilized_cell_search(runs, sizes, threshold=1 / 3)
    assert table.head()["cell"] == a
    assert table.head()["mean"] == pytest.approx(5 / 6)
    assert table.stable_cells() == [a, b]
    assert table.rows[1]["mean"] == pytest.approx(1 / 3)
    csv_lines = table.to_csv().splitlines()
    assert csv_lines[0].startswith("cell,stab_q0.2,stab_q0.3,stab_mean")
    assert csv_lines[1].split(",")[:4] == ["x0=1", "100", "67", "83"]
    parsed = json.loads(covers_to_json(runs))
    assert parsed["0.2"][1]["cells"] == [{"x0": 1}, {"x1": 1}]


def test_overlap_matrix():
    X = np.array([[1, 1], [1, 0], [0, 1], [1, 1]])
    d = Dataset(X, ["a", "b"], np.array([0, 1, 0, 1]), {"y": np.zeros(4, int)})
    M = cell_overlap_matrix([Cell.of(a=1), Cell.of(b=1), Cell.of(a=1, b=1)], d)
    assert M.tolist() == [[3, 2, 2], [2, 3, 2], [2, 2, 2]]


def test_select_features_union_and_cap():
    diff = np.array([0.5, 0.3, 0.1, 0.05, 0.05, 0.0])
    clf = np.array([0.0, 0.1, 0.2, 0.6, 0.05, 0.05])
    assert select_features(diff, clf, k=2) == [0, 1, 2, 3]
    # summed scores: 0.5, 0.4, 0.3, 0.65 -> cap 3 drops column 2
    assert select_features(diff, clf, k=2, cap=3) == [0, 1, 3]


def test_feature_importance_ranks_defining_features():
    rng = np.random.default_rng(5)
    X = rng.integers(0, 2, (1500, 6)).astype(float)
    X[:, 5] = 1.0
    top = (X[:, 1] == 1) & (X[:, 3] == 1)
    diff, clf = feature_importance(X, top)
    assert np.abs(diff).sum() == pytest.approx(1.0)
    assert diff[5] == 0 and clf[5] == 0
    assert set(np.argsort(-np.abs(diff))[:2]) == {1, 3}
    assert set(np.argsort(-np.abs(clf))[:2]) == {1, 3}


def test_cell_validation_and_sub_cell_relation():
    with pytest.raises(ValueError):
        Cell((("a", 1), ("a", 0)))
    with pytest.raises(ValueError):
        Cell((("a", 2),))
    big, small = Cell.of(a=1), Cell.of(a=1, b=0)
    assert small.is_subcell_of(big) and big.is_subcell_of(big)
    assert not big.is_subcell_of(small)
    assert str(small) == "a=1 & b=0"
