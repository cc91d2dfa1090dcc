import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_trial
from hte_cells.dataset import Dataset, FoldAssignment, make_split_plan
from hte_cells.errors import EmptyScreen
from hte_cells.metalearners import builtin_estimators
from hte_cells.pipeline import (PerturbationResult, PerturbationSpec, apply_perturbation,
                                build_ensemble, build_rank_table, default_perturbations,
                                ensemble_top_groups, rank_and_screen, run_perturbation,
                                spec_hash, subgroup_overlap, tune_specs)

REG = builtin_estimators(0)
NAMES = sorted(REG)


def fake_result(name, tvals, direction="neg", k=2):
    """A result whose (estimator, fold, q) t-stats are given per estimator as lists."""
    folds = FoldAssignment(np.arange(4), np.array([1, 2, 1, 2]), k, name)
    specs = {e: REG[e] for e in tvals}
    res = PerturbationResult(name, "y", direction, (0.2,), folds, specs)
    for e, vals in tvals.items():
        for f, v in enumerate(vals, start=1):
            res.t[(e, f, 0.2)] = v
    return res


t_value = st.one_of(st.none(), st.floats(-5, 5).map(lambda v: round(v, 1)))


@settings(max_examples=150, deadline=None)
@given(st.lists(st.dictionaries(st.sampled_from(NAMES[:6]), st.lists(t_value, min_size=2,
                                                                   max_size=2),
                                min_size=6, max_size=6), min_size=1, max_size=4),
       st.integers(1, 6), st.sampled_from(["neg", "pos"]))
def test_ranks_permute_and_screen_matches_intersection(tables, top_k, direction):
    results = [fake_result(f"p{i}", tv, direction) for i, tv in enumerate(tables)]
    rt = build_rank_table(results, direction)
    eligible_sets = []
    for r in results:
        ranks = [rt.ranks[(e, r.name)] for e in rt.estimators]
        assert sorted(ranks) == list(range(1, len(rt.estimators) + 1))
        # independent screen: sort defined means, ties broken by name
        means = {}
        for e in rt.estimators:
            vals = [v for v in tables[int(r.name[1:])][e] if v is not None]
            if vals:
                means[e] = np.mean(vals)
        sign = 1 if direction == "neg" else -1
        order = sorted(means, key=lambda e: (sign * means[e], e))
        eligible_sets.append(set(order[:top_k]))
        for e in rt.estimators:
            if e not in means:
                assert rt.ranks[(e, r.name)] > len(means)
    expected = set.intersection(*eligible_sets)
    if expected:
        assert rank_and_screen(rt, top_k) == expected
    else:
        with pytest.raises(EmptyScreen):
            rank_and_screen(rt, top_k)


def test_mean_t_counts_only_defined_cells():
    res = fake_result("p", {"t_rf": [1.0, None]})
    res.t[("t_rf", 1, 0.3)] = -3.0
    assert res.mean_t("t_rf") == (-1.0, 2)
    res = fake_result("p", {"t_rf": [None, None]})
    assert res.mean_t("t_rf") == (None, 0)


def test_single_estimator_is_screened_and_missing_everywhere_is_empty():
    rt = build_rank_table([fake_result("a", {"t_rf": [-1.0, -2.0]})])
    assert rank_and_screen(rt, 1) == {"t_rf"}
    rt = build_rank_table([fake_result("a", {"t_rf": [None, None]})])
    with pytest.raises(EmptyScreen):
        rank_and_screen(rt, 10)


def test_rank_table_csv_orders_by_worst_rank():
    rs = [fake_result("a", {"t_rf": [-3.0, -3.0], "x_rf": [-1.0, -1.0]}),
          fake_result("b", {"t_rf": [0.5, 0.5], "x_rf": [-2.0, -2.0]})]
    rt = build_rank_table(rs)
    lines = rt.to_csv().splitlines()
    assert lines[0] == "estimator,a,b,worst_rank"
    assert lines[1:] == ["t_rf,-3.00,0.50,2", "x_rf,-1.00,-2.00,2"]


def test_overlap_examples():
    a = np.arange(10)
    assert subgroup_overlap([a, a, a]) == 100.0
    assert subgroup_overlap([a, a + 100]) == 0.0
    assert subgroup_overlap([np.arange(10), np.arange(5, 15)]) == 50.0
    assert subgroup_overlap([np.arange(4), np.arange(2, 4)]) == pytest.approx(100 * 2 / 3)


def test_perturbations_transform_data(trial):
    plan = make_split_plan(trial, "y", seed=1)
    assert [p.name for p in default_perturbations(plan)] == ["cv_orig", "cv_0", "cv_1"]
    d2, folds, out = apply_perturbation(
        trial, plan, PerturbationSpec("age60", "feature-rethreshold", source="age",
                                      threshold=60, replaces="f0"), "y")
    assert np.array_equal(d2.feature("f0"), (trial.aux["age"] > 60).astype(int))
    assert folds.name == "cv_orig" and out == "y"
    _, _, out = apply_perturbation(trial, plan, PerturbationSpec("swap", "outcome-swap",
                                                                alt_outcome="y2"), "y")
    assert out == "y2"
    _, tf, _ = apply_perturbation(trial, plan, PerturbationSpec("time", "time-cv"), "y")
    times = [trial.enrollment_time[tf.members(f)] for f in range(1, tf.k + 1)]
    assert all(a.max() <= b.min() for a, b in zip(times, times[1:]))
    with pytest.raises(ValueError):
        PerturbationSpec("bad", "time-cv", tune=True)


def test_constant_outcome_makes_every_t_missing():
    d = random_trial(n=300, seed=3)
    d = Dataset(d.features, d.feature_names, d.treatment, {"y": np.zeros(d.n, int)},
                d.enrollment_time)
    plan = make_split_plan(d, "y", seed=0)
    res = run_perturbation(d, plan, default_perturbations(plan)[0],
                           {"t_lasso": REG["t_lasso"], "x_rf": REG["x_rf"]}, "y")
    assert all(v is None for v in res.t.values())
    rt = build_rank_table([res])
    with pytest.raises(EmptyScreen):
        rank_and_screen(rt)


def test_spec_hash_lineage_through_tuning():
    d = random_trial(n=400, seed=5)
    plan = make_split_plan(d, "y", seed=0)
    tuned = tune_specs(d, plan, [REG["t_lasso"]], "y")
    res = run_perturbation(d, plan, default_perturbations(plan)[1], tuned, "y")
    rt = build_rank_table([res])
    assert rt.spec_hashes[("t_lasso", "cv_0")] == spec_hash(tuned["t_lasso"])
    assert len(spec_hash(tuned["t_lasso"])) == 16


def test_ensemble_averages_member_predictions():
    d = random_trial(n=400, seed=6, risk=(0.2, 0.45))
    plan = make_split_plan(d, "y", seed=0)
    specs = {"t_rf": REG["t_rf"].__class__.from_dict({**REG["t_rf"].to_dict()}),
             "x_lasso": REG["x_lasso"]}
    res = run_perturbation(d, plan, default_perturbations(plan)[0], specs, "y")
    ens = build_ensemble({"t_rf", "x_lasso"}, [res])
    assert len(ens) == res.folds.k
    for e in ens:
        want = (res.pred[("t_rf", e.fold)] + res.pred[("x_lasso", e.fold)]) / 2
        np.testing.assert_allclose(e.pred, want)
    groups = ensemble_top_groups(ens, 0.2, "neg")
    for g, e in zip(groups, ens):
        frac = np.isin(e.indices[e.train_mask], g).mean()
        assert 0.2 <= frac < 0.2 + 0.05
