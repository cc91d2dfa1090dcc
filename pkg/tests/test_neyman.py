import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hte_cells.errors import BlockTooSmall, EmptyArm, EmptySubgroupArm
from hte_cells.neyman import (Subgroup, ate_hat, diff_in_means_arrays, holm_bonferroni,
                              holm_cutoffs, one_sided_p, subgroup_cate_arrays, subgroup_cate_hat,
                              tstat_arrays, tstat_variance, tstat_vs_ate)

from conftest import expand_counts, random_trial


def expansion_variance(y, t, g):
    """Variance of (subgroup estimate - ATE estimate) from its linear expansion.

    The difference is a linear combination of the outcomes with one
    coefficient per (arm, subgroup) block; each block contributes
    coefficient^2 * block size * block sample variance.
    """
    nT, nC = (t == 1).sum(), (t == 0).sum()
    gT, gC = (g & (t == 1)).sum(), (g & (t == 0)).sum()
    coef = {
        (1, True): 1 / gT - 1 / nT,
        (0, True): -(1 / gC - 1 / nC),
        (1, False): -1 / nT,
        (0, False): 1 / nC,
    }
    total = 0.0
    for (arm, inside), a in coef.items():
        block = y[(t == arm) & (g == inside)]
        total += a * a * len(block) * np.var(block, ddof=1)
    return total


def random_instance(rng):
    n = rng.integers(12, 60)
    while True:
        t = rng.integers(0, 2, n)
        g = rng.random(n) < rng.uniform(0.2, 0.8)
        sizes = [((t == a) & (g == b)).sum() for a in (0, 1) for b in (True, False)]
        if min(sizes) >= 2:
            break
    y = rng.normal(size=n) if rng.random() < 0.5 else rng.integers(0, 2, n).astype(float)
    return y, t, g


def test_variance_formula_matches_linear_expansion():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        y, t, g = random_instance(rng)
        a, b = tstat_variance(y, t, g), expansion_variance(y, t, g)
        assert a == pytest.approx(b, rel=1e-12, abs=1e-300)


def test_variance_estimate_is_unbiased_under_resampling():
    rng = np.random.default_rng(7)
    n = 240
    t = np.arange(n) % 2
    g = np.arange(n) < 90
    p = np.where(g, np.where(t == 1, 0.2, 0.45), np.where(t == 1, 0.3, 0.35))
    Y = (rng.random((10_000, n)) < p).astype(float)

    def mean_in(mask):
        return Y[:, mask].mean(axis=1)

    diff = (mean_in(g & (t == 1)) - mean_in(g & (t == 0))) - (mean_in(t == 1) - mean_in(t == 0))
    est = np.array([tstat_variance(y, t, g) for y in Y])
    assert est.mean() == pytest.approx(diff.var(ddof=1), rel=0.05)


def test_published_arm_counts_reproduce_overall_effects():
    gi = expand_counts(56, 4047, 121, 4029)
    cvt = expand_counts(41, 4047, 18, 4029)
    e = ate_hat(gi, np.arange(gi.n), "y")
    assert e.point == pytest.approx(-0.016, abs=5e-4)
    assert e.std == pytest.approx(0.003, abs=5e-4)
    e = ate_hat(cvt, np.arange(cvt.n), "y")
    assert e.point == pytest.approx(0.006, abs=5e-4)
    assert e.std == pytest.approx(0.002, abs=5e-4)
    assert (e.n_treated, e.n_control, e.events_treated, e.events_control) == (4047, 4029, 41, 18)


def test_subgroup_equal_to_everyone_has_zero_difference_but_degenerate_blocks():
    d = random_trial()
    idx = np.arange(d.n)
    e = subgroup_cate_hat(d, idx, Subgroup(idx), "y")
    assert e.point == ate_hat(d, idx, "y").point
    with pytest.raises(BlockTooSmall):
        tstat_vs_ate(d, idx, Subgroup(idx), "y")


def test_errors_and_zero_variance():
    with pytest.raises(EmptyArm):
        diff_in_means_arrays([1, 0], [1, 1])
    with pytest.raises(EmptySubgroupArm):
        subgroup_cate_arrays([1, 0, 1], [1, 0, 1], [True, False, False])
    y = np.zeros(12)
    t = np.arange(12) % 2
    g = np.arange(12) < 6
    assert tstat_arrays(y, t, g).t_stat is None


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_tstat_is_difference_over_root_variance(seed):
    y, t, g = random_instance(np.random.default_rng(seed))
    e = tstat_arrays(y, t, g)
    v = expansion_variance(y, t, g)
    if v > 0:
        ate = y[t == 1].mean() - y[t == 0].mean()
        assert e.t_stat == pytest.approx((e.point - ate) / np.sqrt(v), rel=1e-9)


@pytest.mark.parametrize("t", [-3.1, -2.33, -1.96, -1.65, -0.2, 0.0, 1.645, 2.65])
def test_normal_tail_probabilities_match_erfc(t):
    assert one_sided_p(t, "left") == pytest.approx(0.5 * math.erfc(-t / math.sqrt(2)), rel=1e-12)
    assert one_sided_p(-t, "right") == pytest.approx(one_sided_p(t, "left"), rel=1e-12)


@pytest.mark.parametrize("t,p", [(1.645, 0.05), (1.96, 0.025), (2.33, 0.01)])
def test_conventional_critical_values(t, p):
    assert one_sided_p(-t, "left") == pytest.approx(p, abs=5e-4)


def test_holm_step_down():
    assert holm_cutoffs(5, 0.05) == pytest.approx([0.01, 0.0125, 0.05 / 3, 0.025, 0.05])
    p = [0.004, 0.03, 0.012, 0.2]
    assert list(holm_bonferroni(p)) == [True, False, True, False]
    # stops at the first failure even if later p-values would pass their cutoffs
    assert list(holm_bonferroni([0.001, 0.02, 0.024, 0.049], 0.05)) == [True, False, False, False]


def test_holm_at_reporting_precision_differs_only_at_the_boundary():
    p = [0.0040, 0.0122, 0.016669, 0.0221, 0.0481]
    assert list(holm_bonferroni(p)) == [True, True, False, False, False]
    assert all(holm_bonferroni(p, decimals=4))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=12))
def test_holm_rejections_are_a_prefix_of_sorted_pvalues(p):
    rej = holm_bonferroni(p)
    order = np.argsort(p, kind="stable")
    seq = rej[order]
    k = int(seq.sum())
    assert np.all(seq[:k]) and not np.any(seq[k:])
    # never rejects more than Bonferroni-free testing at alpha, never fewer than Bonferroni
    assert rej.sum() >= (np.asarray(p) <= 0.05 / len(p)).sum()
