"""Difference-in-means estimates, the subgroup-vs-ATE t-statistic and Holm's procedure.

Sample variances are Bessel-corrected throughout. The array-level functions
(``*_arrays``) take an outcome vector, a treatment vector and, where needed, a
boolean subgroup mask over the same rows; the Dataset-level wrappers only
gather those arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy.stats import norm

from .errors import BlockTooSmall, EmptyArm, EmptySubgroupArm


@dataclass(frozen=True)
class Subgroup:
    indices: np.ndarray
    definition: Any = None

    def mask(self, idx):
        """Boolean membership of each row of ``idx``."""
        return np.isin(idx, self.indices)


@dataclass(frozen=True)
class EffectEstimate:
    point: float
    std: float
    t_stat: float | None
    n_treated: int
    n_control: int
    events_treated: int
    events_control: int

    @property
    def size(self):
        return self.n_treated + self.n_control

    @property
    def events(self):
        return self.events_treated + self.events_control

    def to_dict(self):
        return {
            "point": self.point,
            "std": self.std,
            "t_stat": self.t_stat,
            "n_treated": self.n_treated,
            "n_control": self.n_control,
            "events_treated": self.events_treated,
            "events_control": self.events_control,
            "size": self.size,
            "events": self.events,
        }


def _sample_var(y):
    """Bessel-corrected variance; zero for a single observation."""
    n = len(y)
    if n < 2:
        return 0.0
    return float(np.var(y, ddof=1))


def diff_in_means_arrays(y, t) -> EffectEstimate:
    y = np.asarray(y, dtype=float)
    t = np.asarray(t)
    y1 = y[t == 1]
    y0 = y[t == 0]
    if len(y1) == 0 or len(y0) == 0:
        raise EmptyArm("both arms must be nonempty")
    point = y1.mean() - y0.mean()
    std = math.sqrt(_sample_var(y1) / len(y1) + _sample_var(y0) / len(y0))
    return EffectEstimate(float(point), std, None, len(y1), len(y0), int(y1.sum()), int(y0.sum()))


def subgroup_cate_arrays(y, t, g) -> EffectEstimate:
    g = np.asarray(g, dtype=bool)
    try:
        return diff_in_means_arrays(np.asarray(y)[g], np.asarray(t)[g])
    except EmptyArm:
        raise EmptySubgroupArm("subgroup has an empty arm") from None


def tstat_variance(y, t, g):
    """Plug-in conditional variance of (subgroup estimate - ATE estimate).

    Each arm contributes the squared share of that arm lying outside the
    subgroup, times the sum of within-block variance-over-size terms for the
    subgroup and complement blocks of that arm.
    """
    y = np.asarray(y, dtype=float)
    t = np.asarray(t)
    g = np.asarray(g, dtype=bool)
    total = 0.0
    for arm in (0, 1):
        in_arm = t == arm
        yg = y[in_arm & g]
        yc = y[in_arm & ~g]
        share = len(yc) / in_arm.sum()
        total += share**2 * (_sample_var(yg) / len(yg) + _sample_var(yc) / len(yc))
    return total


def tstat_arrays(y, t, g) -> EffectEstimate:
    """Subgroup estimate with its t-statistic against the overall ATE estimate.

    ``t_stat`` is None when the variance estimate is zero.
    """
    y = np.asarray(y, dtype=float)
    t = np.asarray(t)
    g = np.asarray(g, dtype=bool)
    for arm in (0, 1):
        for inside in (True, False):
            k = np.sum((t == arm) & (g == inside))
            if k < 2:
                raise BlockTooSmall(
                    f"block (T={arm}, {'in' if inside else 'out of'} subgroup) has {k} rows; need 2")
    sub = subgroup_cate_arrays(y, t, g)
    ate = diff_in_means_arrays(y, t)
    var = tstat_variance(y, t, g)
    tval = (sub.point - ate.point) / math.sqrt(var) if var > 0 else None
    return EffectEstimate(sub.point, sub.std, tval, sub.n_treated, sub.n_control,
                          sub.events_treated, sub.events_control)


def _gather(d, idx, outcome):
    idx = np.asarray(idx, dtype=np.int64)
    return idx, d.outcome(outcome)[idx], d.treatment[idx]


def ate_hat(d, idx, outcome) -> EffectEstimate:
    _, y, t = _gather(d, idx, outcome)
    return diff_in_means_arrays(y, t)


def subgroup_cate_hat(d, idx, g: Subgroup, outcome) -> EffectEstimate:
    idx, y, t = _gather(d, idx, outcome)
    return subgroup_cate_arrays(y, t, g.mask(idx))


def tstat_vs_ate(d, idx, g: Subgroup, outcome) -> EffectEstimate:
    idx, y, t = _gather(d, idx, outcome)
    return tstat_arrays(y, t, g.mask(idx))


def one_sided_p(t, direction="left"):
    """Standard-normal tail probability: P(Z <= t) for "left", P(Z >= t) for "right"."""
    if not math.isfinite(t):
        raise ValueError("t must be finite")
    if direction == "left":
        return float(norm.cdf(t))
    if direction == "right":
        return float(norm.sf(t))
    raise ValueError("direction must be 'left' or 'right'")


def holm_cutoffs(m, alpha):
    return [alpha / (m - k) for k in range(m)]


def holm_bonferroni(pvals, alpha=0.05, decimals=None):
    """Holm step-down rejections, returned in input order.

    With ``decimals`` set, p-values and cutoffs are both rounded to that many
    decimals before comparison (comparison at reporting precision).
    """
    p = np.asarray(pvals, dtype=float)
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if ((p < 0) | (p > 1)).any():
        raise ValueError("p-values must lie in [0, 1]")
    order = np.argsort(p, kind="stable")
    cut = holm_cutoffs(len(p), alpha)
    reject = np.zeros(len(p), dtype=bool)
    for k, i in enumerate(order):
        pk, ck = p[i], cut[k]
        if decimals is not None:
            pk, ck = round(pk, decimals), round(ck, decimals)
        if pk > ck:
            break
        reject[i] = True
    return reject
