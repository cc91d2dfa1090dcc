"""Quantile binning of CATE predictions and the calibration / ordering indicators.

Bins are half-open intervals ``(b_j, b_{j+1}]`` with the lowest bin closed
below at minus infinity, so a prediction equal to a threshold falls in the
lower bin and the bins partition every index set exactly. Bin indices are
0-based in arrays and 1-based in reports.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AllBinsMissing, DegenerateBaseline, EmptySubgroupArm, MissingBins
from .neyman import EffectEstimate, subgroup_cate_arrays

SEEK_NEGATIVE = "neg"
SEEK_POSITIVE = "pos"


def _check_direction(direction):
    if direction not in (SEEK_NEGATIVE, SEEK_POSITIVE):
        raise ValueError("direction must be 'neg' or 'pos'")


@dataclass(frozen=True)
class QuantileBinning:
    thresholds: np.ndarray
    grid: tuple
    degenerate: bool = False
    source: str | None = None

    @property
    def n_bins(self):
        return len(self.thresholds) + 1


def quantile_threshold(pred, q):
    """Smallest attained value ``c`` with ``mean(pred <= c) >= q``."""
    s = np.sort(np.asarray(pred, dtype=float))
    n = len(s)
    if n == 0:
        raise ValueError("need at least one prediction")
    if not 0 < q < 1:
        raise ValueError("q must lie strictly inside (0, 1)")
    k = int(np.searchsorted(np.arange(1, n + 1) / n, q, side="left"))
    return float(s[min(k, n - 1)])


def thresholds_from_predictions(pred, grid, source=None) -> QuantileBinning:
    grid = tuple(float(q) for q in grid)
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("q grid must be nondecreasing")
    th = np.array([quantile_threshold(pred, q) for q in grid])
    degenerate = bool(np.ptp(np.asarray(pred, dtype=float)) == 0.0)
    return QuantileBinning(th, grid, degenerate, source)


def bin_thresholds(m, d, train_idx, grid) -> QuantileBinning:
    """Thresholds from the model's predictions on the training rows."""
    from .metalearners import predict_rows

    return thresholds_from_predictions(predict_rows(m, d, train_idx), grid,
                                       getattr(m, "fingerprint", None))


def assign_from_predictions(b: QuantileBinning, pred):
    """0-based bin label per prediction (count of thresholds strictly below it)."""
    return np.searchsorted(b.thresholds, np.asarray(pred, dtype=float), side="left")


def assign_bins(b: QuantileBinning, m, d, idx):
    from .metalearners import predict_rows

    return assign_from_predictions(b, predict_rows(m, d, idx))


@dataclass(frozen=True)
class BinRow:
    index: int
    size: int
    model_mean: float
    model_std: float
    estimate: EffectEstimate | None

    @property
    def missing(self):
        return self.estimate is None


@dataclass(frozen=True)
class BinReport:
    rows: tuple
    total: int

    @property
    def skipped(self):
        return sum(r.missing for r in self.rows)

    @property
    def sizes(self):
        return np.array([r.size for r in self.rows])

    def to_rows(self):
        """Plot-ready per-bin records: model CATE with its sample std, Neyman CATE with its std."""
        out = []
        for r in self.rows:
            e = r.estimate
            out.append({
                "bin": r.index + 1,
                "size": r.size,
                "model_mean": r.model_mean,
                "model_std": r.model_std,
                "neyman": None if e is None else e.point,
                "neyman_std": None if e is None else e.std,
                "missing": r.missing,
            })
        return out

    def to_csv(self):
        buf = io.StringIO()
        rows = self.to_rows()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else v) for k, v in r.items()})
        return buf.getvalue()


def bin_report(pred, y, t, labels, n_bins) -> BinReport:
    """Per-bin sizes, prediction means and Neyman estimates over one index set."""
    pred = np.asarray(pred, dtype=float)
    labels = np.asarray(labels)
    rows = []
    for j in range(n_bins):
        g = labels == j
        k = int(g.sum())
        mean = float(pred[g].mean()) if k else math.nan
        std = float(pred[g].std(ddof=1)) if k > 1 else (0.0 if k == 1 else math.nan)
        try:
            est = subgroup_cate_arrays(y, t, g)
        except EmptySubgroupArm:
            est = None
        rows.append(BinRow(j, k, mean, std, est))
    return BinReport(tuple(rows), len(pred))


def _gap_sum(report, bins, centre):
    bins = range(len(report.rows)) if bins is None else bins
    total = 0.0
    used = 0
    for j in bins:
        r = report.rows[j]
        if r.missing or r.size == 0:
            continue
        c = r.model_mean if centre is None else centre
        total += r.size / report.total * abs(c - r.estimate.point)
        used += 1
    if used == 0:
        raise AllBinsMissing("no bin has a defined Neyman estimate")
    return total


def cal_score(report: BinReport, bins=None):
    """Size-weighted mean absolute gap between bin prediction means and bin estimates."""
    return _gap_sum(report, bins, None)


def cal_score_baseline(report: BinReport, ate, bins=None):
    """Same gap with every bin's prediction mean replaced by the constant ``ate``."""
    return _gap_sum(report, bins, float(ate))


def r2c(report: BinReport, ate, bins=None):
    """One minus the ratio of the calibration score to its constant-ATE baseline."""
    base = cal_score_baseline(report, ate, bins)
    if base == 0.0:
        raise DegenerateBaseline("constant-ATE baseline has zero calibration gap")
    return 1.0 - cal_score(report, bins) / base


def restricted_r2c(report: BinReport, ate, bins):
    """:func:`r2c` with both sums restricted to the 0-based ``bins``."""
    return r2c(report, ate, sorted(set(bins)))


@dataclass(frozen=True)
class OrderingIndicators:
    adjacent: tuple  # bool or None per adjacent pair (j, j+1)
    extreme: bool | None
    skipped: int = 0


def ordering_indicators(report: BinReport, direction=SEEK_NEGATIVE) -> OrderingIndicators:
    """Adjacent-bin ordering flags and the extreme-bin flag on one report.

    For seek-negative the extreme flag asks whether bin 1 attains the minimum
    estimate; for seek-positive whether the last bin attains the maximum.
    Ties count as attaining.
    """
    _check_direction(direction)
    est = [None if r.missing else r.estimate.point for r in report.rows]
    defined = [e for e in est if e is not None]
    if len(defined) < 2:
        raise MissingBins("need at least two bins with defined estimates")
    adj = []
    skipped = 0
    for a, b in zip(est, est[1:]):
        if a is None or b is None:
            adj.append(None)
            skipped += 1
        else:
            adj.append(bool(a <= b))
    if direction == SEEK_NEGATIVE:
        ext = None if est[0] is None else bool(est[0] <= min(defined))
    else:
        ext = None if est[-1] is None else bool(est[-1] >= max(defined))
    return OrderingIndicators(tuple(adj), ext, skipped)


def top_mask(pred, threshold, direction=SEEK_NEGATIVE):
    """Rows at or below ``threshold`` (seek-negative) or strictly above it (seek-positive)."""
    _check_direction(direction)
    pred = np.asarray(pred, dtype=float)
    return pred <= threshold if direction == SEEK_NEGATIVE else pred > threshold


def top_vs_complement_arrays(pred_train, pred_val, y_val, t_val, q, direction=SEEK_NEGATIVE):
    """Whether the top subgroup's validation estimate is on the sought side of its complement.

    Returns None when either side has an empty arm on the validation rows.
    """
    b = quantile_threshold(pred_train, q)
    g = top_mask(pred_val, b, direction)
    try:
        top = subgroup_cate_arrays(y_val, t_val, g)
        rest = subgroup_cate_arrays(y_val, t_val, ~g)
    except EmptySubgroupArm:
        return None
    if direction == SEEK_NEGATIVE:
        return bool(top.point <= rest.point)
    return bool(top.point >= rest.point)


def top_vs_complement(m, d, train_idx, val_idx, q, direction, outcome):
    from .metalearners import predict_rows

    val_idx = np.asarray(val_idx, dtype=np.int64)
    return top_vs_complement_arrays(
        predict_rows(m, d, train_idx), predict_rows(m, d, val_idx),
        d.outcome(outcome)[val_idx], d.treatment[val_idx], q, direction)


@dataclass
class FoldCalibration:
    """Calibration summary of one model on its training and validation rows."""
    binning: QuantileBinning
    train: BinReport
    val: BinReport
    r2c_train: float | None
    r2c_val: float | None
    ordering: OrderingIndicators | None
    b_q: dict = field(default_factory=dict)


def calibrate_fold(pred, y, t, train_pos, val_pos, grid, direction, bq_grid=()):
    """Bin on the training rows and score both folds against their own ATE estimates.

    ``pred``, ``y`` and ``t`` cover one population; ``train_pos`` and
    ``val_pos`` index its training and validation rows.
    """
    from .neyman import diff_in_means_arrays

    pred = np.asarray(pred, dtype=float)
    b = thresholds_from_predictions(pred[train_pos], grid)
    out = {}
    for name, pos in (("train", train_pos), ("val", val_pos)):
        pp, yy, tt = pred[pos], y[pos], t[pos]
        rep = bin_report(pp, yy, tt, assign_from_predictions(b, pp), b.n_bins)
        ate = diff_in_means_arrays(yy, tt).point
        try:
            score = r2c(rep, ate)
        except (DegenerateBaseline, AllBinsMissing):
            score = None
        out[name] = (rep, score)
    try:
        order = ordering_indicators(out["val"][0], direction)
    except MissingBins:
        order = None
    bq = {q: top_vs_complement_arrays(pred[train_pos], pred[val_pos], y[val_pos], t[val_pos],
                                      q, direction)
          for q in bq_grid}
    return FoldCalibration(b, out["train"][0], out["val"][0], out["train"][1], out["val"][1],
                           order, bq)
