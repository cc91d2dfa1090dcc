"""Perturbation sweeps, mean top-subgroup t-statistics, ranking, screening and ensembling.

Every perturbation re-runs the same estimator line-up over four
training/validation fold pairs of the training rows. For each fit, the
quantile-based top subgroup is formed from the training-fold predictions and
tested against the validation-fold ATE with the subgroup t-statistic. The
per-perturbation average of those t-statistics ranks the estimators.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .calibration import (SEEK_NEGATIVE, SEEK_POSITIVE, FoldCalibration, calibrate_fold,
                          quantile_threshold, top_mask)
from .dataset import Dataset, FoldAssignment, SplitPlan, time_folds
from .errors import EmptyScreen, HTECellsError, MissingColumn
from .metalearners import CateEstimatorSpec, fit_cate, predict_rows, tune_cate
from .neyman import tstat_arrays

log = logging.getLogger(__name__)

KINDS = ("random-cv", "time-cv", "feature-rethreshold", "outcome-swap")
DEFAULT_Q_GRID = {SEEK_NEGATIVE: (0.1, 0.2, 0.3, 0.4, 0.5),
                  SEEK_POSITIVE: (0.5, 0.6, 0.7, 0.8, 0.9)}
CALIBRATION_GRID = (0.2, 0.4, 0.6, 0.8)


@dataclass(frozen=True)
class PerturbationSpec:
    """One variation of the fold split, a feature definition or the outcome.

    ``folds`` names the random fold assignment to use (``random-cv``); the
    other kinds reuse the ``cv_orig`` folds except ``time-cv``, which builds
    enrollment-time blocks. ``tune`` marks the single perturbation whose
    folds are used to tune hyperparameters.
    """
    name: str
    kind: str
    folds: str | None = None
    source: str | None = None
    threshold: float | None = None
    replaces: str | None = None
    alt_outcome: str | None = None
    tune: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if self.kind == "feature-rethreshold" and (self.source is None or self.threshold is None):
            raise ValueError("feature-rethreshold needs source and threshold")
        if self.kind == "outcome-swap" and not self.alt_outcome:
            raise ValueError("outcome-swap needs alt_outcome")
        if self.tune and self.kind != "random-cv":
            raise ValueError("only a random-cv perturbation can carry tuning")

    def to_dict(self):
        return {k: v for k, v in self.__dict__.items() if v is not None}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def default_perturbations(plan: SplitPlan):
    """``cv_orig`` (tuned) plus the other random fold assignments of ``plan``."""
    out = []
    for f in plan.cv_folds:
        out.append(PerturbationSpec(f.name, "random-cv", folds=f.name, tune=f.name == "cv_orig"))
    return out


def spec_hash(spec: CateEstimatorSpec):
    return hashlib.sha256(json.dumps(spec.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def _fold_by_name(plan, name):
    for f in plan.cv_folds:
        if f.name == name:
            return f
    raise MissingColumn(f"split plan has no fold assignment {name!r}")


def apply_perturbation(d: Dataset, plan: SplitPlan, p: PerturbationSpec, outcome):
    """Return ``(dataset, folds, outcome)`` as seen under perturbation ``p``."""
    orig = _fold_by_name(plan, "cv_orig") if plan.cv_folds else None
    if p.kind == "random-cv":
        return d, _fold_by_name(plan, p.folds or p.name), outcome
    if p.kind == "time-cv":
        k = orig.k if orig is not None else 4
        return d, time_folds(d, k, plan.train_indices, p.name), outcome
    if p.kind == "feature-rethreshold":
        if p.source not in d.aux:
            raise MissingColumn(f"no raw column {p.source!r} to re-threshold")
        raw = np.asarray(d.aux[p.source], dtype=float)
        new = (raw > p.threshold).astype(np.int8)
        target = p.replaces or p.source
        return d.with_feature(target, new, replaces=target), orig, outcome
    d.outcome(p.alt_outcome)
    return d, orig, p.alt_outcome


@dataclass
class PerturbationResult:
    name: str
    outcome: str
    direction: str
    q_grid: tuple
    folds: FoldAssignment
    specs: dict
    pred: dict = field(default_factory=dict)          # (est, fold) -> predictions on folds.indices
    t: dict = field(default_factory=dict)             # (est, fold, q) -> t or None
    calibration: dict = field(default_factory=dict)   # (est, fold) -> FoldCalibration
    collapsed: set = field(default_factory=set)
    failures: dict = field(default_factory=dict)
    models: dict = field(default_factory=dict)         # (est, fold) -> CateModel, if kept

    def mean_t(self, est):
        """Mean t-statistic over non-missing (fold, q) cells and the count summed."""
        vals = [v for (e, _, _), v in self.t.items() if e == est and v is not None]
        if not vals:
            return None, 0
        return float(np.mean(vals)), len(vals)

    def spec_hashes(self):
        return {n: spec_hash(s) for n, s in self.specs.items()}


def top_tstats(pred_train, pred_val, y_val, t_val, q_grid, direction):
    """Validation t-statistic of the quantile-based top subgroup for each q."""
    out = {}
    for q in q_grid:
        b = quantile_threshold(pred_train, q)
        g = top_mask(pred_val, b, direction)
        try:
            out[q] = tstat_arrays(y_val, t_val, g).t_stat
        except HTECellsError:
            out[q] = None
    return out


def tune_specs(d, plan, specs, outcome, grids=None):
    """Tune every spec on the ``cv_orig`` folds of the training rows."""
    folds = _fold_by_name(plan, "cv_orig")
    tuned = {}
    for s in specs:
        log.info("tuning %s", s.name)
        tuned[s.name] = tune_cate(s, d, folds.indices, outcome, folds.fold, grids)
    return tuned


def run_perturbation(d: Dataset, plan: SplitPlan, p: PerturbationSpec, specs, outcome,
                     direction=SEEK_NEGATIVE, q_grid=None, calibration_grid=None,
                     keep_models=False) -> PerturbationResult:
    """Fit every estimator on each training/validation pair and record top-subgroup t-stats.

    ``specs`` is a mapping name -> spec carrying the hyperparameters to use.
    Any failure of a single (estimator, fold) fit is recorded as missing.
    """
    q_grid = tuple(q_grid or DEFAULT_Q_GRID[direction])
    dd, folds, out_name = apply_perturbation(d, plan, p, outcome)
    res = PerturbationResult(p.name, out_name, direction, q_grid, folds, dict(specs))
    y_all = dd.outcome(out_name).astype(float)
    t_all = dd.treatment.astype(int)
    for name, spec in specs.items():
        for f, tr, va in folds.pairs():
            try:
                m = fit_cate(spec, dd, tr, out_name)
                pred = predict_rows(m, dd, folds.indices)
            except HTECellsError as exc:
                res.failures[(name, f)] = f"{type(exc).__name__}: {exc}"
                res.collapsed.add((name, f))
                for q in q_grid:
                    res.t[(name, f, q)] = None
                continue
            if keep_models:
                res.models[(name, f)] = m
            res.pred[(name, f)] = pred
            tri = np.flatnonzero(folds.fold != f)
            vai = np.flatnonzero(folds.fold == f)
            if m.collapsed:
                res.collapsed.add((name, f))
                ts = {q: None for q in q_grid}
            else:
                ts = top_tstats(pred[tri], pred[vai], y_all[va], t_all[va], q_grid, direction)
            for q, v in ts.items():
                res.t[(name, f, q)] = v
            if calibration_grid is not None:
                calibrate_result(res, dd, calibration_grid, keys=[(name, f)])
    return res


def calibrate_result(res: PerturbationResult, d: Dataset, grid=CALIBRATION_GRID, keys=None):
    """Fill ``res.calibration`` from the stored predictions of each (estimator, fold)."""
    y = d.outcome(res.outcome).astype(float)[res.folds.indices]
    t = d.treatment.astype(int)[res.folds.indices]
    for key in (keys or sorted(res.pred)):
        name, f = key
        if key in res.collapsed:
            continue
        tri = np.flatnonzero(res.folds.fold != f)
        vai = np.flatnonzero(res.folds.fold == f)
        try:
            res.calibration[key] = calibrate_fold(res.pred[key], y, t, tri, vai, grid,
                                                  res.direction, res.q_grid)
        except HTECellsError as exc:
            res.failures[(name, f, "calibration")] = str(exc)
    return res


@dataclass
class RankTable:
    direction: str
    perturbations: tuple
    estimators: tuple
    tbar: dict          # (est, pert) -> mean t or None
    counts: dict        # (est, pert) -> number of t-stats averaged
    ranks: dict         # (est, pert) -> rank 1..n
    spec_hashes: dict   # (est, pert) -> spec hash

    def worst_rank(self, est):
        return max(self.ranks[(est, p)] for p in self.perturbations)

    def display_order(self):
        return sorted(self.estimators, key=lambda e: (self.worst_rank(e), e))

    def to_csv(self, decimals=2):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["estimator", *self.perturbations, "worst_rank"])
        for e in self.display_order():
            row = [e]
            for p in self.perturbations:
                v = self.tbar[(e, p)]
                row.append("" if v is None else f"{v:.{decimals}f}")
            w.writerow([*row, self.worst_rank(e)])
        return buf.getvalue()

    def to_dict(self):
        return {
            "direction": self.direction,
            "perturbations": list(self.perturbations),
            "estimators": list(self.estimators),
            "rows": [
                {"estimator": e, "perturbation": p, "tbar": self.tbar[(e, p)],
                 "count": self.counts[(e, p)], "rank": self.ranks[(e, p)],
                 "spec": self.spec_hashes.get((e, p))}
                for e in self.estimators for p in self.perturbations
            ],
        }


def _rank(values: dict, direction):
    """Rank names by value; missing last, ties by name."""
    def key(name):
        v = values[name]
        if v is None:
            return (1, 0.0, name)
        return (0, v if direction == SEEK_NEGATIVE else -v, name)

    return {name: i + 1 for i, name in enumerate(sorted(values, key=key))}


def build_rank_table(results, direction=SEEK_NEGATIVE) -> RankTable:
    perts = tuple(r.name for r in results)
    ests = tuple(sorted({n for r in results for n in r.specs}))
    tbar, counts, ranks, hashes = {}, {}, {}, {}
    for r in results:
        vals = {}
        h = r.spec_hashes()
        for e in ests:
            v, c = r.mean_t(e) if e in r.specs else (None, 0)
            tbar[(e, r.name)] = v
            counts[(e, r.name)] = c
            vals[e] = v
            if e in h:
                hashes[(e, r.name)] = h[e]
        for e, k in _rank(vals, direction).items():
            ranks[(e, r.name)] = k
    return RankTable(direction, perts, ests, tbar, counts, ranks, hashes)


def rank_and_screen(rt: RankTable, top_k=10):
    """Estimators ranked within ``top_k`` with a defined mean t in every perturbation."""
    out = set()
    for e in rt.estimators:
        if all(rt.tbar[(e, p)] is not None and rt.ranks[(e, p)] <= top_k
               for p in rt.perturbations):
            out.add(e)
    if not out:
        raise EmptyScreen(f"no estimator ranks within the top {top_k} everywhere")
    return out


@dataclass
class EnsembleFold:
    """Equal-weight ensemble predictions for one (fold assignment, fold) pair."""
    split: str
    fold: int
    indices: np.ndarray     # all training rows
    pred: np.ndarray        # ensemble prediction per row of ``indices``
    train_mask: np.ndarray  # rows of the training folds
    members: tuple


def build_ensemble(screened, results) -> list:
    """Average screened members' predictions per (random split, fold).

    Members are reused from the perturbation fits; only random-cv results on
    the primary outcome with unmodified features should be passed in.
    """
    if not screened:
        raise ValueError("ensemble needs at least one screened estimator")
    members = tuple(sorted(screened))
    out = []
    for r in results:
        for f in range(1, r.folds.k + 1):
            preds = [r.pred[(e, f)] for e in members if (e, f) in r.pred]
            if len(preds) != len(members):
                log.warning("ensemble %s fold %d lacks members; skipped", r.name, f)
                continue
            out.append(EnsembleFold(r.name, f, r.folds.indices, np.mean(preds, axis=0),
                                    r.folds.fold != f, members))
    return out


def ensemble_top_groups(ens, q, direction):
    """Top subgroup (row indices over all training rows) for each ensemble fold."""
    groups = []
    for e in ens:
        b = quantile_threshold(e.pred[e.train_mask], q)
        groups.append(e.indices[top_mask(e.pred, b, direction)])
    return groups


def ensemble_tstats(ens, d, outcome, q, direction):
    """Validation-fold t-statistic of each ensemble's top subgroup."""
    y = d.outcome(outcome).astype(float)
    t = d.treatment.astype(int)
    out = []
    for e in ens:
        va = e.indices[~e.train_mask]
        ts = top_tstats(e.pred[e.train_mask], e.pred[~e.train_mask], y[va], t[va], (q,), direction)
        out.append(ts[q])
    return out


def subgroup_overlap(groups):
    """Mean pairwise overlap in percent, normalising by the pair's mean size."""
    if len(groups) < 2:
        raise ValueError("need at least two groups")
    vals = []
    for a, b in combinations(groups, 2):
        a, b = set(np.asarray(a).tolist()), set(np.asarray(b).tolist())
        denom = (len(a) + len(b)) / 2
        vals.append(len(a & b) / denom if denom else 1.0)
    return 100.0 * float(np.mean(vals))
