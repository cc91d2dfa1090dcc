"""S-, T-, X- and R-learner CATE estimators over pluggable base learners.

Roles per strategy:

====  ===========================================
S     ``mu``  outcome model on (X, T)
T     ``mu``  one outcome model per arm
X     ``mu``  first stage per arm, ``tau`` second stage per arm
R     ``m``   outcome nuisance, ``tau`` effect model
====  ===========================================

Trials are completely randomized, so the propensity is the constant treated
share of the training rows.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
import pandas as pd

from .errors import DegenerateLearner, EmptyArm, ShapeMismatch
from .learners import BaseLearnerSpec, FittedLearner, default_grid, fit, predict, tune

STRATEGIES = ("S", "T", "X", "R", "plugin")
ROLES = {"S": ("mu",), "T": ("mu",), "X": ("mu", "tau"), "R": ("m", "tau"), "plugin": ()}
# roles whose regression target can leave [0, 1]
_REAL_TARGET_ROLES = {("X", "tau"), ("R", "tau")}


@dataclass(frozen=True)
class CateEstimatorSpec:
    name: str
    strategy: str
    base: Mapping[str, BaseLearnerSpec] = field(default_factory=dict)
    cross_fit: bool = False
    plugin_path: str | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        missing = [r for r in ROLES[self.strategy] if r not in self.base]
        if missing:
            raise ValueError(f"{self.name}: missing base learner roles {missing}")
        for role, spec in self.base.items():
            if (self.strategy, role) in _REAL_TARGET_ROLES and spec.family == "l2-logistic":
                raise ValueError(f"{self.name}: role {role!r} has real-valued targets; "
                                 "logistic regression cannot fit it")
        if self.strategy == "plugin" and not self.plugin_path:
            raise ValueError("plugin estimators need plugin_path")

    def to_dict(self):
        return {
            "name": self.name,
            "strategy": self.strategy,
            "base": {r: s.to_dict() for r, s in sorted(self.base.items())},
            "cross_fit": self.cross_fit,
            "plugin_path": self.plugin_path,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["name"],
            d["strategy"],
            {r: BaseLearnerSpec.from_dict(s) for r, s in d.get("base", {}).items()},
            bool(d.get("cross_fit", False)),
            d.get("plugin_path"),
        )


@dataclass
class CateModel:
    spec: CateEstimatorSpec
    components: dict
    train_indices: np.ndarray
    propensity: float
    n_features: int
    fingerprint: str
    collapsed: bool = False

    def predict(self, X, rows=None):
        return predict_cate(self, X, rows)


@dataclass
class EnsembleModel:
    members: list

    def __post_init__(self):
        if not self.members:
            raise ValueError("ensemble needs at least one member")
        first = self.members[0]
        for m in self.members[1:]:
            if m.n_features != first.n_features or not np.array_equal(m.train_indices, first.train_indices):
                raise ValueError("ensemble members must share training rows and feature width")

    @property
    def n_features(self):
        return self.members[0].n_features

    @property
    def train_indices(self):
        return self.members[0].train_indices

    def predict(self, X, rows=None):
        return predict_cate(self, X, rows)


def _with_t(X, t):
    return np.column_stack([X, np.asarray(t, dtype=float)])


def _check_finite(name, values):
    if not np.all(np.isfinite(values)):
        raise DegenerateLearner(f"{name}: base learner produced non-finite predictions")


def _fingerprint(spec, idx, outcome, parts):
    h = hashlib.sha256(json.dumps(spec.to_dict(), sort_keys=True).encode())
    h.update(outcome.encode())
    h.update(np.asarray(idx, dtype=np.int64).tobytes())
    for p in parts:
        h.update(p.encode())
    return h.hexdigest()


def load_plugin_predictions(path):
    """Read a plugin prediction CSV with columns ``row_index, cate_prediction``."""
    frame = pd.read_csv(path)
    if list(frame.columns[:2]) != ["row_index", "cate_prediction"]:
        raise ValueError("plugin file needs columns row_index,cate_prediction")
    return dict(zip(frame["row_index"].astype(int), frame["cate_prediction"].astype(float)))


def _r_nuisance(spec, X, y, seed_key, n_folds=4):
    """Outcome nuisance m(x); cross-fitted when ``cross_fit`` is set."""
    role = spec.base["m"]
    if not spec.cross_fit:
        m = fit(role, X, y)
        return m, predict(m, X)
    folds = np.arange(len(y)) % n_folds
    rng = np.random.default_rng(seed_key)
    folds = rng.permutation(folds)
    out = np.empty(len(y))
    for f in range(n_folds):
        tr = folds != f
        out[~tr] = predict(fit(role, X[tr], y[tr]), X[~tr])
    return fit(role, X, y), out


def fit_cate(spec: CateEstimatorSpec, d, train_idx, outcome) -> CateModel:
    """Fit one CATE estimator on ``train_idx`` rows of ``d``."""
    idx = np.sort(np.asarray(train_idx, dtype=np.int64))
    X = d.features[idx].astype(float)
    y = d.outcome(outcome)[idx].astype(float)
    t = d.treatment[idx].astype(int)
    treated = t == 1
    if treated.all() or not treated.any():
        raise EmptyArm(f"{spec.name}: training rows must contain both arms")
    e = float(treated.mean())
    comps = {}
    if spec.strategy == "S":
        comps["mu"] = fit(spec.base["mu"], _with_t(X, t), y)
    elif spec.strategy in ("T", "X"):
        comps["mu1"] = fit(spec.base["mu"], X[treated], y[treated])
        comps["mu0"] = fit(spec.base["mu"], X[~treated], y[~treated])
        if spec.strategy == "X":
            d1 = y[treated] - predict(comps["mu0"], X[treated])
            d0 = predict(comps["mu1"], X[~treated]) - y[~treated]
            _check_finite(spec.name, d1)
            _check_finite(spec.name, d0)
            comps["tau1"] = fit(spec.base["tau"], X[treated], d1)
            comps["tau0"] = fit(spec.base["tau"], X[~treated], d0)
    elif spec.strategy == "R":
        m, m_hat = _r_nuisance(spec, X, y, int(idx.sum()) % (2**32))
        _check_finite(spec.name, m_hat)
        comps["m"] = m
        y_res = y - m_hat
        t_res = t - e
        comps["tau"] = fit(spec.base["tau"], X, y_res / t_res, w=t_res**2)
    else:
        comps["plugin"] = load_plugin_predictions(spec.plugin_path)
    parts = [c.fingerprint for k, c in sorted(comps.items()) if isinstance(c, FittedLearner)]
    model = CateModel(spec, comps, idx, e, d.p, _fingerprint(spec, idx, outcome, parts))
    if spec.strategy == "plugin":
        train_pred = predict_cate(model, X, rows=idx)
    else:
        train_pred = predict_cate(model, X)
    _check_finite(spec.name, train_pred)
    model.collapsed = bool(np.ptp(train_pred) == 0.0)
    return model


def predict_cate(m, X, rows=None):
    """Predicted CATE per row. Plugin models look predictions up by ``rows``."""
    if isinstance(m, EnsembleModel):
        preds = np.array([predict_cate(k, X, rows) for k in m.members])
        return preds.mean(axis=0)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != m.n_features:
        raise ShapeMismatch(f"expected {m.n_features} feature columns, got {X.shape}")
    c = m.components
    s = m.spec.strategy
    if s == "S":
        n = X.shape[0]
        return predict(c["mu"], _with_t(X, np.ones(n))) - predict(c["mu"], _with_t(X, np.zeros(n)))
    if s == "T":
        return predict(c["mu1"], X) - predict(c["mu0"], X)
    if s == "X":
        g = m.propensity
        return g * predict(c["tau0"], X) + (1 - g) * predict(c["tau1"], X)
    if s == "R":
        return predict(c["tau"], X)
    if rows is None:
        raise ValueError("plugin models need row indices")
    table = c["plugin"]
    try:
        return np.array([table[int(r)] for r in rows], dtype=float)
    except KeyError as exc:
        raise ShapeMismatch(f"plugin file has no prediction for row {exc.args[0]}") from None


def predict_rows(m, d, idx):
    """Predicted CATE for dataset rows ``idx``."""
    idx = np.asarray(idx, dtype=np.int64)
    return predict_cate(m, d.features[idx], rows=idx)


def builtin_estimators(seed=0):
    """The built-in estimator line-up, named ``<strategy>_<base learners>``.

    Hyperparameters are the family defaults until tuned.
    """
    def spec(fam, role):
        params = {"n_trees": 100, "min_leaf": 5} if fam == "random-forest" else {}
        return BaseLearnerSpec(fam, params, seed)

    lasso, logit, rf = "l1-linear", "l2-logistic", "random-forest"
    out = [
        CateEstimatorSpec("s_rf", "S", {"mu": spec(rf, "mu")}),
        CateEstimatorSpec("t_lasso", "T", {"mu": spec(lasso, "mu")}),
        CateEstimatorSpec("t_logistic", "T", {"mu": spec(logit, "mu")}),
        CateEstimatorSpec("t_rf", "T", {"mu": spec(rf, "mu")}),
        CateEstimatorSpec("x_lasso", "X", {"mu": spec(lasso, "mu"), "tau": spec(lasso, "tau")}),
        CateEstimatorSpec("x_logistic", "X", {"mu": spec(logit, "mu"), "tau": spec(lasso, "tau")}),
        CateEstimatorSpec("x_rf", "X", {"mu": spec(rf, "mu"), "tau": spec(lasso, "tau")}),
        CateEstimatorSpec("r_lassolasso", "R", {"m": spec(lasso, "m"), "tau": spec(lasso, "tau")}),
        CateEstimatorSpec("r_rflasso", "R", {"m": spec(rf, "m"), "tau": spec(lasso, "tau")}),
        CateEstimatorSpec("r_rfrf", "R", {"m": spec(rf, "m"), "tau": spec(rf, "tau")}),
    ]
    return {s.name: s for s in out}


def _grid_for(role_spec, grids):
    grid = (grids or {}).get(role_spec.family)
    if grid is None:
        grid = default_grid(role_spec.family, role_spec.seed)
    # keep the role's seed and any non-tuned settings
    out = []
    for g in grid:
        g = g if isinstance(g, BaseLearnerSpec) else BaseLearnerSpec(role_spec.family, dict(g))
        out.append(BaseLearnerSpec(role_spec.family, {**role_spec.params, **g.params}, role_spec.seed))
    return out


def tune_cate(spec: CateEstimatorSpec, d, train_idx, outcome, folds, grids=None):
    """Tune every base-learner role of ``spec`` by out-of-fold squared error.

    ``folds`` labels the rows of ``train_idx`` (sorted) with their fold. The
    effect roles are tuned on the pseudo-outcomes produced by the already
    tuned first-stage roles fitted on all of ``train_idx``.
    """
    if spec.strategy == "plugin":
        return spec
    idx = np.sort(np.asarray(train_idx, dtype=np.int64))
    X = d.features[idx].astype(float)
    y = d.outcome(outcome)[idx].astype(float)
    t = d.treatment[idx].astype(int)
    folds = np.asarray(folds)
    base = dict(spec.base)
    if spec.strategy == "S":
        base["mu"] = tune(_grid_for(base["mu"], grids), _with_t(X, t), y, folds)
    elif spec.strategy in ("T", "X"):
        base["mu"] = tune(_grid_for(base["mu"], grids), X, y, folds, groups=t)
        if spec.strategy == "X":
            tr = t == 1
            mu1 = fit(base["mu"], X[tr], y[tr])
            mu0 = fit(base["mu"], X[~tr], y[~tr])
            dd = np.where(tr, y - predict(mu0, X), predict(mu1, X) - y)
            base["tau"] = tune(_grid_for(base["tau"], grids), X, dd, folds, groups=t)
    elif spec.strategy == "R":
        base["m"] = tune(_grid_for(base["m"], grids), X, y, folds)
        m_hat = predict(fit(base["m"], X, y), X)
        t_res = t - t.mean()
        base["tau"] = tune(_grid_for(base["tau"], grids), X, (y - m_hat) / t_res, folds,
                           w=t_res**2)
    return replace(spec, base=base)
