"""Uniform fit/predict interface over the built-in base learner families."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Any, Mapping

import numpy as np

from ..errors import DegenerateDesign, ShapeMismatch
from . import forest, linear

FAMILIES = ("l1-linear", "l2-logistic", "random-forest")
MODEL_FORMAT_VERSION = 1

DEFAULTS = {
    "l1-linear": {"lam": 1e-3, "fit_intercept": True, "tol": 1e-7, "max_sweeps": 10_000},
    "l2-logistic": {"lam": 1e-3, "fit_intercept": True, "tol": 1e-7, "max_iter": 100},
    "random-forest": {
        "n_trees": 100,
        "min_leaf": 5,
        "max_depth": None,
        "max_features": "sqrt",
        "bootstrap": True,
        "max_bins": 64,
    },
}


@dataclass(frozen=True)
class BaseLearnerSpec:
    family: str
    params: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown learner family {self.family!r}")
        merged = dict(DEFAULTS[self.family])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise ValueError(f"unknown hyperparameters for {self.family}: {sorted(unknown)}")
        merged.update(self.params)
        if merged.get("lam", 0) < 0:
            raise ValueError("regularization strength must be >= 0")
        if self.family == "random-forest":
            if merged["n_trees"] < 1:
                raise ValueError("n_trees must be >= 1")
            if merged["min_leaf"] < 1:
                raise ValueError("min_leaf must be >= 1")
        object.__setattr__(self, "params", merged)

    def with_params(self, **kw):
        return replace(self, params={**self.params, **kw})

    def with_seed(self, seed):
        return replace(self, seed=int(seed))

    def to_dict(self):
        return {"family": self.family, "params": dict(self.params), "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(d["family"], dict(d.get("params", {})), int(d.get("seed", 0)))

    def label(self):
        keys = {"l1-linear": "lam", "l2-logistic": "lam", "random-forest": "min_leaf"}[self.family]
        return f"{self.family}({keys}={self.params[keys]})"


@dataclass
class FittedLearner:
    spec: BaseLearnerSpec
    state: dict
    n_features: int
    fingerprint: str
    info: dict = field(default_factory=dict)

    def predict(self, X):
        return predict(self, X)

    def to_dict(self):
        state = dict(self.state)
        if "trees" in state:
            state["trees"] = [t.to_dict() for t in state["trees"]]
        if "coef" in state:
            state["coef"] = np.asarray(state["coef"]).tolist()
        return {
            "format": "hte_cells.learner",
            "version": MODEL_FORMAT_VERSION,
            "family": self.spec.family,
            "spec": self.spec.to_dict(),
            "n_features": self.n_features,
            "fingerprint": self.fingerprint,
            "state": state,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != "hte_cells.learner" or d.get("version") != MODEL_FORMAT_VERSION:
            raise ValueError("not a version-1 learner file")
        state = dict(d["state"])
        if "trees" in state:
            state["trees"] = [forest.Tree.from_dict(t) for t in state["trees"]]
        if "coef" in state:
            state["coef"] = np.asarray(state["coef"], dtype=float)
        return cls(BaseLearnerSpec.from_dict(d["spec"]), state, int(d["n_features"]), d["fingerprint"])

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def fingerprint(spec, *arrays):
    h = hashlib.sha256(json.dumps(spec.to_dict(), sort_keys=True).encode())
    for a in arrays:
        if a is None:
            h.update(b"none")
        else:
            a = np.ascontiguousarray(a, dtype=float)
            h.update(str(a.shape).encode())
            h.update(a.tobytes())
    return h.hexdigest()


def fit(spec: BaseLearnerSpec, X, y, w=None, trace=False) -> FittedLearner:
    """Fit one base learner; binary targets are treated as reals in [0, 1]."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != len(y):
        raise ShapeMismatch(f"X has shape {X.shape}, y has length {len(y)}")
    if len(y) < 2:
        raise DegenerateDesign("need at least two rows to fit")
    if w is not None:
        w = np.asarray(w, dtype=float)
        if w.shape != y.shape:
            raise ShapeMismatch("weight vector length differs from y")
        if (w < 0).any():
            raise DegenerateDesign("weights must be nonnegative")
        if w.sum() <= 0:
            raise DegenerateDesign("all sample weights are zero")
    P = spec.params
    info = {}
    if spec.family == "l1-linear":
        b0, coef, sweeps, hist = linear.fit_lasso(
            X, y, w, P["lam"], P["fit_intercept"], P["tol"], P["max_sweeps"], trace)
        state = {"intercept": b0, "coef": coef}
        info = {"sweeps": sweeps, "objective": hist}
    elif spec.family == "l2-logistic":
        b0, coef, iters, hist = linear.fit_logistic(
            X, y, w, P["lam"], P["fit_intercept"], P["tol"], P["max_iter"], trace)
        state = {"intercept": b0, "coef": coef}
        info = {"iterations": iters, "objective": hist}
    else:
        trees = forest.fit_forest(
            X, y, w, P["n_trees"], P["min_leaf"], P["max_depth"], P["max_features"],
            P["bootstrap"], P["max_bins"], spec.seed)
        state = {"trees": trees}
    return FittedLearner(spec, state, X.shape[1], fingerprint(spec, X, y, w), info)


def predict(m: FittedLearner, X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != m.n_features:
        raise ShapeMismatch(f"expected {m.n_features} columns, got shape {X.shape}")
    fam = m.spec.family
    if fam == "l1-linear":
        return linear.predict_linear(m.state["intercept"], m.state["coef"], X)
    if fam == "l2-logistic":
        return linear.predict_logistic(m.state["intercept"], m.state["coef"], X)
    return forest.predict_forest(m.state["trees"], X)
