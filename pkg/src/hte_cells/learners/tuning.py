"""Grid selection of base-learner hyperparameters by K-fold out-of-fold squared error."""
import numpy as np

from .base import BaseLearnerSpec, fit, predict

DEFAULT_LAMBDAS = (1e-4, 1e-3, 1e-2, 1e-1)
DEFAULT_MIN_LEAF = (5, 50)


def default_grid(family, seed=0):
    if family in ("l1-linear", "l2-logistic"):
        return [BaseLearnerSpec(family, {"lam": lam}, seed) for lam in DEFAULT_LAMBDAS]
    return [BaseLearnerSpec(family, {"n_trees": 100, "min_leaf": m}, seed) for m in DEFAULT_MIN_LEAF]


def cv_error(spec, X, y, folds, w=None, groups=None):
    """Pooled (weighted) out-of-fold squared error.

    ``folds`` labels each row with its fold. With ``groups`` a separate model
    is fit per group inside every training split, the way a T-learner fits
    one outcome model per arm.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    folds = np.asarray(folds)
    w = np.ones(len(y)) if w is None else np.asarray(w, dtype=float)
    groups = np.zeros(len(y), dtype=int) if groups is None else np.asarray(groups)
    num = 0.0
    den = 0.0
    for f in np.unique(folds):
        for g in np.unique(groups):
            tr = (folds != f) & (groups == g)
            va = (folds == f) & (groups == g)
            if not va.any() or tr.sum() < 2 or w[tr].sum() <= 0:
                continue
            m = fit(spec, X[tr], y[tr], w[tr])
            err = predict(m, X[va]) - y[va]
            num += np.sum(w[va] * err * err)
            den += w[va].sum()
    return num / den if den > 0 else np.inf


def tune(spec_grid, X, y, folds, w=None, groups=None, return_errors=False):
    """Return the grid member with the lowest out-of-fold squared error.

    Exact ties keep the earlier grid entry.
    """
    if not spec_grid:
        raise ValueError("empty hyperparameter grid")
    errors = [cv_error(s, X, y, folds, w, groups) for s in spec_grid]
    best = 0
    for i, e in enumerate(errors):
        if e < errors[best]:
            best = i
    if return_errors:
        return spec_grid[best], errors
    return spec_grid[best]
