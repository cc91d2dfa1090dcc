"""Weighted lasso (cyclic coordinate descent) and L2-penalized logistic regression."""
import numpy as np
from scipy.special import expit

from ..errors import DegenerateDesign


def _weights(w, n):
    if w is None:
        return np.ones(n)
    w = np.asarray(w, dtype=float)
    if w.shape != (n,) or (w < 0).any() or not np.isfinite(w).all():
        raise DegenerateDesign("weights must be finite, nonnegative and one per row")
    if w.sum() <= 0:
        raise DegenerateDesign("all sample weights are zero")
    return w


def soft_threshold(x, gamma):
    if x > gamma:
        return x - gamma
    if x < -gamma:
        return x + gamma
    return 0.0


def lasso_objective(X, y, w, intercept, coef, lam):
    r = y - intercept - X @ coef
    return 0.5 * np.sum(w * r * r) / w.sum() + lam * np.abs(coef).sum()


def fit_lasso(X, y, w=None, lam=1e-3, fit_intercept=True, tol=1e-7, max_sweeps=10_000,
              trace=False):
    """Minimize ``sum(w r^2) / (2 sum w) + lam * |coef|_1`` by cyclic coordinate descent.

    Works on the weighted Gram matrix, so a sweep costs O(p^2) regardless of n.
    Stops once the largest coordinate change in a sweep is below ``tol``.

    Returns ``(intercept, coef, n_sweeps, objective_trace)``; the trace is
    empty unless ``trace`` is set.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    w = _weights(w, n)
    W = w.sum()
    if fit_intercept:
        xm = w @ X / W
        ym = w @ y / W
    else:
        xm = np.zeros(p)
        ym = 0.0
    Xc = X - xm
    yc = y - ym
    G = (Xc * w[:, None]).T @ Xc / W
    c = (Xc * w[:, None]).T @ yc / W
    diag = np.diag(G).copy()
    coef = np.zeros(p)
    history = []
    if trace:
        history.append(lasso_objective(Xc, yc, w, 0.0, coef, lam))
    Gl = G.tolist()
    cl = c.tolist()
    b = [0.0] * p
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        max_step = 0.0
        for j in range(p):
            if diag[j] <= 0.0:
                continue
            row = Gl[j]
            rho = cl[j] - sum(row[k] * b[k] for k in range(p)) + row[j] * b[j]
            new = soft_threshold(rho, lam) / row[j]
            step = abs(new - b[j])
            if step > max_step:
                max_step = step
            b[j] = new
        if trace:
            history.append(lasso_objective(Xc, yc, w, 0.0, np.array(b), lam))
        if max_step < tol:
            break
    coef = np.array(b)
    intercept = ym - xm @ coef if fit_intercept else 0.0
    return float(intercept), coef, sweeps, history


def logistic_loss(X, y, w, intercept, coef, lam):
    eta = intercept + X @ coef
    # log(1 + e^eta) - y * eta, computed stably
    ll = np.logaddexp(0.0, eta) - y * eta
    return np.sum(w * ll) / w.sum() + 0.5 * lam * coef @ coef


def fit_logistic(X, y, w=None, lam=1e-3, fit_intercept=True, tol=1e-7, max_iter=100,
                 trace=False):
    """Damped Newton for L2-penalized logistic regression with soft labels in [0, 1].

    Backtracking halves the step until the penalized loss decreases; the
    loop stops when the gradient norm falls below ``tol``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    w = _weights(w, n)
    W = w.sum()
    Z = np.column_stack([np.ones(n), X]) if fit_intercept else X
    pen = np.full(Z.shape[1], lam)
    if fit_intercept:
        pen[0] = 0.0
    theta = np.zeros(Z.shape[1])
    if fit_intercept:
        ybar = np.clip(w @ y / W, 1e-6, 1 - 1e-6)
        theta[0] = np.log(ybar / (1 - ybar))

    def loss(th):
        eta = Z @ th
        return np.sum(w * (np.logaddexp(0.0, eta) - y * eta)) / W + 0.5 * np.sum(pen * th * th)

    cur = loss(theta)
    history = [cur] if trace else []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        mu = expit(Z @ theta)
        grad = Z.T @ (w * (mu - y)) / W + pen * theta
        if np.linalg.norm(grad) < tol:
            break
        H = (Z * (w * mu * (1 - mu))[:, None]).T @ Z / W + np.diag(pen)
        H[np.diag_indices_from(H)] += 1e-10
        try:
            direction = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            direction = np.linalg.lstsq(H, grad, rcond=None)[0]
        step = 1.0
        while step > 1e-10:
            cand = theta - step * direction
            val = loss(cand)
            if val <= cur:
                break
            step *= 0.5
        else:
            break
        theta, cur = cand, val
        if trace:
            history.append(cur)
    if fit_intercept:
        return float(theta[0]), theta[1:].copy(), n_iter, history
    return 0.0, theta.copy(), n_iter, history


def predict_linear(intercept, coef, X):
    return intercept + np.asarray(X, dtype=float) @ coef


def predict_logistic(intercept, coef, X):
    eta = np.clip(intercept + np.asarray(X, dtype=float) @ coef, -30.0, 30.0)
    return expit(eta)
