import numpy as np
import pytest

from hte_cells.dataset import Dataset


def expand_counts(events_treated, n_treated, events_control, n_control, p=2, seed=0):
    """Row-level trial matching published arm sizes and event counts."""
    rng = np.random.default_rng(seed)
    n = n_treated + n_control
    t = np.r_[np.ones(n_treated, int), np.zeros(n_control, int)]
    y = np.r_[np.arange(n_treated) < events_treated, np.arange(n_control) < events_control].astype(int)
    X = rng.integers(0, 2, size=(n, p))
    return Dataset(X, [f"f{j}" for j in range(p)], t, {"y": y})


def random_trial(n=400, p=6, seed=0, risk=(0.3, 0.4), time=True):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 2, size=(n, p))
    t = rng.permutation(np.arange(n) % 2)
    y = (rng.random(n) < np.where(t == 1, risk[0], risk[1])).astype(int)
    y2 = np.maximum(y, rng.random(n) < 0.05).astype(int)
    tm = rng.random(n) if time else None
    aux = {"age": rng.uniform(20, 90, n)}
    return Dataset(X, [f"f{j}" for j in range(p)], t, {"y": y, "y2": y2}, tm, aux)


@pytest.fixture
def trial():
    return random_trial()
