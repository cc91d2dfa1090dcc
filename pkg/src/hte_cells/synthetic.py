"""Synthetic completely randomized trials with planted effect cells.

Features are independent Bernoulli draws. Each arm has a baseline outcome
risk; a row inside a planted cell gets that cell's effect added to its
CATE. A negative effect raises the control-arm risk, a positive one raises
the treated-arm risk, so planted effects never push a risk below zero when
baselines are small.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._rng import derive_rng
from .dataset import Dataset
from .errors import InvalidRisk


@dataclass(frozen=True)
class SyntheticSpec:
    n: int = 8000
    p: int = 16
    marginals: object = 0.5              # scalar or length-p sequence
    planted: tuple = ()                  # ((literal dict, effect), ...)
    risk_treated: float = 0.014
    risk_control: float = 0.030
    treated_fraction: float = 0.5
    seed: int = 0
    raw_columns: tuple = ()              # feature positions that get a raw "<name>_raw" column
    alt_extra_risk: float = 0.0          # extra event risk folded into the alternate outcome
    feature_prefix: str = "x"

    def feature_names(self):
        return tuple(f"{self.feature_prefix}{j}" for j in range(self.p))

    def to_dict(self):
        d = dict(self.__dict__)
        d["marginals"] = np.broadcast_to(np.asarray(self.marginals, float), (self.p,)).tolist()
        d["planted"] = [[dict(c), float(e)] for c, e in self.planted]
        d["raw_columns"] = list(self.raw_columns)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["planted"] = tuple((dict(c), float(e)) for c, e in d.get("planted", ()))
        d["raw_columns"] = tuple(d.get("raw_columns", ()))
        return cls(**d)


def _check_prob(name, v):
    v = np.asarray(v, dtype=float)
    if ((v < 0) | (v > 1)).any() or not np.isfinite(v).all():
        raise InvalidRisk(f"{name} must lie in [0, 1]")


@dataclass
class SyntheticTrial:
    data: Dataset
    true_cate: np.ndarray
    risk_treated: np.ndarray
    risk_control: np.ndarray
    cell_members: list = field(default_factory=list)


def simulate(spec: SyntheticSpec) -> SyntheticTrial:
    """Draw one trial; returns the dataset and the true per-row CATE."""
    names = spec.feature_names()
    marg = np.broadcast_to(np.asarray(spec.marginals, dtype=float), (spec.p,))
    _check_prob("marginals", marg)
    _check_prob("baseline risks", [spec.risk_treated, spec.risk_control])
    _check_prob("alt_extra_risk", spec.alt_extra_risk)
    if not 0 < spec.treated_fraction < 1:
        raise InvalidRisk("treated_fraction must lie in (0, 1)")
    n = spec.n
    rng_x = derive_rng(spec.seed, "features")
    aux = {}
    X = np.empty((n, spec.p), dtype=np.int8)
    for j in range(spec.p):
        if j in spec.raw_columns:
            raw = rng_x.uniform(0, 100, n)
            X[:, j] = raw > 100 * (1 - marg[j])
            aux[f"{names[j]}_raw"] = raw
        else:
            X[:, j] = rng_x.random(n) < marg[j]
    r1 = np.full(n, spec.risk_treated)
    r0 = np.full(n, spec.risk_control)
    members = []
    for lits, effect in spec.planted:
        inside = np.ones(n, dtype=bool)
        for f, v in dict(lits).items():
            inside &= X[:, names.index(f)] == int(v)
        members.append(inside)
        if effect < 0:
            r0[inside] -= effect
        else:
            r1[inside] += effect
    _check_prob("arm risks after planted effects", np.concatenate([r0, r1]))
    rng_t = derive_rng(spec.seed, "treatment")
    n_treated = int(round(spec.treated_fraction * n))
    t = np.zeros(n, dtype=np.int8)
    t[rng_t.permutation(n)[:n_treated]] = 1
    rng_y = derive_rng(spec.seed, "outcomes")
    u = rng_y.random(n)
    y = (u < np.where(t == 1, r1, r0)).astype(np.int8)
    extra = rng_y.random(n) < spec.alt_extra_risk
    y_alt = (y.astype(bool) | extra).astype(np.int8)
    time = derive_rng(spec.seed, "time").uniform(0, 1, n)
    d = Dataset(X, names, t, {"y": y, "y_alt": y_alt}, time, aux)
    return SyntheticTrial(d, r1 - r0, r1, r0, members)
