"""Randomized-trial data container, CSV loading, and split/fold construction."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from ._rng import derive_seed
from .errors import (
    EmptyArm,
    MissingColumn,
    MissingTime,
    NonBinaryValue,
    StratumTooSmall,
)

STRATA = ((0, 0), (0, 1), (1, 0), (1, 1))


def _readonly(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Binary covariates, a treatment indicator and binary outcomes.

    Row identity is the integer position assigned at load; every subgroup
    downstream is an index array into these rows.

    ``aux`` holds raw numeric columns (e.g. an unthresholded age) that are
    not model features but can be re-binarized by a perturbation.
    """

    features: np.ndarray
    feature_names: tuple
    treatment: np.ndarray
    outcomes: Mapping[str, np.ndarray]
    enrollment_time: np.ndarray | None = None
    aux: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.features)
        if X.ndim != 2:
            raise ValueError("features must be a 2-d array")
        n, p = X.shape
        names = tuple(str(c) for c in self.feature_names)
        if len(names) != p or len(set(names)) != p:
            raise ValueError("feature_names must be unique and match the column count")
        bad = ~np.isin(X, (0, 1))
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise NonBinaryValue(names[c], int(r), X[r, c])
        t = np.asarray(self.treatment)
        if t.shape != (n,):
            raise ValueError("treatment length must equal the number of rows")
        if not np.isin(t, (0, 1)).all():
            r = int(np.flatnonzero(~np.isin(t, (0, 1)))[0])
            raise NonBinaryValue("treatment", r, t[r])
        if t.min(initial=1) == 1 or t.max(initial=0) == 0:
            raise EmptyArm("treatment vector must contain both 0 and 1")
        outs = {}
        for name, y in self.outcomes.items():
            y = np.asarray(y)
            if y.shape != (n,):
                raise ValueError(f"outcome {name!r} has length {y.shape}, expected {n}")
            if not np.isin(y, (0, 1)).all():
                r = int(np.flatnonzero(~np.isin(y, (0, 1)))[0])
                raise NonBinaryValue(name, r, y[r])
            outs[str(name)] = _readonly(y, np.int8)
        object.__setattr__(self, "features", _readonly(X, np.int8))
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "treatment", _readonly(t, np.int8))
        object.__setattr__(self, "outcomes", outs)
        if self.enrollment_time is not None:
            tm = np.asarray(self.enrollment_time, dtype=float)
            if tm.shape != (n,):
                raise ValueError("enrollment_time length must equal the number of rows")
            object.__setattr__(self, "enrollment_time", _readonly(tm, float))
        aux = {}
        for name, v in dict(self.aux).items():
            v = np.asarray(v, dtype=float)
            if v.shape != (n,):
                raise ValueError(f"aux column {name!r} has wrong length")
            aux[str(name)] = _readonly(v, float)
        object.__setattr__(self, "aux", aux)

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def p(self):
        return self.features.shape[1]

    def outcome(self, name):
        try:
            return self.outcomes[name]
        except KeyError:
            raise MissingColumn(f"unknown outcome {name!r}") from None

    def feature(self, name):
        try:
            return self.features[:, self.feature_names.index(name)]
        except ValueError:
            raise MissingColumn(f"unknown feature {name!r}") from None

    def with_feature(self, name, values, replaces=None):
        """Return a copy with one feature column replaced (or appended).

        ``replaces`` names the column to overwrite; the new column takes
        ``name`` in its place.
        """
        X = np.array(self.features)
        names = list(self.feature_names)
        target = replaces if replaces is not None else name
        values = np.asarray(values)
        if target in names:
            j = names.index(target)
            X[:, j] = values
            names[j] = name
        else:
            X = np.column_stack([X, values])
            names.append(name)
        return replace(self, features=X, feature_names=tuple(names))

    def strata(self, outcome, idx=None):
        """Map each (T, Y) stratum to the sorted row indices it contains."""
        idx = np.arange(self.n) if idx is None else np.sort(np.asarray(idx, dtype=np.int64))
        t = self.treatment[idx]
        y = self.outcome(outcome)[idx]
        return {s: idx[(t == s[0]) & (y == s[1])] for s in STRATA}


@dataclass
class Schema:
    treatment: str
    outcomes: Sequence[str]
    features: Sequence[str]
    time: str | None = None
    aux: Sequence[str] = ()
    fill: Mapping[str, float] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d):
        return cls(
            treatment=d["treatment"],
            outcomes=list(d["outcomes"]),
            features=list(d["features"]),
            time=d.get("time"),
            aux=list(d.get("aux", ())),
            fill=dict(d.get("fill", {})),
        )

    def to_dict(self):
        return {
            "treatment": self.treatment,
            "outcomes": list(self.outcomes),
            "features": list(self.features),
            "time": self.time,
            "aux": list(self.aux),
            "fill": dict(self.fill),
        }


def _binary_column(frame, col, fill):
    s = frame[col]
    if col in fill:
        s = s.fillna(fill[col])
    vals = pd.to_numeric(s, errors="coerce")
    bad = vals.isna() | ~vals.isin([0, 1])
    if bad.any():
        r = int(np.flatnonzero(bad.to_numpy())[0])
        raise NonBinaryValue(col, r, s.iloc[r])
    return vals.to_numpy(dtype=np.int8)


def load_csv(path, schema) -> Dataset:
    """Read a UTF-8 CSV with a header row into a validated :class:`Dataset`.

    Missing entries are rejected unless ``schema.fill`` gives a value for
    that column. Rows are reported 0-based, header excluded.
    """
    if isinstance(schema, Mapping):
        schema = Schema.from_dict(schema)
    if not schema.outcomes or not schema.features:
        raise MissingColumn("schema must name at least one outcome and one feature")
    frame = pd.read_csv(Path(path), encoding="utf-8", dtype=str, keep_default_na=True)
    frame.columns = [c.strip() for c in frame.columns]
    needed = [schema.treatment, *schema.outcomes, *schema.features, *schema.aux]
    if schema.time is not None:
        needed.append(schema.time)
    missing = [c for c in needed if c not in frame.columns]
    if missing:
        raise MissingColumn(f"columns not found in {path}: {missing}")

    t = _binary_column(frame, schema.treatment, schema.fill)
    if t.min() == t.max():
        raise EmptyArm(f"treatment column {schema.treatment!r} has a single arm")
    X = np.column_stack([_binary_column(frame, c, schema.fill) for c in schema.features])
    outcomes = {c: _binary_column(frame, c, schema.fill) for c in schema.outcomes}
    time = None
    if schema.time is not None:
        time = pd.to_numeric(frame[schema.time], errors="coerce").to_numpy(dtype=float)
    aux = {}
    for c in schema.aux:
        s = frame[c]
        if c in schema.fill:
            s = s.fillna(schema.fill[c])
        aux[c] = pd.to_numeric(s, errors="coerce").to_numpy(dtype=float)
    return Dataset(X, tuple(schema.features), t, outcomes, time, aux)


@dataclass(frozen=True)
class FoldAssignment:
    """Partition of ``indices`` into folds labelled 1..k."""

    indices: np.ndarray
    fold: np.ndarray
    k: int
    name: str = ""

    def members(self, f):
        return self.indices[self.fold == f]

    def pairs(self):
        """Yield ``(f, training_folds_idx, validation_fold_idx)`` for f = 1..k."""
        for f in range(1, self.k + 1):
            yield f, self.indices[self.fold != f], self.indices[self.fold == f]

    def to_dict(self):
        return {
            "name": self.name,
            "k": self.k,
            "indices": self.indices.tolist(),
            "fold": self.fold.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["indices"], dtype=np.int64),
                   np.asarray(d["fold"], dtype=np.int64), int(d["k"]), d.get("name", ""))


@dataclass(frozen=True)
class SplitPlan:
    test_indices: np.ndarray
    train_indices: np.ndarray
    cv_folds: tuple = ()
    seed: int = 0

    def to_dict(self):
        return {
            "seed": self.seed,
            "test_indices": self.test_indices.tolist(),
            "train_indices": self.train_indices.tolist(),
            "cv_folds": [f.to_dict() for f in self.cv_folds],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.asarray(d["test_indices"], dtype=np.int64),
            np.asarray(d["train_indices"], dtype=np.int64),
            tuple(FoldAssignment.from_dict(f) for f in d["cv_folds"]),
            int(d["seed"]),
        )

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def _allocate(sizes, fraction, total):
    """Per-stratum counts: half-even rounding, then shift toward ``total``.

    Adjustments go to the largest stratum first, moving on to the next
    largest only when a further unit would push a stratum more than one
    away from its exact proportional share.
    """
    exact = [s * fraction for s in sizes]
    counts = [int(round(e)) for e in exact]  # Python round is half-to-even
    order = sorted(range(len(sizes)), key=lambda i: (-sizes[i], i))
    diff = total - sum(counts)
    step = 1 if diff > 0 else -1
    while diff != 0:
        for i in order:
            c = counts[i] + step
            if 0 <= c <= sizes[i] and abs(c - exact[i]) <= 1 + 1e-9:
                counts[i] = c
                diff -= step
                break
        else:
            break
    return counts


def stratified_test_split(d: Dataset, outcome, test_fraction=0.2, seed=0) -> SplitPlan:
    """Hold out ``test_fraction`` of each (T, Y) stratum, without replacement.

    The overall test size is ``ceil(n * test_fraction)``.
    """
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    strata = d.strata(outcome)
    sizes = [len(strata[s]) for s in STRATA]
    total = math.ceil(d.n * test_fraction - 1e-9)
    counts = _allocate(sizes, test_fraction, total)
    for s, size, c in zip(STRATA, sizes, counts):
        if c > size:
            raise StratumTooSmall(f"stratum T={s[0]},Y={s[1]} has {size} rows, needs {c}")
    rng = np.random.default_rng(seed)
    test = [rng.choice(strata[s], size=c, replace=False) for s, c in zip(STRATA, counts)]
    test = np.sort(np.concatenate(test).astype(np.int64))
    train = np.setdiff1d(np.arange(d.n), test)
    return SplitPlan(test, train, (), int(seed))


def stratified_cv_folds(d: Dataset, outcome, k=4, seed=0, indices=None, name="") -> FoldAssignment:
    """Random k-fold assignment, balanced within each (T, Y) stratum.

    Members of each stratum are shuffled and dealt round-robin; the dealing
    position carries over between strata so total fold sizes differ by at
    most one as well.
    """
    idx = np.arange(d.n) if indices is None else np.sort(np.asarray(indices, dtype=np.int64))
    rng = np.random.default_rng(seed)
    fold = np.empty(len(idx), dtype=np.int64)
    pos = {r: i for i, r in enumerate(idx)}
    offset = 0
    for s, members in d.strata(outcome, idx).items():
        members = rng.permutation(members)
        labels = (np.arange(len(members)) + offset) % k + 1
        offset = (offset + len(members)) % k
        for r, lab in zip(members, labels):
            fold[pos[r]] = lab
    return FoldAssignment(idx, fold, k, name)


def time_folds(d: Dataset, k=4, indices=None, name="cv_time") -> FoldAssignment:
    """Contiguous enrollment-time blocks; remainder rows go to the earliest blocks."""
    idx = np.arange(d.n) if indices is None else np.sort(np.asarray(indices, dtype=np.int64))
    if d.enrollment_time is None:
        raise MissingTime("dataset has no enrollment_time column")
    tm = d.enrollment_time[idx]
    if np.isnan(tm).any():
        raise MissingTime("enrollment_time missing on some rows")
    order = np.lexsort((idx, tm))
    base, extra = divmod(len(idx), k)
    sizes = [base + (1 if f < extra else 0) for f in range(k)]
    labels = np.repeat(np.arange(1, k + 1), sizes)
    fold = np.empty(len(idx), dtype=np.int64)
    fold[order] = labels
    return FoldAssignment(idx, fold, k, name)


def make_split_plan(d: Dataset, outcome, test_fraction=0.2, n_cv=3, k=4, seed=0) -> SplitPlan:
    """Test split plus ``n_cv`` random stratified fold assignments of the train rows.

    The first assignment is ``cv_orig``; the others are ``cv_0``, ``cv_1``, ...
    """
    plan = stratified_test_split(d, outcome, test_fraction, derive_seed(seed, "test_split"))
    names = ["cv_orig"] + [f"cv_{i}" for i in range(n_cv - 1)]
    folds = tuple(
        stratified_cv_folds(d, outcome, k, derive_seed(seed, "cv", nm), plan.train_indices, nm)
        for nm in names
    )
    return SplitPlan(plan.test_indices, plan.train_indices, folds, int(seed))
