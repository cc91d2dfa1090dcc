"""Interpretable covers of a top subgroup by conjunctions of binary literals.

A *cell* is a conjunction ``f1 = v1 & f2 = v2 & ...`` over binary features.
Cell A is a *sub-cell* of cell B when A's literals include all of B's, so A's
region lies inside B's. Cell membership over a population is held as packed
bitsets, so TP/FP counts for every cell reduce to popcounts of AND-ed words.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .learners import BaseLearnerSpec, fit


@dataclass(frozen=True, order=True)
class Cell:
    literals: tuple  # sorted ((feature_name, value), ...)

    def __post_init__(self):
        lits = tuple(sorted((str(f), int(v)) for f, v in self.literals))
        names = [f for f, _ in lits]
        if len(set(names)) != len(names):
            raise ValueError("a cell may constrain each feature only once")
        if any(v not in (0, 1) for _, v in lits):
            raise ValueError("literal values must be 0 or 1")
        object.__setattr__(self, "literals", lits)

    @classmethod
    def of(cls, **lits):
        return cls(tuple(lits.items()))

    def __len__(self):
        return len(self.literals)

    def __str__(self):
        return " & ".join(f"{f}={v}" for f, v in self.literals) or "(all)"

    def is_subcell_of(self, other: "Cell"):
        """True when every literal of ``other`` also appears here (reflexive)."""
        return set(other.literals) <= set(self.literals)

    def mask(self, d, idx=None):
        idx = np.arange(d.n) if idx is None else np.asarray(idx, dtype=np.int64)
        out = np.ones(len(idx), dtype=bool)
        for f, v in self.literals:
            out &= d.feature(f)[idx] == v
        return out

    def to_dict(self):
        return {f: v for f, v in self.literals}


# ---------------------------------------------------------------- features

def _normalise(v):
    s = np.abs(v).sum()
    return v / s if s > 0 else np.zeros_like(v)


def feature_importance(X, top, lam=1e-3):
    """Difference-of-means and membership-classifier scores, each with unit L1 norm.

    ``top`` is a boolean membership vector over the rows of ``X``.
    """
    X = np.asarray(X, dtype=float)
    top = np.asarray(top, dtype=bool)
    if top.all() or not top.any():
        raise ValueError("top subgroup and its complement must both be nonempty")
    diff = X[top].mean(axis=0) - X[~top].mean(axis=0)
    constant = np.ptp(X, axis=0) == 0
    diff[constant] = 0.0
    clf = np.zeros(X.shape[1])
    keep = ~constant
    if keep.any():
        model = fit(BaseLearnerSpec("l2-logistic", {"lam": lam}), X[:, keep], top.astype(float))
        clf[keep] = model.state["coef"]
    return _normalise(diff), _normalise(clf)


def select_features(diff, clf, k=8, cap=10):
    """Union of the top-``k`` features under either score, trimmed to ``cap``.

    Trimming drops the features with the smallest summed absolute score.
    Returns sorted column positions.
    """
    diff, clf = np.abs(np.asarray(diff)), np.abs(np.asarray(clf))
    p = len(diff)
    if k > p:
        raise ValueError("k exceeds the number of features")

    def top_k(s):
        return set(sorted(range(p), key=lambda j: (-s[j], j))[:k])

    chosen = top_k(diff) | top_k(clf)
    if len(chosen) > cap:
        total = diff + clf
        chosen = set(sorted(chosen, key=lambda j: (-total[j], j))[:cap])
    return sorted(chosen)


# ------------------------------------------------------------- enumeration

def pack_rows(mask):
    """Pack a boolean row vector into little-endian uint64 words."""
    mask = np.asarray(mask, dtype=bool)
    pad = (-len(mask)) % 64
    bits = np.packbits(np.concatenate([mask, np.zeros(pad, dtype=bool)]), bitorder="little")
    return bits.view(np.uint64)


def popcount(words):
    return np.bitwise_count(words).sum(axis=-1, dtype=np.int64)


@dataclass
class CellLattice:
    """Every cell with at most ``m`` literals over selected columns, as bitsets.

    ``literal_mask`` encodes each cell's literal set as an integer with bit
    ``2*j + v`` for literal (column ``j`` of the selection, value ``v``).
    """
    features: tuple
    cells: list
    bits: np.ndarray
    literal_mask: np.ndarray
    n_rows: int

    def counts(self, top, residual):
        """TP and FP of every cell on the residual rows."""
        top = np.asarray(top, dtype=bool)
        residual = np.asarray(residual, dtype=bool)
        tp = popcount(self.bits & pack_rows(top & residual))
        fp = popcount(self.bits & pack_rows(~top & residual))
        return tp, fp

    def members(self, i):
        return np.unpackbits(self.bits[i].view(np.uint8), bitorder="little",
                             count=self.n_rows).astype(bool)


def enumerate_cells(X, names, m=3) -> CellLattice:
    """Build the lattice of cells with 1..m literals over binary columns of ``X``.

    Bitsets are grown level by level: a cell of size k+1 is a size-k cell
    AND-ed with one literal on a later column.
    """
    X = np.asarray(X)
    n, p = X.shape
    if m < 1 or p == 0:
        raise ValueError("need m >= 1 and at least one feature")
    if p > 31:
        raise ValueError("at most 31 features fit the int64 literal masks")
    lit_bits = np.stack([pack_rows(X[:, j] == v) for j in range(p) for v in (0, 1)])
    cells, bits, masks = [], [], []
    frontier = []  # (last column, literal tuple, bits, mask)
    for j in range(p):
        for v in (0, 1):
            frontier.append((j, ((j, v),), lit_bits[2 * j + v], 1 << (2 * j + v)))
    for _ in range(m):
        nxt = []
        for last, lits, b, mk in frontier:
            cells.append(lits)
            bits.append(b)
            masks.append(mk)
            if len(lits) < m:
                for j in range(last + 1, p):
                    for v in (0, 1):
                        nxt.append((j, lits + ((j, v),), b & lit_bits[2 * j + v],
                                    mk | (1 << (2 * j + v))))
        frontier = nxt
        if not frontier:
            break
    named = [Cell(tuple((names[j], v) for j, v in lits)) for lits in cells]
    return CellLattice(tuple(names), named, np.array(bits), np.array(masks, dtype=np.int64), n)


# ------------------------------------------------------------- cell search

def prune_subcells(masks):
    """Positions of cells that are not proper sub-cells of another listed cell."""
    a = np.asarray(masks, dtype=np.int64)
    # general[j, i]: cell j's literals are a proper subset of cell i's
    general = ((a[:, None] & a[None, :]) == a[:, None]) & (a[:, None] != a[None, :])
    return np.flatnonzero(~general.any(axis=0))


def step_candidates(tp, fp, masks, top_size, band=0.05):
    """Positions eligible for the next cover cell; empty when the search stops.

    Candidates have TP - FP within ``band * top_size`` of the best (floored
    at zero) and at least one true positive. Candidates that are sub-cells of
    another candidate are dropped. The search stops once no cell has
    TP - FP > 0.
    """
    tp = np.asarray(tp)
    delta = tp - np.asarray(fp)
    if len(delta) == 0 or delta.max() <= 0:
        return np.zeros(0, dtype=np.int64)
    cut = max(0.0, delta.max() - band * top_size)
    cand = np.flatnonzero((delta >= cut) & (tp > 0))
    return cand[prune_subcells(np.asarray(masks)[cand])]


def cell_search_step(tp, fp, masks, top_size, rng, band=0.05):
    """Draw the next cover cell uniformly from the candidates, or None to stop."""
    cand = step_candidates(tp, fp, masks, top_size, band)
    if len(cand) == 0:
        return None
    return int(cand[rng.integers(len(cand))])


@dataclass
class CoverRun:
    cells: list
    context: dict = field(default_factory=dict)
    seed: int | None = None
    residual_sizes: list = field(default_factory=list)

    def to_dict(self):
        return {"cells": [c.to_dict() for c in self.cells], "context": self.context,
                "seed": self.seed, "residual_sizes": self.residual_sizes}


def cell_search(lattice: CellLattice, top, rng, max_iter=3, band=0.05, context=None,
                seed=None) -> CoverRun:
    """Greedy randomized cover of ``top`` by up to ``max_iter`` cells.

    Each chosen cell's members leave the residual population before the next
    step, so later cells are scored only on rows not yet covered.
    """
    top = np.asarray(top, dtype=bool)
    residual = np.ones(lattice.n_rows, dtype=bool)
    run = CoverRun([], dict(context or {}), seed)
    top_size = int(top.sum())
    if top_size == 0:
        return run
    for _ in range(max_iter):
        run.residual_sizes.append(int(residual.sum()))
        tp, fp = lattice.counts(top, residual)
        i = cell_search_step(tp, fp, lattice.literal_mask, top_size, rng, band)
        if i is None:
            break
        run.cells.append(lattice.cells[i])
        residual &= ~lattice.members(i)
    return run


# --------------------------------------------------------------- stability

def stab_scores(runs, sizes):
    """Stability score of every cell appearing in ``runs``.

    For each run, a cell collects the size ratio |C'|/|C| of every cover cell
    C' that is a sub-cell of it (itself included); the total is averaged over
    runs. ``sizes`` maps cells to their population counts.
    """
    if not runs:
        raise ValueError("need at least one run")
    found = sorted({c for r in runs for c in r.cells})
    out = {}
    for c in found:
        total = 0.0
        for r in runs:
            for c2 in r.cells:
                if c2.is_subcell_of(c):
                    total += sizes[c2] / sizes[c]
        out[c] = total / len(runs)
    return out


@dataclass
class StabTable:
    rows: list            # dicts: cell, per_q {q: stab}, mean, frequency, mean_rank
    grid: tuple
    threshold: float = 1 / 3

    def head(self):
        return self.rows[0] if self.rows else None

    def stable_cells(self):
        return [r["cell"] for r in self.rows if r["mean"] >= self.threshold]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["cell", *[f"stab_q{q:g}" for q in self.grid], "stab_mean",
                    "frequency", "mean_rank", "above_threshold"])
        for r in self.rows:
            w.writerow([str(r["cell"]), *[f"{100 * r['per_q'][q]:.0f}" for q in self.grid],
                        f"{100 * r['mean']:.0f}", f"{r['frequency']:.3f}",
                        f"{r['mean_rank']:.2f}", int(r["mean"] >= self.threshold)])
        return buf.getvalue()


def stabilized_cell_search(runs_by_q: dict, sizes, threshold=1 / 3) -> StabTable:
    """Aggregate cover runs per q into a table sorted by mean stability."""
    grid = tuple(sorted(runs_by_q))
    per_q = {q: stab_scores(runs_by_q[q], sizes) if runs_by_q[q] else {} for q in grid}
    cells = sorted({c for s in per_q.values() for c in s})
    all_runs = [r for q in grid for r in runs_by_q[q]]
    rows = []
    for c in cells:
        scores = {q: per_q[q].get(c, 0.0) for q in grid}
        hits = [r.cells.index(c) + 1 for r in all_runs if c in r.cells]
        rows.append({
            "cell": c,
            "per_q": scores,
            "mean": float(np.mean(list(scores.values()))),
            "frequency": len(hits) / len(all_runs) if all_runs else 0.0,
            "mean_rank": float(np.mean(hits)) if hits else float("nan"),
        })
    rows.sort(key=lambda r: (-r["mean"], str(r["cell"])))
    return StabTable(rows, grid, threshold)


def cell_overlap_matrix(cells, d, idx=None):
    """Pairwise member-intersection counts; the diagonal holds cell sizes."""
    M = np.array([c.mask(d, idx) for c in cells], dtype=np.int64).reshape(len(cells), -1)
    return M @ M.T


def covers_to_json(runs_by_q):
    return json.dumps({f"{q:g}": [r.to_dict() for r in runs] for q, runs in
                       sorted(runs_by_q.items())}, sort_keys=True, indent=1)
