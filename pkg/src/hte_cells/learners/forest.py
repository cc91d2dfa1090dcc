"""Bagged CART regression trees with variance-reduction splits.

Trees are grown one depth level at a time: a single ``bincount`` builds the
(node, feature, bin) histograms of weight, weighted target sum and count for
every open node at once. Features are pre-binned on their distinct values
(at most ``max_bins`` quantile bins for many-valued columns), so binary
covariates are split exactly.
"""
from dataclasses import dataclass

import numpy as np

from .._rng import derive_rng


@dataclass
class Tree:
    feature: np.ndarray    # -1 marks a leaf
    threshold: np.ndarray  # go left when x <= threshold
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def apply(self, X):
        """Leaf index reached by each row of ``X``."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = self.feature[node] >= 0
        while active.any():
            r = rows[active]
            nd = node[r]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def predict(self, X):
        return self.value[self.apply(X)]

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value")}

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=float),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=float),
        )


def bin_features(X, max_bins=64):
    """Integer bin codes per column and the real-valued cut between bins b and b+1."""
    n, p = X.shape
    codes = np.empty((n, p), dtype=np.int64)
    cuts = []
    for j in range(p):
        col = X[:, j]
        uniq = np.unique(col)
        if len(uniq) > max_bins:
            edges = np.unique(np.quantile(col, np.linspace(0, 1, max_bins + 1)[1:-1], method="lower"))
            codes[:, j] = np.searchsorted(edges, col, side="left")
            cut = edges
        else:
            codes[:, j] = np.searchsorted(uniq, col)
            cut = (uniq[:-1] + uniq[1:]) / 2.0
        cuts.append(np.asarray(cut, dtype=float))
    return codes, cuts


def _resolve_mtry(max_features, p):
    if max_features in (None, "all"):
        return p
    if max_features == "sqrt":
        return max(1, int(np.ceil(np.sqrt(p))))
    if isinstance(max_features, float):
        return max(1, int(np.ceil(max_features * p)))
    return max(1, min(p, int(max_features)))


def grow_tree(codes, cuts, y, w, counts, rng, min_leaf=5, max_depth=None, max_features="sqrt"):
    """Grow one regression tree on pre-binned features.

    ``w`` carries the sample weights (bootstrap multiplicity times any user
    weights); ``counts`` the in-bag draw counts used for ``min_leaf``.
    """
    n, p = codes.shape
    nbins = max(2, max(len(c) + 1 for c in cuts))
    mtry = _resolve_mtry(max_features, p)
    keep = w > 0
    codes, y, w, counts = codes[keep], y[keep], w[keep], counts[keep]
    m = len(y)
    wy = w * y

    feature, threshold, left, right = [-1], [0.0], [-1], [-1]
    value = [float(wy.sum() / w.sum())]
    sample_node = np.zeros(m, dtype=np.int64)
    open_nodes = np.array([0])
    depth = 0
    flat_cols = np.arange(p) * nbins
    while len(open_nodes) and (max_depth is None or depth < max_depth):
        # local index of each sample's node among open nodes (-1 if settled)
        local = np.full(len(feature), -1, dtype=np.int64)
        local[open_nodes] = np.arange(len(open_nodes))
        sl = local[sample_node]
        live = sl >= 0
        if not live.any():
            break
        L = len(open_nodes)
        idx = (sl[live, None] * (p * nbins) + flat_cols[None, :] + codes[live]).ravel()
        size = L * p * nbins
        hw = np.bincount(idx, weights=np.repeat(w[live], p), minlength=size).reshape(L, p, nbins)
        hs = np.bincount(idx, weights=np.repeat(wy[live], p), minlength=size).reshape(L, p, nbins)
        hc = np.bincount(idx, weights=np.repeat(counts[live], p), minlength=size).reshape(L, p, nbins)
        cw, cs, cc = hw.cumsum(2), hs.cumsum(2), hc.cumsum(2)
        tw, ts, tc = cw[:, :, -1:], cs[:, :, -1:], cc[:, :, -1:]
        rw, rs, rc = tw - cw, ts - cs, tc - cc
        valid = (cc >= min_leaf) & (rc >= min_leaf) & (cw > 0) & (rw > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = cs * cs / cw + rs * rs / rw - ts * ts / tw
        gain = np.where(valid, gain, -np.inf)
        best_bin = gain.argmax(axis=2)
        best_gain = np.take_along_axis(gain, best_bin[:, :, None], 2)[:, :, 0]
        tol = 1e-12 * np.maximum(tw[:, 0, 0], 1.0)
        usable = best_gain > tol[:, None]

        # random feature order per node; look at the first mtry, and further
        # only when none of those admits a split
        rank = rng.random((L, p)).argsort(axis=1).argsort(axis=1)
        first_usable = np.where(usable, rank, p).min(axis=1)
        horizon = np.maximum(mtry - 1, first_usable)
        eligible = usable & (rank <= horizon[:, None])
        score = np.where(eligible, best_gain, -np.inf)
        best_f = score.argmax(axis=1)
        do_split = eligible.any(axis=1)

        new_open = []
        child_of = np.full((L, 2), -1, dtype=np.int64)
        for li in np.flatnonzero(do_split):
            node = open_nodes[li]
            f = best_f[li]
            b = best_bin[li, f]
            feature[node] = int(f)
            threshold[node] = float(cuts[f][b])
            lid = len(feature)
            rid = lid + 1
            left[node], right[node] = lid, rid
            lv = cs[li, f, b] / cw[li, f, b]
            rv = rs[li, f, b] / rw[li, f, b]
            for v in (lv, rv):
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                value.append(float(v))
            child_of[li] = (lid, rid)
            new_open.extend((lid, rid))
        moved = live & do_split[np.maximum(sl, 0)]
        if moved.any():
            li = sl[moved]
            f = best_f[li]
            go_left = codes[moved, f] <= best_bin[li, f]
            sample_node[moved] = np.where(go_left, child_of[li, 0], child_of[li, 1])
        open_nodes = np.array(new_open, dtype=np.int64)
        depth += 1
    return Tree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=float),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value, dtype=float),
    )


def fit_forest(X, y, w=None, n_trees=100, min_leaf=5, max_depth=None, max_features="sqrt",
               bootstrap=True, max_bins=64, seed=0):
    """Fit ``n_trees`` trees, tree ``t`` drawing from the stream ``(seed, "tree", t)``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    codes, cuts = bin_features(X, max_bins)
    trees = []
    for t in range(n_trees):
        rng = derive_rng(seed, "tree", t)
        if bootstrap:
            counts = np.bincount(rng.integers(0, n, n), minlength=n).astype(float)
        else:
            counts = np.ones(n)
        trees.append(grow_tree(codes, cuts, y, w * counts, counts, rng, min_leaf, max_depth,
                               max_features))
    return trees


def predict_forest(trees, X):
    X = np.asarray(X, dtype=float)
    return np.mean([t.predict(X) for t in trees], axis=0)
