"""Fixed-layout CSV and JSON writers for run reports.

Numbers are rounded only here, at serialization: three decimals for effect
sizes and standard deviations, two for t-statistics, four for p-values.
"""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .neyman import holm_bonferroni, holm_cutoffs, one_sided_p

EFFECT_DECIMALS = 3
T_DECIMALS = 2
P_DECIMALS = 4


def fmt(v, decimals):
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return ""
    return f"{v:.{decimals}f}"


def fmt_effect(v):
    return fmt(v, EFFECT_DECIMALS)


def fmt_t(v):
    return fmt(v, T_DECIMALS)


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if v is None else v for v in r])
    return buf.getvalue()


def _default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (set, frozenset)):
        return sorted(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def json_text(obj):
    return json.dumps(obj, sort_keys=True, indent=1, default=_default) + "\n"


def write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def mean_std(values):
    """Mean and sample std of the non-missing values, with the count used."""
    v = [x for x in values if x is not None]
    if not v:
        return None, None, 0
    std = float(np.std(v, ddof=1)) if len(v) > 1 else 0.0
    return float(np.mean(v)), std, len(v)


def ensemble_table(rows):
    """Per-q ensemble t-statistics (mean and std over folds) and top-subgroup overlap."""
    return csv_text(
        ["q", "t_mean", "t_std", "n_folds", "overlap_pct"],
        [[f"{r['q']:g}", fmt_t(r["t_mean"]), fmt_t(r["t_std"]), r["n"],
          fmt(r["overlap"], 0)] for r in rows])


CELL_HEADER = [
    "cell", "stab_mean",
    "train_events", "train_size", "train_cate", "train_std", "train_t",
    "test_events", "test_size", "test_cate", "test_std", "test_t",
    "val_t_mean", "val_t_std", "val_n",
]


def cells_table(rows):
    """Cell evaluation rows: events/size, CATE (std) and t on TRAIN and TEST, VAL mean t (std)."""
    out = []
    for r in rows:
        line = [r["cell"], fmt(r.get("stab"), 2)]
        for part in ("train", "test"):
            e = r.get(part)
            if e is None:
                line += ["", "", "", "", ""]
            else:
                line += [e["events"], e["size"], fmt_effect(e["point"]), fmt_effect(e["std"]),
                         fmt_t(e.get("t_stat"))]
        line += [fmt_t(r.get("val_t_mean")), fmt_t(r.get("val_t_std")), r.get("val_n", 0)]
        out.append(line)
    return csv_text(CELL_HEADER, out)


def holm_section(labels, tvals, direction, alpha=0.05):
    """Sorted one-sided p-values against Holm cutoffs, with rejection decisions."""
    side = "left" if direction == "neg" else "right"
    p = [one_sided_p(t, side) for t in tvals]
    reject = holm_bonferroni(p, alpha) if p else []
    order = np.argsort(p, kind="stable")
    cut = holm_cutoffs(len(p), alpha)
    rows = []
    for k, i in enumerate(order):
        rows.append([k + 1, labels[i], fmt_t(tvals[i]), fmt(p[i], P_DECIMALS),
                     fmt(cut[k], P_DECIMALS), int(bool(reject[i]))])
    return csv_text(["step", "cell", "t", "p_one_sided", "holm_cutoff", "rejected"], rows)
