"""End-to-end orchestration with resumable stages and a run manifest.

Stages run in order ``split -> tune -> fit -> calibrate -> rank -> cellsearch
-> evaluate``; asking for a stage runs any missing predecessor first. Every
stage persists its state under ``<out>/state`` and its reports under
``<out>/reports``, and the manifest records which stages are complete. The
held-out test rows are read only by ``evaluate``, which increments the
manifest's ``test_access`` counter.
"""
from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path

import numpy as np

from . import cellsearch as cs
from . import reports as rp
from ._rng import derive_seed
from .calibration import SEEK_NEGATIVE, restricted_r2c
from .config import RunConfig
from .dataset import FoldAssignment, SplitPlan, load_csv, make_split_plan
from .errors import EmptyScreen, HTECellsError
from .metalearners import CateEstimatorSpec
from .neyman import diff_in_means_arrays, tstat_arrays
from .pipeline import (PerturbationResult, apply_perturbation, build_ensemble, build_rank_table,
                       calibrate_result, ensemble_top_groups, ensemble_tstats, rank_and_screen,
                       run_perturbation, spec_hash, subgroup_overlap, tune_specs)
from .synthetic import SyntheticSpec, simulate

log = logging.getLogger(__name__)

STAGES = ("split", "tune", "fit", "calibrate", "rank", "cellsearch", "evaluate")
MANIFEST_FORMAT = "hte_cells.manifest"


def _config_identity(cfg: RunConfig):
    d = cfg.to_dict()
    for k in ("out", "threads"):
        d.pop(k, None)
    return d


class Runner:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg.validate()
        self.out = Path(cfg.out)
        self.state_dir = self.out / "state"
        self.report_dir = self.out / "reports"
        self.data, self.data_fingerprint = self._load_data()
        self.manifest = self._load_manifest()

    # -- data and manifest ------------------------------------------------
    def _load_data(self):
        cfg = self.cfg
        if cfg.synthetic is not None:
            spec = SyntheticSpec.from_dict(cfg.synthetic)
            d = simulate(spec).data
            fp = hashlib.sha256(json.dumps(spec.to_dict(), sort_keys=True).encode()).hexdigest()
        else:
            d = load_csv(cfg.input, cfg.schema)
            fp = hashlib.sha256(Path(cfg.input).read_bytes()).hexdigest()
        d.outcome(cfg.outcome)
        return d, fp

    def _fresh_manifest(self):
        cfg = self.cfg
        return {
            "format": MANIFEST_FORMAT,
            "version": 1,
            "config": _config_identity(cfg),
            "data_fingerprint": self.data_fingerprint,
            "seeds": {
                "root": cfg.seed,
                "test_split": derive_seed(cfg.seed, "test_split"),
                "cv": {n: derive_seed(cfg.seed, "cv", n) for n in
                       ["cv_orig"] + [f"cv_{i}" for i in range(cfg.n_cv - 1)]},
            },
            "stages": {},
            "test_access": 0,
            "flags": [],
        }

    def _load_manifest(self):
        path = self.out / "manifest.json"
        fresh = self._fresh_manifest()
        if path.exists():
            m = json.loads(path.read_text())
            same = (m.get("config") == fresh["config"]
                    and m.get("data_fingerprint") == fresh["data_fingerprint"])
            if same:
                return m
            log.info("config or data changed; starting a fresh manifest")
        return fresh

    def save_manifest(self):
        rp.write_text(self.out / "manifest.json", rp.json_text(self.manifest))

    def flag(self, stage, message):
        self.manifest["flags"].append({"stage": stage, "message": message})

    @property
    def flags(self):
        return self.manifest["flags"]

    def done(self, stage):
        return self.manifest["stages"].get(stage, {}).get("status") == "done"

    def ensure(self, stage):
        """Run ``stage`` (and any missing predecessors) unless already complete."""
        i = STAGES.index(stage)
        for s in STAGES[:i]:
            if not self.done(s):
                self._run_stage(s)
        if not self.done(stage):
            self._run_stage(stage)
        return self

    def run_all(self):
        return self.ensure(STAGES[-1])

    def _run_stage(self, stage):
        log.info("stage %s", stage)
        # clear flags left by an earlier attempt of this stage
        self.manifest["flags"] = [f for f in self.flags if f["stage"] != stage]
        info = getattr(self, f"_stage_{stage}")() or {}
        self.manifest["stages"][stage] = {"status": "done", **info}
        self.save_manifest()

    # -- persistence helpers ----------------------------------------------
    def _write_state(self, name, obj):
        rp.write_text(self.state_dir / name, rp.json_text(obj))

    def _read_state(self, name):
        return json.loads((self.state_dir / name).read_text())

    def plan(self) -> SplitPlan:
        return SplitPlan.from_dict(self._read_state("split.json"))

    def tuned_specs(self):
        return {n: CateEstimatorSpec.from_dict(s) for n, s in self._read_state("specs.json").items()}

    def load_result(self, pname) -> PerturbationResult:
        meta = self._read_state(f"fit_{pname}.json")
        preds = np.load(self.state_dir / f"fit_{pname}.npy")
        folds = FoldAssignment.from_dict(meta["folds"])
        specs = {n: CateEstimatorSpec.from_dict(s) for n, s in meta["specs"].items()}
        res = PerturbationResult(pname, meta["outcome"], meta["direction"], tuple(meta["q_grid"]),
                                 folds, specs)
        names = meta["estimators"]
        for i, n in enumerate(names):
            for f in range(1, folds.k + 1):
                row = preds[i, f - 1]
                if not np.isnan(row).all():
                    res.pred[(n, f)] = row
        for n, f, q, t in meta["t"]:
            res.t[(n, f, q)] = t
        res.collapsed = {tuple(x) for x in meta["collapsed"]}
        res.failures = {tuple(k): v for k, v in meta["failures"]}
        return res

    def _save_result(self, res: PerturbationResult):
        names = sorted(res.specs)
        arr = np.full((len(names), res.folds.k, len(res.folds.indices)), np.nan)
        for i, n in enumerate(names):
            for f in range(1, res.folds.k + 1):
                if (n, f) in res.pred:
                    arr[i, f - 1] = res.pred[(n, f)]
        self.state_dir.mkdir(parents=True, exist_ok=True)
        np.save(self.state_dir / f"fit_{res.name}.npy", arr)
        self._write_state(f"fit_{res.name}.json", {
            "estimators": names,
            "outcome": res.outcome,
            "direction": res.direction,
            "q_grid": list(res.q_grid),
            "folds": res.folds.to_dict(),
            "specs": {n: s.to_dict() for n, s in sorted(res.specs.items())},
            "spec_hashes": res.spec_hashes(),
            "t": [[n, f, q, t] for (n, f, q), t in sorted(res.t.items())],
            "collapsed": sorted(list(x) for x in res.collapsed),
            "failures": [[list(k), v] for k, v in sorted(res.failures.items(), key=lambda kv: str(kv[0]))],
        })

    def results(self):
        return [self.load_result(p.name) for p in self.cfg.perturbation_specs()]

    # -- stages -------------------------------------------------------------
    def _stage_split(self):
        c = self.cfg
        plan = make_split_plan(self.data, c.outcome, c.test_fraction, c.n_cv, c.k, c.seed)
        self._write_state("split.json", plan.to_dict())
        return {"n_train": len(plan.train_indices), "n_test": len(plan.test_indices)}

    def _stage_tune(self):
        c = self.cfg
        specs = c.estimator_specs()
        if c.tune:
            tuned = tune_specs(self.data, self.plan(), specs, c.outcome, c.grids)
        else:
            tuned = {s.name: s for s in specs}
        self._write_state("specs.json", {n: s.to_dict() for n, s in sorted(tuned.items())})
        return {"spec_hashes": {n: spec_hash(s) for n, s in sorted(tuned.items())}}

    def _stage_fit(self):
        c = self.cfg
        plan, specs = self.plan(), self.tuned_specs()
        info = {}
        for p in c.perturbation_specs():
            try:
                res = run_perturbation(self.data, plan, p, specs, c.outcome, c.direction,
                                       c.resolved_q_grid())
            except HTECellsError as exc:
                self.flag("fit", f"perturbation {p.name} not applicable: {exc}")
                continue
            for key, msg in sorted(res.failures.items(), key=lambda kv: str(kv[0])):
                self.flag("fit", f"{p.name} {key}: {msg}")
            self._save_result(res)
            missing = sum(v is None for v in res.t.values())
            info[p.name] = {"t_cells": len(res.t), "missing": missing,
                            "collapsed": sorted(list(x) for x in res.collapsed)}
        return {"perturbations": info}

    def _available_results(self):
        out = []
        for p in self.cfg.perturbation_specs():
            if (self.state_dir / f"fit_{p.name}.json").exists():
                out.append((p, self.load_result(p.name)))
        return out

    def _stage_calibrate(self):
        c = self.cfg
        plan = self.plan()
        r2_rows, bin_rows, ind = [], [], {}
        K = len(c.calibration_grid) + 1
        restrict = [0, 1] if c.direction == SEEK_NEGATIVE else [K - 2, K - 1]
        for p, res in self._available_results():
            dd, _, _ = apply_perturbation(self.data, plan, p, c.outcome)
            calibrate_result(res, dd, tuple(c.calibration_grid))
            y = dd.outcome(res.outcome)[res.folds.indices]
            t = dd.treatment[res.folds.indices]
            for (n, f), fc in sorted(res.calibration.items()):
                vals = [n, p.name, f, rp.fmt(fc.r2c_train, 4), rp.fmt(fc.r2c_val, 4)]
                for part, rep, pos in (("train", fc.train, res.folds.fold != f),
                                       ("val", fc.val, res.folds.fold == f)):
                    ate = diff_in_means_arrays(y[pos], t[pos]).point
                    try:
                        vals.append(rp.fmt(restricted_r2c(rep, ate, restrict), 4))
                    except HTECellsError:
                        vals.append("")
                    for row in rep.to_rows():
                        bin_rows.append([n, p.name, f, part, row["bin"], row["size"],
                                         rp.fmt(row["model_mean"], 5), rp.fmt(row["model_std"], 5),
                                         rp.fmt(row["neyman"], 5), rp.fmt(row["neyman_std"], 5)])
                r2_rows.append(vals)
                if p.kind == "random-cv":
                    acc = ind.setdefault(n, {"adj": [], "ext": [], "bq": {}, "r2t": [], "r2v": []})
                    if fc.ordering is not None:
                        acc["adj"].append(fc.ordering.adjacent)
                        acc["ext"].append(fc.ordering.extreme)
                    for q, b in fc.b_q.items():
                        acc["bq"].setdefault(q, []).append(b)
                    acc["r2t"].append(fc.r2c_train)
                    acc["r2v"].append(fc.r2c_val)
        rp.write_text(self.report_dir / "fig2_r2c.csv", rp.csv_text(
            ["estimator", "perturbation", "fold", "r2c_train", "r2c_val",
             "restricted_r2c_train", "restricted_r2c_val"], r2_rows))
        rp.write_text(self.report_dir / "fig3_bins.csv", rp.csv_text(
            ["estimator", "perturbation", "fold", "set", "bin", "size", "model_mean",
             "model_std", "neyman", "neyman_std"], bin_rows))
        q_grid = c.resolved_q_grid()
        header = ["estimator"] + [f"A_{j}_{j + 1}" for j in range(1, K)] + [
            "A_extreme"] + [f"B_q{q:g}" for q in q_grid] + ["r2c_train_mean", "r2c_val_mean"]
        rows = []
        for n, acc in sorted(ind.items()):
            line = [n]
            for j in range(K - 1):
                line.append(rp.fmt(rp.mean_std([a[j] for a in acc["adj"]])[0], 2))
            line.append(rp.fmt(rp.mean_std(acc["ext"])[0], 2))
            for q in q_grid:
                line.append(rp.fmt(rp.mean_std(acc["bq"].get(q, []))[0], 2))
            line += [rp.fmt(rp.mean_std(acc["r2t"])[0], 3), rp.fmt(rp.mean_std(acc["r2v"])[0], 3)]
            rows.append(line)
        rp.write_text(self.report_dir / "table2_indicators.csv", rp.csv_text(header, rows))
        return {"models_calibrated": len(r2_rows)}

    def _stage_rank(self):
        c = self.cfg
        avail = self._available_results()
        results = [r for _, r in avail]
        rt = build_rank_table(results, c.direction)
        rp.write_text(self.report_dir / "table2_rank.csv", rt.to_csv())
        rp.write_text(self.report_dir / "rank_table.json", rp.json_text(rt.to_dict()))
        try:
            screened = rank_and_screen(rt, c.top_k)
        except EmptyScreen as exc:
            self.flag("rank", str(exc))
            screened = set()
        random_cv = [r for p, r in avail if p.kind == "random-cv"]
        ens = build_ensemble(screened, random_cv) if screened else []
        rows = []
        for q in c.resolved_q_grid():
            if not ens:
                break
            m, s, k = rp.mean_std(ensemble_tstats(ens, self.data, c.outcome, q, c.direction))
            groups = ensemble_top_groups(ens, q, c.direction)
            rows.append({"q": q, "t_mean": m, "t_std": s, "n": k,
                         "overlap": subgroup_overlap(groups) if len(groups) > 1 else None})
        rp.write_text(self.report_dir / "table3_ensemble.csv", rp.ensemble_table(rows))
        self.state_dir.mkdir(parents=True, exist_ok=True)
        np.save(self.state_dir / "ensemble.npy",
                np.array([e.pred for e in ens]) if ens else np.zeros((0, 0)))
        self._write_state("ensemble.json", {
            "screened": sorted(screened),
            "folds": [{"split": e.split, "fold": e.fold, "indices": e.indices,
                       "train_mask": e.train_mask.astype(int)} for e in ens],
        })
        return {"screened": sorted(screened), "ensembles": len(ens)}

    def ensembles(self):
        meta = self._read_state("ensemble.json")
        preds = np.load(self.state_dir / "ensemble.npy")
        from .pipeline import EnsembleFold
        return [EnsembleFold(f["split"], f["fold"], np.asarray(f["indices"], dtype=np.int64), preds[i],
                             np.asarray(f["train_mask"], dtype=bool), tuple(meta["screened"]))
                for i, f in enumerate(meta["folds"])]

    def _stage_cellsearch(self):
        c, cc = self.cfg, self.cfg.cellsearch
        ens = self.ensembles()
        d = self.data
        train = self.plan().train_indices
        X = d.features[train]
        runs = {q: [] for q in c.cellsearch_q()}
        for q in runs:
            for e, g in zip(ens, ensemble_top_groups(ens, q, c.direction)):
                top = np.isin(train, g)
                ctx = {"split": e.split, "fold": e.fold, "q": q}
                try:
                    diff, clf = cs.feature_importance(X, top)
                except ValueError as exc:
                    self.flag("cellsearch", f"{ctx}: {exc}")
                    continue
                k = min(cc.k_features, d.p)
                sel = cs.select_features(diff, clf, k, cc.max_features)
                lattice = cs.enumerate_cells(X[:, sel], [d.feature_names[j] for j in sel], cc.m)
                for r in range(cc.repetitions):
                    seed = derive_seed(c.seed, "cellsearch", f"{q:g}", e.split, e.fold, r)
                    run = cs.cell_search(lattice, top, np.random.default_rng(seed), cc.max_iter,
                                         cc.band, {**ctx, "repetition": r,
                                                   "features": [d.feature_names[j] for j in sel]},
                                         seed)
                    runs[q].append(run)
        found = sorted({cell for rs in runs.values() for r in rs for cell in r.cells})
        sizes = {cell: int(cell.mask(d, train).sum()) for cell in found}
        if any(runs.values()):
            table = cs.stabilized_cell_search(runs, sizes, cc.threshold)
        else:
            table = cs.StabTable([], tuple(sorted(runs)), cc.threshold)
        rp.write_text(self.report_dir / "table8_stab.csv", table.to_csv())
        rp.write_text(self.report_dir / "covers.json", cs.covers_to_json(runs))
        self._write_state("stab.json", {
            "threshold": cc.threshold,
            "rows": [{"cell": r["cell"].to_dict(), "mean": r["mean"],
                      "per_q": {f"{q:g}": v for q, v in r["per_q"].items()}} for r in table.rows],
        })
        return {"runs": sum(len(v) for v in runs.values()), "cells": len(table.rows),
                "stable": len(table.stable_cells())}

    def stab_rows(self):
        meta = self._read_state("stab.json")
        return [(cs.Cell(tuple(r["cell"].items())), r["mean"]) for r in meta["rows"]], meta["threshold"]

    def _stage_evaluate(self):
        c = self.cfg
        d = self.data
        plan = self.plan()
        rows, thr = self.stab_rows()
        stable = [(cell, s) for cell, s in rows if s >= thr]
        ens = self.ensembles()
        y = d.outcome(c.outcome).astype(float)
        t = d.treatment.astype(int)
        # the only read of held-out outcomes in the whole run
        self.manifest["test_access"] = int(self.manifest.get("test_access", 0)) + 1
        test = plan.test_indices
        y_test, t_test = y[test], t[test]
        train = plan.train_indices

        def est(idx_y, idx_t, mask):
            try:
                return tstat_arrays(idx_y, idx_t, mask).to_dict()
            except HTECellsError:
                return None

        out = []
        all_row = {"cell": "All", "stab": None,
                   "train": diff_in_means_arrays(y[train], t[train]).to_dict(),
                   "test": diff_in_means_arrays(y_test, t_test).to_dict(), "val_n": 0}
        out.append(all_row)
        for cell, s in stable:
            vals = []
            for e in ens:
                va = e.indices[~e.train_mask]
                r = est(y[va], t[va], cell.mask(d, va))
                vals.append(None if r is None else r["t_stat"])
            m, sd, k = rp.mean_std(vals)
            out.append({"cell": str(cell), "stab": s,
                        "train": est(y[train], t[train], cell.mask(d, train)),
                        "test": est(y_test, t_test, cell.mask(d, test)),
                        "val_t_mean": m, "val_t_std": sd, "val_n": k})
        rp.write_text(self.report_dir / "table45_cells.csv", rp.cells_table(out))
        self._write_state("evaluation.json", {"rows": out})
        if c.report_pvalues:
            tested = [(r["cell"], r["test"]["t_stat"]) for r in out[1:]
                      if r["test"] is not None and r["test"]["t_stat"] is not None]
            rp.write_text(self.report_dir / "holm.csv", rp.holm_section(
                [a for a, _ in tested], [b for _, b in tested], c.direction))
        return {"cells_evaluated": len(stable)}

    # -- convenience --------------------------------------------------------
    def evaluation(self):
        return self._read_state("evaluation.json")["rows"]


def run_pipeline(cfg: RunConfig, until="evaluate") -> Runner:
    """Run every stage up to ``until`` and return the runner (state, manifest, flags)."""
    return Runner(cfg).ensure(until)
