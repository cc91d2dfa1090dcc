"""Stable treatment-effect subgroup discovery for randomized trials.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 the run
finished but recorded degradation flags in its manifest.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import reports as rp
from .config import RunConfig, load_config
from .errors import ConfigError, DataError, HTECellsError
from .runner import STAGES, Runner
from .synthetic import SyntheticSpec, simulate

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DEGRADED = 0, 2, 3, 4


def _common(p):
    p.add_argument("--config", help="TOML or JSON run configuration")
    p.add_argument("--seed", type=int, help="root seed (overrides the config)")
    p.add_argument("--outcome", help="outcome column to analyse")
    p.add_argument("--direction", choices=("neg", "pos"),
                   help="seek a protective (neg) or harmful (pos) effect subgroup")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="worker count (recorded; work runs serially)")
    p.add_argument("--report-pvalues", action="store_true", default=None,
                   help="add one-sided p-values and Holm decisions for discovered cells")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="hte-cells", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*STAGES, "run"):
        _common(sub.add_parser(name, help=f"run the pipeline through the {name} stage"
                               if name != "run" else "run every stage"))
    sim = sub.add_parser("simulate", help="write a synthetic randomized trial to CSV")
    _common(sim)
    sim.add_argument("--n", type=int)
    sim.add_argument("--p", type=int)
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    for key in ("seed", "outcome", "direction", "out", "threads"):
        v = getattr(args, key, None)
        if v is not None:
            setattr(cfg, key, v)
    if args.report_pvalues:
        cfg.report_pvalues = True
    return cfg


def cmd_simulate(args, cfg):
    spec = dict(cfg.synthetic or {})
    if args.n is not None:
        spec["n"] = args.n
    if args.p is not None:
        spec["p"] = args.p
    if args.seed is not None:
        spec["seed"] = args.seed
    try:
        spec = SyntheticSpec.from_dict(spec)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    trial = simulate(spec)
    d = trial.data
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cols = {"treatment": d.treatment, **{n: d.outcome(n) for n in d.outcomes}}
    cols.update({n: d.features[:, j] for j, n in enumerate(d.feature_names)})
    header = list(cols) + ["enrollment_time"] + list(d.aux)
    lines = [",".join(header)]
    for i in range(d.n):
        vals = [str(int(cols[c][i])) for c in cols]
        vals.append(repr(float(d.enrollment_time[i])))
        vals += [repr(float(d.aux[a][i])) for a in d.aux]
        lines.append(",".join(vals))
    rp.write_text(out / "data.csv", "\n".join(lines) + "\n")
    rp.write_text(out / "truth.csv", rp.csv_text(
        ["row_index", "true_cate"], [[i, repr(float(v))] for i, v in enumerate(trial.true_cate)]))
    schema = {"treatment": "treatment", "outcomes": list(d.outcomes),
              "features": list(d.feature_names), "time": "enrollment_time", "aux": list(d.aux)}
    rp.write_text(out / "schema.json", rp.json_text(schema))
    rp.write_text(out / "synthetic.json", rp.json_text(spec.to_dict()))
    print(f"wrote {d.n} rows to {out / 'data.csv'}")
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "simulate":
            return cmd_simulate(args, cfg)
        runner = Runner(cfg)
        runner.ensure("evaluate" if args.command == "run" else args.command)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, HTECellsError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    done = [s for s in STAGES if runner.done(s)]
    print(json.dumps({"out": str(runner.out), "stages_done": done,
                      "test_access": runner.manifest["test_access"],
                      "flags": len(runner.flags)}))
    return EXIT_DEGRADED if runner.flags else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
