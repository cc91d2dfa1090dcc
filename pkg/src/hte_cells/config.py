"""Run configuration: TOML or JSON files, with command-line overrides."""
from __future__ import annotations

import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .calibration import SEEK_NEGATIVE, SEEK_POSITIVE
from .errors import ConfigError
from .metalearners import CateEstimatorSpec, builtin_estimators
from .pipeline import DEFAULT_Q_GRID, PerturbationSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULT_CELLSEARCH_Q = {SEEK_NEGATIVE: (0.2, 0.3), SEEK_POSITIVE: (0.7, 0.8)}


@dataclass
class CellSearchConfig:
    m: int = 3
    max_iter: int = 3
    repetitions: int = 5
    threshold: float = 1 / 3
    band: float = 0.05
    k_features: int = 8
    max_features: int = 10
    q_grid: list | None = None


@dataclass
class RunConfig:
    """Everything a run needs. Exactly one of ``input`` and ``synthetic`` is set.

    ``estimators`` entries are built-in names (e.g. ``"t_lasso"``) or full
    estimator spec dicts. ``perturbations`` entries are perturbation dicts;
    empty means the random fold assignments only.
    """
    input: str | None = None
    schema: dict = field(default_factory=dict)
    synthetic: dict | None = None
    outcome: str = "y"
    direction: str = SEEK_NEGATIVE
    q_grid: list | None = None
    calibration_grid: list = field(default_factory=lambda: [0.2, 0.4, 0.6, 0.8])
    test_fraction: float = 0.2
    n_cv: int = 3
    k: int = 4
    perturbations: list = field(default_factory=list)
    estimators: list = field(default_factory=lambda: sorted(builtin_estimators()))
    tune: bool = True
    grids: dict | None = None
    top_k: int = 10
    cellsearch: CellSearchConfig = field(default_factory=CellSearchConfig)
    seed: int = 0
    out: str = "out"
    threads: int = 1
    report_pvalues: bool = False

    def __post_init__(self):
        if isinstance(self.cellsearch, dict):
            unknown = set(self.cellsearch) - {f.name for f in fields(CellSearchConfig)}
            if unknown:
                raise ConfigError(f"unknown cellsearch keys {sorted(unknown)}")
            self.cellsearch = CellSearchConfig(**self.cellsearch)

    # -- resolved views -------------------------------------------------
    def validate(self):
        if (self.input is None) == (self.synthetic is None):
            raise ConfigError("set exactly one of 'input' and 'synthetic'")
        if self.direction not in (SEEK_NEGATIVE, SEEK_POSITIVE):
            raise ConfigError("direction must be 'neg' or 'pos'")
        if not self.estimators:
            raise ConfigError("estimator list is empty")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must lie in (0, 1)")
        if self.n_cv < 1 or self.k < 2:
            raise ConfigError("need n_cv >= 1 and k >= 2")
        for q in list(self.resolved_q_grid()) + list(self.calibration_grid) + list(self.cellsearch_q()):
            if not 0 < q < 1:
                raise ConfigError(f"grid value {q} outside (0, 1)")
        try:
            self.estimator_specs()
            self.perturbation_specs()
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        if self.top_k < 1:
            raise ConfigError("top_k must be >= 1")
        return self

    def resolved_q_grid(self):
        return tuple(self.q_grid or DEFAULT_Q_GRID[self.direction])

    def cellsearch_q(self):
        return tuple(self.cellsearch.q_grid or DEFAULT_CELLSEARCH_Q[self.direction])

    def estimator_specs(self):
        reg = builtin_estimators(self.seed)
        out = []
        for e in self.estimators:
            if isinstance(e, str):
                if e not in reg:
                    raise ConfigError(f"unknown estimator {e!r}; built-ins: {sorted(reg)}")
                out.append(reg[e])
            else:
                out.append(CateEstimatorSpec.from_dict(e))
        names = [s.name for s in out]
        if len(set(names)) != len(names):
            raise ConfigError("estimator names must be unique")
        return out

    def perturbation_specs(self):
        names = ["cv_orig"] + [f"cv_{i}" for i in range(self.n_cv - 1)]
        out = [PerturbationSpec(n, "random-cv", folds=n, tune=n == "cv_orig") for n in names]
        extra = [PerturbationSpec.from_dict(p) for p in self.perturbations]
        for p in extra:
            if p.tune:
                raise ConfigError("only cv_orig carries tuning")
            if p.name in names:
                raise ConfigError(f"perturbation name {p.name!r} is reserved")
        return out + extra

    # -- serialization ----------------------------------------------------
    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)


def load_config(path) -> RunConfig:
    """Read a ``.toml`` or ``.json`` configuration file."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        if path.suffix == ".json":
            d = json.loads(raw)
        else:
            d = tomllib.loads(raw.decode("utf-8"))
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    cfg = RunConfig.from_dict(d)
    if cfg.input is not None and not Path(cfg.input).is_absolute():
        cfg.input = str((path.parent / cfg.input).resolve())
    return cfg
