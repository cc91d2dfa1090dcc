"""Treatment-effect subgroup discovery for randomized trials.

Meta-learner CATE estimates are screened for stability across data
perturbations, ensembled, and the resulting top subgroups are described by
stable conjunctions of binary features ("cells").
"""
from .calibration import SEEK_NEGATIVE, SEEK_POSITIVE, bin_report, calibrate_fold, r2c
from .cellsearch import Cell, cell_search, enumerate_cells, stabilized_cell_search
from .config import RunConfig, load_config
from .dataset import Dataset, Schema, load_csv, make_split_plan
from .errors import ConfigError, DataError, HTECellsError
from .metalearners import CateEstimatorSpec, builtin_estimators, fit_cate, predict_cate
from .neyman import ate_hat, holm_bonferroni, one_sided_p, subgroup_cate_hat, tstat_vs_ate
from .pipeline import PerturbationSpec, build_rank_table, rank_and_screen, run_perturbation
from .runner import Runner, run_pipeline
from .synthetic import SyntheticSpec, simulate

__version__ = "0.1.0"

__all__ = [
    "SEEK_NEGATIVE", "SEEK_POSITIVE", "bin_report", "calibrate_fold", "r2c",
    "Cell", "cell_search", "enumerate_cells", "stabilized_cell_search",
    "RunConfig", "load_config",
    "Dataset", "Schema", "load_csv", "make_split_plan",
    "ConfigError", "DataError", "HTECellsError",
    "CateEstimatorSpec", "builtin_estimators", "fit_cate", "predict_cate",
    "ate_hat", "holm_bonferroni", "one_sided_p", "subgroup_cate_hat", "tstat_vs_ate",
    "PerturbationSpec", "build_rank_table", "rank_and_screen", "run_perturbation",
    "Runner", "run_pipeline",
    "SyntheticSpec", "simulate",
]
