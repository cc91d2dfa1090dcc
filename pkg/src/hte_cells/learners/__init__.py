from .base import FAMILIES, BaseLearnerSpec, FittedLearner, fit, predict
from .tuning import cv_error, default_grid, tune

__all__ = [
    "FAMILIES",
    "BaseLearnerSpec",
    "FittedLearner",
    "fit",
    "predict",
    "cv_error",
    "default_grid",
    "tune",
]
