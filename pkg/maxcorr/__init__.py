"""
Maximum correlation modelling.

This package fits single-equation models between two groups of variables by
choosing linear weights on each side that maximize the correlation between
the two composites:
- Constrained maximization with linear equalities and inequalities
- Canonical correlation as an unconstrained reference
- Least-squares comparison across normalizations
- Integer-coefficient search for exact linear relations
"""

__version__ = "0.1.0"
__author__ = "MaxCorr Project"

from .config import RunConfig, SolverConfig
from .dataset import Dataset, Side, add_derived, load_csv
from .errors import ConfigError, DataError, MaxCorrError
from .model import expand, predict_expected_y, regress_y_on_x
from .solver import FitResult, FitStatus, LinearConstraint, Normalization, maximize, rescale_result, solve_for_target
from .stats import WeightPair, correlation_of_weights

__all__ = [
    "RunConfig",
    "SolverConfig",
    "Dataset",
    "Side",
    "add_derived",
    "load_csv",
    "ConfigError",
    "DataError",
    "MaxCorrError",
    "expand",
    "predict_expected_y",
    "regress_y_on_x",
    "FitResult",
    "FitStatus",
    "LinearConstraint",
    "Normalization",
    "maximize",
    "rescale_result",
    "solve_for_target",
    "WeightPair",
    "correlation_of_weights",
]
