"""
Classical unconstrained canonical correlation via a symmetric eigenproblem.

Used as the reference answer for the constrained solver. Works on the
correlation matrices of the standardized columns and back-transforms the
weights to the original units.
"""

from dataclasses import dataclass
from typing import Any, Dict

import numpy as np
import structlog
from scipy import linalg

from .dataset import Dataset
from .errors import CollinearityError
from .stats import WeightPair, correlation_of_weights, side_matrices, standardize

logger = structlog.get_logger(__name__)

CONDITION_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class CcaSolution:
    """First canonical pair, unit length in the within-set covariance metric."""

    weights: WeightPair
    rho: float

    @property
    def a(self) -> np.ndarray:
        return self.weights.a

    @property
    def b(self) -> np.ndarray:
        return self.weights.b

    def to_dict(self) -> Dict[str, Any]:
        return {"rho": self.rho, "weights": self.weights.to_dict()}


def _inverse_sqrt(matrix: np.ndarray) -> np.ndarray:
    values, vectors = linalg.eigh(matrix)
    return (vectors / np.sqrt(values)) @ vectors.T


def _check_conditioning(matrix: np.ndarray, side: str) -> None:
    condition = float(np.linalg.cond(matrix))
    if not np.isfinite(condition) or condition > CONDITION_LIMIT:
        raise CollinearityError(side, condition)


def cca_first_pair(ds: Dataset) -> CcaSolution:
    x_matrix, y_matrix = side_matrices(ds)
    zx, _, sd_x = standardize(x_matrix)
    zy, _, sd_y = standardize(y_matrix)
    n = zx.shape[0]

    rxx = zx.T @ zx / n
    ryy = zy.T @ zy / n
    rxy = zx.T @ zy / n
    _check_conditioning(rxx, "x")
    _check_conditioning(ryy, "y")

    rxx_isqrt = _inverse_sqrt(rxx)
    ryy_inv_ryx = linalg.solve(ryy, rxy.T, assume_a="pos")
    m = rxx_isqrt @ rxy @ ryy_inv_ryx @ rxx_isqrt
    values, vectors = linalg.eigh((m + m.T) / 2)
    top = vectors[:, -1]

    a = rxx_isqrt @ top
    b = ryy_inv_ryx @ a
    a = a / np.sqrt(a @ rxx @ a)
    b = b / np.sqrt(b @ ryy @ b)
    rho = float(np.sqrt(np.clip(values[-1], 0.0, 1.0)))

    logger.debug("canonical pair computed", rho=rho)
    return CcaSolution(WeightPair(a / sd_x, b / sd_y, ds.x_names, ds.y_names), rho)


def pearson_consistency_check(ds: Dataset, sol: CcaSolution) -> float:
    """``|r(a, b)| - rho``; near zero for a genuine canonical pair."""
    return abs(correlation_of_weights(ds, sol.weights)) - sol.rho
