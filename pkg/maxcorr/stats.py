"""
Composites, Pearson correlation and its analytic gradient.

Moments use the population convention (divide by n); the ratio in Pearson's
formula cancels the convention, and the gradients stay simpler.
"""

from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import structlog

from .dataset import Dataset, Side, is_degenerate
from .errors import DegenerateCompositeError, DimensionError, SchemaError

logger = structlog.get_logger(__name__)


def _frozen(values: Any) -> np.ndarray:
    array = np.array(values, dtype=float).reshape(-1)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class WeightPair:
    """Coefficients ``a`` over the x-side columns and ``b`` over the y-side columns."""

    a: np.ndarray
    b: np.ndarray
    x_names: Tuple[str, ...] = ()
    y_names: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "a", _frozen(self.a))
        object.__setattr__(self, "b", _frozen(self.b))
        object.__setattr__(self, "x_names", tuple(self.x_names))
        object.__setattr__(self, "y_names", tuple(self.y_names))
        if self.x_names and len(self.x_names) != len(self.a):
            raise DimensionError(f"{len(self.a)} x-side weights for {len(self.x_names)} names")
        if self.y_names and len(self.y_names) != len(self.b):
            raise DimensionError(f"{len(self.b)} y-side weights for {len(self.y_names)} names")

    @classmethod
    def for_dataset(cls, ds: Dataset, a: Any, b: Any) -> "WeightPair":
        return cls(a, b, ds.x_names, ds.y_names)

    @classmethod
    def from_vector(
        cls, w: Any, n_x: int, x_names: Sequence[str] = (), y_names: Sequence[str] = ()
    ) -> "WeightPair":
        w = np.asarray(w, dtype=float)
        return cls(w[:n_x], w[n_x:], tuple(x_names), tuple(y_names))

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.a, self.b])

    @property
    def labels(self) -> List[str]:
        """Weight labels in vector order: ``a.<x name>`` then ``b.<y name>``."""
        xs = self.x_names or tuple(f"x{i + 1}" for i in range(len(self.a)))
        ys = self.y_names or tuple(f"y{j + 1}" for j in range(len(self.b)))
        return [f"a.{n}" for n in xs] + [f"b.{n}" for n in ys]

    def scaled(self, lam: float, mu: float) -> "WeightPair":
        return WeightPair(self.a * lam, self.b * mu, self.x_names, self.y_names)

    def with_vector(self, w: Any) -> "WeightPair":
        return WeightPair.from_vector(w, len(self.a), self.x_names, self.y_names)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.a) and not np.any(self.b)

    def to_dict(self) -> Dict[str, Dict[str, float]]:
        labels = self.labels
        n_x = len(self.a)
        return {
            "a": {label[2:]: float(v) for label, v in zip(labels[:n_x], self.a)},
            "b": {label[2:]: float(v) for label, v in zip(labels[n_x:], self.b)},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Mapping[str, float]]) -> "WeightPair":
        a, b = data["a"], data["b"]
        return cls(list(a.values()), list(b.values()), tuple(a), tuple(b))


@dataclass(frozen=True, eq=False)
class CompositePair:
    X: np.ndarray
    Y: np.ndarray


def side_matrices(ds: Dataset) -> Tuple[np.ndarray, np.ndarray]:
    """Active x-side and y-side columns, warning about excluded constant columns."""
    if ds.constant_names:
        logger.warning("constant columns excluded from composites", columns=list(ds.constant_names))
    return ds.matrix(Side.X), ds.matrix(Side.Y)


def _check_weights(ds: Dataset, w: WeightPair) -> None:
    for side, weights, names in ((Side.X, w.a, w.x_names), (Side.Y, w.b, w.y_names)):
        active = ds.active_names(side)
        if len(weights) != len(active):
            raise DimensionError(
                f"{len(weights)} {side.value}-side weights for {len(active)} active columns"
            )
        if names and tuple(names) != active:
            raise SchemaError(
                f"{side.value}-side weights are for {list(names)}, dataset has {list(active)}"
            )


def weight_labels(ds: Dataset) -> List[str]:
    """Labels of every active weight: ``a.<x name>`` then ``b.<y name>``."""
    return [f"a.{n}" for n in ds.x_names] + [f"b.{n}" for n in ds.y_names]


def composites(ds: Dataset, w: WeightPair) -> CompositePair:
    _check_weights(ds, w)
    return CompositePair(ds.matrix(Side.X) @ w.a, ds.matrix(Side.Y) @ w.b)


def pearson(X: Any, Y: Any) -> float:
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.shape != Y.shape or X.ndim != 1:
        raise DimensionError(f"vectors of shape {X.shape} and {Y.shape} cannot be correlated")
    if len(X) < 3:
        raise DimensionError(f"need at least 3 points, got {len(X)}")
    if is_degenerate(X) or is_degenerate(Y):
        raise DegenerateCompositeError("zero variance: composite weights are degenerate")

    xc = X - X.mean()
    yc = Y - Y.mean()
    r = float(xc @ yc / np.sqrt((xc @ xc) * (yc @ yc)))
    return float(np.clip(r, -1.0, 1.0))


def correlation_of_weights(ds: Dataset, w: WeightPair) -> float:
    pair = composites(ds, w)
    return pearson(pair.X, pair.Y)


class CorrelationObjective:
    """Composite correlation as a function of the stacked weight vector ``(a, b)``.

    Holds centered copies of both side matrices so repeated evaluations inside
    the solver cost one matrix-vector product per side.
    """

    def __init__(self, x_matrix: Any, y_matrix: Any) -> None:
        self.x = np.asarray(x_matrix, dtype=float)
        self.y = np.asarray(y_matrix, dtype=float)
        if self.x.shape[0] != self.y.shape[0]:
            raise DimensionError("x and y matrices have different row counts")
        self.n_rows = self.x.shape[0]
        self.n_x = self.x.shape[1]
        self.n_y = self.y.shape[1]
        self._xc = self.x - self.x.mean(axis=0)
        self._yc = self.y - self.y.mean(axis=0)

    @classmethod
    def from_dataset(cls, ds: Dataset) -> "CorrelationObjective":
        return cls(*side_matrices(ds))

    @property
    def size(self) -> int:
        return self.n_x + self.n_y

    def split(self, w: Any) -> Tuple[np.ndarray, np.ndarray]:
        w = np.asarray(w, dtype=float)
        if w.shape != (self.size,):
            raise DimensionError(f"weight vector of length {w.size}, expected {self.size}")
        return w[: self.n_x], w[self.n_x :]

    def is_degenerate(self, w: Any) -> bool:
        a, b = self.split(w)
        return is_degenerate(self.x @ a) or is_degenerate(self.y @ b)

    def value(self, w: Any) -> Optional[float]:
        """Correlation at ``w``, or None when either composite is degenerate."""
        if self.is_degenerate(w):
            return None
        a, b = self.split(w)
        xc = self._xc @ a
        yc = self._yc @ b
        r = xc @ yc / np.sqrt((xc @ xc) * (yc @ yc))
        return float(np.clip(r, -1.0, 1.0))

    def value_and_gradient(self, w: Any) -> Tuple[Optional[float], Optional[np.ndarray]]:
        if self.is_degenerate(w):
            return None, None
        a, b = self.split(w)
        n = self.n_rows
        xc = self._xc @ a
        yc = self._yc @ b
        p = xc @ xc / n
        q = yc @ yc / n
        root = np.sqrt(p * q)
        r = (xc @ yc / n) / root

        grad_a = (self._xc.T @ yc / n) / root - r * (self._xc.T @ xc / n) / p
        grad_b = (self._yc.T @ xc / n) / root - r * (self._yc.T @ yc / n) / q
        return float(r), np.concatenate([grad_a, grad_b])


def correlation_gradient(ds: Dataset, w: WeightPair) -> WeightPair:
    """Partial derivatives of the composite correlation with respect to every weight."""
    _check_weights(ds, w)
    objective = CorrelationObjective(ds.matrix(Side.X), ds.matrix(Side.Y))
    _, gradient = objective.value_and_gradient(w.vector)
    if gradient is None:
        raise DegenerateCompositeError("zero variance: composite weights are degenerate")
    return w.with_vector(gradient)


def standardize(matrix: Any) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Zero-mean, unit (population) variance columns, plus the means and deviations used."""
    matrix = np.asarray(matrix, dtype=float)
    mean = matrix.mean(axis=0)
    sd = matrix.std(axis=0)
    if np.any(sd == 0):
        raise DegenerateCompositeError("cannot standardize a constant column")
    return (matrix - mean) / sd, mean, sd
