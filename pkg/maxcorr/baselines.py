"""
Least-squares alternative to maximum correlation, and the orthogonal line fit.

Least squares minimizes the sum of squared residuals

    e = sum(b * y) - sum(a * x) - c

after one normalization fixes the scale. Fixing a single coefficient to 1
turns this into an ordinary multiple regression with that variable as the
dependent one, so each choice of normalized coefficient yields a different
model. The helpers here fit every choice, measure how far the resulting
directions diverge, and contrast units changes under both methods.
"""

import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
from scipy import linalg

from .config import SolverConfig
from .dataset import Dataset, Side, is_degenerate, rescale_column
from .errors import ConfigError, DataError, DegenerateCompositeError, DimensionError, RankDeficiencyError, SchemaError
from .model import LineModel
from .solver import Normalization, NormalizationKind, maximize
from .stats import WeightPair, composites, pearson, weight_labels

logger = structlog.get_logger(__name__)

INVARIANCE_TOLERANCE = 1e-6


@dataclass(frozen=True, eq=False)
class LsModel:
    weights: WeightPair
    intercept: float
    normalization: Normalization
    normalized_label: str
    sse: float
    achieved_correlation: Optional[float]

    def residuals(self, ds: Dataset) -> np.ndarray:
        pair = composites(ds, self.weights)
        return pair.Y - pair.X - self.intercept

    def to_dict(self) -> Dict[str, Any]:
        return {
            "normalized": self.normalized_label,
            "weights": self.weights.to_dict(),
            "intercept": self.intercept,
            "sse": self.sse,
            "achieved_correlation": self.achieved_correlation,
        }


def _resolve(ds: Dataset, normalized: Union[int, str, Normalization], labels: Sequence[str]) -> Normalization:
    if isinstance(normalized, Normalization):
        return normalized
    if isinstance(normalized, str):
        if normalized not in labels:
            raise SchemaError(f"unknown weight '{normalized}'")
        return Normalization.fix_coefficient(list(labels).index(normalized))
    if not 0 <= normalized < len(labels):
        raise DimensionError(f"coefficient index {normalized} out of range")
    return Normalization.fix_coefficient(normalized)


def _label(norm: Normalization, labels: Sequence[str]) -> str:
    if norm.kind is NormalizationKind.FIX_COEFFICIENT:
        return labels[norm.index]
    return f"sum_to_one.{norm.side.value}"


def fit_least_squares(ds: Dataset, normalized: Union[int, str, Normalization]) -> LsModel:
    """Minimum sum of squared residuals subject to one normalization.

    The weights are written as ``w = w0 + N @ theta`` where ``w0`` satisfies
    the normalization and the columns of ``N`` span its null space; the
    residual is then linear in ``(theta, c)`` and one OLS solve finishes.
    """
    x = ds.matrix(Side.X)
    y = ds.matrix(Side.Y)
    n_x = x.shape[1]
    n = n_x + y.shape[1]
    labels = weight_labels(ds)
    norm = _resolve(ds, normalized, labels)

    z = np.hstack([-x, y])
    if norm.kind is NormalizationKind.FIX_COEFFICIENT:
        pivot = norm.index
        w0 = np.zeros(n)
        w0[pivot] = norm.value
        basis = [np.eye(n)[j] for j in range(n) if j != pivot]
    else:
        side = range(n_x) if norm.side is Side.X else range(n_x, n)
        pivot = side[0]
        w0 = np.zeros(n)
        w0[pivot] = 1.0
        basis = [np.eye(n)[j] - (np.eye(n)[pivot] if j in side else 0) for j in range(n) if j != pivot]
    null = np.column_stack(basis) if basis else np.zeros((n, 0))

    dependent = z @ w0
    design = np.column_stack([-(z @ null), np.ones(len(dependent))])
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise RankDeficiencyError(f"regression implied by normalizing {_label(norm, labels)} is rank deficient")
    if is_degenerate(dependent):
        raise DegenerateCompositeError(f"normalizing {_label(norm, labels)} gives a constant dependent variable")

    coefficients = linalg.lstsq(design, dependent)[0]
    theta, intercept = coefficients[:-1], float(coefficients[-1])
    w = w0 + null @ theta
    if norm.kind is NormalizationKind.FIX_COEFFICIENT:
        w[pivot] = norm.value

    weights = WeightPair.from_vector(w, n_x, ds.x_names, ds.y_names)
    pair = composites(ds, weights)
    residuals = pair.Y - pair.X - intercept
    try:
        achieved = pearson(pair.X, pair.Y)
    except DegenerateCompositeError:
        achieved = None
        logger.warning("least-squares composite degenerate", normalized=_label(norm, labels))

    return LsModel(
        weights=weights,
        intercept=intercept,
        normalization=norm,
        normalized_label=_label(norm, labels),
        sse=float(residuals @ residuals),
        achieved_correlation=achieved,
    )


def _direction(w: np.ndarray) -> np.ndarray:
    u = np.asarray(w, dtype=float) / np.linalg.norm(w)
    lead = np.flatnonzero(np.abs(u) > 1e-12 * np.max(np.abs(u)))[0]
    return u if u[lead] > 0 else -u


def direction_divergence(w1: Any, w2: Any) -> float:
    """Angle in radians between the sign-fixed unit directions of two weight vectors."""
    u, v = _direction(w1), _direction(w2)
    return 2.0 * math.atan2(float(np.linalg.norm(u - v)), float(np.linalg.norm(u + v)))


@dataclass(frozen=True, eq=False)
class ComparisonReport:
    models: List[LsModel]
    skipped: Dict[str, str]
    divergence: np.ndarray
    maxcorr_correlation: float

    @property
    def max_divergence(self) -> float:
        return float(np.max(self.divergence, initial=0.0))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "models": [m.to_dict() for m in self.models],
            "skipped": dict(self.skipped),
            "divergence": {
                "labels": [m.normalized_label for m in self.models],
                "matrix": self.divergence.tolist(),
                "max": self.max_divergence,
            },
            "maxcorr_correlation": self.maxcorr_correlation,
        }


def compare_normalizations(ds: Dataset, cfg: Optional[SolverConfig] = None) -> ComparisonReport:
    """One least-squares model per normalized coefficient, with pairwise divergences."""
    labels = weight_labels(ds)
    if len(labels) < 2:
        raise DimensionError("need at least two coefficients to compare normalizations")

    models: List[LsModel] = []
    skipped: Dict[str, str] = {}
    for index, label in enumerate(labels):
        try:
            models.append(fit_least_squares(ds, index))
        except DataError as e:
            skipped[label] = str(e)
            logger.warning("normalization skipped", normalized=label, reason=str(e))

    divergence = np.zeros((len(models), len(models)))
    for i, first in enumerate(models):
        for j in range(i + 1, len(models)):
            divergence[i, j] = divergence[j, i] = direction_divergence(
                first.weights.vector, models[j].weights.vector
            )

    reference = maximize(ds, [], Normalization.fix_coefficient(0), cfg)
    logger.info(
        "normalizations compared",
        models=len(models),
        skipped=len(skipped),
        max_divergence=float(np.max(divergence, initial=0.0)),
        maxcorr_correlation=reference.correlation,
    )
    return ComparisonReport(models, skipped, divergence, reference.correlation)


@dataclass(frozen=True)
class ProbeEntry:
    method: str
    normalization: str
    divergence: float
    correlation_change: Optional[float] = None
    # Units changes commute with the fit, so zero divergence is expected.
    equivariant: bool = False

    @property
    def invariant(self) -> bool:
        return self.divergence <= INVARIANCE_TOLERANCE

    def to_dict(self) -> Dict[str, Any]:
        return {
            "method": self.method,
            "normalization": self.normalization,
            "divergence": self.divergence,
            "correlation_change": self.correlation_change,
            "invariant": self.invariant,
            "equivariant": self.equivariant,
        }


@dataclass(frozen=True)
class ProbeReport:
    column: str
    factor: float
    entries: Tuple[ProbeEntry, ...]

    @property
    def least_squares(self) -> Tuple[ProbeEntry, ...]:
        return tuple(e for e in self.entries if e.method == "least_squares")

    @property
    def maxcorr(self) -> ProbeEntry:
        return next(e for e in self.entries if e.method == "maxcorr")

    def to_dict(self) -> Dict[str, Any]:
        return {"column": self.column, "factor": self.factor, "entries": [e.to_dict() for e in self.entries]}


def _compensate(w: WeightPair, position: int, factor: float) -> np.ndarray:
    # Express weights fitted on rescaled data in the original units.
    v = w.vector.copy()
    v[position] *= factor
    return v


def scale_invariance_probe(
    ds: Dataset, column: str, factor: float, cfg: Optional[SolverConfig] = None
) -> ProbeReport:
    """Rescale one column, refit, and report how far each method's model moves.

    Divergences compare the original fit with the rescaled fit expressed back
    in the original units, so zero means the model is unchanged.

    Least squares with one coefficient fixed to a constant is equivariant
    under a units change: expressed back in the original units, the rescaled
    fit points the same way as the original, whichever coefficient is
    fixed. Those entries are flagged ``equivariant`` and report zero
    divergence. Only the sum-to-one normalization, whose constraint mixes
    coefficients in different units, moves the model. The maximum
    correlation fit is invariant under every normalization.
    """
    if factor <= 0 or factor == 1:
        raise ConfigError(f"probe factor must be positive and differ from 1, got {factor}")
    target = ds.column(column)
    labels = weight_labels(ds)
    prefix = "a." if target.side is Side.X else "b."
    own = prefix + column
    if own not in labels:
        raise SchemaError(f"column '{column}' is constant and carries no weight")
    position = labels.index(own)
    other = next(i for i in range(len(labels)) if i != position)
    scaled = rescale_column(ds, column, factor)

    variants = [
        Normalization.fix_coefficient(position),
        Normalization.fix_coefficient(other),
        Normalization.sum_to_one(target.side),
    ]
    entries = []
    for norm in variants:
        try:
            before = fit_least_squares(ds, norm)
            after = fit_least_squares(scaled, norm)
        except DataError as e:
            logger.warning("probe normalization skipped", normalization=_label(norm, labels), reason=str(e))
            continue
        entries.append(
            ProbeEntry(
                method="least_squares",
                normalization=_label(norm, labels),
                divergence=direction_divergence(before.weights.vector, _compensate(after.weights, position, factor)),
                equivariant=norm.kind is NormalizationKind.FIX_COEFFICIENT,
            )
        )

    norm = Normalization.fix_coefficient(other)
    before = maximize(ds, [], norm, cfg)
    after = maximize(scaled, [], norm, cfg)
    entries.append(
        ProbeEntry(
            method="maxcorr",
            normalization=_label(norm, labels),
            divergence=direction_divergence(before.weights.vector, _compensate(after.weights, position, factor)),
            correlation_change=abs(after.correlation - before.correlation),
            equivariant=True,
        )
    )

    report = ProbeReport(column, float(factor), tuple(entries))
    logger.info(
        "scale probe finished",
        column=column,
        factor=factor,
        divergences={f"{e.method}:{e.normalization}": e.divergence for e in entries},
    )
    return report


def orthogonal_line_fit(X: Any, Y: Any) -> LineModel:
    """Line through the centroid minimizing squared perpendicular distances."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.shape != Y.shape or X.ndim != 1 or len(X) < 3:
        raise DimensionError("orthogonal fit needs two equal-length vectors of at least 3 points")

    points = np.column_stack([X, Y])
    centered = points - points.mean(axis=0)
    scatter = centered.T @ centered / len(X)
    if np.trace(scatter) <= 0 or (is_degenerate(X) and is_degenerate(Y)):
        raise DegenerateCompositeError("all points coincide; no line is defined")

    values, vectors = linalg.eigh(scatter)
    vx, vy = vectors[:, -1]
    if abs(vx) < 1e-12 * abs(vy):
        raise DegenerateCompositeError("principal axis is vertical; slope is undefined")

    slope = float(vy / vx)
    intercept = float(Y.mean() - slope * X.mean())
    r_squared = 0.0 if is_degenerate(X) or is_degenerate(Y) else pearson(X, Y) ** 2
    return LineModel(slope, intercept, r_squared, "orthogonal")
