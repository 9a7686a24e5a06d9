"""
Final single-equation model: regress composite Y on composite X, expand the
line over the original variables and predict expected Y for new rows.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Literal, Mapping, Optional

import numpy as np
import pandas as pd
import structlog

from .dataset import Dataset, Lineage, Side, evaluate_column, is_degenerate, raw_variables
from .errors import DegenerateCompositeError, SchemaError
from .stats import WeightPair, composites, pearson

logger = structlog.get_logger(__name__)

Direction = Literal["y_on_x", "x_on_y"]


@dataclass(frozen=True)
class LineModel:
    """``Y = slope * X + intercept``."""

    slope: float
    intercept: float
    r_squared: float
    direction: str = "y_on_x"

    def predict(self, X: Any) -> np.ndarray:
        return self.slope * np.asarray(X, dtype=float) + self.intercept

    def to_dict(self) -> Dict[str, Any]:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "direction": self.direction,
        }


def regress_y_on_x(ds: Dataset, w: WeightPair, direction: Direction = "y_on_x") -> LineModel:
    """Least-squares line between the composites, always reported as Y on X.

    With ``direction="x_on_y"`` X is regressed on Y and the line is inverted,
    which differs from the Y-on-X fit unless the correlation is perfect.
    """
    pair = composites(ds, w)
    if is_degenerate(pair.X):
        raise DegenerateCompositeError("X composite has zero variance")
    r = pearson(pair.X, pair.Y)

    xc = pair.X - pair.X.mean()
    yc = pair.Y - pair.Y.mean()
    if direction == "y_on_x":
        slope = float(xc @ yc / (xc @ xc))
    elif direction == "x_on_y":
        beta = float(xc @ yc / (yc @ yc))
        if beta == 0:
            raise DegenerateCompositeError("composites are uncorrelated; X on Y cannot be inverted")
        slope = 1.0 / beta
    else:
        raise ValueError(f"unknown regression direction {direction!r}")

    intercept = float(pair.Y.mean() - slope * pair.X.mean())
    return LineModel(slope, intercept, r * r, direction)


@dataclass(frozen=True, eq=False)
class ExpandedModel:
    """The line expanded over the variables: ``sum(y_coeffs*y) = sum(x_coeffs*x) + constant``."""

    y_coeffs: Dict[str, float]
    x_coeffs: Dict[str, float]
    constant: float
    line: LineModel
    weights: WeightPair
    correlation: Optional[float] = None
    normalization: Optional[Dict[str, Any]] = None
    lineage: Dict[str, Optional[Lineage]] = field(default_factory=dict)

    @property
    def raw_x_variables(self) -> list:
        """Raw inputs a prediction row has to supply."""
        found = []
        for name in self.x_coeffs:
            for raw in raw_variables(name, self.lineage.get(name)):
                if raw not in found:
                    found.append(raw)
        return found

    def as_weight_pair(self) -> WeightPair:
        return WeightPair(
            list(self.x_coeffs.values()),
            list(self.y_coeffs.values()),
            tuple(self.x_coeffs),
            tuple(self.y_coeffs),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "y_coeffs": dict(self.y_coeffs),
            "x_coeffs": dict(self.x_coeffs),
            "constant": self.constant,
            "fit": {"correlation": self.correlation, **self.line.to_dict()},
            "weights": self.weights.to_dict(),
            "normalization": self.normalization,
            "lineage": {
                name: lineage.to_dict() if lineage is not None else None
                for name, lineage in self.lineage.items()
            },
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExpandedModel":
        try:
            fit = data["fit"]
            line = LineModel(fit["slope"], fit["intercept"], fit["r_squared"], fit.get("direction", "y_on_x"))
            lineage = {
                name: Lineage.from_dict(item) if item else None
                for name, item in data.get("lineage", {}).items()
            }
            return cls(
                y_coeffs={k: float(v) for k, v in data["y_coeffs"].items()},
                x_coeffs={k: float(v) for k, v in data["x_coeffs"].items()},
                constant=float(data["constant"]),
                line=line,
                weights=WeightPair.from_dict(data["weights"]),
                correlation=fit.get("correlation"),
                normalization=data.get("normalization"),
                lineage=lineage,
            )
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"malformed model artifact: {e}") from None


def expand(
    model: LineModel,
    w: WeightPair,
    lineage: Optional[Mapping[str, Optional[Lineage]]] = None,
    correlation: Optional[float] = None,
    normalization: Optional[Dict[str, Any]] = None,
) -> ExpandedModel:
    labels = w.labels
    n_x = len(w.a)
    x_names = [label[2:] for label in labels[:n_x]]
    y_names = [label[2:] for label in labels[n_x:]]
    lineage = lineage or {}
    return ExpandedModel(
        y_coeffs={name: float(v) for name, v in zip(y_names, w.b)},
        x_coeffs={name: float(model.slope * v) for name, v in zip(x_names, w.a)},
        constant=float(model.intercept),
        line=model,
        weights=w,
        correlation=correlation,
        normalization=normalization,
        lineage={name: lineage.get(name) for name in x_names + y_names},
    )


def predict_expected_y(model: ExpandedModel, x_row: Mapping[str, Any]) -> Any:
    """Expected composite Y for one row (or columns) of raw x-side values.

    Derived x-side variables are recomputed from their lineage; any supplied
    value for them is ignored.
    """
    total = model.constant
    for name, coeff in model.x_coeffs.items():
        total = total + coeff * evaluate_column(name, model.lineage.get(name), x_row)
    if np.ndim(total) == 0:
        return float(total)
    return np.asarray(total, dtype=float)


def predict_frame(model: ExpandedModel, rows: pd.DataFrame) -> np.ndarray:
    raw = {name: rows[name].to_numpy(dtype=float) for name in rows.columns}
    return np.broadcast_to(predict_expected_y(model, raw), (len(rows),)).astype(float)


def composite_y(model: ExpandedModel, raw: Mapping[str, Any]) -> Any:
    """Actual composite Y from raw y-side values, replaying lineage."""
    total = 0.0
    for name, coeff in model.y_coeffs.items():
        total = total + coeff * evaluate_column(name, model.lineage.get(name), raw)
    return total


def residual_scores(ds: Dataset, model: ExpandedModel) -> np.ndarray:
    """Actual minus expected composite Y for every row of ``ds``."""
    for side, names in ((Side.X, model.x_coeffs), (Side.Y, model.y_coeffs)):
        for name in names:
            if name not in ds:
                raise SchemaError(f"model variable '{name}' is not in the dataset")
            if ds.column(name).side is not side:
                raise SchemaError(f"model variable '{name}' is not on the {side.value} side")

    actual = sum(coeff * ds.column(name).values for name, coeff in model.y_coeffs.items())
    expected = model.constant + sum(
        coeff * ds.column(name).values for name, coeff in model.x_coeffs.items()
    )
    return np.asarray(actual - expected, dtype=float)
