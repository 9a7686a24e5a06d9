"""
Tabular data with every variable assigned to an x-group or a y-group.

Datasets are immutable: every transform returns a new ``Dataset`` and the
column arrays are read-only, so a dataset can be shared freely between solver
starts. Derived and re-coded columns carry a ``Lineage`` record so their
values can be recomputed from raw inputs at prediction time.
"""

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog

from .errors import ConfigError, DataError, SchemaError

logger = structlog.get_logger(__name__)

MIN_ROWS = 3
ZERO_VARIANCE_TOLERANCE = 1e-12


class Side(str, Enum):
    X = "x"
    Y = "y"


class TransformKind(str, Enum):
    SQUARE = "square"
    LOG = "log"
    PRODUCT = "product"
    SIGN_FLIP = "sign_flip"
    SHIFT = "shift"
    SCALE = "scale"


_ARITY = {
    TransformKind.SQUARE: 1,
    TransformKind.LOG: 1,
    TransformKind.PRODUCT: 2,
    TransformKind.SIGN_FLIP: 1,
    TransformKind.SHIFT: 1,
    TransformKind.SCALE: 1,
}


def is_degenerate(values: Any) -> bool:
    """True when the vector's spread is negligible relative to its magnitude."""
    values = np.asarray(values, dtype=float)
    scale = float(np.mean(np.abs(values))) + 1.0
    return float(np.std(values)) < ZERO_VARIANCE_TOLERANCE * scale


def _apply(kind: TransformKind, inputs: Sequence[Any], constant: Optional[float]) -> np.ndarray:
    first = np.asarray(inputs[0], dtype=float)
    if kind is TransformKind.SQUARE:
        return first ** 2
    if kind is TransformKind.LOG:
        if np.any(first <= 0):
            raise DataError("log transform requires strictly positive values")
        return np.log(first)
    if kind is TransformKind.PRODUCT:
        return first * np.asarray(inputs[1], dtype=float)
    if kind is TransformKind.SIGN_FLIP:
        return -first
    if kind is TransformKind.SHIFT:
        return first + constant
    return first * constant


def _check_constant(kind: TransformKind, constant: Optional[float]) -> Optional[float]:
    if kind not in (TransformKind.SHIFT, TransformKind.SCALE):
        return None
    if constant is None or not np.isfinite(constant):
        raise DataError(f"{kind.value} transform needs a finite constant")
    if kind is TransformKind.SCALE and constant == 0:
        raise DataError("scale transform needs a nonzero factor")
    return float(constant)


@dataclass(frozen=True)
class Lineage:
    """How a column's values were produced from other columns.

    ``inputs`` pairs each source name with the lineage that source had at the
    moment the transform was applied, so later in-place re-codings of a source
    do not change how this column is recomputed.
    """

    kind: TransformKind
    inputs: Tuple[Tuple[str, Optional["Lineage"]], ...]
    constant: Optional[float] = None
    in_place: bool = False

    @property
    def sources(self) -> Tuple[str, ...]:
        return tuple(name for name, _ in self.inputs)

    def raw_variables(self) -> List[str]:
        found: List[str] = []
        for name, parent in self.inputs:
            for raw in raw_variables(name, parent):
                if raw not in found:
                    found.append(raw)
        return found

    def evaluate(self, raw: Mapping[str, Any]) -> np.ndarray:
        values = [evaluate_column(name, parent, raw) for name, parent in self.inputs]
        return _apply(self.kind, values, self.constant)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "inputs": [
                {"name": name, "lineage": parent.to_dict() if parent else None}
                for name, parent in self.inputs
            ],
            "constant": self.constant,
            "in_place": self.in_place,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Lineage":
        inputs = tuple(
            (item["name"], cls.from_dict(item["lineage"]) if item.get("lineage") else None)
            for item in data["inputs"]
        )
        return cls(
            kind=TransformKind(data["kind"]),
            inputs=inputs,
            constant=data.get("constant"),
            in_place=bool(data.get("in_place", False)),
        )


def raw_variables(name: str, lineage: Optional[Lineage]) -> List[str]:
    """Raw input names needed to recompute a column."""
    if lineage is None:
        return [name]
    return lineage.raw_variables()


def evaluate_column(name: str, lineage: Optional[Lineage], raw: Mapping[str, Any]) -> np.ndarray:
    """Recompute a column's value(s) from raw inputs by replaying its lineage."""
    if lineage is None:
        if name not in raw:
            raise SchemaError(f"missing variable '{name}'")
        return np.asarray(raw[name], dtype=float)
    return lineage.evaluate(raw)


@dataclass(frozen=True, eq=False)
class Column:
    name: str
    side: Side
    values: np.ndarray
    lineage: Optional[Lineage] = None
    previous: Optional["Column"] = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.ndim != 1:
            raise DataError(f"column '{self.name}' must be one-dimensional")
        if not np.all(np.isfinite(values)):
            raise DataError(f"column '{self.name}' has missing or non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "side", Side(self.side))

    @property
    def is_constant(self) -> bool:
        return is_degenerate(self.values)


@dataclass(frozen=True, eq=False)
class Dataset:
    columns: Tuple[Column, ...]

    def __post_init__(self) -> None:
        columns = tuple(self.columns)
        object.__setattr__(self, "columns", columns)
        if not columns:
            raise DataError("dataset has no columns")

        names = [c.name for c in columns]
        duplicates = sorted({n for n in names if names.count(n) > 1})
        if duplicates:
            raise DataError(f"duplicate column names: {duplicates}")

        n_rows = len(columns[0].values)
        for column in columns:
            if len(column.values) != n_rows:
                raise DataError(
                    f"column '{column.name}' has {len(column.values)} values, expected {n_rows}"
                )
        if n_rows < MIN_ROWS:
            raise DataError(f"too few rows: {n_rows} (need at least {MIN_ROWS})")

        for side in Side:
            if not any(c.side is side for c in columns):
                raise DataError(f"at least one {side.value}-side column is required")

        object.__setattr__(self, "_index", {c.name: c for c in columns})

    @classmethod
    def from_arrays(cls, x: Mapping[str, Any], y: Mapping[str, Any]) -> "Dataset":
        columns = [Column(name, Side.X, values) for name, values in x.items()]
        columns += [Column(name, Side.Y, values) for name, values in y.items()]
        return cls(tuple(columns))

    @property
    def n_rows(self) -> int:
        return len(self.columns[0].values)

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def __contains__(self, name: object) -> bool:
        return name in self._index

    def column(self, name: str) -> Column:
        try:
            return self._index[name]
        except KeyError:
            raise SchemaError(f"unknown column '{name}'") from None

    def side_columns(self, side: Union[Side, str], active: bool = True) -> Tuple[Column, ...]:
        side = Side(side)
        return tuple(
            c for c in self.columns if c.side is side and not (active and c.is_constant)
        )

    def active_names(self, side: Union[Side, str]) -> Tuple[str, ...]:
        return tuple(c.name for c in self.side_columns(side))

    @property
    def x_names(self) -> Tuple[str, ...]:
        return self.active_names(Side.X)

    @property
    def y_names(self) -> Tuple[str, ...]:
        return self.active_names(Side.Y)

    @property
    def constant_names(self) -> Tuple[str, ...]:
        return tuple(c.name for c in self.columns if c.is_constant)

    def matrix(self, side: Union[Side, str]) -> np.ndarray:
        """Active columns of one side as an (n_rows, k) array."""
        columns = self.side_columns(side)
        if not columns:
            raise DataError(f"every {Side(side).value}-side column is constant")
        return np.column_stack([c.values for c in columns])

    def lineage_map(self) -> Dict[str, Optional[Lineage]]:
        return {c.name: c.lineage for c in self.columns}

    def with_column(self, column: Column) -> "Dataset":
        if column.name in self:
            raise DataError(f"column name collision: '{column.name}' already exists")
        return Dataset(self.columns + (column,))

    def replace_column(self, column: Column) -> "Dataset":
        self.column(column.name)
        return Dataset(tuple(column if c.name == column.name else c for c in self.columns))


def read_numeric_table(path: Union[str, Path], comment: Optional[str] = None) -> pd.DataFrame:
    """Read a headed CSV whose every cell is a finite number.

    Missing, non-numeric and non-finite cells raise DataError naming the
    (1-based) data row and the column.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")

    try:
        raw = pd.read_csv(
            path, header=None, dtype=str, keep_default_na=False, encoding="utf-8", comment=comment
        )
    except pd.errors.EmptyDataError:
        raise DataError(f"data file is empty: {path}") from None
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise DataError(f"could not parse {path}: {e}") from None

    headers = [str(h).strip() for h in raw.iloc[0].tolist()]
    duplicates = sorted({h for h in headers if headers.count(h) > 1})
    if duplicates:
        raise DataError(f"duplicate header(s): {duplicates}")

    body = raw.iloc[1:]
    values: Dict[str, np.ndarray] = {}
    for j, header in enumerate(headers):
        cells = body.iloc[:, j].str.strip()
        numeric = pd.to_numeric(cells, errors="coerce").to_numpy(dtype=float)
        bad = np.flatnonzero(~np.isfinite(numeric))
        if bad.size:
            row = int(bad[0])
            cell = cells.iloc[row]
            what = "missing value" if pd.isna(cell) or cell == "" else f"non-numeric value {cell!r}"
            raise DataError(f"{what} at row {row + 1}, column '{header}'")
        values[header] = numeric
    return pd.DataFrame(values, columns=headers)


def load_csv(path: Union[str, Path], roles: Mapping[str, Union[Side, str]]) -> Dataset:
    """Read a headed, fully numeric CSV file and tag every column with its side."""
    table = read_numeric_table(path)
    headers = list(table.columns)

    missing_roles = [h for h in headers if h not in roles]
    if missing_roles:
        raise SchemaError(f"columns without a side in the roles map: {missing_roles}")
    unknown_roles = sorted(set(roles) - set(headers))
    if unknown_roles:
        raise SchemaError(f"roles reference columns not in the file: {unknown_roles}")

    if len(table) < MIN_ROWS:
        raise DataError(f"too few rows: {len(table)} (need at least {MIN_ROWS})")

    columns = []
    for header in headers:
        try:
            side = Side(roles[header])
        except ValueError:
            raise ConfigError(f"invalid side {roles[header]!r} for column '{header}'") from None
        columns.append(Column(header, side, table[header].to_numpy(dtype=float)))

    dataset = Dataset(tuple(columns))
    logger.info(
        "dataset loaded",
        path=str(path),
        rows=dataset.n_rows,
        x_columns=len(dataset.side_columns(Side.X, active=False)),
        y_columns=len(dataset.side_columns(Side.Y, active=False)),
    )
    return dataset


def add_derived(
    ds: Dataset,
    kind: Union[TransformKind, str],
    sources: Sequence[str],
    new_name: str,
    constant: Optional[float] = None,
) -> Dataset:
    """Append a column computed element-wise from existing columns."""
    kind = TransformKind(kind)
    sources = tuple(sources)
    if new_name in ds:
        raise DataError(f"column name collision: '{new_name}' already exists")
    if len(sources) != _ARITY[kind]:
        raise DataError(
            f"{kind.value} takes {_ARITY[kind]} source column(s), got {len(sources)}"
        )

    parents = [ds.column(name) for name in sources]
    if len({c.side for c in parents}) > 1:
        raise DataError(f"{kind.value} sources must be on the same side: {list(sources)}")

    constant = _check_constant(kind, constant)
    values = _apply(kind, [c.values for c in parents], constant)
    lineage = Lineage(kind, tuple((c.name, c.lineage) for c in parents), constant)
    logger.debug("derived column added", name=new_name, kind=kind.value, sources=sources)
    return ds.with_column(Column(new_name, parents[0].side, values, lineage))


_ADDITIVE = (TransformKind.SHIFT,)
_MULTIPLICATIVE = (TransformKind.SCALE, TransformKind.SIGN_FLIP)


def _factor(kind: TransformKind, constant: Optional[float]) -> Fraction:
    return Fraction(-1) if kind is TransformKind.SIGN_FLIP else Fraction(constant)


def _restored(column: Column, kind: TransformKind, constant: Optional[float]) -> Optional[Column]:
    """The earlier state of ``column`` that this re-coding returns it to, if any.

    Walks back through the uninterrupted run of in-place re-codings of the
    same family (shifts, or scales and sign flips), composing the constants
    in exact rational arithmetic.
    """
    family = _ADDITIVE if kind in _ADDITIVE else _MULTIPLICATIVE
    composed = _factor(kind, constant)
    identity = Fraction(0) if family is _ADDITIVE else Fraction(1)
    current = column
    while (
        current.lineage is not None
        and current.lineage.in_place
        and current.lineage.kind in family
        and current.previous is not None
    ):
        step = _factor(current.lineage.kind, current.lineage.constant)
        composed = composed + step if family is _ADDITIVE else composed * step
        current = current.previous
        if composed == identity:
            return current
    return None


def _recode(ds: Dataset, name: str, kind: TransformKind, constant: Optional[float]) -> Dataset:
    column = ds.column(name)
    constant = _check_constant(kind, constant)
    restored = _restored(column, kind, constant)
    if restored is not None:
        logger.debug("re-coding cancels earlier ones", column=name, kind=kind.value)
        return ds.replace_column(restored)

    values = _apply(kind, [column.values], constant)
    recoded = Lineage(kind, ((name, column.lineage),), constant, in_place=True)
    return ds.replace_column(Column(name, column.side, values, recoded, previous=column))


def sign_flip(ds: Dataset, column: str) -> Dataset:
    """Negate a column in place; flipping twice restores it."""
    return _recode(ds, column, TransformKind.SIGN_FLIP, None)


def shift_column(ds: Dataset, column: str, constant: float) -> Dataset:
    """Add a constant to a column in place."""
    return _recode(ds, column, TransformKind.SHIFT, constant)


def rescale_column(ds: Dataset, column: str, factor: float) -> Dataset:
    """Multiply a column by a constant in place (a change of units)."""
    return _recode(ds, column, TransformKind.SCALE, factor)


def make_positive(ds: Dataset, margin: float = 1.0) -> Dataset:
    """Shift every column holding a non-positive value so its minimum becomes ``margin``."""
    if margin <= 0:
        raise DataError("margin must be positive")
    result = ds
    for column in ds.columns:
        low = float(np.min(column.values))
        if low <= 0:
            result = shift_column(result, column.name, margin - low)
            logger.info("column shifted positive", column=column.name, shift=margin - low)
    return result


def apply_derived(ds: Dataset, specs: Iterable[Any]) -> Dataset:
    """Apply derived-column specs (objects with kind, sources, name, constant) in order."""
    for spec in specs:
        ds = add_derived(ds, spec.kind, spec.sources, spec.name, getattr(spec, "constant", None))
    return ds
