"""
Exception hierarchy for the maximum correlation modelling package.

The CLI maps these onto exit codes: configuration problems exit with 1,
everything rooted at ``DataError`` exits with 2.
"""


class MaxCorrError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(MaxCorrError, ValueError):
    """Invalid run configuration, unknown keys or out-of-range parameters."""

    exit_code = 1


class ConstraintError(ConfigError):
    """A constraint or normalization that cannot be built against the dataset."""


class EnumerationLimitError(ConfigError):
    """Integer search would enumerate more combinations than the ceiling allows."""


class DataError(MaxCorrError, ValueError):
    """Problems with the data itself: ingestion, schema, transforms, degeneracy."""

    exit_code = 2


class DimensionError(DataError):
    """Weight or vector lengths do not match the dataset."""


class SchemaError(DataError):
    """Columns required by a model are missing or on the wrong side."""


class DegenerateCompositeError(DataError):
    """A composite (or input vector) has zero variance."""


class CollinearityError(DataError):
    """A within-set covariance matrix is singular or too badly conditioned."""

    def __init__(self, side: str, condition: float) -> None:
        self.side = side
        self.condition = condition
        super().__init__(
            f"{side}-side columns are collinear "
            f"(covariance condition number {condition:.3g})"
        )


class RankDeficiencyError(DataError):
    """The implied least-squares design matrix lacks full column rank."""
