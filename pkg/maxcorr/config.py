"""
Configuration management for maximum correlation runs.

One ``RunConfig`` document drives every CLI command. It is validated as a
whole (unknown keys rejected) before any computation starts, and its
``model_dump(mode="json")`` form is embedded in every artifact.
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .dataset import Side, TransformKind
from .errors import ConfigError


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SolverConfig(StrictModel):
    """Stopping rule, multi-start and tolerance settings for the correlation solver."""
    convergence: float = Field(1e-9, gt=0, lt=1)
    patience: int = Field(5, ge=1)
    max_iterations: int = Field(10000, ge=1)
    n_starts: int = Field(5, ge=1)
    rng_seed: int = 0
    gradient_tolerance: float = Field(1e-8, gt=0)
    feasibility_tolerance: float = Field(1e-8, gt=0)


class DerivedSpec(StrictModel):
    kind: TransformKind
    sources: List[str] = Field(min_length=1)
    name: str
    constant: Optional[float] = None


class RecodeSpec(StrictModel):
    """In-place re-coding of an existing column (sign flip, shift or change of units)."""
    kind: Literal["sign_flip", "shift", "scale"]
    column: str
    constant: Optional[float] = None

    @model_validator(mode="after")
    def _constant_present(self) -> "RecodeSpec":
        if self.kind != "sign_flip" and self.constant is None:
            raise ValueError(f"{self.kind} needs a constant")
        return self


class RolesConfig(StrictModel):
    x: List[str] = Field(min_length=1)
    y: List[str] = Field(min_length=1)
    derived: List[DerivedSpec] = Field(default_factory=list)
    recode: List[RecodeSpec] = Field(default_factory=list)
    make_positive: bool = False

    @model_validator(mode="after")
    def _disjoint(self) -> "RolesConfig":
        both = sorted(set(self.x) & set(self.y))
        if both:
            raise ValueError(f"columns assigned to both sides: {both}")
        names = self.x + self.y + [d.name for d in self.derived]
        repeated = sorted({n for n in names if names.count(n) > 1})
        if repeated:
            raise ValueError(f"repeated column names: {repeated}")
        return self

    def side_map(self) -> Dict[str, Side]:
        roles = {name: Side.X for name in self.x}
        roles.update({name: Side.Y for name in self.y})
        return roles


class ConstraintSpec(StrictModel):
    coeffs: Dict[str, float] = Field(min_length=1)
    relation: Literal["<=", "=", ">="]
    rhs: float = 0.0


class NormalizationSpec(StrictModel):
    kind: Literal["fix_coefficient", "sum_to_one"] = "fix_coefficient"
    coefficient: Optional[str] = None
    value: float = 1.0
    side: Optional[Side] = None

    @model_validator(mode="after")
    def _complete(self) -> "NormalizationSpec":
        if self.kind == "fix_coefficient":
            if self.value == 0:
                raise ValueError("a coefficient cannot be fixed to zero")
            if self.side is not None:
                raise ValueError("fix_coefficient takes a coefficient label, not a side")
        elif self.side is None or self.coefficient is not None:
            raise ValueError("sum_to_one needs a side and no coefficient")
        return self


class RegressionConfig(StrictModel):
    direction: Literal["y_on_x", "x_on_y"] = "y_on_x"


class LsCompareConfig(StrictModel):
    probe_column: Optional[str] = None
    probe_factor: float = Field(10.0, gt=0)

    @field_validator("probe_factor")
    @classmethod
    def _not_identity(cls, value: float) -> float:
        if value == 1:
            raise ValueError("probe_factor must differ from 1")
        return value


class IntegerSearchConfig(StrictModel):
    """Bounds for the exhaustive integer-coefficient search."""
    bound: int = Field(2, ge=1)
    top_k: int = Field(10, ge=1)
    ceiling: int = Field(10 ** 8, ge=1)
    exclude_all_zero_side: Literal[True] = True


class ResonanceConfig(IntegerSearchConfig):
    # No meaningful default exists for "close to an integer".
    threshold: Optional[float] = Field(None, gt=0)
    zero_tolerance: float = Field(0.0, ge=0, lt=1)


class OutputConfig(StrictModel):
    path: Optional[Path] = None
    format: Literal["json", "csv"] = "json"


class RunConfig(StrictModel):
    """Complete, validated description of one run."""

    data: Optional[Path] = None
    roles: RolesConfig
    constraints: List[ConstraintSpec] = Field(default_factory=list)
    normalization: Optional[NormalizationSpec] = None
    solver: SolverConfig = Field(default_factory=SolverConfig)
    target: Optional[float] = Field(None, gt=-1, lt=1)
    regression: RegressionConfig = Field(default_factory=RegressionConfig)
    ls_compare: LsCompareConfig = Field(default_factory=LsCompareConfig)
    resonance: ResonanceConfig = Field(default_factory=ResonanceConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        try:
            return cls.model_validate(dict(data))
        except ValidationError as e:
            raise ConfigError(f"invalid configuration: {e}") from None

    @classmethod
    def load_from_file(cls, config_path: Path, **overrides: Any) -> "RunConfig":
        """Load a JSON or YAML configuration, apply CLI overrides, then validate."""
        return cls.from_dict(apply_overrides(read_config_file(config_path), **overrides))

    def save_to_file(self, config_path: Path) -> None:
        config_path.parent.mkdir(parents=True, exist_ok=True)
        data = self.model_dump(mode="json", exclude_none=True)
        with open(config_path, "w", encoding="utf-8") as f:
            if config_path.suffix.lower() in (".yaml", ".yml"):
                yaml.safe_dump(data, f, default_flow_style=False, indent=2, sort_keys=False)
            else:
                json.dump(data, f, indent=2)

    def resolved(self) -> Dict[str, Any]:
        """The resolved configuration as embedded in artifacts (output path excluded)."""
        return self.model_dump(mode="json", exclude={"output": {"path"}})


def read_config_file(config_path: Path) -> Dict[str, Any]:
    config_path = Path(config_path)
    if not config_path.exists():
        raise ConfigError(f"configuration file not found: {config_path}")

    with open(config_path, "r", encoding="utf-8") as f:
        try:
            if config_path.suffix.lower() in (".yaml", ".yml"):
                data = yaml.safe_load(f)
            else:
                data = json.load(f)
        except (yaml.YAMLError, json.JSONDecodeError) as e:
            raise ConfigError(f"could not parse {config_path}: {e}") from None

    if not isinstance(data, dict):
        raise ConfigError(f"{config_path} does not hold a configuration mapping")
    return data


def apply_overrides(
    data: Mapping[str, Any],
    data_path: Optional[str] = None,
    seed: Optional[int] = None,
    out: Optional[str] = None,
    fmt: Optional[str] = None,
) -> Dict[str, Any]:
    """Merge command-line flags into a raw configuration mapping."""
    merged = dict(data)
    if data_path is not None:
        merged["data"] = data_path
    if seed is not None:
        merged["solver"] = {**merged.get("solver", {}), "rng_seed": seed}
    if out is not None or fmt is not None:
        output = dict(merged.get("output", {}))
        if out is not None:
            output["path"] = out
        if fmt is not None:
            output["format"] = fmt
        merged["output"] = output
    return merged
