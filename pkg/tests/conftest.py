"""
Shared fixtures for the maxcorr test suite.
"""

import json
from pathlib import Path
from typing import Callable, Dict, Optional

import numpy as np
import pytest

from maxcorr.config import SolverConfig
from maxcorr.dataset import Dataset


def random_dataset(seed: int, n_rows: int = 50, n_x: int = 3, n_y: int = 3) -> Dataset:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n_rows, n_x))
    y = rng.standard_normal((n_rows, n_y))
    # Couple the sides so the canonical correlation is well separated from zero.
    y[:, 0] += x @ rng.uniform(0.5, 1.5, n_x)
    return Dataset.from_arrays(
        {f"x{i + 1}": x[:, i] for i in range(n_x)},
        {f"y{j + 1}": y[:, j] for j in range(n_y)},
    )


def resonance_dataset(seed: int = 7, n_rows: int = 40) -> Dataset:
    """x1, x2 and y1 tied by 3*x1 - 2*x2 = y1, plus two noise columns."""
    rng = np.random.default_rng(seed)
    x1 = rng.uniform(1.0, 10.0, n_rows)
    x2 = rng.uniform(1.0, 10.0, n_rows)
    y1 = 3 * x1 - 2 * x2
    x3 = rng.uniform(1.0, 10.0, n_rows)
    y2 = rng.uniform(1.0, 10.0, n_rows)
    # 1% relative noise on the unrelated columns only.
    x3 = x3 * (1 + 0.01 * rng.standard_normal(n_rows))
    y2 = y2 * (1 + 0.01 * rng.standard_normal(n_rows))
    return Dataset.from_arrays({"x1": x1, "x2": x2, "x3": x3}, {"y1": y1, "y2": y2})


@pytest.fixture
def make_dataset() -> Callable[..., Dataset]:
    return random_dataset


@pytest.fixture
def bivariate() -> Dataset:
    """Noisy four-point example: y-on-x slope 0.6, x-on-y slope 1.5, r**2 = 0.9."""
    return Dataset.from_arrays({"x": [0.0, 1.0, 2.0, 3.0]}, {"y": [0.0, 1.0, 1.0, 2.0]})


@pytest.fixture
def exact_line() -> Dataset:
    return Dataset.from_arrays({"x": [0.0, 1.0, 2.0]}, {"y": [1.0, 3.0, 5.0]})


@pytest.fixture
def resonant() -> Dataset:
    return resonance_dataset()


@pytest.fixture
def solver_cfg() -> SolverConfig:
    return SolverConfig(n_starts=3, rng_seed=11)


@pytest.fixture
def write_csv(tmp_path: Path) -> Callable[..., Path]:
    def write(name: str, text: str) -> Path:
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return write


@pytest.fixture
def write_config(tmp_path: Path) -> Callable[..., Path]:
    def write(data: Dict, name: str = "run.json") -> Path:
        path = tmp_path / name
        path.write_text(json.dumps(data), encoding="utf-8")
        return path

    return write


def dataset_csv(ds: Dataset, path: Path, columns: Optional[list] = None) -> Path:
    names = columns or list(ds.names)
    lines = [",".join(names)]
    for i in range(ds.n_rows):
        lines.append(",".join(repr(float(ds.column(n).values[i])) for n in names))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
