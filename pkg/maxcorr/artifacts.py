"""
Artifact persistence.

Artifacts are deterministic: no timestamps, stable key order, floats written
with full precision, so two runs with the same configuration and seed produce
byte-identical files. Every write goes to a temporary file in the target
directory first and is renamed into place.
"""

import io
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Union

import numpy as np
import pandas as pd
import structlog

from .errors import SchemaError

logger = structlog.get_logger(__name__)


def _plain(value: Any) -> Any:
    if isinstance(value, Mapping):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def to_json(document: Mapping[str, Any]) -> str:
    return json.dumps(_plain(document), indent=2, sort_keys=False) + "\n"


def to_json_lines(header: Mapping[str, Any], records: Iterable[Mapping[str, Any]]) -> str:
    lines = [json.dumps(_plain(header))]
    lines += [json.dumps(_plain(record)) for record in records]
    return "\n".join(lines) + "\n"


def to_csv(frame: pd.DataFrame, config: Optional[Mapping[str, Any]] = None) -> str:
    """CSV with the resolved configuration as a leading comment line."""
    buffer = io.StringIO()
    if config is not None:
        buffer.write("# config=" + json.dumps(_plain(config), separators=(",", ":")) + "\n")
    frame.to_csv(buffer, index=False, float_format="%.17g", lineterminator="\n")
    return buffer.getvalue()


def write_atomic(path: Union[str, Path], text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    handle, temp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(handle, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(temp_name, path)
    except BaseException:
        if os.path.exists(temp_name):
            os.unlink(temp_name)
        raise
    logger.debug("artifact written", path=str(path), size=len(text))
    return path


def read_json(path: Union[str, Path]) -> Dict[str, Any]:
    """Load a JSON artifact; unparseable or non-object content raises SchemaError."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise SchemaError(f"could not parse artifact {path}: {e}") from None
    if not isinstance(document, dict):
        raise SchemaError(f"artifact {path} does not hold a JSON object")
    return document


def envelope(command: str, config: Mapping[str, Any], result: Mapping[str, Any]) -> Dict[str, Any]:
    """The common artifact layout: command name, resolved config, then the result."""
    return {"command": command, "config": dict(config), "result": dict(result)}
