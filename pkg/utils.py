"""
This module provides utility functions for data ingestion and report output.

It includes helpers for:
- Reading CSV files and extracting numeric columns with precise error messages.
- Building design matrices (with an optional intercept column).
- Loading and validating scenario files, reporting schema errors as JSON pointers.
- Converting results to JSON-safe structures and writing JSON / CSV reports.
"""

import dataclasses
import json
import logging
import math
import os
from datetime import datetime, timezone
from enum import Enum
from typing import Any

import numpy as np
import pandas as pd
from pydantic import ValidationError

from config import ARTIFACT_VERSION, REPORT_SCHEMA_VERSION
from datatypes import ScenarioConfig
from errors import DataParseError, ReportIOError, ScenarioError
from mcmc import SAMPLER_NAME

logger: logging.Logger = logging.getLogger(__name__)

DEVIATIONS: list[str] = [
    "posterior sampling uses adaptive component-wise random-walk Metropolis instead of NUTS",
    "marginal likelihoods use iterative bridge sampling with a moment-matched normal proposal",
    "the OLS bootstrap baseline uses case resampling with percentile intervals",
    "the robust MM-estimator bootstrap baseline is not provided",
]


# --- input ---

def load_csv(path: str) -> pd.DataFrame:
    """Reads a UTF-8 CSV with a header row and '.' as the decimal mark."""
    try:
        return pd.read_csv(path, encoding="utf-8", sep=",", decimal=".")
    except FileNotFoundError:
        raise ReportIOError(f"Data file not found: {path}")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataParseError(f"Cannot parse {path}: {e}")
    except OSError as e:
        raise ReportIOError(f"Cannot read {path}: {e}")


def numeric_column(frame: pd.DataFrame, name: str) -> np.ndarray:
    if name not in frame.columns:
        raise DataParseError(
            f"Column '{name}' not found; available columns: {', '.join(map(str, frame.columns))}")
    values = pd.to_numeric(frame[name], errors="coerce")
    bad = values.isna() | ~np.isfinite(values.astype(float))
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise DataParseError(
            f"Column '{name}' has a missing or non-numeric value at data row {row + 1}: {frame[name].iloc[row]!r}")
    return values.to_numpy(dtype=float)


def build_design(
    frame: pd.DataFrame,
    predictors: list[str],
    add_intercept: bool = True,
) -> tuple[np.ndarray, tuple[str, ...]]:
    columns: list[np.ndarray] = [numeric_column(frame, name) for name in predictors]
    names: list[str] = list(predictors)
    if add_intercept:
        columns.insert(0, np.ones(len(frame)))
        names.insert(0, "intercept")
    if not columns:
        raise DataParseError("The design needs at least one column")
    return np.column_stack(columns), tuple(names)


def json_pointer(location: tuple[Any, ...]) -> str:
    """Formats a pydantic error location as a JSON pointer, e.g. ('err_m', 'gamma') -> '/err_m/gamma'."""
    parts: list[str] = [str(part).replace("~", "~0").replace("/", "~1") for part in location]
    return "/" + "/".join(parts)


def format_validation_error(error: ValidationError) -> str:
    return "; ".join(f"{json_pointer(e['loc'])}: {e['msg']}" for e in error.errors())


def load_scenario(path: str) -> ScenarioConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw: Any = json.load(f)
    except FileNotFoundError:
        raise ReportIOError(f"Scenario file not found: {path}")
    except json.JSONDecodeError as e:
        raise ScenarioError(f"Scenario file {path} is not valid JSON: {e}")
    try:
        scenario = ScenarioConfig.model_validate(raw)
    except ValidationError as e:
        raise ScenarioError(f"Invalid scenario {path}: {format_validation_error(e)}")
    if scenario.schema_version != REPORT_SCHEMA_VERSION:
        raise ScenarioError(
            f"/schema_version: unsupported scenario schema {scenario.schema_version}, "
            f"expected {REPORT_SCHEMA_VERSION}")
    return scenario


# --- output ---

def to_jsonable(value: Any) -> Any:
    """Recursively converts results to JSON types; non-finite floats become None."""
    if isinstance(value, Enum):
        return value.value
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {f.name: to_jsonable(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if hasattr(value, "model_dump"):
        return to_jsonable(value.model_dump())
    if isinstance(value, dict):
        return {str(to_jsonable(k)): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        return float(value) if math.isfinite(value) else None
    return value


def report_envelope(command: str, resolved_config: dict[str, Any], seed: int) -> dict[str, Any]:
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "artifact_version": ARTIFACT_VERSION,
        "command": command,
        "generated_at": datetime.now(timezone.utc).isoformat(),
        "seed": seed,
        "sampler": SAMPLER_NAME,
        "deviations": DEVIATIONS,
        "config": resolved_config,
    }


def _ensure_parent(path: str) -> None:
    parent: str = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)


def write_json_report(path: str | None, report: dict[str, Any]) -> None:
    """Writes the report to `path`, or to stdout when `path` is None."""
    text: str = json.dumps(to_jsonable(report), indent=2)
    if path is None:
        print(text)
        return
    try:
        _ensure_parent(path)
        with open(path, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    except OSError as e:
        raise ReportIOError(f"Cannot write report {path}: {e}")
    logger.info(f"Wrote {path}")


def write_csv(path: str, rows: list[dict[str, Any]]) -> None:
    try:
        _ensure_parent(path)
        pd.DataFrame([to_jsonable(row) for row in rows]).to_csv(path, index=False, encoding="utf-8")
    except OSError as e:
        raise ReportIOError(f"Cannot write table {path}: {e}")
    logger.info(f"Wrote {path}")
