"""CSV ingestion for long-format DID data and covariance matrices."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Optional

import numpy as np

from .core import TimeLayout
from .estimators import DataError, Dataset, Design

REQUIRED = ("time", "treated", "outcome")


class SchemaError(DataError):
    pass


def _parse_float(text: str, line: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise SchemaError(f"line {line}, column {column!r}: {text!r} is not a number") from None
    if not math.isfinite(value):
        raise SchemaError(f"line {line}, column {column!r}: value must be finite")
    return value


def read_dataset(
    path,
    t0: int,
    periods: Optional[int] = None,
    design: str = "auto",
    cluster_column: str = "cluster_id",
    weight_column: str = "weight",
    unit_column: str = "unit_id",
) -> Dataset:
    """Load a long-format CSV (header required, comma delimited, UTF-8).

    Columns: ``time`` (integer), ``treated`` (0/1), ``outcome`` (decimal), and
    optionally ``unit_id``, ``cluster_id``, ``weight``. With ``design="auto"`` the
    data are treated as a panel when a unit column is present.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: file is empty") from None
        missing = [c for c in REQUIRED if c not in header]
        if missing:
            raise SchemaError(f"{path}: header is missing required column(s) {missing}")
        col = {name: i for i, name in enumerate(header)}
        has_unit = unit_column in col
        has_cluster = cluster_column in col
        has_weight = weight_column in col
        times, treated, outcome, units, clusters, weights = [], [], [], [], [], []
        for line, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise SchemaError(
                    f"line {line}: expected {len(header)} fields, found {len(row)}"
                )
            t = row[col["time"]].strip()
            if not t.lstrip("-").isdigit():
                raise SchemaError(f"line {line}, column 'time': {t!r} is not an integer")
            times.append(int(t))
            d = row[col["treated"]].strip()
            if d not in ("0", "1"):
                raise SchemaError(f"line {line}, column 'treated': expected 0 or 1, got {d!r}")
            treated.append(d == "1")
            outcome.append(_parse_float(row[col["outcome"]].strip(), line, "outcome"))
            if has_unit:
                units.append(row[col[unit_column]].strip())
            if has_cluster:
                clusters.append(row[col[cluster_column]].strip())
            if has_weight:
                w = _parse_float(row[col[weight_column]].strip(), line, weight_column)
                if w <= 0:
                    raise SchemaError(f"line {line}, column {weight_column!r}: weight must be positive")
                weights.append(w)
    if not times:
        raise SchemaError(f"{path}: no data rows")
    T = periods or max(times)
    layout = TimeLayout(T, t0)
    if design == "auto":
        design = Design.PANEL if has_unit else Design.REPEATED_CROSS_SECTION
    return Dataset(
        time=np.array(times),
        treated=np.array(treated),
        outcome=np.array(outcome),
        layout=layout,
        design=Design(design),
        unit_id=np.array(units, dtype=object) if has_unit else None,
        cluster_id=np.array(clusters, dtype=object) if has_cluster else None,
        weight=np.array(weights) if has_weight else None,
    )


def read_matrix(path) -> np.ndarray:
    """Square matrix from a headerless comma-separated file."""
    rows = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for line, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            rows.append([_parse_float(c.strip(), line, f"col{j + 1}") for j, c in enumerate(row)])
    if not rows:
        raise SchemaError(f"{path}: empty matrix")
    if any(len(r) != len(rows) for r in rows):
        raise SchemaError(f"{path}: matrix is not square ({len(rows)} rows)")
    return np.array(rows, dtype=float)
