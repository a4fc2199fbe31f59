"""Plain CSV series with 17 significant digits (exact float round trip)."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

__all__ = ["format_value", "write_csv", "read_csv"]


def format_value(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def write_csv(path, columns, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            if len(r) != len(columns):
                raise ValueError(f"row has {len(r)} values for {len(columns)} columns")
            w.writerow([format_value(x) for x in r])
    return path


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Header and float matrix (shape (rows, columns)) of a file from :func:`write_csv`."""
    with open(path, newline="", encoding="ascii") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        data = [[float(x) for x in row] for row in rd]
    return header, np.array(data, dtype=float).reshape(-1, len(header))
