"""Deterministic CSV / JSON / NDJSON writers shared by the CLI."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

TRUNCATION_MARKER = "# truncated"


def clean(obj):
    """Make ``obj`` JSON-safe: numpy scalars/arrays to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return obj


def dumps(obj) -> str:
    return json.dumps(clean(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


class CsvWriter:
    """Row-at-a-time CSV with a mandatory header; flushes after every row.

    ``close(truncated=True)`` appends a marker line so partial output is recognisable.
    """

    def __init__(self, path, header):
        self.path = Path(path)
        self.header = list(header)
        self._fh = self.path.open("w", encoding="utf-8", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(self.header)
        self._fh.flush()

    def write(self, row: dict) -> None:
        self._writer.writerow([fmt(row[h]) for h in self.header])
        self._fh.flush()

    def close(self, truncated: bool = False) -> None:
        if self._fh.closed:
            return
        if truncated:
            self._fh.write(TRUNCATION_MARKER + "\n")
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close(truncated=exc_type is not None)
        return False


def read_csv(path) -> list:
    """Rows of a CSV written by CsvWriter as dicts of floats (strings kept if not numeric)."""
    with Path(path).open(encoding="utf-8", newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = []
    for rec in csv.DictReader(lines):
        row = {}
        for key, val in rec.items():
            try:
                row[key] = float(val)
            except (TypeError, ValueError):
                row[key] = val
        rows.append(row)
    return rows


class NdjsonWriter:
    def __init__(self, path):
        self.path = Path(path)
        self._fh = self.path.open("w", encoding="utf-8")

    def write(self, obj) -> None:
        self._fh.write(json.dumps(clean(obj), sort_keys=True) + "\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
