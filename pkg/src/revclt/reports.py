"""CSV emission with a fixed column schema and round-trippable floats."""
from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class ReportError(RuntimeError):
    pass


def format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        return "%.17g" % v
    return str(value)


def render_csv(rows: Iterable[dict], schema: Sequence[str]) -> str:
    """Validate every row against ``schema`` and return the CSV text."""
    schema = list(schema)
    rows = list(rows)
    expected = set(schema)
    for i, row in enumerate(rows):
        keys = set(row)
        if keys != expected:
            missing = sorted(expected - keys)
            extra = sorted(keys - expected)
            raise ReportError(f"row {i} does not match schema (missing {missing}, extra {extra})")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(schema)
    for row in rows:
        writer.writerow([format_value(row[c]) for c in schema])
    return buf.getvalue()


def emit_csv(rows: Iterable[dict], schema: Sequence[str], path) -> Path:
    text = render_csv(rows, schema)
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise ReportError(f"{path}: {exc.strerror or exc}") from exc
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
