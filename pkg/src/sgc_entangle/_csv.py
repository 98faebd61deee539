"""Deterministic CSV helpers (shortest round-trip float formatting)."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence


def fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (bool,)):
        return str(int(x))
    if isinstance(x, int):
        return str(x)
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def _emit(fh, header, rows, comments):
    for line in comments:
        fh.write(f"# {line}\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])


def write_rows(path, header: Sequence[str], rows: Iterable[Sequence], comments: Sequence[str] = ()):
    """Write to a filesystem path (parents created) or to an open text stream."""
    if hasattr(path, "write"):
        _emit(path, header, rows, comments)
        return path
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        _emit(fh, header, rows, comments)
    return path


def read_rows(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    return header, [row for row in reader]
