"""Versioned CSV reports: a ``# schema: <name> v<N>`` line, then a fixed header."""
from __future__ import annotations

import csv
import io
from pathlib import Path


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dumps(schema: str, version: int, columns: list[str], rows: list[dict]) -> str:
    buf = io.StringIO()
    buf.write(f"# schema: {schema} v{version}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def write(path: str | Path, schema: str, version: int, columns: list[str], rows: list[dict]) -> None:
    Path(path).write_text(dumps(schema, version, columns, rows), encoding="utf-8")


def read(path: str | Path, schema: str, version: int, columns: list[str], types: dict | None = None) -> list[dict]:
    """Parse a report written by :func:`write`, checking schema line and header."""
    types = types or {}
    with open(path, newline="", encoding="utf-8") as fh:
        first = fh.readline().strip()
        if first != f"# schema: {schema} v{version}":
            raise ValueError(f"{path}: expected schema {schema} v{version}, found {first!r}")
        reader = csv.DictReader(fh)
        if reader.fieldnames != columns:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [{c: types.get(c, float)(r[c]) for c in columns} for r in reader]
