"""Versioned CSV output shared by every report the package writes."""

from __future__ import annotations

import csv
import io

CSV_VERSION = "# ceulab-csv v1"


def _cell(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, int)) and not isinstance(value, float):
        return str(value)
    return repr(float(value))


def write_csv(kind: str, header, rows) -> str:
    """Render ``rows`` under a ``# ceulab-csv v1 <kind>`` comment line.

    Floats use ``repr`` so the text round-trips exactly and identical inputs
    give byte-identical files.
    """
    buf = io.StringIO()
    buf.write(f"{CSV_VERSION} {kind}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def read_csv(text: str) -> tuple[str, list[str], list[list[str]]]:
    """Inverse of :func:`write_csv`: ``(kind, header, rows)`` as strings."""
    lines = text.splitlines()
    if not lines or not lines[0].startswith(CSV_VERSION + " "):
        raise ValueError("missing ceulab-csv version line")
    kind = lines[0][len(CSV_VERSION) + 1 :]
    records = list(csv.reader(lines[1:]))
    return kind, records[0], records[1:]
