"""Reading of the versioned CSV files written by the manifold-ghmc CLI.

Every file starts with a provenance comment line

    # manifold-ghmc v1, experiment=<name>, seed=<int>, ...

followed by a normal CSV header row. This module validates the header,
parses the provenance fields, and hands back rows as dictionaries. The
plotting layer never recomputes statistics: everything drawn comes from
these files.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

FORMAT_PREFIX = "# manifold-ghmc v1,"


class SchemaError(Exception):
    """The input file is not a recognized manifold-ghmc v1 CSV."""


@dataclass(frozen=True)
class Table:
    path: Path
    provenance: dict[str, str]
    columns: tuple[str, ...]
    rows: tuple[dict[str, str], ...]

    @property
    def experiment(self) -> str:
        return self.provenance.get("experiment", "")

    def floats(self, column: str) -> list[float]:
        """Column as floats; empty CSV fields become NaN."""
        if column not in self.columns:
            raise SchemaError(f"{self.path}: missing column {column!r}")
        return [float(row[column]) if row[column] != "" else math.nan
                for row in self.rows]


def _parse_provenance(line: str, path: Path) -> dict[str, str]:
    if not line.startswith(FORMAT_PREFIX):
        raise SchemaError(
            f"{path}: first line is not a '{FORMAT_PREFIX} ...' provenance header")
    fields: dict[str, str] = {}
    for part in line[len(FORMAT_PREFIX):].split(","):
        key, sep, value = part.strip().partition("=")
        if sep:
            fields[key] = value
    return fields


def read_table(path: str | Path) -> Table:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            first = fh.readline().rstrip("\n")
            provenance = _parse_provenance(first, path)
            reader = csv.DictReader(fh)
            columns = tuple(reader.fieldnames or ())
            rows = tuple(dict(row) for row in reader)
    except OSError as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    if not columns:
        raise SchemaError(f"{path}: no column header after the provenance line")
    return Table(path=path, provenance=provenance, columns=columns, rows=rows)


def require_experiment(table: Table, expected: str) -> Table:
    if table.experiment != expected:
        raise SchemaError(
            f"{table.path}: experiment={table.experiment!r}, expected {expected!r}")
    return table
