"""Dataset container and CSV ingestion."""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

__all__ = ["Dataset", "load_csv", "write_csv"]


@dataclass
class Dataset:
    """Response in (0, 1) plus named covariate columns of equal length."""

    response: np.ndarray
    columns: dict = field(default_factory=dict)
    provenance: str = ""
    response_name: str = "y"

    def __post_init__(self):
        self.response = np.asarray(self.response, dtype=float).ravel()
        n = self.response.size
        if n == 0:
            raise DataError("dataset is empty")
        cols = {}
        for name, values in self.columns.items():
            arr = np.asarray(values, dtype=float).ravel()
            if arr.size != n:
                raise DataError(f"column {name!r} has {arr.size} values, expected {n}", column=name)
            if not np.all(np.isfinite(arr)):
                rows = np.flatnonzero(~np.isfinite(arr)).tolist()
                raise DataError(f"column {name!r} has missing or non-finite values", rows=rows, column=name)
            cols[name] = arr
        self.columns = cols
        y = self.response
        bad = ~((y > 0) & (y < 1))
        if bad.any():
            rows = np.flatnonzero(bad).tolist()
            raise DataError(
                f"response must lie strictly inside (0, 1); offending rows {rows}",
                rows=rows,
                column=self.response_name,
            )

    @property
    def n(self):
        return self.response.size

    @property
    def schema(self):
        return list(self.columns)

    def subset(self, index):
        """Rows selected by ``index`` (mask or integer array)."""
        return Dataset(
            self.response[index],
            {k: v[index] for k, v in self.columns.items()},
            provenance=self.provenance,
            response_name=self.response_name,
        )

    def drop(self, t):
        mask = np.ones(self.n, dtype=bool)
        mask[t] = False
        return self.subset(mask)


def load_csv(path, response_column="y"):
    """Read a header-first, comma-separated numeric file.

    Rows are reported 1-based as data rows (the header is row 0).  The
    response is never nudged away from 0 or 1; such rows are rejected.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if response_column not in header:
            raise DataError(f"{path}: no response column {response_column!r}", column=response_column)
        if len(set(header)) != len(header):
            raise DataError(f"{path}: duplicate column names")
        values = {h: [] for h in header}
        for lineno, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}", rows=[lineno])
            for name, cell in zip(header, row):
                try:
                    value = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: row {lineno}, column {name!r}: not a number ({cell!r})",
                        rows=[lineno],
                        column=name,
                    ) from None
                if not math.isfinite(value):
                    raise DataError(
                        f"{path}: row {lineno}, column {name!r}: missing or non-finite value",
                        rows=[lineno],
                        column=name,
                    )
                values[name].append(value)
    y = np.array(values.pop(response_column))
    if y.size == 0:
        raise DataError(f"{path}: no data rows")
    bad = ~((y > 0) & (y < 1))
    if bad.any():
        rows = (np.flatnonzero(bad) + 1).tolist()
        raise DataError(
            f"{path}: response {response_column!r} outside (0, 1) at rows {rows}",
            rows=rows,
            column=response_column,
        )
    return Dataset(y, values, provenance=str(path), response_name=response_column)


def write_csv(data, path):
    """Write ``data`` so that :func:`load_csv` reproduces it exactly."""
    names = [data.response_name] + data.schema
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        cols = [data.response] + [data.columns[k] for k in data.schema]
        for i in range(data.n):
            writer.writerow([repr(float(c[i])) for c in cols])
