"""CSV serialisation of observation series and latent paths.

Format: header ``t,y1,...,yd``, one row per grid point,17 significant
digits (full double round-trip).
"""
from __future__ import annotations

import csv

import numpy as np

from .model import ObservationSeries

__all__ = ["write_series_csv", "ingest_csv"]


def write_series_csv(path, values, h):
    """Write a (n+1, d) array on the grid {0, h, ..., n*h}."""
    values = np.asarray(values, dtype=float)
    d = values.shape[1]
    t = np.arange(values.shape[0]) * h
    header = "t," + ",".join("y%d" % (j + 1) for j in range(d))
    np.savetxt(
        path,
        np.column_stack([t, values]),
        fmt="%.17g",
        delimiter=",",
        header=header,
        comments="",
    )


def _sniff_header(path):
    with open(path, newline="") as fh:
        first = fh.readline()
    cells = next(csv.reader([first]))
    try:
        for cell in cells:
            float(cell)
    except ValueError:
        return [c.strip() for c in cells]
    return None


def _resolve_columns(columns, header, n_cols, path):
    if columns is None:
        if header is not None:
            return [i for i, name in enumerate(header) if name != "t"]
        return list(range(n_cols))
    out = []
    for c in columns:
        if isinstance(c, str):
            if header is None:
                raise ValueError(
                    "%s has no header row; select columns by index" % path
                )
            if c not in header:
                raise ValueError("column %r not found in %s header" % (c, path))
            out.append(header.index(c))
        else:
            out.append(int(c))
    return out


def _diagnose(path, header, usecols):
    """Locate the first ragged row or non-numeric cell and raise."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        width = None
        for rownum, row in enumerate(reader, start=1):
            if header is not None and rownum == 1:
                width = len(row)
                continue
            if width is None:
                width = len(row)
            if len(row) != width:
                raise ValueError(
                    "%s: ragged row %d (%d fields, expected %d)"
                    % (path, rownum, len(row), width)
                )
            for col in usecols:
                if col >= len(row):
                    raise ValueError(
                        "%s: row %d has no column %d" % (path, rownum, col)
                    )
                try:
                    float(row[col])
                except ValueError:
                    name = (
                        header[col]
                        if header is not None and col < len(header)
                        else str(col)
                    )
                    raise ValueError(
                        "%s: non-numeric cell at row %d, column %s (%r)"
                        % (path, rownum, name, row[col])
                    ) from None
    raise ValueError("%s: could not parse file" % path)


def ingest_csv(path, h, columns=None) -> ObservationSeries:
    """Read an equally spaced series from CSV.

    Parameters
    ----------
    path : str
        CSV file; a header row is auto-detected (first row not fully
        numeric).
    h : float
        Step between rows, in the caller's time unit. Recording resolution
        and time unit are the caller's responsibility (e.g. 0.05 s sampled
        against a 2 h unit gives h = 0.05/7200).
    columns : sequence of str or int, optional
        Which columns form the series, by header name or 0-based index.
        Default: every column, minus a column literally named "t" when a
        header is present.

    Raises ValueError naming the row and column of the first non-numeric
    cell, or the first ragged row.
    """
    header = _sniff_header(path)
    with open(path, newline="") as fh:
        n_cols = len(next(csv.reader([fh.readline()])))
    usecols = _resolve_columns(columns, header, n_cols, path)
    if not usecols:
        raise ValueError("no data columns selected from %s" % path)
    try:
        data = np.loadtxt(
            path,
            delimiter=",",
            skiprows=1 if header is not None else 0,
            usecols=usecols,
            ndmin=2,
        )
    except ValueError:
        _diagnose(path, header, usecols)
        raise
    return ObservationSeries(h=h, values=data)
