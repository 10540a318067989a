"""CSV and manifest writers with deterministic formatting.

Floats are written with ``repr`` (shortest round-trip form), rows end in
LF and the separator is ``,``.  Snapshot files carry coordinates as row
and column headers: in 1D two columns ``x,rho``; in 2D a header row of
x-coordinates and one row per y-coordinate.
"""

import csv
import json
import os
import tempfile

import numpy as np

from .errors import InvalidSpec, SizeMismatch


def fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if np.isnan(v):
        return "nan"
    if np.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if not isinstance(v, str) else v for v in row])


def read_rows(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidSpec(f"{path} is empty")
    return rows[0], rows[1:]


def _axes(grid):
    x = np.unique(grid.cell_centers[:, 0])
    y = np.unique(grid.cell_centers[:, 1]) if grid.dim == 2 else None
    return x, y


def write_field(path, grid, values):
    """Write a cell field in the snapshot layout."""
    values = grid.check_cells(values, "field")
    x, y = _axes(grid)
    if grid.dim == 1:
        write_rows(path, ["x", "rho"], zip(x, values))
        return
    table = values.reshape(grid.nx, grid.ny).T
    write_rows(path, ["y\\x"] + [fmt(v) for v in x], ([yj] + list(row) for yj, row in zip(y, table)))


def read_field(path, grid):
    """Read a cell field written by :func:`write_field` (coordinates are not checked)."""
    header, rows = read_rows(path)
    try:
        if grid.dim == 1:
            vals = np.array([float(r[1]) for r in rows])
        else:
            vals = np.array([[float(v) for v in r[1:]] for r in rows]).T.ravel()
    except (IndexError, ValueError) as exc:
        raise InvalidSpec(f"malformed field file {path}: {exc}") from None
    if vals.size != grid.ncells:
        raise SizeMismatch(f"{path} holds {vals.size} values, grid has {grid.ncells} cells")
    return vals


def read_profile(path):
    """Two-column ``coordinate,value`` table, sorted by coordinate."""
    _, rows = read_rows(path)
    try:
        data = np.array([[float(r[0]), float(r[1])] for r in rows])
    except (IndexError, ValueError) as exc:
        raise InvalidSpec(f"malformed profile file {path}: {exc}") from None
    order = np.argsort(data[:, 0])
    return data[order, 0], data[order, 1]


def write_json_atomic(path, obj):
    """Write JSON through a temporary file and an atomic rename."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".manifest-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(_finite(obj), fh, indent=2, sort_keys=True, default=_jsonable, allow_nan=False)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    return str(o)


def _finite(o):
    """Replace non-finite floats by their string names so the JSON is strict."""
    if isinstance(o, dict):
        return {str(k): _finite(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_finite(v) for v in o]
    if isinstance(o, np.ndarray):
        return _finite(o.tolist())
    if isinstance(o, (float, np.floating)) and not np.isfinite(o):
        return fmt(o)
    return o
