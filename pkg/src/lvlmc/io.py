"""File formats: sample tables, correlation fields, ensembles, manifests.

All tables are comma-delimited with a header row. Floats are written with
17 significant digits so that files round-trip exactly, and every file is
written to a temporary name and then renamed into place.
"""

import csv
import hashlib
import io as _io
import json
import os
import tempfile

import numpy as np

from .exceptions import ValidationError
from .pipeline import CorrelationField, SampleTable

__all__ = [
    "fmt",
    "atomic_write",
    "write_csv",
    "read_csv",
    "read_samples",
    "write_samples",
    "read_field",
    "write_field",
    "write_node_table",
    "read_node_table",
    "file_digest",
    "write_json",
]

_COORDS = ("x", "y", "z")
_MISSING = {"", "na", "nan", "null", "none"}


def fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def atomic_write(path, text):
    """Write ``text`` to ``path`` via a temporary file and ``os.replace``."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header, rows):
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    atomic_write(path, buf.getvalue())


def write_json(path, obj):
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_csv(path):
    """Header and rows (lists of stripped strings) with their line numbers."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        rows = []
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValidationError(
                    f"{path}, line {reader.line_num}: expected {len(header)} fields, "
                    f"got {len(row)}"
                )
            rows.append((reader.line_num, [c.strip() for c in row]))
    return header, rows


def _floats(path, header, rows, cols):
    out = np.empty((len(rows), len(cols)))
    for r, (line, row) in enumerate(rows):
        for j, c in enumerate(cols):
            s = row[c]
            if s.lower() in _MISSING:
                raise ValidationError(
                    f"{path}, line {line}: missing value in column '{header[c]}'"
                )
            try:
                out[r, j] = float(s)
            except ValueError:
                raise ValidationError(
                    f"{path}, line {line}: cannot parse '{s}' in column '{header[c]}'"
                ) from None
            if not np.isfinite(out[r, j]):
                raise ValidationError(
                    f"{path}, line {line}: non-finite value in column '{header[c]}'"
                )
    return out


def read_samples(path, variables=None):
    """Read a sample table ``id, x, y[, z], var1, ..., varp[, category]``.

    Parameters
    ----------
    path : str
    variables : list of str, optional
        Variable columns to keep (default: every column that is not an id,
        coordinate or category column).
    """
    header, rows = read_csv(path)
    low = [h.lower() for h in header]
    for req in ("id", "x", "y"):
        if req not in low:
            raise ValidationError(f"{path}: header lacks required column '{req}'")
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    ccols = [low.index(c) for c in _COORDS if c in low]
    reserved = {"id", "x", "y", "z", "category"}
    if variables:
        missing = [v for v in variables if v not in header]
        if missing:
            raise ValidationError(f"{path}: unknown variable column(s) {missing}")
        vcols = [header.index(v) for v in variables]
    else:
        vcols = [j for j, h in enumerate(low) if h not in reserved]
    if not vcols:
        raise ValidationError(f"{path}: no variable columns")
    ids = [row[low.index("id")] for _, row in rows]
    seen = {}
    for (line, _), i in zip(rows, ids):
        if i in seen:
            raise ValidationError(f"{path}, line {line}: duplicate id '{i}' (first on line "
                                  f"{seen[i]})")
        seen[i] = line
    coords = _floats(path, header, rows, ccols)
    values = _floats(path, header, rows, vcols)
    cats = None
    if "category" in low:
        cats = tuple(row[low.index("category")] for _, row in rows)
    return SampleTable(tuple(ids), coords, values, tuple(header[j] for j in vcols), cats)


def write_samples(path, table, values=None, names=None):
    values = table.values if values is None else np.asarray(values)
    names = list(names or table.names)
    header = ["id", "x", "y", "z", *names]
    rows = [(i, *c, *v) for i, c, v in zip(table.ids, table.coords, values)]
    if table.categories is not None:
        header.append("category")
        rows = [(*r, cat) for r, cat in zip(rows, table.categories)]
    write_csv(path, header, rows)


def _upper_names(p):
    return [f"r{i + 1}_{j + 1}" for i in range(p) for j in range(i + 1, p)]


def write_field(path, fld, extra=None):
    """Correlation field: ``x, y, z`` then strict upper-triangle entries.

    ``extra`` is an optional ``(name, values)`` column appended at the end.
    """
    header = ["x", "y", "z", *_upper_names(fld.p)]
    up = fld.upper()
    rows = [(*c, *u) for c, u in zip(fld.coords, up)]
    if extra is not None:
        header.append(extra[0])
        rows = [(*r, e) for r, e in zip(rows, extra[1])]
    write_csv(path, header, rows)


def read_field(path, provenance="estimated"):
    header, rows = read_csv(path)
    low = [h.lower() for h in header]
    if low[:3] != ["x", "y", "z"]:
        raise ValidationError(f"{path}: correlation field must start with x, y, z")
    ucols = [j for j, h in enumerate(low) if h.startswith("r") and "_" in h]
    if not rows:
        raise ValidationError(f"{path}: no sites")
    coords = _floats(path, header, rows, [0, 1, 2])
    if not ucols:
        return CorrelationField(coords, np.ones((len(rows), 1, 1)), provenance)
    up = _floats(path, header, rows, ucols)
    return CorrelationField.from_upper(coords, up, provenance)


def write_node_table(path, coords, values, names):
    header = ["x", "y", "z", *names]
    write_csv(path, header, [(*c, *v) for c, v in zip(coords, values)])


def read_node_table(path):
    header, rows = read_csv(path)
    if [h.lower() for h in header[:3]] != ["x", "y", "z"]:
        raise ValidationError(f"{path}: node table must start with x, y, z")
    vals = _floats(path, header, rows, list(range(len(header))))
    return vals[:, :3], vals[:, 3:], header[3:]


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
