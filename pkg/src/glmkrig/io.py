"""CSV and binary file formats used by the command-line workflow.

All CSVs are UTF-8 with a mandatory header row and deterministic number
formatting, written atomically (temp file then rename).  Data rows are
points (x, y[, t], z[, k]), axis-aligned rectangles
(xmin, ymin, xmax, ymax[, t], z[, k]), or explicit cell-index lists
(bau_indices separated by ';').  Retained sample matrices use a binary
column-major dump with a 16-byte header: 8-byte magic, uint32 rows,
uint32 cols.
"""

from __future__ import annotations

import csv
import os
import struct
import tempfile

import numpy as np

from .geometry import BAUIndexSet, Point, Rect

__all__ = [
    "IOFormatError",
    "fmt",
    "atomic_write_text",
    "write_csv",
    "read_csv_dict",
    "write_data_csv",
    "read_data_csv",
    "write_truth_csv",
    "read_truth_csv",
    "write_sample_dump",
    "read_sample_dump",
]

SAMPLE_MAGIC = b"GLMKSMP1"


class IOFormatError(ValueError):
    pass


def fmt(v) -> str:
    """Deterministic scalar formatting for CSV output."""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    f = float(v)
    if f == int(f) and abs(f) < 1e15:
        return str(int(f))
    return format(f, ".12g")


def atomic_write_text(path: str, text: str):
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp_", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: str, header: list, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) if not isinstance(v, str) else v for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_csv_dict(path: str):
    """Rows as dicts keyed by the header; raises on a missing header."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IOFormatError(f"{path}: empty file, header row required")
        header = [h.strip() for h in header]
        rows = []
        for ln, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise IOFormatError(
                    f"{path}:{ln}: expected {len(header)} fields, got {len(row)}"
                )
            rows.append({h: c.strip() for h, c in zip(header, row)})
    return header, rows


def _geom_from_row(path, ln, row, header):
    has_t = "t" in header
    t = None
    if has_t and row.get("t", "") != "":
        t = int(float(row["t"]))
    if "x" in header and "y" in header:
        return Point(float(row["x"]), float(row["y"]), t=t)
    if all(c in header for c in ("xmin", "ymin", "xmax", "ymax")):
        return Rect(float(row["xmin"]), float(row["ymin"]),
                    float(row["xmax"]), float(row["ymax"]), t=t)
    if "bau_indices" in header:
        idx = tuple(int(tok) for tok in row["bau_indices"].split(";") if tok)
        return BAUIndexSet(indices=idx)
    raise IOFormatError(
        f"{path}:{ln}: rows must carry x,y or xmin,ymin,xmax,ymax or bau_indices"
    )


def write_data_csv(path: str, geoms, z=None, k=None):
    """Write supports (and optionally data and size columns)."""
    kinds = {type(g) for g in geoms}
    if kinds == {Point}:
        header = ["x", "y"]
        base = [[g.x, g.y] for g in geoms]
    elif kinds == {Rect}:
        header = ["xmin", "ymin", "xmax", "ymax"]
        base = [[g.xmin, g.ymin, g.xmax, g.ymax] for g in geoms]
    elif kinds == {BAUIndexSet}:
        header = ["bau_indices"]
        base = [[";".join(str(i) for i in g.indices)] for g in geoms]
    else:
        raise IOFormatError("mixed geometry kinds in one CSV are not supported")
    if kinds != {BAUIndexSet} and any(g.t is not None for g in geoms):
        header.append("t")
        for row, g in zip(base, geoms):
            row.append(g.t if g.t is not None else "")
    if z is not None:
        header.append("z")
        for row, v in zip(base, z):
            row.append(v)
    if k is not None:
        header.append("k")
        for row, v in zip(base, k):
            row.append(v)
    write_csv(path, header, base)


def read_data_csv(path: str):
    """Read supports plus optional z and k columns.

    Returns ``(geoms, z, k)`` with ``z``/``k`` None when absent.
    """
    header, rows = read_csv_dict(path)
    geoms, zs, ks = [], [], []
    for ln, row in enumerate(rows, start=2):
        geoms.append(_geom_from_row(path, ln, row, header))
        if "z" in header:
            try:
                zs.append(float(row["z"]))
            except ValueError:
                raise IOFormatError(f"{path}:{ln}: bad z value {row['z']!r}")
        if "k" in header and row.get("k", "") != "":
            ks.append(float(row["k"]))
    z = np.asarray(zs) if "z" in header else None
    k = np.asarray(ks) if ks else None
    if k is not None and z is not None and k.size != z.size:
        raise IOFormatError(f"{path}: k column must be filled on every row")
    return geoms, z, k


def write_truth_csv(path: str, mu, pi=None, k=None, observed=None):
    header = ["bau_id", "mu"]
    cols = [np.arange(len(mu)), np.asarray(mu)]
    if pi is not None:
        header.append("pi")
        cols.append(np.asarray(pi))
    if k is not None:
        header.append("k")
        cols.append(np.asarray(k))
    if observed is not None:
        header.append("observed")
        cols.append(np.asarray(observed).astype(int))
    rows = list(zip(*cols))
    write_csv(path, header, rows)


def read_truth_csv(path: str):
    """Truth keyed by cell id: dict of column name -> id-aligned array."""
    header, rows = read_csv_dict(path)
    if "bau_id" not in header or "mu" not in header:
        raise IOFormatError(f"{path}: truth CSV needs bau_id and mu columns")
    out = {"bau_id": np.array([int(float(r["bau_id"])) for r in rows])}
    for col in header:
        if col == "bau_id":
            continue
        out[col] = np.array([float(r[col]) for r in rows])
    return out


def write_sample_dump(path: str, matrix: np.ndarray):
    """Binary column-major dump with a 16-byte header (magic, rows, cols)."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise IOFormatError("sample dump expects a 2-d matrix")
    header = SAMPLE_MAGIC + struct.pack("<II", m.shape[0], m.shape[1])
    assert len(header) == 16
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp_", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            fh.write(np.asfortranarray(m).tobytes(order="F"))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_sample_dump(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:8] != SAMPLE_MAGIC:
            raise IOFormatError(f"{path}: not a sample dump (bad magic)")
        rows, cols = struct.unpack("<II", header[8:])
        data = np.frombuffer(fh.read(rows * cols * 8), dtype=np.float64)
        if data.size != rows * cols:
            raise IOFormatError(f"{path}: truncated sample dump")
    return data.reshape((rows, cols), order="F")
