"""Readers and writers for clouds, transforms, traces and summaries.

Clouds are ASCII PLY or plain XYZ.  Transforms are four rows of a
row-major homogeneous matrix.  Traces and summaries are comma-separated
with a single header line.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from pathlib import Path

import numpy as np

from .geometry import RigidTransform, nearest_rotation

log = logging.getLogger(__name__)

TRACE_COLUMNS = (
    "iteration", "initial_cost", "final_cost", "cost_drop",
    "successful_steps", "mse_prev", "mse_gt",
)
SUMMARY_COLUMNS = ("label", "count", "median", "q75", "q95", "mean_iterations")

_FLOAT_FMT = "{:.9g}"
# transforms keep full double precision so that a round trip is exact
_TRANSFORM_FMT = "{:.17g}"


class FormatError(ValueError):
    """Malformed input file.  ``line`` is 1-based, or None for whole-file errors."""

    def __init__(self, message, path=None, line=None):
        self.path = None if path is None else str(path)
        self.line = line
        where = "" if path is None else f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


def format_number(x) -> str:
    return "" if x is None else _FLOAT_FMT.format(float(x))


def _parse_floats(tokens, path, lineno, count):
    if len(tokens) < count:
        raise FormatError(f"expected {count} numbers, got {len(tokens)}", path, lineno)
    try:
        vals = [float(t) for t in tokens[:count]]
    except ValueError:
        raise FormatError(f"non-numeric token in {' '.join(tokens)!r}", path, lineno) from None
    if not all(math.isfinite(v) for v in vals):
        raise FormatError("non-finite coordinate", path, lineno)
    return vals


def cloud_format(path) -> str:
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".ply":
        return "ply"
    if ext in (".xyz", ".txt", ".pts"):
        return "xyz"
    raise FormatError(f"cannot infer cloud format from extension {ext!r}", path)


def read_cloud(path, fmt: str | None = None) -> np.ndarray:
    """Read an (N, 3) float array from an ASCII PLY or XYZ file."""
    fmt = fmt or cloud_format(path)
    with open(path, encoding="ascii", errors="replace") as f:
        lines = f.read().splitlines()
    if fmt == "ply":
        pts = _parse_ply(lines, path)
    elif fmt == "xyz":
        pts = _parse_xyz(lines, path)
    else:
        raise ValueError(f"unknown cloud format {fmt!r}")
    if len(pts) == 0:
        raise FormatError("file contains no points", path, max(len(lines), 1))
    return np.asarray(pts, dtype=float).reshape(-1, 3)


def _parse_xyz(lines, path):
    pts = []
    for lineno, line in enumerate(lines, 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        tokens = s.split()
        if len(tokens) != 3:
            raise FormatError(f"expected 'x y z', got {len(tokens)} fields", path, lineno)
        pts.append(_parse_floats(tokens, path, lineno, 3))
    return pts


def _parse_ply(lines, path):
    if not lines or lines[0].strip() != "ply":
        raise FormatError("missing 'ply' magic", path, 1)
    n_vertex = None
    props = []
    in_vertex = False
    fmt_seen = False
    end = None
    for lineno, line in enumerate(lines[1:], 2):
        tokens = line.split()
        if not tokens:
            continue
        key = tokens[0]
        if key == "format":
            if tokens[1:] != ["ascii", "1.0"]:
                raise FormatError(f"unsupported format {' '.join(tokens[1:])!r}", path, lineno)
            fmt_seen = True
        elif key in ("comment", "obj_info"):
            continue
        elif key == "element":
            if len(tokens) != 3:
                raise FormatError("malformed element line", path, lineno)
            in_vertex = tokens[1] == "vertex"
            if in_vertex:
                if n_vertex is not None:
                    raise FormatError("duplicate vertex element", path, lineno)
                try:
                    n_vertex = int(tokens[2])
                except ValueError:
                    raise FormatError(f"bad vertex count {tokens[2]!r}", path, lineno) from None
                if n_vertex < 0:
                    raise FormatError("negative vertex count", path, lineno)
            elif n_vertex is None:
                raise FormatError("vertex must be the first element", path, lineno)
        elif key == "property":
            if in_vertex:
                if tokens[1] == "list" or len(tokens) != 3:
                    raise FormatError("unsupported vertex property", path, lineno)
                props.append(tokens[2])
        elif key == "end_header":
            end = lineno
            break
        else:
            raise FormatError(f"unexpected header keyword {key!r}", path, lineno)
    if end is None:
        raise FormatError("missing end_header", path, len(lines))
    if not fmt_seen:
        raise FormatError("missing format line", path, end)
    if n_vertex is None:
        raise FormatError("missing 'element vertex'", path, end)
    if props[:3] != ["x", "y", "z"]:
        raise FormatError("x, y, z must be the first three vertex properties", path, end)

    pts = []
    lineno = end
    body = iter(enumerate(lines[end:], end + 1))
    while len(pts) < n_vertex:
        item = next(body, None)
        if item is None:
            raise FormatError(
                f"expected {n_vertex} vertices, file ends after {len(pts)}", path, lineno + 1
            )
        lineno, line = item
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) < len(props):
            raise FormatError(f"vertex has {len(tokens)} fields, expected {len(props)}", path, lineno)
        pts.append(_parse_floats(tokens, path, lineno, 3))
    return pts


def write_cloud(path, points, fmt: str | None = None):
    fmt = fmt or cloud_format(path)
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    rows = "".join(" ".join(_FLOAT_FMT.format(v) for v in p) + "\n" for p in pts)
    with open(path, "w", encoding="ascii") as f:
        if fmt == "ply":
            f.write("ply\nformat ascii 1.0\n")
            f.write(f"element vertex {len(pts)}\n")
            f.write("property double x\nproperty double y\nproperty double z\n")
            f.write("end_header\n")
        elif fmt != "xyz":
            raise ValueError(f"unknown cloud format {fmt!r}")
        f.write(rows)


def read_transform(path) -> RigidTransform:
    """Read a 4x4 homogeneous matrix; the rotation block is projected onto SO(3)."""
    rows = []
    with open(path, encoding="ascii", errors="replace") as f:
        for lineno, line in enumerate(f, 1):
            s = line.split("#", 1)[0].strip()
            if not s:
                continue
            tokens = s.split()
            if len(tokens) != 4:
                raise FormatError(f"expected 4 numbers per row, got {len(tokens)}", path, lineno)
            rows.append((lineno, _parse_floats(tokens, path, lineno, 4)))
    if len(rows) != 4:
        raise FormatError(f"expected 4 rows, got {len(rows)}", path, rows[-1][0] if rows else 1)
    m = np.array([r for _, r in rows])
    if np.max(np.abs(m[3] - [0, 0, 0, 1])) > 1e-9:
        raise FormatError("last row must be '0 0 0 1'", path, rows[3][0])
    r = m[:3, :3]
    dev = float(np.max(np.abs(r @ r.T - np.eye(3))))
    if dev > 1e-3 or np.linalg.det(r) <= 0:
        raise FormatError(f"rotation block is not a rotation (deviation {dev:.3g})", path, rows[0][0])
    if dev > 1e-6:
        log.warning("%s: rotation off by %.3g, projecting onto SO(3)", path, dev)
    return RigidTransform(nearest_rotation(r), m[:3, 3])


def format_transform(t: RigidTransform) -> str:
    return "".join(
        " ".join(_TRANSFORM_FMT.format(v) for v in row) + "\n" for row in t.matrix()
    )


def write_transform(path, t: RigidTransform):
    Path(path).write_text(format_transform(t), encoding="ascii")


def trace_rows(trace):
    for r in trace:
        yield [
            str(r.iteration), format_number(r.initial_cost), format_number(r.final_cost), format_number(r.cost_drop),
            str(r.successful_steps), format_number(r.mse_prev), format_number(r.mse_ground_truth),
        ]


def write_trace(path, trace):
    with open(path, "w", newline="", encoding="ascii") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        w.writerows(trace_rows(trace))


def read_trace(path) -> list[dict]:
    """Parse a trace file back into dicts; empty cells become None."""
    with open(path, newline="", encoding="ascii") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != TRACE_COLUMNS:
            raise FormatError("bad trace header", path, 1)
        out = []
        for lineno, row in enumerate(reader, 2):
            if len(row) != len(TRACE_COLUMNS):
                raise FormatError(f"expected {len(TRACE_COLUMNS)} columns", path, lineno)
            try:
                rec = {}
                for name, cell in zip(TRACE_COLUMNS, row):
                    if cell == "":
                        rec[name] = None
                    elif name in ("iteration", "successful_steps"):
                        rec[name] = int(cell)
                    else:
                        rec[name] = float(cell)
            except ValueError:
                raise FormatError(f"non-numeric cell in {row!r}", path, lineno) from None
            out.append(rec)
    return out


def write_summary(path, summaries):
    """``summaries`` is an iterable of ``(label, EvaluationSummary)``."""
    with open(path, "w", newline="", encoding="ascii") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for label, s in summaries:
            w.writerow([label, s.count, format_number(s.median), format_number(s.q75), format_number(s.q95), format_number(s.mean_iterations)])
