"""Path CSV and JSON helpers.

Path files have the header ``id,time,x,y`` and one row per observation. Floats
are written with 17 significant digits so every value round-trips exactly.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import ParseError
from .sim import MovementPath

HEADER = ("id", "time", "x", "y")


def fmt(x) -> str:
    return format(float(x), ".17g")


def write_paths(paths, file) -> None:
    paths = [paths] if isinstance(paths, MovementPath) else list(paths)
    with open(file, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for p in paths:
            for t, (x, y) in zip(p.times, p.positions):
                w.writerow((p.id, fmt(t), fmt(x), fmt(y)))


def read_paths(file) -> list:
    """Read a path CSV; rows of one id must be contiguous in time order."""
    groups: dict = {}
    with open(file, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{file}: empty file") from None
        if tuple(h.strip() for h in header) != HEADER:
            raise ParseError(f"{file}:1: expected header {','.join(HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise ParseError(f"{file}:{lineno}: expected 4 fields, found {len(row)}")
            try:
                t, x, y = (float(c) for c in row[1:])
            except ValueError:
                raise ParseError(f"{file}:{lineno}: non-numeric value") from None
            if not all(math.isfinite(v) for v in (t, x, y)):
                raise ParseError(f"{file}:{lineno}: non-finite value")
            g = groups.setdefault(row[0].strip(), [])
            if g and t <= g[-1][0]:
                raise ParseError(f"{file}:{lineno}: time {t:g} does not increase for id {row[0]}")
            g.append((t, x, y, lineno))
    out = []
    for pid, g in groups.items():
        if len(g) < 2:
            raise ParseError(f"{file}:{g[0][3]}: id {pid} has a single observation")
        a = np.array([r[:3] for r in g])
        out.append(MovementPath(pid, a[:, 0], a[:, 1:]))
    return out


def to_jsonable(o):
    if isinstance(o, dict):
        return {str(k): to_jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [to_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return to_jsonable(o.tolist())
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, (float, np.floating)):
        f = float(o)
        return f if math.isfinite(f) else None
    return o


def write_json(obj, file) -> None:
    """Deterministic JSON (sorted keys); NaN and infinities become null."""
    Path(file).write_text(json.dumps(to_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


def write_table(rows, file) -> None:
    """CSV from a list of flat dicts sharing keys; floats with 17 significant digits."""
    rows = list(rows)
    with open(file, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if not rows:
            return
        keys = list(rows[0])
        w.writerow(keys)
        for r in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in (r[k] for k in keys)])


def write_columns(columns: dict, file) -> None:
    """CSV with one column per key (e.g. posterior draws)."""
    keys = list(columns)
    arrs = [np.asarray(columns[k]) for k in keys]
    with open(file, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for vals in zip(*arrs):
            w.writerow([fmt(v) for v in vals])
