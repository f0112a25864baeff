"""Deterministic writers for tables and JSON documents."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from pathlib import Path

import numpy as np

FORMATS = ("csv", "json")


def plain(obj):
    """Convert numpy scalars/arrays and tuples into JSON-ready Python values."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def dumps_json(obj) -> str:
    return json.dumps(plain(obj), indent=2) + "\n"


def write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_json(obj), encoding="utf-8")
    return path


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_table(path: Path, header, rows, fmt: str = "csv") -> Path:
    """Write ``rows`` under ``header`` to ``path`` with the suffix of ``fmt``.

    CSV floats use the shortest round-tripping repr; JSON is a list of
    records with the header's key order.
    """
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}")
    path = Path(path).with_suffix("." + fmt)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = list(header)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
        path.write_text(buf.getvalue(), encoding="utf-8")
    else:
        recs = [dict(zip(header, plain(list(row)))) for row in rows]
        path.write_text(json.dumps(recs, indent=1) + "\n", encoding="utf-8")
    return path


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return [], []
    return rows[0], rows[1:]


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def parse_vector(text, dim: int | None = None, name: str = "vector") -> np.ndarray:
    """``"1.0"`` or ``"1,0.5"``; a single value is broadcast to ``dim``."""
    from ..errors import ConfigError

    try:
        vals = np.array([float(v) for v in str(text).split(",") if v.strip() != ""])
    except ValueError:
        raise ConfigError(f"cannot parse {text!r} as numbers", name) from None
    if vals.size == 0:
        raise ConfigError("empty vector", name)
    if dim is not None:
        if vals.size == 1:
            vals = np.full(dim, vals[0])
        elif vals.size != dim:
            raise ConfigError(f"expected {dim} values, got {vals.size}", name)
    return vals
