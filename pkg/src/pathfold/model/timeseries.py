"""Observed time series: CSV / JSON ingestion and export."""
from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass

import numpy as np

from ..errors import DataError
from .spec import ModelSpec

UNIFORM_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Epochs ``t`` (shape ``(n,)``) and flat observations (shape ``(n, dim)``)."""

    t: np.ndarray
    values: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float).reshape(len(self.t), -1))

    def __len__(self):
        return len(self.t)

    @property
    def n_increments(self) -> int:
        return len(self.t) - 1

    @property
    def spacing(self) -> np.ndarray:
        return np.diff(self.t)

    @property
    def uniform(self) -> bool:
        dt = self.spacing
        if dt.size == 0:
            return True
        return bool(np.max(np.abs(dt - dt.mean())) < UNIFORM_RTOL * abs(dt.mean()))

    @property
    def dt(self) -> float:
        return float(self.spacing.mean())

    def slice(self, start=None, stop=None, step=None) -> "TimeSeries":
        sl = slice(start, stop, step)
        return TimeSeries(self.t[sl], self.values[sl], self.labels)

    def split(self, fraction: float) -> tuple["TimeSeries", "TimeSeries"]:
        """Early/late split sharing the boundary observation."""
        cut = int(round(fraction * self.n_increments))
        return self.slice(0, cut + 1), self.slice(cut, None)

    def __eq__(self, other):
        return (isinstance(other, TimeSeries) and self.labels == other.labels
                and np.array_equal(self.t, other.t) and np.array_equal(self.values, other.values))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", *self.labels])
        for t, row in zip(self.t, self.values):
            w.writerow([repr(float(t)), *(repr(float(v)) for v in row)])
        return buf.getvalue()

    def to_json(self) -> str:
        recs = [{"t": float(t), **{lab: float(v) for lab, v in zip(self.labels, row)}}
                for t, row in zip(self.t, self.values)]
        return json.dumps(recs)


def _records_from_csv(text):
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError("empty CSV input") from None
    rows = []
    for n, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"row {n} has {len(row)} fields, header has {len(header)}")
        try:
            rows.append((n, dict(zip(header, (float(c) for c in row)))))
        except ValueError:
            raise DataError(f"non-numeric entry at row {n}") from None
    return header, rows


def _records_from_json(text):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid JSON: {exc}") from None
    if not isinstance(data, list) or not all(isinstance(r, dict) for r in data):
        raise DataError("JSON time series must be an array of epoch records")
    header = list(data[0]) if data else []
    return header, [(n, r) for n, r in enumerate(data, start=1)]


def ingest_timeseries(path_or_text, spec: ModelSpec, format: str | None = None) -> TimeSeries:
    """Load observations for ``spec`` from a path or literal text.

    Row numbers in error messages count observations from 1 (the CSV
    header is not counted).
    """
    text = path_or_text
    if isinstance(path_or_text, os.PathLike) or (
            isinstance(path_or_text, str) and "\n" not in path_or_text
            and os.path.exists(path_or_text)):
        fmt_guess = "json" if str(path_or_text).endswith(".json") else "csv"
        with open(path_or_text, encoding="utf-8") as fh:
            text = fh.read()
        format = format or fmt_guess
    format = format or ("json" if text.lstrip().startswith("[") else "csv")
    if format == "csv":
        _, rows = _records_from_csv(text)
    elif format == "json":
        _, rows = _records_from_json(text)
    else:
        raise DataError(f"unknown time-series format {format!r}")

    labels = spec.labels
    if not rows:
        raise DataError("time series has no observations")
    t = np.empty(len(rows))
    vals = np.empty((len(rows), len(labels)))
    lows, highs = spec.lows, spec.highs
    for k, (rowno, rec) in enumerate(rows):
        if "t" not in rec:
            raise DataError("missing column 't'")
        for lab in labels:
            if lab not in rec:
                raise DataError(f"missing column {lab!r}")
        t[k] = float(rec["t"])
        if k > 0 and not t[k] > t[k - 1]:
            raise DataError(f"non-monotone time at row {rowno}")
        for j, lab in enumerate(labels):
            v = float(rec[lab])
            if not (lows[j] <= v <= highs[j]):
                raise DataError(f"observation {lab}={v!r} at epoch t={float(t[k])!r} is outside "
                                f"the declared range [{lows[j]}, {highs[j]}]")
            vals[k, j] = v
    return TimeSeries(t, vals, labels)


def timeseries_from_array(spec: ModelSpec, t, values) -> TimeSeries:
    values = np.asarray(values, dtype=float).reshape(len(t), spec.dim)
    return TimeSeries(np.asarray(t, dtype=float), values, spec.labels)
