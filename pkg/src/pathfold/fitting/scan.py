"""Coarse grid scan for local minima of the fit objective, and forecasting."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from ..model.mesh import Distribution, StateMesh
from ..model.spec import ModelSpec
from ..model.timeseries import TimeSeries
from ..path_integral.kernel import propagate_spec
from .objective import FitTemplate

MAX_GRID_POINTS = 1_000_000


@dataclass(frozen=True)
class Minimum:
    coefficients: dict
    objective: float
    index: tuple[int, ...]


def _axis(spec):
    if isinstance(spec, dict):
        return np.linspace(spec["low"], spec["high"], int(spec["points"]))
    arr = np.asarray(spec, dtype=float)
    if arr.ndim == 1 and arr.size == 3 and not isinstance(spec, (list, np.ndarray)):
        return np.linspace(arr[0], arr[1], int(arr[2]))
    return arr


def local_minima(values: np.ndarray) -> list[tuple[int, ...]]:
    """Interior grid points whose full (diagonal-inclusive) neighbourhood
    holds no smaller value; plateaus count. Non-finite points never qualify."""
    v = np.asarray(values, dtype=float)
    if v.size == 0 or any(n < 3 for n in v.shape):
        return []
    inner = tuple(slice(1, n - 1) for n in v.shape)
    centre = v[inner]
    ok = np.isfinite(centre)
    for off in itertools.product((-1, 0, 1), repeat=v.ndim):
        if not any(off):
            continue
        sl = tuple(slice(1 + o, n - 1 + o) for o, n in zip(off, v.shape))
        nb = np.where(np.isnan(v[sl]), np.inf, v[sl])
        ok &= nb >= centre
    return [tuple(int(i) + 1 for i in idx) for idx in zip(*np.nonzero(ok))]


def scan_minima(template: FitTemplate, data: TimeSeries, grid: dict, epoch_stride: int = 1,
                discretization: str = "midpoint"):
    """Evaluate the objective on a coarse coefficient grid and list its local minima.

    ``grid`` maps parameter names to a sequence of values or a tuple
    ``(low, high, points)``; parameters not listed stay at their initial
    values. ``epoch_stride > 1`` evaluates on every ``epoch_stride``-th
    observation (a coarser time mesh). Returns ``(minima, values)`` with the
    minima sorted by objective, and the full objective grid.
    """
    names = list(grid)
    unknown = set(names) - set(template.names)
    if unknown:
        raise ValueError(f"grid names unknown parameters: {sorted(unknown)}")
    axes = [_axis(grid[n]) for n in names]
    size = math.prod(len(a) for a in axes)
    if size > MAX_GRID_POINTS:
        raise ValueError(f"scan grid of {size} points exceeds {MAX_GRID_POINTS}")
    sub = data.slice(step=epoch_stride) if epoch_stride > 1 else data
    base = dict(zip(template.names, template.initial))
    pos = [template.names.index(n) for n in names]
    values = np.empty(tuple(len(a) for a in axes))
    for idx in itertools.product(*(range(len(a)) for a in axes)):
        x = np.array([base[n] for n in template.names])
        for p, a, i in zip(pos, axes, idx):
            x[p] = a[i]
        values[idx] = template.objective(x, sub, discretization)
    minima = []
    for idx in local_minima(values):
        coeffs = dict(base)
        coeffs.update({n: float(a[i]) for n, a, i in zip(names, axes, idx)})
        minima.append(Minimum(coeffs, float(values[idx]), idx))
    minima.sort(key=lambda m: m.objective)
    return minima, values


@dataclass
class Prediction:
    distribution: Distribution
    summary: dict


def summarize(P: Distribution, quantiles=(0.05, 0.95)) -> dict:
    labels = P.mesh.labels or tuple(f"x{k}" for k in range(P.mesh.ndim))
    return {
        "labels": list(labels),
        "mean": [float(v) for v in P.mean()],
        "covariance": [[float(v) for v in row] for row in P.covariance()],
        "intervals": {lab: [P.quantile(k, q) for q in quantiles] for k, lab in enumerate(labels)},
        "interval_levels": list(quantiles),
    }


def predict(spec: ModelSpec, initial, horizon: int, mesh: StateMesh | None = None,
            discretization: str = "midpoint", dt=None, start_epoch: int = 0) -> Prediction:
    """Propagate a state or distribution ``horizon`` steps ahead and summarise it."""
    if isinstance(initial, Distribution):
        P0 = initial
    else:
        P0 = Distribution.point_mass(mesh or spec.mesh(), initial)
    P = propagate_spec(spec, P0, horizon, dt=dt, discretization=discretization,
                       start_epoch=start_epoch) if horizon else P0
    return Prediction(P, summarize(P))
