"""Path likelihood of observed data and the fit template built on it."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import DataError, DegenerateMetricError, ValidationError
from ..model.spec import ModelSpec, first_non_spd, validation_points
from ..model.timeseries import TimeSeries
from ..path_integral.action import path_action


def _check_data(spec: ModelSpec, data: TimeSeries):
    if not data.uniform:
        raise DataError("path likelihood needs uniformly spaced epochs")
    if data.n_increments < 1:
        raise DataError("time series needs at least two epochs")
    if data.values.shape[1] != spec.dim:
        raise DataError(f"time series has {data.values.shape[1]} columns, model has {spec.dim}")


def action_of_data(spec: ModelSpec, data: TimeSeries, discretization: str = "midpoint",
                   start_epoch: int = 0):
    """Action and log-prefactor sum of the observed series taken as a path.

    The spacing of ``data`` is used as ``dt``. The negative log path
    likelihood is ``action - log_prefactor``.
    """
    _check_data(spec, data)
    return path_action(spec, data.values, discretization, dt=data.dt, start_epoch=start_epoch)


def negative_log_likelihood(spec: ModelSpec, data: TimeSeries,
                            discretization: str = "midpoint") -> float:
    action, logpref = action_of_data(spec, data, discretization)
    return action - logpref


@dataclass(frozen=True)
class FitTemplate:
    """A model whose declared parameters are the free coefficients."""

    spec: ModelSpec

    def __post_init__(self):
        if not self.spec.parameters:
            raise ValidationError("a fit template needs at least one [[parameters]] entry")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.spec.parameters)

    @property
    def bounds(self) -> np.ndarray:
        return np.array([p.bounds for p in self.spec.parameters], dtype=float)

    @property
    def initial(self) -> np.ndarray:
        return np.array([p.initial for p in self.spec.parameters], dtype=float)

    def values(self, x) -> dict:
        return dict(zip(self.names, (float(v) for v in x)))

    def instantiate(self, x) -> ModelSpec:
        return self.spec.with_parameters(self.values(x))

    def feasible(self, spec: ModelSpec, data: TimeSeries | None = None) -> bool:
        """SPD diffusion on the mesh (and at the observations, if given)."""
        pts = validation_points(spec)
        if data is not None:
            pts = np.vstack([pts, data.values])
        probe = spec.at_epoch(0) if spec.has_schedules else spec
        return first_non_spd(probe, pts) is None

    def objective(self, x, data: TimeSeries, discretization: str = "midpoint") -> float:
        """Negative log path likelihood; ``inf`` for infeasible coefficients,
        which are never passed to the likelihood."""
        try:
            spec = self.instantiate(x)
        except ValidationError:
            return math.inf
        if not self.feasible(spec, data):
            return math.inf
        try:
            return negative_log_likelihood(spec, data, discretization)
        except DegenerateMetricError:
            return math.inf
