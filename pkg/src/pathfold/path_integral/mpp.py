"""Most probable path: minimise the discrete action over interior states."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from ..errors import DegenerateMetricError
from ..geometry import FEYNMAN_CURVATURE_WEIGHT, compute_bundle
from ..model.spec import ModelSpec
from .action import check_discretization, lagrangian_at, path_step_terms

FD_STEP = 1e-6
STATIONARY_TOL = 1e-6


@dataclass
class PathSample:
    """A discretised path with its action.

    ``states`` has shape ``(u + 2, dim)`` (both endpoints included).
    """

    states: np.ndarray
    action: float
    log_prefactor: float
    dt: float
    el_residual: float = float("nan")
    converged: bool = True
    info: dict = field(default_factory=dict)

    @property
    def t(self) -> np.ndarray:
        return self.dt * np.arange(self.states.shape[0])


def action_gradient(spec: ModelSpec, path, dt: float, discretization="midpoint",
                    curvature_weight=FEYNMAN_CURVATURE_WEIGHT):
    """Gradient of ``sum_s dt L_s`` with respect to every state of ``path``.

    The velocity dependence is differentiated analytically
    (``dL/dmdot = g_lower (mdot - drift)``); the dependence on the evaluation
    point uses central differences of ``L`` at fixed velocity, because
    derivatives of the curvature terms would need third field derivatives.
    """
    path = np.asarray(path, dtype=float)
    xa, xb = path[:-1], path[1:]
    mdot = (xb - xa) / dt
    x_eval = 0.5 * (xa + xb) if discretization == "midpoint" else xa
    level = "full" if discretization == "midpoint" else "prepoint"
    b = compute_bundle(spec, x_eval, level=level,
                       curvature=curvature_weight != 0.0 and spec.dim > 1)
    drift = b.h if discretization == "midpoint" else b.g_drift
    dL_dv = np.einsum("ngh,nh->ng", b.g_lower, mdot - drift)
    dL_dx = np.zeros_like(x_eval)
    for k in range(spec.dim):
        step = FD_STEP * np.maximum(1.0, np.abs(x_eval[:, k]))
        xp = x_eval.copy()
        xm = x_eval.copy()
        xp[:, k] += step
        xm[:, k] -= step
        lp, _ = lagrangian_at(spec, xp, mdot, discretization, None, curvature_weight)
        lm, _ = lagrangian_at(spec, xm, mdot, discretization, None, curvature_weight)
        dL_dx[:, k] = (lp - lm) / (2 * step)
    w_a = 0.5 if discretization == "midpoint" else 1.0
    grad = np.zeros_like(path)
    # d(dt L_s)/dx_s and d(dt L_s)/dx_{s+1}
    grad[:-1] += -dL_dv + dt * w_a * dL_dx
    grad[1:] += dL_dv + dt * (1.0 - w_a) * dL_dx
    return grad


def _stationary(fun, res) -> bool:
    """Accept a stopped run whose gradient is already negligible (a line
    search started at the optimum reports failure)."""
    value, grad = fun(res.x)
    return bool(np.isfinite(value) and np.max(np.abs(grad), initial=0.0)
                <= STATIONARY_TOL * max(1.0, abs(value)))


def most_probable_path(spec: ModelSpec, M_start, M_end, u: int, dt: float | None = None,
                       discretization: str = "midpoint", restarts: int = 3, seed: int = 0,
                       curvature_weight: float = FEYNMAN_CURVATURE_WEIGHT,
                       tol: float = 1e-12) -> PathSample:
    """Minimise the action over the ``u`` interior states between fixed endpoints.

    Starts from the straight line, then (if the optimiser reports failure)
    from randomly perturbed straight lines. The returned ``el_residual`` is
    the max norm of the action gradient at the interior states. If no start
    converges the best path is returned with ``converged=False`` and a
    warning.
    """
    check_discretization(discretization)
    if u < 1:
        raise ValueError("u must be at least 1")
    if not spec.is_autonomous:
        raise ValueError("most_probable_path needs an autonomous model")
    dt = float(dt or spec.dt)
    a = np.asarray(M_start, dtype=float).reshape(spec.dim)
    b = np.asarray(M_end, dtype=float).reshape(spec.dim)
    for x in (a, b):
        if np.any(x < spec.lows) or np.any(x > spec.highs):
            raise ValueError("endpoints must lie inside the variable ranges")
    frac = np.arange(1, u + 1)[:, None] / (u + 1)
    line = a + frac * (b - a)
    lows = np.tile(spec.lows, u)
    highs = np.tile(spec.highs, u)

    def full(z):
        return np.vstack([a, z.reshape(u, spec.dim), b])

    def fun(z):
        path = full(z)
        try:
            dtl, _ = path_step_terms(spec, path, dt, discretization,
                                     curvature_weight=curvature_weight)
        except DegenerateMetricError:
            return np.inf, np.zeros_like(z)
        g = action_gradient(spec, path, dt, discretization, curvature_weight)
        return float(dtl.sum()), g[1:-1].ravel()

    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0], dtype=np.uint64)))
    best = None
    span = spec.highs - spec.lows
    for attempt in range(restarts + 1):
        z0 = line.copy()
        if attempt:
            z0 = np.clip(z0 + 0.05 * span * rng.standard_normal(z0.shape), spec.lows, spec.highs)
        res = optimize.minimize(fun, z0.ravel(), jac=True, method="L-BFGS-B",
                                bounds=list(zip(lows, highs)),
                                options={"ftol": tol, "gtol": tol, "maxiter": 5000,
                                         "maxcor": 30})
        ok = res.success or _stationary(fun, res)
        if best is None or res.fun < best[0].fun:
            best = (res, ok)
        if ok:
            break
    best, ok = best
    path = full(best.x)
    action, logpref = (float(v.sum()) for v in path_step_terms(
        spec, path, dt, discretization, curvature_weight=curvature_weight))
    grad = action_gradient(spec, path, dt, discretization, curvature_weight)[1:-1]
    resid = float(np.max(np.abs(grad)))
    if not ok:
        warnings.warn(f"most probable path did not converge: {best.message}", RuntimeWarning,
                      stacklevel=2)
    return PathSample(path, action, logpref, dt, resid, bool(ok),
                      {"iterations": int(best.nit), "message": str(best.message)})
