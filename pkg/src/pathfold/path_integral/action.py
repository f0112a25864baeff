"""Short-time Lagrangian terms and discrete path actions."""
from __future__ import annotations

import numpy as np

from ..geometry import (FEYNMAN_CURVATURE_WEIGHT, compute_bundle, feynman_lagrangian,
                        prepoint_lagrangian)
from ..model.spec import ModelSpec

DISCRETIZATIONS = ("midpoint", "prepoint")


def check_discretization(name: str) -> str:
    if name not in DISCRETIZATIONS:
        raise ValueError(f"unknown discretization {name!r}; use 'midpoint' or 'prepoint'")
    return name


def lagrangian_at(spec: ModelSpec, x_eval, mdot, discretization: str, epoch=None,
                  curvature_weight: float = FEYNMAN_CURVATURE_WEIGHT):
    """Lagrangian at evaluation points ``x_eval`` with velocities ``mdot``.

    Returns ``(L, bundle)``; the bundle carries ``det_g`` and ``potential`` at
    the evaluation points so callers can reuse them.
    """
    if discretization == "midpoint":
        curved = curvature_weight != 0.0 and spec.dim > 1
        b = compute_bundle(spec, x_eval, epoch=epoch, level="full", curvature=curved)
        return feynman_lagrangian(spec, x_eval, mdot, bundle=b,
                                  curvature_weight=curvature_weight), b
    b = compute_bundle(spec, x_eval, epoch=epoch, level="prepoint")
    return prepoint_lagrangian(spec, x_eval, mdot, bundle=b), b


def log_det_metric(spec: ModelSpec, x) -> np.ndarray:
    return np.log(compute_bundle(spec, x, level="metric").det_g)


def step_terms(spec: ModelSpec, xa, xb, dt: float, discretization: str = "midpoint",
               epoch=None, curvature_weight: float = FEYNMAN_CURVATURE_WEIGHT):
    """Per-step ``dt * L`` and log measure prefactor for transitions ``xa -> xb``.

    The prefactor is ``1/2 ln det g_lower - (dim/2) ln(2 pi dt)`` with the
    metric taken at the post-point for the midpoint rule and at the
    pre-point for the prepoint rule.
    """
    check_discretization(discretization)
    xa = np.asarray(xa, dtype=float)
    xb = np.asarray(xb, dtype=float)
    mdot = (xb - xa) / dt
    norm = 0.5 * spec.dim * np.log(2.0 * np.pi * dt)
    if discretization == "midpoint":
        L, _ = lagrangian_at(spec, 0.5 * (xa + xb), mdot, "midpoint", epoch, curvature_weight)
        logpref = 0.5 * log_det_metric(spec, xb) - norm
    else:
        L, b = lagrangian_at(spec, xa, mdot, "prepoint", epoch)
        logpref = 0.5 * np.log(b.det_g) - norm
    return dt * L, logpref


def path_step_terms(spec: ModelSpec, path, dt=None, discretization="midpoint", start_epoch=0,
                    curvature_weight=FEYNMAN_CURVATURE_WEIGHT):
    """``dt * L_s`` and log-prefactors for every step of ``path`` (shape ``(n+1, dim)``)."""
    path = np.asarray(path, dtype=float).reshape(-1, spec.dim)
    dt = float(dt or spec.dt)
    if spec.is_autonomous:
        return step_terms(spec, path[:-1], path[1:], dt, discretization, None, curvature_weight)
    n = path.shape[0] - 1
    dtl = np.empty(n)
    lp = np.empty(n)
    for s in range(n):
        e = start_epoch + s
        dtl[s], lp[s] = step_terms(spec.at_epoch(e), path[s], path[s + 1], dt, discretization,
                                   e, curvature_weight)
    return dtl, lp


def path_action(spec: ModelSpec, path, discretization: str = "midpoint", dt=None,
                start_epoch: int = 0, curvature_weight: float = FEYNMAN_CURVATURE_WEIGHT):
    """Discrete action ``sum_s dt L_s`` of ``path`` and the summed log-prefactor.

    The full log-probability density of the path is
    ``log_prefactor - action``.
    """
    dtl, lp = path_step_terms(spec, path, dt, discretization, start_epoch, curvature_weight)
    return float(np.sum(dtl)), float(np.sum(lp))
