"""Simulated annealing followed by a bounded Nelder-Mead polish."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from ..errors import InfeasibleError
from ..geometry import WKB_CURVATURE_WEIGHT
from ..model.mesh import Distribution
from ..model.spec import ModelSpec
from ..model.timeseries import TimeSeries
from .objective import FitTemplate, action_of_data

START_ATTEMPTS = 50


@dataclass(frozen=True)
class AnnealConfig:
    """Annealing schedule.

    The start temperature is calibrated so that about ``accept_target`` of
    uphill moves from the start point would be accepted. The temperature is
    multiplied by ``cooling`` every ``stage_factor * n_free`` evaluations;
    each restart stops after ``evals_factor * n_free`` evaluations.
    """

    restarts: int = 3
    cooling: float = 0.95
    stage_factor: int = 50
    evals_factor: int = 600
    accept_target: float = 0.8
    step_fraction: float = 0.1
    calibration_moves: int = 20
    polish: bool = True
    polish_xatol: float = 1e-10
    polish_fatol: float = 1e-10
    polish_maxiter: int = 2000


@dataclass
class FitResult:
    coefficients: dict
    objective: float
    action: float
    log_prefactor: float
    n_increments: int
    spec: ModelSpec
    trace: list = field(default_factory=list)
    minima: list = field(default_factory=list)
    information: float | None = None
    evaluations: int = 0
    seed: int = 0

    @property
    def objective_per_step(self) -> float:
        return self.objective / self.n_increments

    def to_dict(self) -> dict:
        return {
            "coefficients": self.coefficients,
            "objective": self.objective,
            "objective_per_step": self.objective_per_step,
            "action": self.action,
            "log_prefactor": self.log_prefactor,
            "n_increments": self.n_increments,
            "information": self.information,
            "evaluations": self.evaluations,
            "seed": self.seed,
            "minima": [{"coefficients": c, "objective": o} for c, o in self.minima],
        }


def _reflect_box(x, lo, hi):
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    y = np.mod(x - lo, 2.0 * safe)
    return np.where(span > 0, lo + safe - np.abs(y - safe), lo)


def fit(template: FitTemplate, data: TimeSeries, config: AnnealConfig | None = None,
        seed: int = 0, discretization: str = "midpoint") -> FitResult:
    """Minimise the negative log path likelihood over the template parameters.

    Restart ``r`` anneals with a Philox stream keyed by ``(seed, r)``;
    restart 0 starts from the declared initial values, later ones from
    uniform draws inside the bounds. The best annealed point is polished
    with bounded Nelder-Mead over the parameters whose bounds are not a
    single point.
    """
    cfg = config or AnnealConfig()
    names = template.names
    if data.n_increments <= len(names):
        raise ValueError("need more increments than free coefficients")
    bounds = template.bounds
    lo, hi = bounds[:, 0], bounds[:, 1]
    free = hi > lo
    k = max(int(free.sum()), 1)
    evals = 0

    def f(x):
        nonlocal evals
        evals += 1
        return template.objective(x, data, discretization)

    trace = []
    best_x, best_f = None, math.inf
    if free.any() and cfg.restarts == 0:
        best_x, best_f = template.initial.copy(), f(template.initial)
        if not math.isfinite(best_f):
            best_x = None
    if free.any():
        for r in range(cfg.restarts):
            rng = np.random.Generator(np.random.Philox(key=np.array([seed, r], dtype=np.uint64)))
            x, fx = None, math.inf
            for attempt in range(START_ATTEMPTS):
                cand = template.initial if (r == 0 and attempt == 0) else np.where(
                    free, lo + (hi - lo) * rng.random(len(names)), lo)
                fc = f(cand)
                if math.isfinite(fc):
                    x, fx = cand, fc
                    break
            if x is None:
                continue
            span = hi - lo
            # start temperature from the uphill moves of a few trial steps
            ups = []
            for _ in range(cfg.calibration_moves * k):
                cand = _reflect_box(x + cfg.step_fraction * span * rng.standard_normal(len(x)),
                                    lo, hi)
                d = f(cand) - fx
                if math.isfinite(d) and d > 0:
                    ups.append(d)
            T0 = (np.mean(ups) / -math.log(cfg.accept_target)) if ups else 1e-3 * max(1.0, abs(fx))
            T = T0
            stage = cfg.stage_factor * k
            if fx < best_f:
                best_x, best_f = x.copy(), fx
            for it in range(cfg.evals_factor * k):
                step = cfg.step_fraction * max(math.sqrt(T / T0), 1e-3)
                cand = _reflect_box(x + step * span * rng.standard_normal(len(x)), lo, hi)
                fc = f(cand)
                if math.isfinite(fc) and (fc <= fx or rng.random() < math.exp(-(fc - fx) / T)):
                    x, fx = cand, fc
                    if fx < best_f:
                        best_x, best_f = x.copy(), fx
                trace.append({"iteration": len(trace), "restart": r, "objective": fx,
                              "temperature": T})
                if (it + 1) % stage == 0:
                    T *= cfg.cooling
        if best_x is None:
            binding = _binding_parameters(template)
            raise InfeasibleError("every annealing start breaks positive-definite diffusion; "
                                  f"check the bounds of {binding}")
        if cfg.polish:
            idx = np.nonzero(free)[0]

            def sub(z):
                full = best_x.copy()
                full[idx] = z
                return f(full)

            res = optimize.minimize(sub, best_x[idx], method="Nelder-Mead",
                                    bounds=list(zip(lo[idx], hi[idx])),
                                    options={"xatol": cfg.polish_xatol,
                                             "fatol": cfg.polish_fatol,
                                             "maxiter": cfg.polish_maxiter * k,
                                             "initial_simplex": _simplex(best_x[idx], lo[idx],
                                                                         hi[idx])})
            if res.fun < best_f:
                best_x = best_x.copy()
                best_x[idx] = res.x
                best_f = float(res.fun)
    else:
        best_x = lo.copy()
        best_f = f(best_x)
        if not math.isfinite(best_f):
            raise InfeasibleError("the fixed coefficients break positive-definite diffusion")

    fitted = template.instantiate(best_x)
    action, logpref = action_of_data(fitted, data, discretization)
    return FitResult(template.values(best_x), action - logpref, action, logpref,
                     data.n_increments, fitted, trace, [], None, evals, seed)


def _simplex(x, lo, hi):
    n = len(x)
    pts = [x.copy()]
    for i in range(n):
        y = x.copy()
        step = 0.05 * (hi[i] - lo[i])
        y[i] = x[i] + step if x[i] + step <= hi[i] else x[i] - step
        pts.append(y)
    return np.array(pts)


def _binding_parameters(template: FitTemplate) -> str:
    noise_params = sorted({t.param for t in template.spec.terms or ()
                           if t.param and t.kind == "noise"})
    chosen = noise_params or list(template.names)
    parts = [f"{p.name} in [{p.bounds[0]}, {p.bounds[1]}]" for p in template.spec.parameters
             if p.name in chosen]
    return ", ".join(parts)


def information(P: Distribution, P_ref: Distribution) -> float:
    """``-sum p ln(p / p_ref)`` over cells with ``p > 0`` (never positive)."""
    P._check_same_mesh(P_ref)
    p = P.flat() / P.total
    q = P_ref.flat() / P_ref.total
    mask = p > 0
    if np.any(q[mask] <= 0):
        raise ValueError("reference has zero weight where the distribution is positive")
    return float(-np.sum(p[mask] * np.log(p[mask] / q[mask])))


def wkb_reference(spec: ModelSpec, P0: Distribution, n_steps: int,
                  discretization: str = "midpoint", dt=None) -> Distribution:
    """Propagation with the curvature weight of the Lagrangian halved
    (``R/12`` in place of ``R/6``); identical to the standard propagation
    whenever the curvature vanishes."""
    from ..path_integral.kernel import propagate_spec

    return propagate_spec(spec, P0, n_steps, dt=dt, discretization=discretization,
                          curvature_weight=WKB_CURVATURE_WEIGHT)
