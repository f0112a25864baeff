"""Ensemble simulation of the multivariate Langevin equations.

The stepper is a midpoint (Stratonovich-consistent) scheme: an Euler
predictor gives a first estimate of ``M[s+1]``, and two fixed-point passes
re-evaluate drift and noise amplitudes at ``(M[s] + M[s+1]) / 2`` with the
same noise draw. The second pass is the accepted step.

Random numbers: trajectory ``j`` of a run with seed ``seed`` draws from a
Philox generator keyed by ``(seed, j)``, so results do not depend on how
trajectories are batched.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BlowUpError
from .model.mesh import Distribution
from .model.spec import ModelSpec

FIXED_POINT_PASSES = 2
BLOCK = 8192


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([seed, index], dtype=np.uint64)))


def reflect(x, lows, highs):
    """Mirror coordinates back into ``[lows, highs]`` (any overshoot);
    points already inside are returned untouched."""
    span = highs - lows
    y = np.mod(x - lows, 2.0 * span)
    inside = (x >= lows) & (x <= highs)
    return np.where(inside, x, lows + span - np.abs(y - span))


def _increment(spec, x, dt, eta):
    f = spec.drift_values(x)
    g = spec.noise_values(x)
    return f * dt + np.einsum("nig,ni->ng", g, eta) * np.sqrt(dt)


def _midpoint_step(spec, x, dt, eta):
    x_new = x + _increment(spec, x, dt, eta)
    for _ in range(FIXED_POINT_PASSES):
        x_new = x + _increment(spec, 0.5 * (x + x_new), dt, eta)
    return x_new


def step(spec: ModelSpec, state, dt: float, rng: np.random.Generator,
         boundary: str = "reflecting") -> np.ndarray:
    """Advance one state (shape ``(dim,)``) or a batch (``(n, dim)``) by ``dt``."""
    x = np.asarray(state, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    eta = rng.standard_normal((x.shape[0], spec.n_sources))
    out = _midpoint_step(spec, x, dt, eta)
    if not np.all(np.isfinite(out)):
        raise BlowUpError("non-finite state after Langevin step")
    if boundary == "reflecting":
        out = reflect(out, spec.lows, spec.highs)
    elif boundary == "absorbing":
        out = np.clip(out, spec.lows, spec.highs)
    return out[0] if single else out


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    states: np.ndarray
    seed: int
    index: int


@dataclass
class EnsembleResult:
    """Recorded states, shape ``(n_traj, n_records, dim)``."""

    spec: ModelSpec
    t: np.ndarray
    states: np.ndarray
    seed: int
    alive: np.ndarray

    @property
    def n_traj(self) -> int:
        return self.states.shape[0]

    def _record(self, index=None, time=None) -> int:
        if time is not None:
            k = int(np.argmin(np.abs(self.t - time)))
            if abs(self.t[k] - time) > 1e-9 * max(1.0, abs(time)):
                raise ValueError(f"time {time} was not recorded")
            return k
        return -1 if index is None else index

    def trajectory(self, j: int) -> Trajectory:
        return Trajectory(self.t, self.states[j], self.seed, j)

    def histogram_at(self, index=None, time=None, mesh=None) -> Distribution:
        """Fraction of surviving trajectories per cell of ``mesh``
        (default: the model mesh)."""
        mesh = mesh or self.spec.mesh()
        k = self._record(index, time)
        x = self.states[self.alive[:, k], k]
        counts, _ = np.histogramdd(x, bins=[mesh.edges(d) for d in range(mesh.ndim)])
        return Distribution(mesh, counts / max(x.shape[0], 1))

    def mean(self, index=None, time=None) -> np.ndarray:
        k = self._record(index, time)
        return self.states[self.alive[:, k], k].mean(axis=0)

    def covariance(self, index=None, time=None) -> np.ndarray:
        k = self._record(index, time)
        x = self.states[self.alive[:, k], k]
        return np.atleast_2d(np.cov(x, rowvar=False, ddof=1))

    def moments(self):
        """Per-record means ``(n_records, dim)`` and unbiased covariances."""
        means = np.stack([self.mean(k) for k in range(len(self.t))])
        covs = np.stack([self.covariance(k) for k in range(len(self.t))])
        return means, covs


def _initial_states(spec, initial, rngs):
    if isinstance(initial, Distribution):
        mesh = initial.mesh
        cdf = np.cumsum(initial.flat())
        cdf /= cdf[-1]
        centers = mesh.centers()
        out = np.empty((len(rngs), spec.dim))
        for n, rng in enumerate(rngs):
            u = rng.random(1 + spec.dim)
            cell = min(int(np.searchsorted(cdf, u[0], side="right")), cdf.size - 1)
            out[n] = centers[cell] + (u[1:] - 0.5) * mesh.widths
        return out
    x0 = np.asarray(initial, dtype=float).reshape(spec.dim)
    return np.tile(x0, (len(rngs), 1))


def simulate_ensemble(spec: ModelSpec, initial, n_traj: int, n_steps: int, seed: int,
                      dt: float | None = None, boundary: str = "reflecting",
                      record_every: int = 1, start_epoch: int = 0) -> EnsembleResult:
    """Simulate ``n_traj`` independent trajectories of ``n_steps`` steps.

    ``initial`` is a state vector or a :class:`Distribution` to sample from.
    With ``boundary="absorbing"`` trajectories that reach the range edge are
    frozen there and excluded from histograms and moments afterwards.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be at least 1")
    if boundary not in ("reflecting", "absorbing"):
        raise ValueError(f"unknown boundary {boundary!r}")
    dt = float(dt or spec.dt)
    rec_steps = list(range(0, n_steps + 1, record_every))
    if rec_steps[-1] != n_steps:
        rec_steps.append(n_steps)
    rec_index = {s: k for k, s in enumerate(rec_steps)}
    states = np.empty((n_traj, len(rec_steps), spec.dim))
    alive_rec = np.ones((n_traj, len(rec_steps)), dtype=bool)
    lows, highs = spec.lows, spec.highs
    specs = [spec.at_epoch(start_epoch + s) for s in range(n_steps)] if spec.has_schedules else None

    for start in range(0, n_traj, BLOCK):
        ids = range(start, min(start + BLOCK, n_traj))
        rngs = [trajectory_rng(seed, j) for j in ids]
        x = _initial_states(spec, initial, rngs)
        eta = np.stack([rng.standard_normal((n_steps, spec.n_sources)) for rng in rngs])
        alive = np.ones(len(rngs), dtype=bool)
        states[start:start + len(rngs), 0] = x
        for s in range(n_steps):
            sp = specs[s] if specs else spec
            nxt = _midpoint_step(sp, x, dt, eta[:, s])
            bad = ~np.all(np.isfinite(nxt), axis=1)
            if bad.any():
                j = start + int(np.nonzero(bad)[0][0])
                raise BlowUpError(f"trajectory {j} blew up at epoch {start_epoch + s + 1}",
                                  epoch=start_epoch + s + 1, trajectory=j)
            if boundary == "reflecting":
                nxt = reflect(nxt, lows, highs)
            else:
                hit = np.any((nxt <= lows) | (nxt >= highs), axis=1)
                nxt = np.where(alive[:, None], np.clip(nxt, lows, highs), x)
                alive &= ~hit
            x = nxt
            k = rec_index.get(s + 1)
            if k is not None:
                states[start:start + len(rngs), k] = x
                alive_rec[start:start + len(rngs), k] = alive
    t = start_epoch * spec.dt + dt * np.asarray(rec_steps, dtype=float)
    return EnsembleResult(spec, t, states, seed, alive_rec)


def simulate_path(spec: ModelSpec, initial, n_steps: int, seed: int, dt=None,
                  trajectory: int = 0, boundary: str = "reflecting") -> Trajectory:
    """One trajectory with every epoch recorded (synthetic data generation)."""
    res = simulate_ensemble(spec, initial, 1, n_steps, seed, dt=dt, boundary=boundary)
    if trajectory:
        raise ValueError("use simulate_ensemble for trajectory substreams other than 0")
    return res.trajectory(0)
