"""Metropolis importance sampling of discretised paths.

Sites are the interior states ``M_1 .. M_u`` (plus ``M_{u+1}`` when the end
point is free). The target is ``exp((log_prefactor - action) / T)``.
Because the path is Markov in time, all sites of one time parity are
conditionally independent given the other parity, so each half-sweep
proposes and accepts every odd (then every even) site at once. A fraction
of sweeps adds a whole-path shift move.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateMetricError, SamplerError
from ..geometry import FEYNMAN_CURVATURE_WEIGHT
from ..langevin import reflect
from ..model.spec import ModelSpec
from .action import check_discretization, step_terms

TARGET_ACCEPTANCE = 0.4
TUNED_RANGE = (0.2, 0.6)
PATHOLOGICAL_RANGE = (0.05, 0.95)


@dataclass
class PathSamples:
    """Recorded paths ``(n_samples, u + 2, dim)`` and sampler diagnostics."""

    paths: np.ndarray
    dt: float
    acceptance: float
    shift_acceptance: float
    widths: np.ndarray
    autocorrelation_time: float
    seed: int
    neg_log_density: np.ndarray
    info: dict = field(default_factory=dict)

    def site(self, s: int) -> np.ndarray:
        return self.paths[:, s, :]


def integrated_autocorrelation(x, c: float = 5.0) -> float:
    """Integrated autocorrelation time with Sokal's adaptive window."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4 or np.var(x) == 0:
        return 1.0
    d = x - x.mean()
    f = np.fft.rfft(d, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    acf /= acf[0]
    tau = 1.0
    for m in range(1, n):
        tau = 1.0 + 2.0 * acf[1:m + 1].sum()
        if m >= c * tau:
            break
    return float(max(tau, 1.0))


class _PathTarget:
    def __init__(self, spec, dt, discretization, curvature_weight, temperature, start_epoch):
        self.spec = spec
        self.dt = dt
        self.disc = discretization
        self.w = curvature_weight
        self.T = temperature
        self.start_epoch = start_epoch

    def step_logw(self, xa, xb, steps):
        """Log weight of transitions ``xa[k] -> xb[k]`` occurring at step ``steps[k]``."""
        spec = self.spec
        if spec.is_autonomous:
            try:
                dtl, lp = step_terms(spec, xa, xb, self.dt, self.disc, None, self.w)
            except DegenerateMetricError:
                return np.full(len(steps), -np.inf)
            return (lp - dtl) / self.T
        out = np.empty(len(steps))
        for k, s in enumerate(steps):
            e = self.start_epoch + int(s)
            try:
                dtl, lp = step_terms(spec.at_epoch(e), xa[k], xb[k], self.dt, self.disc, e,
                                     self.w)
            except DegenerateMetricError:
                dtl, lp = np.inf, 0.0
            out[k] = (lp - dtl) / self.T
        return out


def sample_paths_metropolis(spec: ModelSpec, M_start, M_end=None, u: int = 1,
                            n_samples: int = 1000, seed: int = 0, dt: float | None = None,
                            discretization: str = "midpoint", burn_in: int | None = None,
                            thin: int = 1, n_chains: int = 1, shift_fraction: float = 0.1,
                            temperature: float = 1.0, initial=None,
                            curvature_weight: float = FEYNMAN_CURVATURE_WEIGHT,
                            start_epoch: int = 0) -> PathSamples:
    """Sample paths from ``M_start`` over ``u`` interior epochs.

    ``M_end=None`` leaves the final state ``M_{u+1}`` free. ``n_chains``
    independent chains run in lockstep, chain ``c`` drawing from a Philox
    stream keyed by ``(seed, c)``; each records ``ceil(n_samples / n_chains)``
    paths, ``thin`` sweeps apart, and the first ``n_samples`` (chain-major)
    are returned. Proposal widths (one per coordinate, one for shift moves)
    are tuned on the pooled acceptance during burn-in toward 0.4 and then
    frozen. Raises :class:`SamplerError` when the post-tuning acceptance is
    outside [0.05, 0.95].
    """
    check_discretization(discretization)
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    if n_chains < 1:
        raise ValueError("n_chains must be at least 1")
    if u < 1 and M_end is not None:
        raise ValueError("u must be at least 1 for a fixed end point")
    dt = float(dt or spec.dt)
    dim = spec.dim
    free_end = M_end is None
    n_states = u + 2
    C = n_chains
    lows, highs = spec.lows, spec.highs
    rngs = [np.random.Generator(np.random.Philox(key=np.array([seed, c], dtype=np.uint64)))
            for c in range(C)]
    target = _PathTarget(spec, dt, discretization, curvature_weight, temperature, start_epoch)

    a = np.asarray(M_start, dtype=float).reshape(dim)
    if initial is not None:
        x0 = np.array(initial, dtype=float).reshape(n_states, dim)
    elif free_end:
        x0 = np.tile(a, (n_states, 1))
    else:
        b = np.asarray(M_end, dtype=float).reshape(dim)
        x0 = a + (np.arange(n_states)[:, None] / (n_states - 1)) * (b - a)
    x0[0] = a
    if not free_end:
        x0[-1] = np.asarray(M_end, dtype=float).reshape(dim)
    x = np.tile(x0, (C, 1, 1))
    last = n_states - 1 if free_end else n_states - 2
    sites = np.arange(1, last + 1)
    n_sites = sites.size
    steps_all = np.arange(n_states - 1)
    parity_sites = [sites[sites % 2 == p] for p in (1, 0)]

    def logw_of(xa, xb, steps):
        shp = xa.shape[:-1]
        st = np.broadcast_to(steps, shp).ravel()
        return target.step_logw(xa.reshape(-1, dim), xb.reshape(-1, dim), st).reshape(shp)

    logw = logw_of(x[:, :-1], x[:, 1:], steps_all)
    if not np.all(np.isfinite(logw)):
        raise SamplerError("initial path has zero probability")
    g_scale = np.sqrt(np.diagonal(spec.diffusion_values(x0[0])) * dt)
    width = np.maximum(g_scale * np.sqrt(temperature), 1e-12 * (highs - lows))
    shift_width = width.copy()
    burn_in = 1000 if burn_in is None else burn_in

    def draws():
        # one block of randoms per chain per sweep keeps chains independent
        z = np.empty((C, n_sites + 1, dim))
        r = np.empty((C, n_sites + 2))
        for c, g in enumerate(rngs):
            z[c] = g.standard_normal((n_sites + 1, dim))
            r[c] = g.random(n_sites + 2)
        return z, np.log(r[:, :n_sites]), r[:, n_sites], np.log(r[:, n_sites + 1])

    def half_sweep(sel, z, logu, width):
        if sel.size == 0:
            return 0, 0
        prop = reflect(x[:, sel] + width * z[:, sel - 1], lows, highs)
        left = sel - 1
        new_left = logw_of(x[:, left], prop, left)
        old = logw[:, left].copy()
        has_right = sel < n_states - 1
        right = sel[has_right]
        new_right = np.zeros_like(new_left)
        if right.size:
            new_right[:, has_right] = logw_of(prop[:, has_right], x[:, right + 1], right)
            old[:, has_right] += logw[:, right]
        acc = logu[:, sel - 1] < new_left + new_right - old
        ci, si = np.nonzero(acc)
        x[ci, sel[si]] = prop[ci, si]
        logw[ci, left[si]] = new_left[ci, si]
        rmask = has_right[si]
        logw[ci[rmask], sel[si[rmask]]] = new_right[ci[rmask], si[rmask]]
        return int(acc.sum()), acc.size

    def shift_move(z, coin, logu, width):
        chains = np.nonzero(coin < shift_fraction)[0]
        if chains.size == 0:
            return 0, 0
        prop = x[chains].copy()
        prop[:, sites] = reflect(prop[:, sites] + (width * z[chains, n_sites])[:, None, :],
                                 lows, highs)
        new = logw_of(prop[:, :-1], prop[:, 1:], steps_all)
        acc = logu[chains] < new.sum(axis=1) - logw[chains].sum(axis=1)
        x[chains[acc]] = prop[acc]
        logw[chains[acc]] = new[acc]
        return int(acc.sum()), chains.size

    def sweep(width, shift_width):
        z, logu, coin, logu_shift = draws()
        acc = tot = 0
        for sel in parity_sites:
            a_, t_ = half_sweep(sel, z, logu, width)
            acc += a_
            tot += t_
        s_acc, s_tot = shift_move(z, coin, logu_shift, shift_width)
        return acc, tot, s_acc, s_tot

    # burn-in with Robbins-Monro width adaptation on pooled acceptance
    for k in range(burn_in):
        acc, tot, s_acc, s_tot = sweep(width, shift_width)
        gain = 1.0 / (1.0 + k) ** 0.6
        width = np.minimum(width * np.exp(gain * (acc / max(tot, 1) - TARGET_ACCEPTANCE)),
                           highs - lows)
        if s_tot:
            shift_width = np.minimum(
                shift_width * np.exp(gain * (s_acc / s_tot - TARGET_ACCEPTANCE)), highs - lows)

    per_chain = -(-n_samples // C)
    paths = np.empty((C, per_chain, n_states, dim))
    nld = np.empty((C, per_chain))
    acc_total = prop_total = s_acc_total = s_total = 0
    for n in range(per_chain):
        for _ in range(thin):
            acc, tot, s_acc, s_tot = sweep(width, shift_width)
            acc_total += acc
            prop_total += tot
            s_acc_total += s_acc
            s_total += s_tot
        paths[:, n] = x
        nld[:, n] = -logw.sum(axis=1) * temperature
    acceptance = acc_total / max(prop_total, 1)
    if not (PATHOLOGICAL_RANGE[0] <= acceptance <= PATHOLOGICAL_RANGE[1]):
        raise SamplerError(f"acceptance {acceptance:.3f} outside "
                           f"[{PATHOLOGICAL_RANGE[0]}, {PATHOLOGICAL_RANGE[1]}] after tuning; "
                           "the model or proposal scale is pathological")
    taus = [integrated_autocorrelation(paths[c][:, sites, :].mean(axis=(1, 2))) for c in range(C)]
    flat = paths.reshape(C * per_chain, n_states, dim)[:n_samples]
    return PathSamples(flat, dt, float(acceptance), s_acc_total / max(s_total, 1), width,
                       float(np.mean(taus)), seed, nld.ravel()[:n_samples],
                       {"burn_in": burn_in, "thin": thin, "n_chains": C,
                        "shift_width": shift_width})
