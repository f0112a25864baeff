"""Many-cell lattice models: joint Lagrangian, dense propagation and
checkerboard Metropolis sweeps over (epoch, cell) sites."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateMetricError, SamplerError
from .geometry import FEYNMAN_CURVATURE_WEIGHT
from .langevin import reflect
from .model.mesh import Distribution
from .model.spec import ModelSpec
from .path_integral.action import check_discretization, lagrangian_at, step_terms
from .path_integral.kernel import check_budget, propagate_spec


def lattice_lagrangian(spec: ModelSpec, state_pair, discretization: str = "midpoint",
                       epoch: int | None = None,
                       curvature_weight: float = FEYNMAN_CURVATURE_WEIGHT) -> float:
    """Lagrangian of the whole lattice for one transition ``(M_s, M_{s+1})``.

    States are flat vectors (coordinate ``cell * n_variables + G``). Active
    constraints at ``epoch`` add ``J . M`` to the potential, which lowers
    ``L`` by the same amount.
    """
    check_discretization(discretization)
    a, b = (np.asarray(s, dtype=float).reshape(spec.dim) for s in state_pair)
    sp = spec.at_epoch(epoch) if epoch is not None else spec
    mdot = (b - a) / sp.dt
    x = 0.5 * (a + b) if discretization == "midpoint" else a
    pot_epoch = epoch if spec.constraints.active else None
    L, _ = lagrangian_at(sp, x, mdot, discretization, pot_epoch, curvature_weight)
    return float(L)


def lattice_kernel_propagate(spec: ModelSpec, P0: Distribution, n_steps: int,
                             discretization: str = "midpoint", boundary: str = "reflecting",
                             start_epoch: int = 0) -> Distribution:
    """Dense fold over the joint tensor-product mesh of every (G, cell) pair."""
    check_budget(P0.mesh)
    return propagate_spec(spec, P0, n_steps, discretization=discretization, boundary=boundary,
                          start_epoch=start_epoch)


@dataclass
class SweepDiagnostics:
    """Per-cell acceptance of one or more sweeps and the energy trace."""

    acceptance: np.ndarray
    energy: list = field(default_factory=list)
    sweeps: int = 0
    widths: np.ndarray | None = None

    @property
    def mean_acceptance(self) -> float:
        return float(np.mean(self.acceptance))


class _ChainTarget:
    """Log weights ``(log_prefactor - dt L) / T`` of every step of a chain."""

    def __init__(self, spec, discretization, temperature, start_epoch, curvature_weight):
        self.spec = spec
        self.disc = discretization
        self.T = temperature
        self.start_epoch = start_epoch
        self.w = curvature_weight

    def steps(self, xa, xb, idx):
        spec = self.spec
        if spec.is_autonomous:
            try:
                dtl, lp = step_terms(spec, xa, xb, spec.dt, self.disc, None, self.w)
            except DegenerateMetricError:
                return np.full(len(idx), -np.inf)
            return (lp - dtl) / self.T
        out = np.empty(len(idx))
        for k, s in enumerate(idx):
            e = self.start_epoch + int(s)
            try:
                dtl, lp = step_terms(spec.at_epoch(e), xa[k], xb[k], spec.dt, self.disc, e,
                                     self.w)
            except DegenerateMetricError:
                dtl, lp = np.inf, 0.0
            out[k] = (lp - dtl) / self.T
        return out


def _as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(key=np.array([int(seed), 0], dtype=np.uint64)))


def checkerboard_sweep(spec: ModelSpec, chain, temperature: float = 1.0, seed=0,
                       widths=None, discretization: str = "midpoint", order: str = "checkerboard",
                       free_end: bool = True, start_epoch: int = 0,
                       curvature_weight: float = FEYNMAN_CURVATURE_WEIGHT):
    """One Metropolis sweep over the chain ``(n_epochs, dim)``; epoch 0 is fixed.

    ``order="checkerboard"`` visits the cells of colour 0 and then colour 1;
    ``order="sequential"`` visits cells in index order. Within a cell all
    epochs of one parity are updated together, which is exact because the
    path is Markov in time. The proposal moves all variables of the cell by
    Gaussian steps of ``widths`` (per variable) reflected into range.

    Returns ``(new_chain, SweepDiagnostics)``; ``seed`` may be an int or a
    ``numpy.random.Generator``.
    """
    check_discretization(discretization)
    rng = _as_rng(seed)
    x = np.array(chain, dtype=float)
    n_ep, dim = x.shape
    theta, n_cells = spec.n_variables, spec.n_cells
    lows, highs = spec.lows, spec.highs
    target = _ChainTarget(spec, discretization, temperature, start_epoch, curvature_weight)
    if widths is None:
        widths = default_widths(spec, x[0], temperature)
    widths = np.broadcast_to(np.asarray(widths, dtype=float), (theta,))
    logw = target.steps(x[:-1], x[1:], np.arange(n_ep - 1))
    last = n_ep - 1 if free_end else n_ep - 2
    epochs = np.arange(1, last + 1)

    if order == "checkerboard":
        cells = [c for colour in (0, 1) for c in range(n_cells)
                 if spec.lattice.color(c) == colour]
    elif order == "sequential":
        cells = list(range(n_cells))
    else:
        raise ValueError(f"unknown order {order!r}")

    accepted = np.zeros(n_cells)
    proposed = np.zeros(n_cells)
    for cell in cells:
        cols = slice(cell * theta, (cell + 1) * theta)
        for parity in (1, 0):
            sel = epochs[epochs % 2 == parity]
            if sel.size == 0:
                continue
            prop = x[sel].copy()
            prop[:, cols] = reflect(prop[:, cols] + widths * rng.standard_normal((sel.size, theta)),
                                    lows[cols], highs[cols])
            logu = np.log(rng.random(sel.size))
            left = sel - 1
            old = logw[left].copy()
            has_right = sel < n_ep - 1
            right = sel[has_right]
            # both steps touching the updated epochs in one evaluation
            both = target.steps(np.concatenate([x[left], prop[has_right]]),
                                np.concatenate([prop, x[right + 1]]),
                                np.concatenate([left, right]))
            new_left = both[:sel.size]
            new_right = np.zeros(sel.size)
            if right.size:
                new_right[has_right] = both[sel.size:]
                old[has_right] += logw[right]
            acc = logu < new_left + new_right - old
            x[sel[acc]] = prop[acc]
            logw[left[acc]] = new_left[acc]
            ok = acc & has_right
            logw[sel[ok]] = new_right[ok]
            accepted[cell] += acc.sum()
            proposed[cell] += sel.size
    diag = SweepDiagnostics(accepted / np.maximum(proposed, 1),
                            [float(-logw.sum() * temperature)], 1)
    return x, diag


def default_widths(spec: ModelSpec, state, temperature: float = 1.0) -> np.ndarray:
    """One-step noise scale ``sqrt(g^GG dt T)`` per variable, averaged over cells."""
    g = np.diagonal(spec.diffusion_values(np.asarray(state, dtype=float)))
    per = g.reshape(spec.n_cells, spec.n_variables).mean(axis=0)
    return np.sqrt(per * spec.dt * temperature)


def run_sweeps(spec: ModelSpec, chain, n_sweeps: int, temperature=1.0, seed: int = 0,
               burn_in: int = 0, widths=None, discretization: str = "midpoint",
               order: str = "checkerboard", free_end: bool = True, record_every: int = 1,
               tune: bool = True, start_epoch: int = 0):
    """Run ``burn_in + n_sweeps`` sweeps and record the chain every ``record_every``.

    ``temperature`` is a number or a callable ``sweep -> T`` (annealing).
    During burn-in the widths are adapted toward acceptance 0.4 when
    ``tune`` is set. Returns ``(samples, SweepDiagnostics)`` where samples
    has shape ``(n_records, n_epochs, dim)``.
    """
    rng = _as_rng(seed)
    temp = temperature if callable(temperature) else (lambda s: temperature)
    x = np.array(chain, dtype=float)
    w = default_widths(spec, x[0], temp(0)) if widths is None else np.asarray(widths, float)
    for k in range(burn_in):
        x, d = checkerboard_sweep(spec, x, temp(k), rng, w, discretization, order, free_end,
                                  start_epoch)
        if tune:
            w = w * np.exp((d.mean_acceptance - 0.4) / (1.0 + k) ** 0.6)
            w = np.minimum(w, spec.highs[:spec.n_variables] - spec.lows[:spec.n_variables])
    records = []
    acc = np.zeros(spec.n_cells)
    energy = []
    for k in range(n_sweeps):
        x, d = checkerboard_sweep(spec, x, temp(burn_in + k), rng, w, discretization, order,
                                  free_end, start_epoch)
        acc += d.acceptance
        energy.extend(d.energy)
        if (k + 1) % record_every == 0:
            records.append(x.copy())
    acc /= max(n_sweeps, 1)
    if n_sweeps and tune and not (0.05 <= acc.mean() <= 0.95) and not callable(temperature):
        raise SamplerError(f"lattice sweep acceptance {acc.mean():.3f} degenerate after tuning")
    diag = SweepDiagnostics(acc, energy, n_sweeps, w)
    samples = np.array(records) if records else np.empty((0,) + x.shape)
    return samples, diag
