"""Short-time transition kernels on a cell-centred mesh and their folding."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from ..errors import BudgetError, MeshConsistencyError
from ..geometry import (FEYNMAN_CURVATURE_WEIGHT, GeometryBundle, compute_bundle,
                        feynman_lagrangian, prepoint_lagrangian)
from ..model.mesh import Distribution, StateMesh
from ..model.spec import ModelSpec
from .action import check_discretization, lagrangian_at

MIN_WIDTH_CELLS = 1.5
WINDOW_SIGMAS = 8.0
HALF_GRID_CACHE_LIMIT = 4_000_000
MAX_DIMS = 6
MAX_CELLS = 1_000_000


@dataclass
class TransitionKernel:
    """``matrix[beta, alpha]`` is the probability of moving from cell alpha
    to cell beta in one step of ``dt``.

    ``column_norm`` holds the potential-free column sums used for
    normalisation, so ``matrix[beta, alpha] * column_norm[alpha]`` equals
    ``exp(log_prefactor - dt L) * cell_volume`` for pairs not touched by
    boundary folding.
    """

    matrix: sparse.csc_matrix
    mesh: StateMesh
    dt: float
    discretization: str
    boundary: str
    column_norm: np.ndarray
    epoch: int | None = None
    curvature_weight: float = FEYNMAN_CURVATURE_WEIGHT
    has_potential: bool = False
    window: tuple[int, ...] = ()
    column_sums: np.ndarray = field(init=False)

    def __post_init__(self):
        self.column_sums = np.asarray(self.matrix.sum(axis=0)).ravel()

    @property
    def residuals(self) -> np.ndarray:
        """Deviation of every column sum from 1."""
        return self.column_sums - 1.0

    @property
    def conservative(self) -> bool:
        return self.boundary == "reflecting" and not self.has_potential

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def check_budget(mesh: StateMesh):
    if mesh.ndim > MAX_DIMS or mesh.size > MAX_CELLS:
        raise BudgetError(f"dense mesh of {mesh.ndim} dimensions and {mesh.size} cells exceeds "
                          f"the budget ({MAX_DIMS} dimensions, {MAX_CELLS} cells); "
                          "use the Metropolis samplers instead")


def check_mesh_consistency(spec: ModelSpec, mesh: StateMesh, dt: float, g_upper=None):
    """Require the one-step spread ``sqrt(g^GG dt)`` to cover 1.5 cells."""
    if g_upper is None:
        g_upper = compute_bundle(spec, mesh.centers(), level="metric").g_upper
    diag_min = np.min(np.diagonal(g_upper, axis1=-2, axis2=-1), axis=0)
    h = mesh.widths
    sigma = np.sqrt(diag_min * dt)
    bad = sigma < MIN_WIDTH_CELLS * h * (1 - 1e-12)
    if bad.any():
        need = float(np.max((MIN_WIDTH_CELLS * h) ** 2 / diag_min))
        k = int(np.nonzero(bad)[0][0])
        raise MeshConsistencyError(
            f"kernel too narrow for the mesh along {mesh.labels[k] if mesh.labels else k}: "
            f"sqrt(g dt) = {sigma[k]:.4g} < {MIN_WIDTH_CELLS} cells ({MIN_WIDTH_CELLS * h[k]:.4g}); "
            f"use dt >= {need:.4g} or a coarser mesh", suggested_dt=need)


def _fold_index(idx, n, boundary):
    """Map possibly out-of-range indices; returns (mapped, valid)."""
    if boundary == "reflecting":
        mapped = np.where(idx < 0, -1 - idx, idx)
        mapped = np.where(mapped >= n, 2 * n - 1 - mapped, mapped)
        return mapped, np.ones(idx.shape, dtype=bool)
    valid = (idx >= 0) & (idx < n)
    return np.clip(idx, 0, n - 1), valid


def build_kernel(spec: ModelSpec, mesh: StateMesh | None = None, dt: float | None = None,
                 discretization: str = "midpoint", boundary: str = "reflecting",
                 epoch: int | None = None, curvature_weight: float = FEYNMAN_CURVATURE_WEIGHT,
                 check_mesh: bool = True) -> TransitionKernel:
    """Build the one-step kernel from the short-time Lagrangian.

    Each column alpha holds ``exp(log_prefactor - dt L(alpha -> beta))``
    times the cell volume over a window of target cells wide enough to
    contain the one-step spread. Reflecting boundaries fold targets beyond
    the range back onto their mirror cells; absorbing boundaries drop them.
    Columns are divided by their potential-free sum over the whole window,
    so with ``V = 0`` and reflection every column sums to one, and a
    potential rescales columns by its Boltzmann-like factor.
    """
    check_discretization(discretization)
    if boundary not in ("reflecting", "absorbing"):
        raise ValueError(f"unknown boundary {boundary!r}")
    mesh = mesh or spec.mesh()
    check_budget(mesh)
    dt = float(dt or spec.dt)
    sp = spec.at_epoch(epoch) if epoch is not None else spec
    pot_epoch = epoch if spec.constraints.active else None
    dim = mesh.ndim
    if dim != spec.dim:
        raise ValueError("mesh dimension does not match the model")
    centers = mesh.centers()
    h = mesh.widths
    npts = np.asarray(mesh.points)
    vol = mesh.cell_volume

    pre = compute_bundle(sp, centers, epoch=pot_epoch, level="prepoint")
    if check_mesh:
        check_mesh_consistency(sp, mesh, dt, pre.g_upper)
    logdet_c = np.log(pre.det_g)
    speed = np.max(np.abs(pre.g_drift), axis=0)
    spread = np.sqrt(np.max(np.diagonal(pre.g_upper, axis1=-2, axis2=-1), axis=0) * dt)
    window = np.minimum(np.ceil((speed * dt + WINDOW_SIGMAS * spread) / h).astype(int) + 1, npts)

    alpha = np.indices(mesh.shape).reshape(dim, -1).T
    alpha_flat = np.arange(mesh.size)
    lo_c = np.asarray(mesh.lows) + 0.5 * h
    hi_c = np.asarray(mesh.highs) - 0.5 * h
    norm_const = 0.5 * dim * math.log(2.0 * math.pi * dt)

    # geometry at every evaluation point, computed once: cell centres for the
    # prepoint rule, the half-grid of pair midpoints for the midpoint rule
    half_shape = tuple(2 * n - 1 for n in mesh.points)
    cached = None
    if discretization == "prepoint":
        cached = pre
    elif math.prod(half_shape) <= HALF_GRID_CACHE_LIMIT:
        half = np.indices(half_shape).reshape(dim, -1).T
        cached = compute_bundle(sp, lo_c + 0.5 * half * h, epoch=pot_epoch, level="full",
                                curvature=curvature_weight != 0.0 and dim > 1)

    rows, cols, vals = [], [], []
    column_norm = np.zeros(mesh.size)
    has_pot = False
    for off in itertools.product(*(range(-w, w + 1) for w in window)):
        off = np.asarray(off)
        beta = alpha + off
        mdot = off * h / dt
        mapped = np.empty_like(beta)
        valid = np.ones(mesh.size, dtype=bool)
        for k in range(dim):
            mapped[:, k], ok = _fold_index(beta[:, k], npts[k], boundary)
            valid &= ok
        mapped_flat = np.ravel_multi_index(mapped.T, mesh.shape)
        if discretization == "midpoint":
            if cached is not None:
                q = np.clip(2 * alpha + off, 0, np.asarray(half_shape) - 1)
                b = _take(cached, np.ravel_multi_index(q.T, half_shape))
                L = feynman_lagrangian(sp, b.point, mdot, bundle=b,
                                       curvature_weight=curvature_weight)
            else:
                x_eval = np.clip(centers + 0.5 * off * h, lo_c, hi_c)
                L, b = lagrangian_at(sp, x_eval, mdot, "midpoint", pot_epoch, curvature_weight)
            logpref = 0.5 * logdet_c[mapped_flat] - norm_const
        else:
            b = cached
            L = prepoint_lagrangian(sp, centers, mdot, bundle=b)
            logpref = 0.5 * logdet_c - norm_const
        pot = b.potential
        if np.any(pot != 0.0):
            has_pot = True
        log_free = logpref - dt * (L + pot)
        column_norm += np.exp(log_free) * vol
        w = np.exp(log_free + dt * pot) * vol
        rows.append(mapped_flat[valid])
        cols.append(alpha_flat[valid])
        vals.append(w[valid])

    raw = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(mesh.size, mesh.size)).tocsc()
    matrix = (raw @ sparse.diags(1.0 / column_norm)).tocsc()
    matrix.sort_indices()
    return TransitionKernel(matrix, mesh, dt, discretization, boundary, column_norm, epoch,
                            curvature_weight, has_pot, tuple(int(w) for w in window))


def _take(bundle: GeometryBundle, idx) -> GeometryBundle:
    return GeometryBundle(**{k: (None if v is None else v[idx])
                             for k, v in vars(bundle).items()})


def propagate(kernel: TransitionKernel, P0: Distribution, n_steps: int,
              renormalize: bool | None = None) -> Distribution:
    """Fold ``P0`` through ``n_steps`` applications of ``kernel``.

    ``renormalize`` defaults to True for mass-conserving kernels (reflecting,
    no potential); the per-step mass change before renormalisation is kept
    in ``info["mass_drift"]``.
    """
    return propagate_sequence([kernel] * n_steps, P0, renormalize, mesh=kernel.mesh)


def propagate_sequence(kernels, P0: Distribution, renormalize: bool | None = None,
                       mesh: StateMesh | None = None) -> Distribution:
    kernels = list(kernels)
    mesh = mesh or (kernels[0].mesh if kernels else P0.mesh)
    if P0.mesh.shape != mesh.shape:
        raise ValueError(f"distribution mesh {P0.mesh.shape} does not match kernel mesh "
                         f"{mesh.shape}")
    p = P0.flat().copy()
    drift = np.zeros(len(kernels))
    for s, k in enumerate(kernels):
        before = p.sum()
        p = k.matrix @ p
        after = p.sum()
        drift[s] = after - before
        renorm = k.conservative if renormalize is None else renormalize
        if renorm and after > 0:
            p = p * (before / after)
    info = dict(P0.info)
    info["mass_drift"] = drift
    return Distribution(P0.mesh, p, info)


def kernels_for(spec: ModelSpec, n_steps: int, mesh=None, dt=None, discretization="midpoint",
                boundary="reflecting", start_epoch=0,
                curvature_weight=FEYNMAN_CURVATURE_WEIGHT, check_mesh=True):
    """One kernel per step; a single shared kernel when the model is autonomous."""
    if spec.is_autonomous:
        k = build_kernel(spec, mesh, dt, discretization, boundary, None, curvature_weight,
                         check_mesh)
        return [k] * n_steps
    cache = {}
    out = []
    for s in range(n_steps):
        e = start_epoch + s
        key = _epoch_key(spec, e)
        if key not in cache:
            cache[key] = build_kernel(spec, mesh, dt, discretization, boundary, e,
                                      curvature_weight, check_mesh)
        out.append(cache[key])
    return out


def _epoch_key(spec, epoch):
    sched = tuple(t.coefficient_at(epoch, dict(spec.param_values)) for t in spec.terms or ()
                  if t.schedule)
    return sched, tuple(spec.constraint_vector(epoch))


def propagate_spec(spec: ModelSpec, P0: Distribution, n_steps: int, dt=None,
                   discretization="midpoint", boundary="reflecting", start_epoch=0,
                   curvature_weight=FEYNMAN_CURVATURE_WEIGHT, renormalize=None) -> Distribution:
    """Build the kernels for ``spec`` on ``P0``'s mesh and fold ``n_steps`` times."""
    if n_steps == 0:
        return P0
    ks = kernels_for(spec, n_steps, P0.mesh, dt, discretization, boundary, start_epoch,
                     curvature_weight)
    return propagate_sequence(ks, P0, renormalize)
