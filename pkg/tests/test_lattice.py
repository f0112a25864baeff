import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathfold.errors import BudgetError
from pathfold.geometry import feynman_lagrangian
from pathfold.lattice import (checkerboard_sweep, lattice_kernel_propagate, lattice_lagrangian,
                              run_sweeps)
from pathfold.model import Distribution, load_model
from pathfold.path_integral import build_kernel, integrated_autocorrelation, propagate


def lattice_toml(rows=1, cols=2, k=0.0, points=21, lo=-3.0, hi=3.0, dt=0.1, boundary="open",
                 constraints=(), quadratic_noise=0.0):
    text = f"""
dt = {dt}

[[variables]]
name = "M"
range = [{lo}, {hi}]
points = {points}

[lattice]
rows = {rows}
cols = {cols}
boundary = "{boundary}"

[[drift]]
variable = "M"
coefficient = -1.0
monomial = {{ M = 1 }}

[[noise]]
source = 1
variable = "M"
coefficient = 1.0
monomial = {{}}
"""
    if quadratic_noise:
        text += f"""
[[noise]]
source = 1
variable = "M"
coefficient = {quadratic_noise}
monomial = {{ M = 2 }}
"""
    if k:
        text += f"""
[[drift]]
variable = "M"
coefficient = {k}
monomial = {{ "M@nn" = 1 }}
"""
    for epoch, cell, value in constraints:
        text += f"""
[[constraints]]
epoch = {epoch}
variable = "M"
cell = [{cell[0]}, {cell[1]}]
value = {value}
"""
    return load_model(text)


# Lagrangian ----------------------------------------------------------------------------------

def test_single_cell_matches_geometry():
    spec = lattice_toml(1, 1, quadratic_noise=0.2)
    a, b = np.array([0.3]), np.array([0.8])
    L = lattice_lagrangian(spec, (a, b))
    ref = feynman_lagrangian(spec, [0.5 * (a + b)], [(b - a) / spec.dt])[0]
    assert L == ref


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4))
def test_uncoupled_cells_add(v):
    joint = lattice_toml(1, 2, quadratic_noise=0.2)
    single = lattice_toml(1, 1, quadratic_noise=0.2)
    a, b = np.array(v[:2]), np.array(v[2:])
    L = lattice_lagrangian(joint, (a, b))
    parts = sum(lattice_lagrangian(single, ([a[c]], [b[c]])) for c in range(2))
    assert L == pytest.approx(parts, rel=1e-12, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.lists(st.floats(-2, 2), min_size=4, max_size=4))
def test_constraint_adds_linear_term(j, v):
    plain = lattice_toml(1, 2)
    pinned = lattice_toml(1, 2, constraints=[(0, (0, 0), j)])
    a, b = np.array(v[:2]), np.array(v[2:])
    diff = lattice_lagrangian(pinned, (a, b), epoch=0) - lattice_lagrangian(plain, (a, b), epoch=0)
    assert diff == pytest.approx(-j * 0.5 * (a[0] + b[0]), abs=1e-10)
    # an epoch without a constraint entry is unaffected
    assert lattice_lagrangian(pinned, (a, b), epoch=1) == pytest.approx(
        lattice_lagrangian(plain, (a, b), epoch=1), abs=1e-12)


# dense propagation ---------------------------------------------------------------------------

def test_factorization_of_uncoupled_cells():
    joint = lattice_toml(1, 2, points=31, quadratic_noise=0.1)
    single = lattice_toml(1, 1, points=31, quadratic_noise=0.1)
    P0 = Distribution.point_mass(joint.mesh(), [0.7, -1.2])
    P = lattice_kernel_propagate(joint, P0, 10)
    K = build_kernel(single)
    m = [propagate(K, Distribution.point_mass(K.mesh, [x]), 10).flat() for x in (0.7, -1.2)]
    assert np.max(np.abs(P.weights - np.multiply.outer(m[0], m[1]))) <= 1e-10


def test_single_cell_propagation_identical():
    spec = lattice_toml(1, 1, points=31)
    P0 = Distribution.point_mass(spec.mesh(), [1.0])
    a = lattice_kernel_propagate(spec, P0, 7)
    b = propagate(build_kernel(spec), P0, 7)
    assert np.array_equal(a.weights, b.weights)
    assert lattice_kernel_propagate(spec, P0, 0) is P0


def test_dense_budget():
    spec = lattice_toml(3, 3, points=5)
    with pytest.raises(BudgetError):
        lattice_kernel_propagate(spec, Distribution.uniform(spec.mesh()), 1)


# sweeps --------------------------------------------------------------------------------------

def test_hot_sampler_accepts_everything():
    spec = lattice_toml(1, 2, k=0.3)
    chain = np.zeros((4, 2))
    _, diag = run_sweeps(spec, chain, 200, temperature=1e6, seed=0, tune=False)
    assert diag.mean_acceptance >= 0.99


def test_sweep_determinism():
    spec = lattice_toml(1, 2, k=0.3)
    chain = np.zeros((5, 2))
    a, da = run_sweeps(spec, chain, 50, seed=4, burn_in=10)
    b, db = run_sweeps(spec, chain, 50, seed=4, burn_in=10)
    assert np.array_equal(a, b)
    assert np.array_equal(da.acceptance, db.acceptance)
    x, _ = checkerboard_sweep(spec, chain, seed=3)
    y, _ = checkerboard_sweep(spec, chain, seed=3)
    assert np.array_equal(x, y)
    assert np.all(x[0] == 0.0)


def _mean_and_se(x):
    tau = integrated_autocorrelation(x)
    return x.mean(), x.std(ddof=1) * math.sqrt(tau / x.size)


def test_uncoupled_marginal_matches_single_cell():
    joint = lattice_toml(1, 2)
    single = lattice_toml(1, 1)
    start = np.array([[1.0, -1.0]] + [[0.0, 0.0]] * 2)
    sj, _ = run_sweeps(joint, start, 3000, seed=1, burn_in=200)
    ss, _ = run_sweeps(single, start[:, :1], 3000, seed=2, burn_in=200)
    mj, ej = _mean_and_se(sj[:, -1, 0])
    ms, es = _mean_and_se(ss[:, -1, 0])
    assert abs(mj - ms) < 3 * math.hypot(ej, es)


def test_checkerboard_and_sequential_agree():
    spec = lattice_toml(1, 2, k=0.4)
    start = np.array([[0.5, -0.5], [0.0, 0.0], [0.0, 0.0]])
    edges = spec.mesh().edges(0)
    hists = []
    for order, seed in (("checkerboard", 5), ("sequential", 6)):
        s, _ = run_sweeps(spec, start, 10_000, seed=seed, burn_in=500, order=order)
        x = s[:, 1:, :].ravel()
        counts, _ = np.histogram(x, bins=edges)
        hists.append(counts / counts.sum())
    assert np.abs(hists[0] - hists[1]).sum() <= 0.05


def test_periodic_translation_symmetry():
    spec = lattice_toml(3, 3, k=0.2, points=11)
    start = np.zeros((3, 9))
    s, _ = run_sweeps(spec, start, 1500, seed=8, burn_in=200)
    stats = [_mean_and_se(s[:, -1, c] ** 2) for c in range(9)]
    pooled = np.mean([m for m, _ in stats])
    for m, e in stats:
        assert abs(m - pooled) < 4 * e


def test_constraint_shifts_mean():
    means = []
    for j in (0.0, 20.0):
        spec = lattice_toml(1, 1, constraints=[(0, (0, 0), j), (1, (0, 0), j)])
        s, _ = run_sweeps(spec, np.zeros((3, 1)), 4000, seed=9, burn_in=200)
        means.append(_mean_and_se(s[:, 1:, 0].mean(axis=1)))
    (m0, e0), (m1, e1) = means
    assert m1 - m0 > 3 * math.hypot(e0, e1)
