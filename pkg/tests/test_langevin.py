import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from pathfold.errors import BlowUpError
from pathfold.langevin import reflect, simulate_ensemble, step, trajectory_rng
from pathfold.model import Distribution

from conftest import poly_spec


def test_step_without_motion():
    spec = poly_spec([], [])
    assert step(spec, [0.7], 0.01, np.random.default_rng(0))[0] == 0.7


def test_step_deterministic_decay():
    out = step(poly_spec([0, -1.0], []), [1.0], 0.01, np.random.default_rng(0))
    assert out[0] == pytest.approx(0.990, abs=5e-5)


def test_zero_noise_matches_ode():
    spec = poly_spec([0, -1.0], [])
    res = simulate_ensemble(spec, [1.0], 1, 100, seed=0, dt=0.01)
    # midpoint local error is O(dt^3) per step, O(dt^2) globally
    assert res.states[0, -1, 0] == pytest.approx(math.exp(-1.0), abs=1e-5)


def test_one_step_variance():
    spec = poly_spec([], [1.0])
    dt = 0.01
    res = simulate_ensemble(spec, [0.0], 100_000, 1, seed=3, dt=dt)
    x = res.states[:, -1, 0]
    se = dt * math.sqrt(2.0 / (x.size - 1))
    assert abs(x.var(ddof=1) - dt) < 3 * se


def test_ou_moments(ou_spec):
    res = simulate_ensemble(ou_spec, [1.0], 100_000, 200, seed=11)
    x = res.states[:, -1, 0]
    n = x.size
    var = 0.5 * (1 - math.exp(-4.0))
    assert res.t[-1] == pytest.approx(2.0)
    assert abs(x.mean() - math.exp(-2.0)) < 3 * math.sqrt(var / n)
    assert abs(x.var(ddof=1) - var) < 3 * var * math.sqrt(2.0 / (n - 1))


def test_wiener_histogram():
    spec = poly_spec([], [1.0], lo=-6, hi=6, points=121)
    res = simulate_ensemble(spec, [0.0], 100_000, 100, seed=2, record_every=100)
    hist = res.histogram_at(time=1.0)
    mesh = hist.mesh
    edges = mesh.edges(0)
    ref = Distribution(mesh, np.diff(stats.norm.cdf(edges)))
    assert np.abs(hist.flat() - ref.flat()).sum() <= 0.03


def test_seed_determinism(ou_spec):
    a = simulate_ensemble(ou_spec, [0.5], 1, 50, seed=9)
    b = simulate_ensemble(ou_spec, [0.5], 1, 50, seed=9)
    assert np.array_equal(a.states, b.states)
    c = simulate_ensemble(ou_spec, [0.5], 1, 50, seed=10)
    assert not np.array_equal(a.states, c.states)


def test_trajectories_independent_of_batch(ou_spec):
    small = simulate_ensemble(ou_spec, [0.5], 3, 40, seed=4)
    big = simulate_ensemble(ou_spec, [0.5], 10, 40, seed=4)
    assert np.array_equal(small.states, big.states[:3])


def test_stratonovich_drift():
    c, dt, x0 = 0.5, 0.01, 1.0
    spec = poly_spec([], [0, c], lo=0.01, hi=20, points=101)
    res = simulate_ensemble(spec, [x0], 100_000, 1, seed=5, dt=dt)
    dx = (res.states[:, -1, 0] - x0) / dt
    se = dx.std(ddof=1) / math.sqrt(dx.size)
    assert abs(dx.mean() - 0.5 * c * c * x0) < 3 * se


def test_unbiased_covariance(ou_spec):
    res = simulate_ensemble(ou_spec, [0.0], 50, 5, seed=1)
    x = res.states[:, -1, 0]
    assert res.covariance()[0, 0] == pytest.approx(x.var(ddof=1))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blow_up_reports_trajectory():
    spec = poly_spec([0, 0, 0, 1e9], [1.0], lo=-1e300, hi=1e300, points=3)
    with pytest.raises(BlowUpError) as err:
        simulate_ensemble(spec, [10.0], 2, 20, seed=0, dt=0.1)
    assert err.value.trajectory == 0


def test_initial_distribution_sampling(ou_spec):
    mesh = ou_spec.mesh()
    P0 = Distribution.point_mass(mesh, [2.0])
    res = simulate_ensemble(ou_spec, P0, 200, 0, seed=0)
    x = res.states[:, 0, 0]
    h = mesh.widths[0]
    # mass is shared by the two cells bracketing 2.0
    assert np.all(np.abs(x - 2.0) <= 1.5 * h + 1e-12)
    assert abs(x.mean() - 2.0) < 4 * h / math.sqrt(x.size)


@settings(max_examples=100, deadline=None)
@given(st.floats(-50, 50), st.floats(-2, 0), st.floats(0.1, 3))
def test_reflection_stays_in_range(x, lo, span):
    hi = lo + span
    y = reflect(np.array([x]), np.array([lo]), np.array([hi]))[0]
    assert lo - 1e-12 <= y <= hi + 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32), st.floats(0.1, 3))
def test_trajectories_stay_in_range(seed, c):
    spec = poly_spec([0.5], [c], lo=-1, hi=1, points=21)
    res = simulate_ensemble(spec, [0.0], 20, 30, seed=seed, dt=0.05)
    assert np.all(res.states >= -1 - 1e-12) and np.all(res.states <= 1 + 1e-12)


def test_trajectory_rng_identity():
    a = trajectory_rng(3, 7).standard_normal(4)
    b = np.random.Generator(np.random.Philox(key=np.array([3, 7], dtype=np.uint64)))
    assert np.array_equal(a, b.standard_normal(4))
