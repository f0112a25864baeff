import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathfold.errors import InfeasibleError
from pathfold.fitting import (AnnealConfig, FitTemplate, action_of_data, fit, information,
                              local_minima, negative_log_likelihood, predict, scan_minima,
                              wkb_reference)
from pathfold.langevin import simulate_path
from pathfold.model import (Distribution, ModelSpec, PolynomialField, Variable, load_model,
                            timeseries_from_array)
from pathfold.path_integral import path_action, path_step_terms, propagate_spec

from conftest import OU_TEMPLATE, OU_TOML, poly_spec

QUICK = AnnealConfig(restarts=1, evals_factor=60)


def template(a=(0.5, 0.05, 5.0), c=(0.5, 0.1, 3.0), noise_monomial="{}", drift_extra="",
             check=True):
    return FitTemplate(load_model(f"""
dt = 0.01

[[variables]]
name = "M"
range = [-6.0, 6.0]
points = 201

[[drift]]
variable = "M"
param = "a"
scale = -1.0
monomial = {{ M = 1 }}
{drift_extra}
[[noise]]
source = 1
variable = "M"
param = "c"
scale = 1.0
monomial = {noise_monomial}

[[parameters]]
name = "a"
initial = {a[0]}
bounds = [{a[1]}, {a[2]}]

[[parameters]]
name = "c"
initial = {c[0]}
bounds = [{c[1]}, {c[2]}]
""", check=check))


def series(spec, n, seed, x0=0.0):
    tr = simulate_path(spec, [x0], n, seed=seed)
    return timeseries_from_array(spec, tr.t, tr.states)


@pytest.fixture(scope="module")
def ou_data():
    return series(load_model(OU_TOML), 10_000, seed=21)


# objective -----------------------------------------------------------------------------------

def test_constant_series_action():
    spec = poly_spec([], [0.8])
    data = timeseries_from_array(spec, 0.01 * np.arange(6), np.full(6, 0.3))
    assert action_of_data(spec, data)[0] == 0.0


def test_two_step_series_action():
    spec = poly_spec([], [1.0], dt=1.0)
    data = timeseries_from_array(spec, [0.0, 1.0, 2.0], [0.0, 1.0, 2.0])
    action, logpref = action_of_data(spec, data)
    assert action == pytest.approx(1.0)
    assert (action, logpref) == path_action(spec, [[0.0], [1.0], [2.0]])
    assert negative_log_likelihood(spec, data) == pytest.approx(action - logpref)


def test_ou_action_per_step(ou_data):
    spec = load_model(OU_TOML)
    dtl, _ = path_step_terms(spec, ou_data.values)
    se = dtl.std(ddof=1) / math.sqrt(dtl.size)
    assert abs(dtl.mean() - 0.5) < 3 * se


# fit -----------------------------------------------------------------------------------------

def test_fit_recovers_and_beats_truth(ou_data):
    tpl = template()
    res = fit(tpl, ou_data, QUICK, seed=0)
    assert res.coefficients["a"] == pytest.approx(1.0, rel=0.1)
    assert res.coefficients["c"] ** 2 == pytest.approx(1.0, rel=0.05)
    truth = tpl.objective(np.array([1.0, 1.0]), ou_data)
    assert res.objective <= truth + 1e-6
    action, logpref = action_of_data(res.spec, ou_data)
    assert abs(res.objective - (action - logpref)) <= 1e-10
    assert res.trace and {"iteration", "restart", "objective", "temperature"} <= set(res.trace[0])


def test_fit_is_deterministic(ou_data):
    tpl = template()
    short = ou_data.slice(stop=800)
    cfg = AnnealConfig(restarts=1, evals_factor=20, polish=False)
    a = fit(tpl, short, cfg, seed=5)
    b = fit(tpl, short, cfg, seed=5)
    assert a.coefficients == b.coefficients
    assert a.trace == b.trace


def test_fixed_bounds_return_point(ou_data):
    tpl = template(a=(0.8, 0.8, 0.8), c=(1.2, 1.2, 1.2))
    res = fit(tpl, ou_data.slice(stop=500), seed=0)
    assert res.coefficients == {"a": 0.8, "c": 1.2}
    action, logpref = action_of_data(res.spec, ou_data.slice(stop=500))
    assert res.objective == action - logpref


def test_infeasible_bounds_reported(ou_data):
    # noise c * M vanishes at M = 0, which lies on the mesh, for every c
    tpl = template(c=(0.5, 0.1, 3.0), noise_monomial="{ M = 1 }", check=False)
    with pytest.raises(InfeasibleError, match="c in"):
        fit(tpl, ou_data.slice(stop=200), QUICK, seed=0)


def test_too_little_data():
    spec = load_model(OU_TOML)
    data = timeseries_from_array(spec, [0.0, 0.01], [0.0, 0.1])
    with pytest.raises(ValueError):
        fit(template(), data)


# information ---------------------------------------------------------------------------------

def test_information_examples():
    mesh = poly_spec([], [1.0], lo=0, hi=3, points=3).mesh()
    P = Distribution(mesh, np.array([1.0, 0.0, 0.0]))
    Q = Distribution(mesh, np.array([0.5, 0.5, 0.0]))
    assert information(P, Q) == pytest.approx(-math.log(2))
    assert information(Q, Q) == 0.0
    with pytest.raises(ValueError):
        information(Q, P)


def test_information_gaussian():
    mesh = poly_spec([], [1.0], lo=-10, hi=10, points=2001).mesh()
    s, m1, m2 = 1.0, 0.0, 0.7
    P = Distribution.gaussian(mesh, [m1], [[s * s]])
    Q = Distribution.gaussian(mesh, [m2], [[s * s]])
    assert information(P, Q) == pytest.approx(-(m1 - m2) ** 2 / (2 * s * s), rel=0.02)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=6, max_size=6),
       st.lists(st.floats(1e-3, 1), min_size=6, max_size=6))
def test_information_never_positive(p, q):
    mesh = poly_spec([], [1.0], lo=0, hi=6, points=6).mesh()
    p = np.asarray(p)
    if p.sum() == 0:
        p[0] = 1.0
    P, Q = Distribution(mesh, p).normalized(), Distribution(mesh, np.asarray(q)).normalized()
    value = information(P, Q)
    assert value <= 1e-12
    assert information(P, P) == 0.0


def curved_2d():
    P2 = lambda terms: PolynomialField(2, terms)
    noise = [[P2([(1.0, (0, 0)), (0.2, (2, 0))]), P2([(0.1, (0, 1))])],
             [P2([]), P2([(1.0, (0, 0)), (0.15, (2, 0)), (0.1, (0, 2))])]]
    drift = [P2([(-1.0, (1, 0))]), P2([(-0.5, (0, 1))])]
    return ModelSpec.from_fields([Variable("x", -2, 2, 31), Variable("y", -2, 2, 31)], drift,
                                 noise, dt=0.1)


def test_wkb_reference():
    spec = poly_spec([0.1, -1.0], [0.7, 0.0, 0.1], lo=-3, hi=3, points=61, dt=0.05)
    P0 = Distribution.point_mass(spec.mesh(), [1.0])
    assert np.array_equal(wkb_reference(spec, P0, 5).weights,
                          propagate_spec(spec, P0, 5).weights)
    one, z = PolynomialField.constant(2, 1.0), PolynomialField(2, [])
    flat = ModelSpec.from_fields([Variable("x", -2, 2, 21), Variable("y", -2, 2, 21)],
                                 [PolynomialField(2, [(-1.0, (1, 0))]), z],
                                 [[one, PolynomialField.constant(2, 0.3)], [z, one]], dt=0.1)
    Q0 = Distribution.point_mass(flat.mesh(), [0.5, 0.0])
    assert np.array_equal(wkb_reference(flat, Q0, 3).weights, propagate_spec(flat, Q0, 3).weights)
    curved = curved_2d()
    C0 = Distribution.point_mass(curved.mesh(), [0.5, 0.5])
    std = propagate_spec(curved, C0, 5)
    assert information(std, wkb_reference(curved, C0, 5)) < 0.0


# scans ---------------------------------------------------------------------------------------

def test_local_minima_tie_rule():
    assert local_minima(np.array([1.0, 1.0, 1.0])) == [(1,)]
    assert local_minima(np.array([2.0, 1.0, 1.0, 1.0, 2.0])) == [(1,), (2,), (3,)]
    assert local_minima(np.array([1.0, 2.0])) == []
    v = np.ones((3, 4))
    v[1, 2] = 0.5
    assert local_minima(v) == [(1, 2)]


def test_scan_quadratic_in_drift(ou_data):
    tpl = template(c=(1.0, 0.1, 3.0))
    x = ou_data.values[:, 0]
    dm, mid, dt = np.diff(x), 0.5 * (x[1:] + x[:-1]), 0.01
    a_star = (dm.size * dt / 2 - np.sum(dm * mid)) / (dt * np.sum(mid ** 2))
    axis = np.linspace(0.5, 1.5, 11)
    minima, values = scan_minima(tpl, ou_data, {"a": axis})
    assert len(minima) == 1
    assert minima[0].coefficients["a"] == axis[np.argmin(np.abs(axis - a_star))]
    assert minima[0].coefficients["c"] == 1.0
    assert values.shape == (11,)


def test_scan_sign_symmetric_noise():
    spec = poly_spec([0, 1.0, 0, -1.0], [0.7], lo=-3, hi=3, points=61)
    data = series(spec, 3000, seed=4, x0=-1.0)
    tpl = template(a=(-1.0, -1.0, -1.0), c=(0.5, -2.0, 2.0),
                   drift_extra="""
[[drift]]
variable = "M"
coefficient = -1.0
monomial = { M = 3 }
""")
    minima, values = scan_minima(tpl, data, {"c": np.linspace(-1.5, 1.5, 30)})
    assert len(minima) == 2
    cs = sorted(m.coefficients["c"] for m in minima)
    assert cs[0] == pytest.approx(-cs[1])
    assert np.allclose(values, values[::-1])


def test_scan_axis_relabeling(ou_data):
    tpl = template()
    short = ou_data.slice(stop=2000)
    ga, gc = np.linspace(0.4, 1.6, 7), np.linspace(0.7, 1.3, 7)
    m1, v1 = scan_minima(tpl, short, {"a": ga, "c": gc})
    m2, v2 = scan_minima(tpl, short, {"c": gc, "a": ga})
    assert np.array_equal(v1, v2.T)
    assert [m.coefficients for m in m1] == [m.coefficients for m in m2]


def test_scan_subsampled_epochs(ou_data):
    short = ou_data.slice(stop=2001)
    _, coarse = scan_minima(template(), short, {"a": [0.8, 1.0]}, epoch_stride=10)
    tpl = template()
    x = tpl.initial.copy()
    x[0] = 0.8
    assert coarse[0] == tpl.objective(x, short.slice(step=10))


# prediction ----------------------------------------------------------------------------------

def test_predict_horizon_zero(ou_spec):
    P0 = Distribution.point_mass(ou_spec.mesh(), [0.4])
    pred = predict(ou_spec, P0, 0)
    assert pred.distribution is P0
    assert pred.summary["mean"] == pytest.approx([0.4])


def test_predict_ou_forecast(ou_data):
    res = fit(template(), ou_data, QUICK, seed=0)
    a, c = res.coefficients["a"], res.coefficients["c"]
    n, dt, x0 = 50, 0.01, 1.5
    pred = predict(res.spec, [x0], n)
    t = n * dt
    mean = pred.summary["mean"][0]
    var = pred.summary["covariance"][0][0]
    assert mean == pytest.approx(x0 * math.exp(-a * t), rel=0.01)
    assert var == pytest.approx(c * c * (1 - math.exp(-2 * a * t)) / (2 * a), rel=0.03)
    # truth differs from the fit by at most three parameter standard errors
    T = ou_data.t[-1] - ou_data.t[0]
    sa = math.sqrt(2 * a / T)
    assert abs(mean - x0 * math.exp(-t)) <= 3 * sa * x0 * t * math.exp(-a * t) + 0.01
    lo, hi = pred.summary["intervals"]["M"]
    assert lo < mean < hi


def test_predict_nearly_deterministic():
    c, dt = 0.03, 0.1
    lo_, hi_ = 0.5, 1.1
    h = math.sqrt(c * c * dt) / 1.5
    points = int(math.ceil((hi_ - lo_) / h))
    spec = poly_spec([0, -1.0], [c], lo=lo_, hi=hi_, points=points, dt=dt)
    mesh = spec.mesh()
    start = mesh.centers()[np.argmin(np.abs(mesh.centers()[:, 0] - 1.0)), 0]
    pred = predict(spec, [start], 2)
    target = start * math.exp(-2 * dt)
    x = mesh.centers()[:, 0]
    near = np.abs(x - target) <= 3.5 * mesh.widths[0]
    assert pred.distribution.flat()[near].sum() >= 0.9


def test_likelihood_gap_shrinks_with_data():
    spec = load_model(OU_TOML)
    tpl = template(a=(1.0, 0.05, 5.0), c=(1.0, 0.1, 3.0))
    polish_only = AnnealConfig(restarts=0, polish_xatol=1e-6, polish_fatol=1e-6)
    gaps = {10_000: [], 100_000: []}
    for seed in (0, 1, 2):
        full = series(spec, 100_000, seed=100 + seed)
        for n in gaps:
            data = full.slice(stop=n + 1)
            res = fit(tpl, data, polish_only, seed=seed)
            truth = tpl.objective(np.array([1.0, 1.0]), data)
            gaps[n].append((truth - res.objective) / data.n_increments)
    small, large = np.mean(gaps[10_000]), np.mean(gaps[100_000])
    assert min(gaps[10_000] + gaps[100_000]) >= -1e-12
    assert small >= 2 * large
