import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from pathfold.errors import BudgetError, StabilityError
from pathfold.fokker_planck import build_fd_operator, check_stability, propagate_fpe
from pathfold.model import Distribution, ModelSpec, PolynomialField, Variable

from conftest import poly_spec


def ou(a=1.0, c=1.0, lo=-6.0, hi=6.0, points=201):
    return poly_spec([0, -a], [c], lo=lo, hi=hi, points=points)


def with_potential(spec, v):
    return ModelSpec.from_fields(spec.variables, spec.drift, spec.noise, spec.dt,
                                 potential=PolynomialField.constant(spec.dim, v))


def test_interior_diffusion_stencil():
    spec = poly_spec([], [1.0], lo=-1, hi=1, points=21)
    A = build_fd_operator(spec).matrix.toarray()
    h = spec.mesh().widths[0]
    row = A[10, 9:12] * 2 * h * h
    assert np.allclose(row, [1.0, -2.0, 1.0], atol=1e-12)
    assert np.count_nonzero(A[10]) == 3


@pytest.mark.parametrize("scheme", ["central", "chang-cooper"])
def test_reflecting_columns_conserve(scheme):
    for spec in (poly_spec([], [1.0], points=41), ou(points=41),
                 poly_spec([0.3, 0, -0.2], [0.5, 0, 0.1], lo=-3, hi=3, points=41)):
        op = build_fd_operator(spec, scheme=scheme)
        assert np.max(np.abs(op.column_sums())) <= 1e-12


def test_constant_sink_decay():
    c, dt = 0.7, 0.01
    spec = with_potential(poly_spec([], [1.0], lo=-1, hi=1, points=21), -c)
    op = build_fd_operator(spec)
    dt = 0.005
    P = propagate_fpe(op, Distribution.uniform(op.mesh), dt, dt=dt, method="explicit")
    assert P.total == pytest.approx(1 - c * dt, abs=1e-12)
    P = propagate_fpe(op, Distribution.uniform(op.mesh), 1.0, dt=dt)
    assert P.total == pytest.approx(math.exp(-c), rel=1e-4)


def test_time_zero_identity(ou_spec):
    op = build_fd_operator(ou_spec)
    P0 = Distribution.point_mass(op.mesh, [0.3])
    assert propagate_fpe(op, P0, 0.0) is P0


def test_wiener_variance():
    spec = poly_spec([], [1.0], lo=-6, hi=6, points=241)
    op = build_fd_operator(spec)
    P = propagate_fpe(op, Distribution.point_mass(op.mesh, [0.0]), 0.5)
    assert P.variance()[0] == pytest.approx(0.5, rel=0.01)


def test_ou_moments(ou_spec):
    op = build_fd_operator(ou_spec)
    P = propagate_fpe(op, Distribution.point_mass(op.mesh, [1.0]), 1.0)
    assert P.mean()[0] == pytest.approx(math.exp(-1.0), rel=0.01)
    assert P.variance()[0] == pytest.approx(0.5 * (1 - math.exp(-2.0)), rel=0.01)


def test_mass_conservation_per_unit_time(ou_spec):
    op = build_fd_operator(ou_spec)
    P = propagate_fpe(op, Distribution.point_mass(op.mesh, [2.0]), 3.0)
    assert abs(P.total - 1.0) <= 3e-10


def test_stability_error_reports_bound(ou_spec):
    op = build_fd_operator(ou_spec)
    limit = op.max_stable_dt("explicit")
    with pytest.raises(StabilityError) as err:
        check_stability(op, 1.5 * limit, "explicit")
    assert err.value.max_dt == pytest.approx(limit)
    with pytest.raises(StabilityError):
        build_fd_operator(ou_spec, dt=3 * limit, method="crank-nicolson")
    check_stability(op, limit, "explicit")


@pytest.mark.parametrize("method", ["explicit", "crank-nicolson"])
def test_stability_bound_keeps_update_nonnegative(ou_spec, method):
    op = build_fd_operator(ou_spec)
    dt = op.max_stable_dt(method)
    n = op.mesh.size
    factor = 1.0 if method == "explicit" else 0.5
    update = np.eye(n) + factor * dt * op.matrix.toarray()
    assert update.min() >= -1e-12


def test_ou_stationary_gaussian():
    a, c = 1.0, 1.0
    spec = ou(a, c)
    op = build_fd_operator(spec)
    P = Distribution.gaussian(op.mesh, [0.0], [[c * c / (2 * a)]])
    dt = op.max_stable_dt()
    Q = propagate_fpe(op, P, dt, dt=dt)
    assert P.linf(Q) <= 1e-6


def _ou_error(points, t=1.0, x0=1.0, s0=0.1):
    spec = ou(points=points)
    op = build_fd_operator(spec)
    P0 = Distribution.gaussian(op.mesh, [x0], [[s0]])
    P = propagate_fpe(op, P0, t, dt=1e-3)
    e = math.exp(-t)
    exact = Distribution.gaussian(op.mesh, [x0 * e], [[s0 * e * e + 0.5 * (1 - e * e)]])
    return P.l1(exact)


def test_grid_convergence():
    coarse, fine = _ou_error(61), _ou_error(121)
    assert coarse / fine >= 3.0


def test_dimension_budget():
    vs = [Variable(f"x{k}", -1, 1, 3) for k in range(4)]
    z = PolynomialField(4, [])
    one = PolynomialField.constant(4, 1.0)
    noise = [[one if i == j else z for j in range(4)] for i in range(4)]
    spec = ModelSpec.from_fields(vs, [z] * 4, noise, 0.1)
    with pytest.raises(BudgetError):
        build_fd_operator(spec)


def test_absorbing_loses_mass():
    spec = poly_spec([], [1.0], lo=-1, hi=1, points=41)
    op = build_fd_operator(spec, boundary="absorbing")
    P = propagate_fpe(op, Distribution.point_mass(op.mesh, [0.0]), 0.5)
    assert 0.0 < P.total < 1.0
    assert np.all(op.column_sums() <= 1e-12)


def test_two_dimensional_cross_diffusion():
    one, half, z = (PolynomialField.constant(2, 1.0), PolynomialField.constant(2, 0.5),
                    PolynomialField(2, []))
    spec = ModelSpec.from_fields([Variable("a", -5, 5, 41), Variable("b", -5, 5, 41)],
                                 [z, z], [[one, z], [half, one]], dt=0.01)
    op = build_fd_operator(spec)
    assert np.max(np.abs(op.column_sums())) <= 1e-12
    # the cross stencil has negative off-diagonal entries, so start smooth
    s0 = np.diag([0.2, 0.2])
    P = propagate_fpe(op, Distribution.gaussian(op.mesh, [0.0, 0.0], s0), 0.5)
    expected = s0 + 0.5 * np.array([[1.25, 0.5], [0.5, 1.0]])
    assert np.allclose(P.covariance(), expected, rtol=0.03, atol=0.01)


@settings(max_examples=20, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(0.3, 2.0), st.floats(0.2, 1.5),
       st.sampled_from(["central", "chang-cooper"]))
def test_positivity_and_conservation(x0, c, a, scheme):
    spec = ou(a, c, lo=-4, hi=4, points=81)
    if scheme == "central":
        # central drift weighting is monotone only for cell Peclet number <= 2
        assume(a * 4.0 * 0.1 / (0.5 * c * c) <= 2.0)
    op = build_fd_operator(spec, scheme=scheme)
    P = propagate_fpe(op, Distribution.point_mass(op.mesh, [x0]), 0.5)
    assert P.flat().min() >= -1e-12
    assert abs(P.total - 1.0) <= 1e-10


def test_correlated_diffusion_from_point_mass_stays_nonnegative():
    one, half, z = (PolynomialField.constant(2, 1.0), PolynomialField.constant(2, -0.5),
                    PolynomialField(2, []))
    spec = ModelSpec.from_fields([Variable("a", -4, 4, 33), Variable("b", -4, 4, 33)],
                                 [z, z], [[one, z], [half, one]], dt=0.01)
    op = build_fd_operator(spec)
    P = propagate_fpe(op, Distribution.point_mass(op.mesh, [0.0, 0.0]), 0.3)
    assert P.flat().min() >= -1e-12
    assert P.covariance()[0, 1] == pytest.approx(-0.5 * 0.3, rel=0.05)
