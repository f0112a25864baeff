import numpy as np
import pytest

from pathfold.model import (ClosedFormField, ModelSpec, PolynomialField, Variable, load_model,
                            zero_field)

OU_TOML = """
dt = 0.01

[[variables]]
name = "M"
range = [-6.0, 6.0]
points = 201

[[drift]]
variable = "M"
coefficient = -1.0
monomial = { M = 1 }

[[noise]]
source = 1
variable = "M"
coefficient = 1.0
monomial = {}
"""

OU_TEMPLATE = """
dt = 0.01

[[variables]]
name = "M"
range = [-6.0, 6.0]
points = 201

[[drift]]
variable = "M"
param = "a"
scale = -1.0
monomial = { M = 1 }

[[noise]]
source = 1
variable = "M"
param = "c"
scale = 1.0
monomial = {}

[[parameters]]
name = "a"
initial = 0.5
bounds = [0.05, 5.0]

[[parameters]]
name = "c"
initial = 0.5
bounds = [0.1, 3.0]
"""


def poly_spec(drift, noise, lo=-6.0, hi=6.0, points=201, dt=0.01, name="M"):
    """1-D spec from polynomial coefficient lists (index = power)."""
    def field(coefs):
        return PolynomialField(1, [(c, (p,)) for p, c in enumerate(coefs) if c])
    return ModelSpec.from_fields([Variable(name, lo, hi, points)], [field(drift)],
                                 [[field(noise)]], dt)


def sphere_spec(a=2.0, points=21):
    """Metric diag(a^2, a^2 sin^2 theta) on (theta, phi) via closed-form noise."""
    const = ClosedFormField(2, lambda x: np.full(x.shape[:-1], 1.0 / a),
                            lambda x: np.zeros(x.shape), lambda x: np.zeros(x.shape + (2,)))

    def val(x):
        return 1.0 / (a * np.sin(x[..., 0]))

    def grad(x):
        g = np.zeros(x.shape)
        g[..., 0] = -np.cos(x[..., 0]) / (a * np.sin(x[..., 0]) ** 2)
        return g

    def hess(x):
        h = np.zeros(x.shape + (2,))
        th = x[..., 0]
        h[..., 0, 0] = (1.0 + np.cos(th) ** 2) / (a * np.sin(th) ** 3)
        return h

    z = zero_field(2)
    return ModelSpec.from_fields([Variable("th", 0.3, 2.8, points),
                                  Variable("ph", 0.0, 6.0, points)],
                                 [z, z], [[const, z], [z, ClosedFormField(2, val, grad, hess)]],
                                 dt=0.1)


def polar_spec(points=21):
    """Metric diag(1, r^2): noise diag(1, 1/r)."""
    one = PolynomialField.constant(2, 1.0)

    def val(x):
        return 1.0 / x[..., 0]

    def grad(x):
        g = np.zeros(x.shape)
        g[..., 0] = -1.0 / x[..., 0] ** 2
        return g

    def hess(x):
        h = np.zeros(x.shape + (2,))
        h[..., 0, 0] = 2.0 / x[..., 0] ** 3
        return h

    z = zero_field(2)
    return ModelSpec.from_fields([Variable("r", 0.5, 3.0, points), Variable("q", 0.0, 6.0, points)],
                                 [z, z], [[one, z], [z, ClosedFormField(2, val, grad, hess)]],
                                 dt=0.1)


@pytest.fixture
def ou_spec():
    return load_model(OU_TOML)


@pytest.fixture
def ou_template_text():
    return OU_TEMPLATE
