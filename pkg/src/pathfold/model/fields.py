"""Scalar fields over the flattened state vector.

Two concrete evaluators share one duck-typed interface (``evaluate``,
``partial``, ``second_partial`` and the batched ``jet``):

* :class:`PolynomialField` -- sparse multivariate polynomial with exact
  symbolic derivatives. This is the form produced by the config loader and
  the form the fitting code manipulates.
* :class:`ClosedFormField` -- caller-supplied value/gradient/Hessian
  callables, used for exact non-polynomial geometries in tests.
"""
from __future__ import annotations

from functools import cached_property
from typing import Callable, Iterable, Mapping

import numpy as np


def _as_points(x, nvars):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape[-1] != nvars:
        raise ValueError(f"expected trailing dimension {nvars}, got shape {x.shape}")
    return x


class PolynomialField:
    """Sparse polynomial ``sum_k c_k prod_j x_j**e_kj`` in ``nvars`` variables.

    Duplicate exponent vectors are merged on construction and zero
    coefficients dropped, so two fields compare equal iff they are the same
    polynomial.

    Parameters
    ----------
    nvars : int
        Number of state variables the field depends on.
    terms : iterable of (coefficient, exponents)
        ``exponents`` is a length-``nvars`` sequence of non-negative ints.
    """

    def __init__(self, nvars: int, terms: Iterable[tuple[float, Iterable[int]]] = ()):
        self.nvars = int(nvars)
        merged: dict[tuple[int, ...], float] = {}
        for coef, exps in terms:
            exps = tuple(int(e) for e in exps)
            if len(exps) != self.nvars:
                raise ValueError(f"exponent vector {exps} does not have {self.nvars} entries")
            if any(e < 0 for e in exps):
                raise ValueError(f"negative exponent in {exps}")
            merged[exps] = merged.get(exps, 0.0) + float(coef)
        self.terms = {e: c for e, c in sorted(merged.items()) if c != 0.0}
        if self.terms:
            self._exps = np.array(list(self.terms), dtype=float)
            self._coefs = np.array(list(self.terms.values()), dtype=float)
        else:
            self._exps = np.zeros((0, self.nvars))
            self._coefs = np.zeros(0)

    @classmethod
    def constant(cls, nvars, value):
        return cls(nvars, [(value, (0,) * nvars)])

    @classmethod
    def from_dict(cls, nvars, mapping: Mapping[tuple[int, ...], float]):
        return cls(nvars, [(c, e) for e, c in mapping.items()])

    # -- algebra -----------------------------------------------------------
    def __eq__(self, other):
        if not isinstance(other, PolynomialField):
            return NotImplemented
        return self.nvars == other.nvars and self.terms == other.terms

    def __hash__(self):
        return hash((self.nvars, tuple(self.terms.items())))

    def __add__(self, other):
        if not isinstance(other, PolynomialField):
            return NotImplemented
        self._check_compatible(other)
        return PolynomialField(self.nvars, [(c, e) for e, c in self.terms.items()]
                               + [(c, e) for e, c in other.terms.items()])

    def __sub__(self, other):
        return self + (-1.0) * other

    def __mul__(self, other):
        if isinstance(other, PolynomialField):
            self._check_compatible(other)
            out = []
            for e1, c1 in self.terms.items():
                for e2, c2 in other.terms.items():
                    out.append((c1 * c2, tuple(a + b for a, b in zip(e1, e2))))
            return PolynomialField(self.nvars, out)
        return PolynomialField(self.nvars, [(float(other) * c, e) for e, c in self.terms.items()])

    __rmul__ = __mul__

    def __neg__(self):
        return -1.0 * self

    def _check_compatible(self, other):
        if other.nvars != self.nvars:
            raise ValueError("fields over different numbers of variables")

    @property
    def is_zero(self):
        return not self.terms

    @property
    def degree(self):
        return max((sum(e) for e in self.terms), default=0)

    def differentiate(self, index: int) -> "PolynomialField":
        """Exact partial derivative with respect to variable ``index``."""
        if not 0 <= index < self.nvars:
            raise IndexError(f"variable index {index} out of range")
        out = []
        for exps, coef in self.terms.items():
            p = exps[index]
            if p == 0:
                continue
            lowered = list(exps)
            lowered[index] = p - 1
            out.append((coef * p, lowered))
        return PolynomialField(self.nvars, out)

    @cached_property
    def _gradient_fields(self):
        return tuple(self.differentiate(i) for i in range(self.nvars))

    @cached_property
    def _hessian_fields(self):
        grads = self._gradient_fields
        return tuple(tuple(grads[i].differentiate(j) for j in range(self.nvars))
                     for i in range(self.nvars))

    # -- evaluation --------------------------------------------------------
    def evaluate(self, x):
        """Value at ``x`` (shape ``(..., nvars)``); returns shape ``(...)``."""
        x = _as_points(x, self.nvars)
        if not self.terms:
            return np.zeros(x.shape[:-1])
        if self._exps.max() == 0.0:
            return np.full(x.shape[:-1], self._coefs.sum())
        powers = np.prod(x[..., None, :] ** self._exps, axis=-1)
        return powers @ self._coefs

    __call__ = evaluate

    def partial(self, x, index):
        return self._gradient_fields[index].evaluate(x)

    def second_partial(self, x, i, j):
        return self._hessian_fields[i][j].evaluate(x)

    def jet(self, x, order=2):
        """Value, gradient ``(..., n)`` and Hessian ``(..., n, n)`` at ``x``."""
        x = _as_points(x, self.nvars)
        batch = x.shape[:-1]
        n = self.nvars
        val = self.evaluate(x)
        grad = np.zeros(batch + (n,))
        hess = np.zeros(batch + (n, n)) if order >= 2 else None
        if self.degree == 0:
            return val, grad, hess
        for i, gf in enumerate(self._gradient_fields):
            if not gf.is_zero:
                grad[..., i] = gf.evaluate(x)
        if order >= 2 and self.degree >= 2:
            for i in range(n):
                for j in range(i, n):
                    hf = self._hessian_fields[i][j]
                    if not hf.is_zero:
                        hess[..., i, j] = hess[..., j, i] = hf.evaluate(x)
        return val, grad, hess

    def with_terms_scaled(self, factor):
        return factor * self

    def __repr__(self):
        if not self.terms:
            return "PolynomialField(0)"
        parts = []
        for exps, coef in self.terms.items():
            mono = "*".join(f"x{i}" + (f"^{p}" if p > 1 else "")
                            for i, p in enumerate(exps) if p)
            parts.append(f"{coef:g}" + (f"*{mono}" if mono else ""))
        return "PolynomialField(" + " + ".join(parts) + ")"


def zero_field(nvars):
    return PolynomialField(nvars)


def differentiate(field: PolynomialField, index: int) -> PolynomialField:
    """Exact partial derivative of a polynomial field (0-based ``index``)."""
    return field.differentiate(index)


class ClosedFormField:
    """Field defined by explicit callables.

    ``value(x)`` maps ``(..., n)`` to ``(...)``; ``gradient`` to ``(..., n)``
    and ``hessian`` to ``(..., n, n)``. Derivatives are taken as given -- no
    finite differencing happens here.
    """

    def __init__(self, nvars: int, value: Callable, gradient: Callable,
                 hessian: Callable | None = None, name: str = "closed-form"):
        self.nvars = int(nvars)
        self._value = value
        self._gradient = gradient
        self._hessian = hessian
        self.name = name

    is_zero = False

    def evaluate(self, x):
        x = _as_points(x, self.nvars)
        return np.broadcast_to(np.asarray(self._value(x), dtype=float), x.shape[:-1]).copy()

    __call__ = evaluate

    def partial(self, x, index):
        x = _as_points(x, self.nvars)
        return np.asarray(self._gradient(x), dtype=float)[..., index]

    def second_partial(self, x, i, j):
        if self._hessian is None:
            raise NotImplementedError(f"{self.name}: no Hessian supplied")
        x = _as_points(x, self.nvars)
        return np.asarray(self._hessian(x), dtype=float)[..., i, j]

    def jet(self, x, order=2):
        x = _as_points(x, self.nvars)
        batch = x.shape[:-1]
        n = self.nvars
        val = self.evaluate(x)
        grad = np.broadcast_to(np.asarray(self._gradient(x), dtype=float), batch + (n,)).copy()
        hess = None
        if order >= 2:
            if self._hessian is None:
                raise NotImplementedError(f"{self.name}: no Hessian supplied")
            hess = np.broadcast_to(np.asarray(self._hessian(x), dtype=float),
                                   batch + (n, n)).copy()
        return val, grad, hess

    def __repr__(self):
        return f"ClosedFormField({self.name})"
