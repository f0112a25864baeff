"""Uniform cell-centred meshes and probability vectors over them."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ..errors import ValidationError

NORMALIZE_TOL = 1e-12


@dataclass(frozen=True)
class StateMesh:
    """Tensor product of uniform per-dimension grids.

    Dimension ``k`` spans ``[lows[k], highs[k]]`` with ``points[k]`` cells of
    width ``(high - low) / points``; cell centres sit at
    ``low + (alpha + 1/2) * width`` for 0-based ``alpha``.
    """

    lows: tuple[float, ...]
    highs: tuple[float, ...]
    points: tuple[int, ...]
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if not (len(self.lows) == len(self.highs) == len(self.points)):
            raise ValueError("lows/highs/points length mismatch")
        for lo, hi, n in zip(self.lows, self.highs, self.points):
            if not lo < hi:
                raise ValidationError(f"mesh range [{lo}, {hi}] is empty")
            if n < 3:
                raise ValidationError(f"mesh needs at least 3 points per dimension, got {n}")

    @property
    def ndim(self) -> int:
        return len(self.points)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.points)

    @property
    def size(self) -> int:
        return int(np.prod(self.points))

    @property
    def widths(self) -> np.ndarray:
        return (np.asarray(self.highs) - np.asarray(self.lows)) / np.asarray(self.points)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.widths))

    def axis(self, k: int) -> np.ndarray:
        lo, hi, n = self.lows[k], self.highs[k], self.points[k]
        h = (hi - lo) / n
        return lo + (np.arange(n) + 0.5) * h

    def edges(self, k: int) -> np.ndarray:
        return np.linspace(self.lows[k], self.highs[k], self.points[k] + 1)

    def centers(self) -> np.ndarray:
        """All cell centres, shape ``(size, ndim)`` in C order."""
        grids = np.meshgrid(*[self.axis(k) for k in range(self.ndim)], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= np.asarray(self.lows)) & (x <= np.asarray(self.highs)), axis=-1)

    def locate(self, x) -> np.ndarray:
        """0-based multi-index of the cell containing ``x`` (clipped to the mesh)."""
        x = np.asarray(x, dtype=float)
        idx = np.floor((x - np.asarray(self.lows)) / self.widths).astype(int)
        return np.clip(idx, 0, np.asarray(self.points) - 1)

    def sub(self, dims) -> "StateMesh":
        dims = list(dims)
        labels = tuple(self.labels[d] for d in dims) if self.labels else None
        return StateMesh(tuple(self.lows[d] for d in dims), tuple(self.highs[d] for d in dims),
                         tuple(self.points[d] for d in dims), labels)


def mesh_point(mesh: StateMesh, multi_index) -> np.ndarray:
    """Cell-centre coordinates for a **1-based** multi-index.

    >>> mesh_point(StateMesh((-1.0,), (1.0,), (4,)), (1,))
    array([-0.75])
    """
    idx = np.atleast_1d(np.asarray(multi_index, dtype=int))
    if idx.shape != (mesh.ndim,):
        raise IndexError(f"expected {mesh.ndim} indices, got {idx.tolist()}")
    for k, a in enumerate(idx):
        if not 1 <= a <= mesh.points[k]:
            raise IndexError(f"index {a} outside 1..{mesh.points[k]} on dimension {k}")
    return np.asarray(mesh.lows) + (idx - 0.5) * mesh.widths


@dataclass
class Distribution:
    """Non-negative weights over the cells of a :class:`StateMesh`.

    ``weights`` has shape ``mesh.shape``; entries are probabilities per cell,
    not densities. ``info`` carries free-form diagnostics (e.g. per-step mass
    drift recorded by propagators) and does not take part in equality.
    """

    mesh: StateMesh
    weights: np.ndarray
    info: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.size != self.mesh.size:
            raise ValueError(f"{w.size} weights for a mesh of {self.mesh.size} cells")
        self.weights = w.reshape(self.mesh.shape)

    # -- constructors ------------------------------------------------------
    @classmethod
    def point_mass(cls, mesh: StateMesh, point) -> "Distribution":
        """Mass at ``point`` shared linearly between neighbouring cell centres.

        The mean of the result equals ``point`` exactly whenever ``point``
        lies between the first and last cell centres on every axis.
        """
        point = np.atleast_1d(np.asarray(point, dtype=float))
        if point.shape != (mesh.ndim,):
            raise ValueError("point dimension does not match mesh")
        per_axis = []
        for k in range(mesh.ndim):
            h = mesh.widths[k]
            u = (point[k] - mesh.lows[k]) / h - 0.5
            n = mesh.points[k]
            u = min(max(u, 0.0), n - 1.0)
            lo = min(int(np.floor(u)), n - 2)
            frac = u - lo
            vec = np.zeros(n)
            vec[lo] += 1.0 - frac
            vec[lo + 1] += frac
            per_axis.append(vec)
        w = per_axis[0]
        for vec in per_axis[1:]:
            w = np.multiply.outer(w, vec)
        return cls(mesh, w)

    @classmethod
    def cell(cls, mesh: StateMesh, index) -> "Distribution":
        w = np.zeros(mesh.shape)
        w[tuple(np.atleast_1d(index))] = 1.0
        return cls(mesh, w)

    @classmethod
    def uniform(cls, mesh: StateMesh) -> "Distribution":
        return cls(mesh, np.full(mesh.shape, 1.0 / mesh.size))

    @classmethod
    def from_density(cls, mesh: StateMesh, pdf) -> "Distribution":
        vals = np.asarray(pdf(mesh.centers()), dtype=float) * mesh.cell_volume
        return cls(mesh, vals).normalized()

    @classmethod
    def gaussian(cls, mesh: StateMesh, mean, cov) -> "Distribution":
        """Exact cell probabilities of a normal law restricted to the mesh.

        Uses CDF differences for axis-aligned covariance and centre
        evaluation otherwise; renormalised over the mesh in both cases.
        """
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        if np.allclose(cov, np.diag(np.diag(cov))):
            w = None
            for k in range(mesh.ndim):
                cdf = stats.norm.cdf(mesh.edges(k), mean[k], np.sqrt(cov[k, k]))
                vec = np.diff(cdf)
                w = vec if w is None else np.multiply.outer(w, vec)
            return cls(mesh, w).normalized()
        pdf = stats.multivariate_normal(mean, cov).pdf
        return cls.from_density(mesh, lambda x: pdf(x))

    # -- basic operations --------------------------------------------------
    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def normalized(self) -> "Distribution":
        tot = self.total
        if not tot > 0:
            raise ValueError("cannot normalize a distribution with zero mass")
        w = self.weights / tot
        return Distribution(self.mesh, w, dict(self.info))

    def flat(self) -> np.ndarray:
        return self.weights.ravel()

    def marginal(self, dims) -> "Distribution":
        dims = [dims] if np.isscalar(dims) else list(dims)
        other = tuple(k for k in range(self.mesh.ndim) if k not in dims)
        w = self.weights.sum(axis=other) if other else self.weights
        order = sorted(dims)
        if order != dims:
            w = np.moveaxis(w, [order.index(d) for d in dims], range(len(dims)))
        return Distribution(self.mesh.sub(dims), w)

    def mean(self) -> np.ndarray:
        p = self.flat() / self.total
        return p @ self.mesh.centers()

    def covariance(self) -> np.ndarray:
        p = self.flat() / self.total
        x = self.mesh.centers()
        d = x - p @ x
        return (d * p[:, None]).T @ d

    def variance(self) -> np.ndarray:
        return np.diag(self.covariance())

    def quantile(self, dim: int, q: float) -> float:
        """Quantile of the marginal along ``dim`` with linear interpolation
        of the CDF across cell edges."""
        m = self.marginal(dim)
        cdf = np.concatenate([[0.0], np.cumsum(m.flat()) / m.total])
        return float(np.interp(q, cdf, self.mesh.edges(dim)))

    def l1(self, other: "Distribution") -> float:
        self._check_same_mesh(other)
        return float(np.abs(self.weights - other.weights).sum())

    def linf(self, other: "Distribution") -> float:
        self._check_same_mesh(other)
        return float(np.abs(self.weights - other.weights).max())

    def _check_same_mesh(self, other):
        if other.mesh.shape != self.mesh.shape or not np.allclose(
                other.mesh.lows, self.mesh.lows) or not np.allclose(other.mesh.highs, self.mesh.highs):
            raise ValueError("distributions live on different meshes")

    def check(self, tol=NORMALIZE_TOL):
        if np.any(self.weights < 0):
            raise ValueError("negative weight in distribution")
        if abs(self.total - 1.0) > tol:
            raise ValueError(f"distribution mass {self.total!r} differs from 1")
        return self
