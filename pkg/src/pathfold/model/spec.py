"""Declarative model description and its compiled field representation.

State vectors are flattened over (cell, variable) pairs: the coordinate of
variable ``G`` in cell ``nu`` sits at index ``nu * n_variables + G``. A
single-cell model is the ``1 x 1`` lattice and uses the same layout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np

from ..errors import ValidationError
from .fields import PolynomialField, zero_field
from .mesh import StateMesh

SPD_SAMPLE_LIMIT = 100_000


@dataclass(frozen=True)
class Variable:
    name: str
    low: float
    high: float
    points: int

    def __post_init__(self):
        if not self.name.isidentifier():
            raise ValidationError(f"variable name {self.name!r} is not an identifier")
        if not self.low < self.high:
            raise ValidationError(f"variable {self.name}: range [{self.low}, {self.high}] requires min < max")
        if self.points < 3:
            raise ValidationError(f"variable {self.name}: needs at least 3 mesh points, got {self.points}")


@dataclass(frozen=True)
class LatticeTopology:
    """Rectangular grid of cells with 4-neighbourhood adjacency."""

    rows: int = 1
    cols: int = 1
    boundary: str = "open"

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValidationError("lattice needs at least one row and one column")
        if self.boundary not in ("open", "periodic"):
            raise ValidationError(f"unknown lattice boundary {self.boundary!r}")
        if self.boundary == "periodic" and (self.rows < 3 or self.cols < 3):
            raise ValidationError("periodic lattices need at least 3 rows and 3 columns")

    @property
    def size(self) -> int:
        return self.rows * self.cols

    def index(self, r: int, c: int) -> int:
        return r * self.cols + c

    def coords(self, cell: int) -> tuple[int, int]:
        return divmod(cell, self.cols)

    def label(self, cell: int) -> str:
        r, c = self.coords(cell)
        return f"{r},{c}"

    def offset(self, cell: int, dr: int, dc: int) -> int | None:
        r, c = self.coords(cell)
        r, c = r + dr, c + dc
        if self.boundary == "periodic":
            return self.index(r % self.rows, c % self.cols)
        if 0 <= r < self.rows and 0 <= c < self.cols:
            return self.index(r, c)
        return None

    @cached_property
    def adjacency(self) -> tuple[tuple[int, ...], ...]:
        out = []
        for cell in range(self.size):
            nbrs = [self.offset(cell, dr, dc) for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1))]
            out.append(tuple(n for n in nbrs if n is not None))
        return tuple(out)

    def neighbors(self, cell: int) -> tuple[int, ...]:
        return self.adjacency[cell]

    def is_near(self, a: int, b: int) -> bool:
        return a == b or b in self.adjacency[a]

    def color(self, cell: int) -> int:
        r, c = self.coords(cell)
        return (r + c) % 2


@dataclass(frozen=True)
class ConstraintSpec:
    """Lagrange multipliers ``J[s, G, nu]``; unspecified entries are zero."""

    entries: tuple[tuple[tuple[int, int, int], float], ...] = ()

    def __post_init__(self):
        for (epoch, _, _), value in self.entries:
            if epoch < 0:
                raise ValidationError(f"constraint epoch {epoch} is negative")
            if not math.isfinite(value):
                raise ValidationError("constraint multipliers must be finite")

    @property
    def active(self) -> bool:
        return any(v != 0.0 for _, v in self.entries)

    def vector(self, epoch: int | None, n_variables: int, n_cells: int) -> np.ndarray:
        out = np.zeros(n_variables * n_cells)
        if epoch is None:
            return out
        for (s, g, cell), value in self.entries:
            if s == epoch:
                out[cell * n_variables + g] += value
        return out


@dataclass(frozen=True)
class Parameter:
    """A free coefficient of a fit template."""

    name: str
    initial: float
    bounds: tuple[float, float]

    def __post_init__(self):
        lo, hi = self.bounds
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
            raise ValidationError(f"parameter {self.name}: bounds must be finite with lo <= hi")
        if not lo <= self.initial <= hi:
            raise ValidationError(f"parameter {self.name}: initial value outside bounds")


@dataclass(frozen=True)
class Term:
    """One monomial contribution to a drift, noise or potential field.

    ``monomial`` holds ``(reference, power)`` pairs where a reference is a
    variable name (own cell), ``name@nn`` (replicated over nearest
    neighbours) or ``name@r,c`` (absolute cell, must be the own cell or one
    of its nearest neighbours).
    """

    kind: str
    coefficient: float
    monomial: tuple[tuple[str, int], ...] = ()
    variable: str | None = None
    cell: tuple[int, int] | None = None
    source: int | None = None
    source_offset: tuple[int, int] | None = None
    schedule: tuple[float, ...] | None = None
    param: str | None = None
    scale: float = 1.0

    def coefficient_at(self, epoch: int | None, params: dict | None = None) -> float:
        if self.param is not None and params is not None and self.param in params:
            return self.scale * params[self.param]
        if self.schedule and epoch is not None:
            return self.schedule[min(epoch, len(self.schedule) - 1)]
        return self.coefficient


def _resolve_ref(ref, variables, lattice, cell, where):
    names = [v.name for v in variables]
    if "@" not in ref:
        name, target = ref, "own"
    else:
        name, target = ref.split("@", 1)
    if name not in names:
        raise ValidationError(f"{where}: unknown variable {name!r}")
    g = names.index(name)
    if target == "own":
        return g, [cell]
    if target == "nn":
        return g, list(lattice.neighbors(cell))
    try:
        r, c = (int(p) for p in target.split(","))
    except ValueError:
        raise ValidationError(f"{where}: cannot parse cell reference {ref!r}") from None
    if not (0 <= r < lattice.rows and 0 <= c < lattice.cols):
        raise ValidationError(f"{where}: cell {r},{c} is outside the lattice")
    other = lattice.index(r, c)
    if not lattice.is_near(cell, other):
        raise ValidationError(f"{where}: reference {ref!r} from cell {lattice.label(cell)} "
                              "is beyond nearest-neighbour reach")
    return g, [other]


def _expand_monomial(term, variables, lattice, cell, where):
    """Exponent vectors (over the flat state) produced by ``term`` at ``cell``."""
    theta = len(variables)
    dim = theta * lattice.size
    base = [0] * dim
    replicated = None
    for ref, power in term.monomial:
        g, cells = _resolve_ref(ref, variables, lattice, cell, where)
        if ref.endswith("@nn"):
            if replicated is not None:
                raise ValidationError(f"{where}: at most one '@nn' reference per monomial")
            replicated = (g, cells, power)
        else:
            base[cells[0] * theta + g] += power
    if replicated is None:
        return [tuple(base)]
    g, cells, power = replicated
    out = []
    for nb in cells:
        exps = list(base)
        exps[nb * theta + g] += power
        out.append(tuple(exps))
    return out


def _term_cells(term, lattice, where):
    if term.cell is None:
        return range(lattice.size)
    r, c = term.cell
    if not (0 <= r < lattice.rows and 0 <= c < lattice.cols):
        raise ValidationError(f"{where}: cell {r},{c} is outside the lattice")
    return [lattice.index(r, c)]


def compile_terms(variables, lattice, terms, epoch=None, params=None):
    """Build drift, noise and potential fields from declarative terms."""
    theta = len(variables)
    dim = theta * lattice.size
    names = [v.name for v in variables]
    drift_terms = [[] for _ in range(dim)]
    noise_terms: dict[tuple[int, int], list[list]] = {}
    pot_terms = []
    for n, term in enumerate(terms):
        where = f"{term.kind}[{sum(1 for t in terms[:n] if t.kind == term.kind)}]"
        coef = term.coefficient_at(epoch, params)
        if term.kind in ("drift", "noise"):
            if term.variable not in names:
                raise ValidationError(f"{where}: unknown variable {term.variable!r}")
            g = names.index(term.variable)
        for cell in _term_cells(term, lattice, where):
            exps_list = _expand_monomial(term, variables, lattice, cell, where)
            if term.kind == "drift":
                drift_terms[cell * theta + g].extend((coef, e) for e in exps_list)
            elif term.kind == "potential":
                pot_terms.extend((coef, e) for e in exps_list)
            elif term.kind == "noise":
                src_cell = cell
                if term.source_offset is not None:
                    dr, dc = term.source_offset
                    if abs(dr) + abs(dc) > 1:
                        raise ValidationError(f"{where}: source offset {term.source_offset} "
                                              "is beyond nearest-neighbour reach")
                    src_cell = lattice.offset(cell, dr, dc)
                    if src_cell is None:
                        continue
                key = (int(term.source), src_cell)
                rows = noise_terms.setdefault(key, [[] for _ in range(dim)])
                rows[cell * theta + g].extend((coef, e) for e in exps_list)
            else:
                raise ValidationError(f"{where}: unknown term kind {term.kind!r}")
    drift = tuple(PolynomialField(dim, ts) for ts in drift_terms)
    keys = sorted(noise_terms)
    noise = tuple(tuple(PolynomialField(dim, ts) for ts in noise_terms[k]) for k in keys)
    _check_noise_support(noise, keys, lattice, theta)
    potential = PolynomialField(dim, pot_terms)
    return drift, noise, potential, tuple(keys)


def _check_noise_support(noise, keys, lattice, theta):
    for (src, src_cell), row in zip(keys, noise):
        cells = sorted({k // theta for k, f in enumerate(row) if not f.is_zero})
        for a in cells:
            for b in cells:
                if not lattice.is_near(a, b):
                    raise ValidationError(
                        f"noise source {src} of cell {lattice.label(src_cell)} correlates cells "
                        f"{lattice.label(a)} and {lattice.label(b)} beyond nearest-neighbour reach")


@dataclass(frozen=True)
class ModelSpec:
    """Validated stochastic system.

    ``drift[k]`` is the field ``f`` for flat coordinate ``k``;
    ``noise[i][k]`` is the amplitude of noise source ``i`` on coordinate
    ``k``; ``potential`` is the scalar ``V``. When built from a config,
    ``terms`` keeps the declarative form used for serialisation and for
    re-parametrisation during fitting.
    """

    variables: tuple[Variable, ...]
    drift: tuple
    noise: tuple
    potential: object
    dt: float
    lattice: LatticeTopology = field(default_factory=LatticeTopology)
    constraints: ConstraintSpec = field(default_factory=ConstraintSpec)
    terms: tuple[Term, ...] | None = None
    parameters: tuple[Parameter, ...] = ()
    param_values: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValidationError(f"dt must be a positive real, got {self.dt}")
        if len(self.drift) != self.dim:
            raise ValidationError(f"expected {self.dim} drift fields, got {len(self.drift)}")
        if not self.noise:
            raise ValidationError("at least one noise source is required")
        for row in self.noise:
            if len(row) != self.dim:
                raise ValidationError("every noise source needs one entry per state coordinate")
        for (s, g, cell), _ in self.constraints.entries:
            if not (0 <= g < self.n_variables and 0 <= cell < self.n_cells):
                raise ValidationError(f"constraint on undeclared pair (G={g}, cell={cell})")

    # -- construction helpers ----------------------------------------------
    @classmethod
    def from_terms(cls, variables, terms, dt, lattice=None, constraints=None,
                   parameters=(), param_values=None):
        lattice = lattice or LatticeTopology()
        variables = tuple(variables)
        terms = tuple(terms)
        parameters = tuple(parameters)
        values = dict(param_values) if param_values else {p.name: p.initial for p in parameters}
        declared = {p.name for p in parameters}
        for t in terms:
            if t.param is not None and t.param not in declared:
                raise ValidationError(f"term references undeclared parameter {t.param!r}")
            if t.param is not None and t.schedule:
                raise ValidationError("a term cannot carry both a parameter and a schedule")
        drift, noise, potential, _ = compile_terms(variables, lattice, terms, epoch=0, params=values)
        return cls(variables, drift, noise, potential, float(dt), lattice,
                   constraints or ConstraintSpec(), terms, parameters,
                   tuple(sorted(values.items())))

    @classmethod
    def from_fields(cls, variables, drift, noise, dt, potential=None, lattice=None,
                    constraints=None):
        """Programmatic construction from field evaluators (no serialisation)."""
        variables = tuple(variables)
        lattice = lattice or LatticeTopology()
        dim = len(variables) * lattice.size
        return cls(variables, tuple(drift), tuple(tuple(r) for r in noise),
                   potential if potential is not None else zero_field(dim), float(dt),
                   lattice, constraints or ConstraintSpec())

    def with_parameters(self, values: dict) -> "ModelSpec":
        if self.terms is None:
            raise ValueError("model was not built from terms; cannot re-parametrise")
        merged = dict(self.param_values)
        merged.update(values)
        return ModelSpec.from_terms(self.variables, self.terms, self.dt, self.lattice,
                                    self.constraints, self.parameters, merged)

    def with_dt(self, dt) -> "ModelSpec":
        return replace(self, dt=float(dt))

    def with_constraints(self, constraints: ConstraintSpec) -> "ModelSpec":
        return replace(self, constraints=constraints)

    def frozen_parameters(self) -> "ModelSpec":
        """Copy with parameter references resolved into plain coefficients."""
        if self.terms is None or not self.parameters:
            return self
        values = dict(self.param_values)
        terms = tuple(replace(t, coefficient=t.coefficient_at(None, values), param=None, scale=1.0)
                      if t.param is not None else t for t in self.terms)
        return ModelSpec.from_terms(self.variables, terms, self.dt, self.lattice, self.constraints)

    # -- shape information -------------------------------------------------
    @property
    def n_variables(self) -> int:
        return len(self.variables)

    @property
    def n_cells(self) -> int:
        return self.lattice.size

    @property
    def dim(self) -> int:
        return self.n_variables * self.n_cells

    @property
    def n_sources(self) -> int:
        return len(self.noise)

    def flat_index(self, variable: int, cell: int = 0) -> int:
        return cell * self.n_variables + variable

    @property
    def labels(self) -> tuple[str, ...]:
        out = []
        for cell in range(self.n_cells):
            for v in self.variables:
                out.append(v.name if self.n_cells == 1 else f"{v.name}@{self.lattice.label(cell)}")
        return tuple(out)

    @property
    def lows(self) -> np.ndarray:
        return np.array([v.low for _ in range(self.n_cells) for v in self.variables])

    @property
    def highs(self) -> np.ndarray:
        return np.array([v.high for _ in range(self.n_cells) for v in self.variables])

    def mesh(self, points: Sequence[int] | None = None) -> StateMesh:
        pts = points or [v.points for _ in range(self.n_cells) for v in self.variables]
        return StateMesh(tuple(self.lows), tuple(self.highs), tuple(int(p) for p in pts),
                         self.labels)

    # -- time dependence ---------------------------------------------------
    @property
    def has_schedules(self) -> bool:
        return bool(self.terms) and any(t.schedule for t in self.terms)

    @property
    def is_autonomous(self) -> bool:
        return not self.has_schedules and not self.constraints.active

    def at_epoch(self, epoch: int) -> "ModelSpec":
        """Fields with per-epoch coefficient schedules resolved at ``epoch``."""
        if not self.has_schedules:
            return self
        drift, noise, potential, _ = compile_terms(self.variables, self.lattice, self.terms,
                                                   epoch=epoch, params=dict(self.param_values))
        return replace(self, drift=drift, noise=noise, potential=potential)

    def constraint_vector(self, epoch: int | None) -> np.ndarray:
        return self.constraints.vector(epoch, self.n_variables, self.n_cells)

    # -- evaluation helpers ------------------------------------------------
    def drift_values(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.stack([f.evaluate(x) for f in self.drift], axis=-1)

    def noise_values(self, x) -> np.ndarray:
        """Noise amplitudes, shape ``(..., n_sources, dim)``."""
        x = np.asarray(x, dtype=float)
        return np.stack([np.stack([f.evaluate(x) for f in row], axis=-1) for row in self.noise],
                        axis=-2)

    def potential_values(self, x, epoch: int | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        v = self.potential.evaluate(x)
        if epoch is not None and self.constraints.active:
            v = v + x @ self.constraint_vector(epoch)
        return v

    def diffusion_values(self, x) -> np.ndarray:
        gh = self.noise_values(x)
        return np.einsum("...ig,...ih->...gh", gh, gh)


def validation_points(spec: ModelSpec) -> np.ndarray:
    mesh = spec.mesh()
    if mesh.size <= SPD_SAMPLE_LIMIT:
        return mesh.centers()
    rng = np.random.Generator(np.random.Philox(key=np.array([0, mesh.size], dtype=np.uint64)))
    idx = np.stack([rng.integers(0, n, SPD_SAMPLE_LIMIT) for n in mesh.points], axis=-1)
    return np.asarray(mesh.lows) + (idx + 0.5) * mesh.widths


def first_non_spd(spec: ModelSpec, points: np.ndarray) -> int | None:
    """Index of the first point whose diffusion matrix is not SPD, else None."""
    g = spec.diffusion_values(points)
    try:
        np.linalg.cholesky(g)
    except np.linalg.LinAlgError:
        pass
    else:
        diag = np.prod(np.diagonal(g, axis1=-2, axis2=-1), axis=-1)
        det = np.linalg.det(g)
        bad = np.nonzero(~(det > 1e-12 * diag))[0]
        return int(bad[0]) if bad.size else None
    for n in range(points.shape[0]):
        try:
            np.linalg.cholesky(g[n])
        except np.linalg.LinAlgError:
            return n
    return None  # pragma: no cover


def validate(spec: ModelSpec) -> ModelSpec:
    """Reject models whose diffusion is not SPD somewhere on the mesh."""
    epochs = {0}
    if spec.has_schedules:
        epochs |= set(range(max(len(t.schedule) for t in spec.terms if t.schedule)))
    pts = validation_points(spec)
    for s in sorted(epochs):
        bad = first_non_spd(spec.at_epoch(s), pts)
        if bad is not None:
            where = ", ".join(f"{lab}={val:.6g}" for lab, val in zip(spec.labels, pts[bad]))
            raise ValidationError(f"diffusion not positive definite at mesh point ({where})"
                                  + (f" at epoch {s}" if spec.has_schedules else ""))
    return spec
