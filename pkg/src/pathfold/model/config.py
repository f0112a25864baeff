"""TOML model files.

Grammar (every key not listed here is rejected)::

    dt = 0.01                      # required, > 0

    [[variables]]                  # one table per variable, order = index G
    name = "M"
    range = [-6.0, 6.0]
    points = 201

    [lattice]                      # optional, default 1 x 1 open
    rows = 2
    cols = 2
    boundary = "open"              # or "periodic" (needs rows, cols >= 3)

    [[drift]]                      # f^G term: coefficient * monomial
    variable = "M"
    coefficient = -1.0
    monomial = { M = 1 }           # {} is the constant monomial
    cell = [0, 1]                  # optional: only this cell (default: all)
    schedule = [-1.0, -0.9]        # optional per-epoch coefficients
    param = "a"                    # optional: coefficient = scale * a
    scale = -1.0

    [[noise]]                      # noise amplitude of source `source`
    source = 1
    variable = "M"
    coefficient = 1.0
    monomial = {}
    source_offset = [0, 1]         # optional: noise shared with a NN cell

    [[potential]]                  # scalar V term (coefficient, monomial, cell)

    [[constraints]]                # Lagrange multiplier J[s, G, cell]
    epoch = 0
    variable = "M"
    cell = [0, 0]
    value = 0.5

    [[parameters]]                 # free coefficients of a fit template
    name = "a"
    initial = 0.5
    bounds = [0.01, 5.0]

Monomial keys name a variable in the term's own cell (``M``), in every
nearest-neighbour cell (``"M@nn"``, the term is replicated per neighbour)
or in an explicit cell (``"M@0,1"``, which must be the own cell or a
nearest neighbour).
"""
from __future__ import annotations

import sys

import tomli_w

from ..errors import ConfigError, ValidationError
from .spec import (ConstraintSpec, LatticeTopology, ModelSpec, Parameter, Term, Variable,
                   validate)

if sys.version_info >= (3, 11):  # pragma: no cover
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

TOP_KEYS = {"dt", "variables", "lattice", "drift", "noise", "potential", "constraints",
            "parameters"}
VARIABLE_KEYS = {"name", "range", "points"}
LATTICE_KEYS = {"rows", "cols", "boundary"}
TERM_KEYS = {
    "drift": {"variable", "coefficient", "monomial", "cell", "schedule", "param", "scale"},
    "noise": {"source", "variable", "coefficient", "monomial", "cell", "source_offset",
              "schedule", "param", "scale"},
    "potential": {"coefficient", "monomial", "cell", "schedule", "param", "scale"},
}
CONSTRAINT_KEYS = {"epoch", "variable", "cell", "value"}
PARAMETER_KEYS = {"name", "initial", "bounds"}


def parse_toml(text: str) -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"parse error: {exc}") from None


def _check_keys(table, allowed, where):
    if not isinstance(table, dict):
        raise ConfigError("expected a table", where)
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(map(repr, unknown))}", where)


def _require(table, key, where):
    if key not in table:
        raise ConfigError(f"missing required key {key!r}", where)
    return table[key]


def _number(value, where, kind=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", where)
    if kind is int:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"expected an integer, got {value!r}", where)
        return int(value)
    return float(value)


def _pair(value, where, kind=int):
    if not isinstance(value, list) or len(value) != 2:
        raise ConfigError(f"expected a two-element array, got {value!r}", where)
    return tuple(_number(v, where, kind) for v in value)


def _parse_term(kind, table, where):
    _check_keys(table, TERM_KEYS[kind], where)
    param = table.get("param")
    if param is not None and not isinstance(param, str):
        raise ConfigError("param must be a string", f"{where}.param")
    if param is None:
        coefficient = _number(_require(table, "coefficient", where), f"{where}.coefficient")
    elif "coefficient" in table:
        raise ConfigError("give either 'coefficient' or 'param', not both", where)
    else:
        coefficient = 0.0
    mono = table.get("monomial", {})
    if not isinstance(mono, dict):
        raise ConfigError("monomial must be an inline table", f"{where}.monomial")
    monomial = []
    for ref, power in sorted(mono.items()):
        p = _number(power, f"{where}.monomial.{ref}", int)
        if p < 0:
            raise ConfigError("negative exponent", f"{where}.monomial.{ref}")
        if p:
            monomial.append((ref, p))
    schedule = table.get("schedule")
    if schedule is not None:
        if not isinstance(schedule, list) or not schedule:
            raise ConfigError("schedule must be a non-empty array", f"{where}.schedule")
        schedule = tuple(_number(c, f"{where}.schedule") for c in schedule)
        coefficient = schedule[0]
    term = dict(kind=kind, coefficient=coefficient, monomial=tuple(monomial),
                schedule=schedule, param=param,
                scale=_number(table.get("scale", 1.0), f"{where}.scale"))
    if "cell" in table:
        term["cell"] = _pair(table["cell"], f"{where}.cell")
    if kind in ("drift", "noise"):
        var = _require(table, "variable", where)
        if not isinstance(var, str):
            raise ConfigError("variable must be a string", f"{where}.variable")
        term["variable"] = var
    if kind == "noise":
        term["source"] = _number(_require(table, "source", where), f"{where}.source", int)
        if "source_offset" in table:
            term["source_offset"] = _pair(table["source_offset"], f"{where}.source_offset")
    return Term(**term)


def spec_from_dict(doc: dict, check: bool = True) -> ModelSpec:
    _check_keys(doc, TOP_KEYS, "model")
    dt = _number(_require(doc, "dt", "model"), "dt")
    raw_vars = _require(doc, "variables", "model")
    if not isinstance(raw_vars, list) or not raw_vars:
        raise ConfigError("at least one [[variables]] table is required", "variables")
    variables = []
    for n, tab in enumerate(raw_vars):
        where = f"variables[{n}]"
        _check_keys(tab, VARIABLE_KEYS, where)
        name = _require(tab, "name", where)
        lo, hi = _pair(_require(tab, "range", where), f"{where}.range", float)
        pts = _number(_require(tab, "points", where), f"{where}.points", int)
        try:
            variables.append(Variable(str(name), lo, hi, pts))
        except ValidationError as exc:
            raise ValidationError(str(exc), where) from None
    names = [v.name for v in variables]
    if len(set(names)) != len(names):
        raise ValidationError("duplicate variable names", "variables")

    lat = doc.get("lattice", {})
    _check_keys(lat, LATTICE_KEYS, "lattice")
    lattice = LatticeTopology(_number(lat.get("rows", 1), "lattice.rows", int),
                              _number(lat.get("cols", 1), "lattice.cols", int),
                              str(lat.get("boundary", "open")))

    terms = []
    for kind in ("drift", "noise", "potential"):
        entries = doc.get(kind, [])
        if not isinstance(entries, list):
            raise ConfigError(f"expected an array of tables [[{kind}]]", kind)
        terms.extend(_parse_term(kind, tab, f"{kind}[{n}]") for n, tab in enumerate(entries))

    entries = []
    for n, tab in enumerate(doc.get("constraints", [])):
        where = f"constraints[{n}]"
        _check_keys(tab, CONSTRAINT_KEYS, where)
        var = _require(tab, "variable", where)
        if var not in names:
            raise ValidationError(f"unknown variable {var!r}", where)
        r, c = _pair(_require(tab, "cell", where), f"{where}.cell")
        if not (0 <= r < lattice.rows and 0 <= c < lattice.cols):
            raise ValidationError(f"cell {r},{c} outside the lattice", where)
        entries.append(((_number(_require(tab, "epoch", where), f"{where}.epoch", int),
                         names.index(var), lattice.index(r, c)),
                        _number(_require(tab, "value", where), f"{where}.value")))

    params = []
    for n, tab in enumerate(doc.get("parameters", [])):
        where = f"parameters[{n}]"
        _check_keys(tab, PARAMETER_KEYS, where)
        try:
            params.append(Parameter(str(_require(tab, "name", where)),
                                    _number(_require(tab, "initial", where), f"{where}.initial"),
                                    _pair(_require(tab, "bounds", where), f"{where}.bounds", float)))
        except ValidationError as exc:
            raise ValidationError(str(exc), where) from None
    values = {p.name: p.initial for p in params}
    terms = [t if t.param is None else
             Term(**{**t.__dict__, "coefficient": t.scale * values.get(t.param, 0.0)})
             for t in terms]

    spec = ModelSpec.from_terms(variables, terms, dt, lattice, ConstraintSpec(tuple(entries)),
                                params)
    return validate(spec) if check else spec


def load_model(config_text: str, check: bool = True) -> ModelSpec:
    """Parse and validate a model file (see module docstring for the grammar)."""
    return spec_from_dict(parse_toml(config_text), check=check)


def load_model_file(path) -> ModelSpec:
    with open(path, encoding="utf-8") as fh:
        return load_model(fh.read())


def spec_to_dict(spec: ModelSpec) -> dict:
    if spec.terms is None:
        raise ValueError("only term-based models can be serialised")
    doc: dict = {"dt": spec.dt,
                 "variables": [{"name": v.name, "range": [v.low, v.high], "points": v.points}
                               for v in spec.variables]}
    lat = spec.lattice
    if (lat.rows, lat.cols, lat.boundary) != (1, 1, "open"):
        doc["lattice"] = {"rows": lat.rows, "cols": lat.cols, "boundary": lat.boundary}
    for kind in ("drift", "noise", "potential"):
        rows = []
        for t in spec.terms:
            if t.kind != kind:
                continue
            row: dict = {}
            if kind == "noise":
                row["source"] = t.source
            if t.variable is not None:
                row["variable"] = t.variable
            if t.param is not None:
                row["param"] = t.param
                row["scale"] = t.scale
            elif t.schedule:
                row["schedule"] = list(t.schedule)
            else:
                row["coefficient"] = t.coefficient
            row["monomial"] = dict(t.monomial)
            if t.cell is not None:
                row["cell"] = list(t.cell)
            if t.source_offset is not None:
                row["source_offset"] = list(t.source_offset)
            rows.append(row)
        if rows:
            doc[kind] = rows
    if spec.constraints.entries:
        doc["constraints"] = [
            {"epoch": s, "variable": spec.variables[g].name,
             "cell": list(lat.coords(cell)), "value": v}
            for (s, g, cell), v in spec.constraints.entries]
    if spec.parameters:
        values = dict(spec.param_values)
        doc["parameters"] = [{"name": p.name, "initial": values.get(p.name, p.initial),
                              "bounds": list(p.bounds)} for p in spec.parameters]
    return doc


def serialize_model(spec: ModelSpec) -> str:
    return tomli_w.dumps(spec_to_dict(spec))
