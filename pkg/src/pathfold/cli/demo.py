"""The radar-grid demo: synthetic targets on a lattice, fit, forecast, score.

Run directory layout (tables use the chosen format, ``.csv`` or ``.json``)::

    manifest.json                 RunManifest
    model/scenario.toml           effective scenario, seed resolved
    model/truth.toml              model that generated the data
    model/template.toml           fit template
    data/observations.csv         full synthetic series (t, one column per coordinate)
    data/train.csv, data/test.csv early / late split (sharing the boundary epoch)
    fit/fit.json                  fitted coefficients, objective, evaluations
    fit/fitted_model.toml         template with the fitted coefficients
    fit/trace.*                   iteration, restart, objective, temperature
    fit/minima.*                  rank, objective, one column per parameter
    predict/snapshots.*           snapshot, step, t, coordinates..., weight
    predict/occupancy.*           coordinate, probability above threshold
    predict/gain.*                rank, label, expected_gain
    predict/summary.json          forecast summary and diagnostics
    predict/evaluation.json       in-sample / out-of-sample objective per step
    plots/...                     see :func:`emit_plotdata`
"""
from __future__ import annotations

import json
import math
from contextlib import contextmanager
from dataclasses import fields
from pathlib import Path

import numpy as np
import tomli_w

from ..errors import ConfigError, MeshConsistencyError, PathfoldError, ValidationError
from ..fitting import (AnnealConfig, FitTemplate, fit, information, negative_log_likelihood,
                       scan_minima, summarize, wkb_reference)
from ..geometry import compute_bundle
from ..langevin import simulate_path
from ..model import Distribution, ingest_timeseries, serialize_model, timeseries_from_array
from ..model.config import parse_toml, spec_from_dict
from ..path_integral.kernel import MIN_WIDTH_CELLS, kernels_for
from .gain import ResponseOption, expected_gain
from .io import read_csv, write_json, write_table
from .manifest import OUT_DIR_TOKEN, RunManifest

DEFAULT_SCENARIO = """\
[scenario]
seed = 7
steps = 12500
train_fraction = 0.8
initial = [0.0]
horizon_time = 1.0
snapshots = 10
threshold = 0.5
discretization = "midpoint"
scan_points = 5
scan_stride = 10

[scenario.anneal]
restarts = 2
evals_factor = 200

[truth]
dt = 0.01

[[truth.variables]]
name = "M"
range = [-4.0, 4.0]
points = 41

[truth.lattice]
rows = 1
cols = 2

[[truth.drift]]
variable = "M"
coefficient = -1.0
monomial = { M = 1 }

[[truth.drift]]
variable = "M"
coefficient = 0.3
monomial = { "M@nn" = 1 }

[[truth.noise]]
source = 1
variable = "M"
coefficient = 0.8
monomial = {}

[template]
dt = 0.01

[[template.variables]]
name = "M"
range = [-4.0, 4.0]
points = 41

[template.lattice]
rows = 1
cols = 2

[[template.drift]]
variable = "M"
param = "a"
scale = -1.0
monomial = { M = 1 }

[[template.drift]]
variable = "M"
param = "k"
scale = 1.0
monomial = { "M@nn" = 1 }

[[template.noise]]
source = 1
variable = "M"
param = "c"
scale = 1.0
monomial = {}

[[template.parameters]]
name = "a"
initial = 0.5
bounds = [0.05, 3.0]

[[template.parameters]]
name = "k"
initial = 0.0
bounds = [-1.0, 1.0]

[[template.parameters]]
name = "c"
initial = 0.5
bounds = [0.1, 2.0]

[[responses]]
label = "hold"
values = [0.0]
probabilities = [1.0]

[[responses]]
label = "intercept 0,0"
cell = [0, 0]
variable = "M"
hit = 10.0
miss = -2.0

[[responses]]
label = "intercept 0,1"
cell = [0, 1]
variable = "M"
hit = 10.0
miss = -2.0
"""

SCENARIO_KEYS = {"seed", "steps", "train_fraction", "initial", "horizon_time", "snapshots",
                 "threshold", "discretization", "scan_points", "scan_stride", "anneal"}
TOP_KEYS = {"scenario", "truth", "template", "responses"}
RESPONSE_KEYS = {"label", "values", "probabilities", "exhaustive", "cell", "variable", "hit",
                 "miss"}
SCENARIO_DEFAULTS = {"seed": 0, "train_fraction": 0.8, "initial": [0.0], "horizon_time": 1.0,
                     "snapshots": 10, "threshold": 0.5, "discretization": "midpoint",
                     "scan_points": 0, "scan_stride": 1, "anneal": {}}


@contextmanager
def stage(name: str):
    """Tag any error raised inside with the stage name."""
    try:
        yield
    except PathfoldError as exc:
        exc.stage = name
        exc.args = (f"stage {name}: {exc.args[0] if exc.args else ''}",) + exc.args[1:]
        raise
    except (ValueError, KeyError, TypeError) as exc:
        err = ConfigError(f"stage {name}: {exc}")
        err.stage = name
        raise err from exc


def load_scenario(source=None) -> dict:
    """Parse a scenario from TOML text, a path, or a dict (default: built-in)."""
    if source is None:
        doc = parse_toml(DEFAULT_SCENARIO)
    elif isinstance(source, dict):
        doc = source
    else:
        text = str(source)
        if "\n" not in text and Path(text).exists():
            text = Path(text).read_text(encoding="utf-8")
        doc = parse_toml(text)
    unknown = sorted(set(doc) - TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown}", "scenario file")
    for key in ("truth", "template"):
        if key not in doc:
            raise ConfigError(f"missing [{key}] model table", "scenario file")
    sc = dict(doc.get("scenario", {}))
    unknown = sorted(set(sc) - SCENARIO_KEYS)
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown}", "scenario")
    if "steps" not in sc:
        raise ConfigError("missing required key 'steps'", "scenario")
    sc = {**SCENARIO_DEFAULTS, **sc}
    if not 0.0 < float(sc["train_fraction"]) < 1.0:
        raise ValidationError("train_fraction must lie in (0, 1)", "scenario")
    bad = sorted(set(sc["anneal"]) - {f.name for f in fields(AnnealConfig)})
    if bad:
        raise ConfigError(f"unknown key(s) {bad}", "scenario.anneal")
    return {**doc, "scenario": sc}


def _forecast_steps(spec, mesh, horizon_time):
    """Largest number of equal steps over the horizon whose kernel still
    spans the mesh (one-step spread of at least 1.5 cells everywhere)."""
    g = compute_bundle(spec, mesh.centers(), level="metric").g_upper
    diag_min = np.min(np.diagonal(g, axis1=-2, axis2=-1), axis=0)
    need = float(np.max((MIN_WIDTH_CELLS * mesh.widths) ** 2 / diag_min))
    n = int(math.floor(horizon_time / need * (1 + 1e-12)))
    if n < 1:
        raise MeshConsistencyError(f"forecast horizon {horizon_time} is shorter than the "
                                   f"smallest mesh-consistent step {need:.4g}",
                                   suggested_dt=need)
    return n, horizon_time / n


def _responses(doc, spec, occupancy):
    out = []
    for n, tab in enumerate(doc.get("responses", [])):
        where = f"responses[{n}]"
        unknown = sorted(set(tab) - RESPONSE_KEYS)
        if unknown:
            raise ConfigError(f"unknown key(s) {unknown}", where)
        if "cell" in tab:
            r, c = (int(v) for v in tab["cell"])
            var = tab.get("variable", spec.variables[0].name)
            label = var if spec.n_cells == 1 else f"{var}@{r},{c}"
            if label not in occupancy:
                raise ValidationError(f"no coordinate {label!r}", where)
            p = occupancy[label]
            out.append(ResponseOption(str(tab.get("label", label)),
                                      (float(tab.get("hit", 1.0)), float(tab.get("miss", 0.0))),
                                      (p, 1.0 - p)))
        else:
            try:
                out.append(ResponseOption.from_dict(tab))
            except ValidationError as exc:
                raise ValidationError(str(exc), where) from None
    return out


def demo_radar(scenario=None, seed: int | None = None, out_dir="run", fmt: str = "csv",
               command: list | None = None, configs: dict | None = None) -> dict:
    """Generate, fit, forecast and score one scenario; write the run directory.

    ``seed`` overrides the scenario seed. Synthetic data come from the
    ``truth`` model started at ``scenario.initial``; the template is fitted
    on the early ``train_fraction`` of the series and evaluated on the rest.
    The forecast starts from a point mass at the last training observation
    and runs ``horizon_time`` on the template mesh. Returns the evaluation
    report (also written to ``predict/evaluation.json``).
    """
    out = Path(out_dir)
    with stage("config"):
        doc = load_scenario(scenario)
        sc = doc["scenario"]
        if seed is not None:
            sc["seed"] = int(seed)
        seed = int(sc["seed"])
        truth = spec_from_dict(doc["truth"])
        template_spec = spec_from_dict(doc["template"])
        template = FitTemplate(template_spec)
        if truth.labels != template_spec.labels:
            raise ValidationError("truth and template must share variables and lattice")
        disc = str(sc["discretization"])
        anneal = AnnealConfig(**sc["anneal"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "model").mkdir(exist_ok=True)
        (out / "model" / "scenario.toml").write_text(tomli_w.dumps(doc), encoding="utf-8")
        (out / "model" / "truth.toml").write_text(serialize_model(truth), encoding="utf-8")
        (out / "model" / "template.toml").write_text(serialize_model(template_spec),
                                                     encoding="utf-8")

    with stage("simulate"):
        init = np.asarray(sc["initial"], dtype=float)
        if init.size == truth.n_variables:
            init = np.tile(init, truth.n_cells)
        traj = simulate_path(truth, init.reshape(truth.dim), int(sc["steps"]), seed)
        obs_path = out / "data" / f"observations.{fmt}"
        obs_path.parent.mkdir(parents=True, exist_ok=True)
        series = timeseries_from_array(truth, traj.t, traj.states)
        obs_path.write_text(series.to_csv() if fmt == "csv" else series.to_json() + "\n",
                            encoding="utf-8")

    with stage("ingest"):
        data = ingest_timeseries(obs_path, template_spec, format=fmt)
        train, test = data.split(float(sc["train_fraction"]))
        for name, part in (("train", train), ("test", test)):
            (out / "data" / f"{name}.{fmt}").write_text(
                part.to_csv() if fmt == "csv" else part.to_json() + "\n", encoding="utf-8")

    with stage("fit"):
        result = fit(template, train, anneal, seed=seed, discretization=disc)
        fitted = result.spec

    with stage("scan"):
        minima = []
        if int(sc["scan_points"]) > 0:
            grid = {p.name: (p.bounds[0], p.bounds[1], int(sc["scan_points"]))
                    for p in template_spec.parameters if p.bounds[1] > p.bounds[0]}
            found, _ = scan_minima(template, train, grid, int(sc["scan_stride"]), disc)
            minima = [(m.coefficients, m.objective) for m in found]
        result.minima = minima
        names = list(template.names)
        write_table(out / "fit" / "trace", ["iteration", "restart", "objective", "temperature"],
                    ([r["iteration"], r["restart"], r["objective"], r["temperature"]]
                     for r in result.trace), fmt)
        write_table(out / "fit" / "minima", ["rank", "objective", *names],
                    ([k, o, *(c[n] for n in names)] for k, (c, o) in enumerate(minima)), fmt)
        write_json(out / "fit" / "fit.json", result.to_dict())
        (out / "fit" / "fitted_model.toml").write_text(serialize_model(fitted), encoding="utf-8")

    with stage("predict"):
        mesh = fitted.mesh()
        n_f, dt_f = _forecast_steps(fitted, mesh, float(sc["horizon_time"]))
        kernels = kernels_for(fitted, n_f, mesh, dt_f, disc, "reflecting")
        P = Distribution.point_mass(mesh, train.values[-1])
        every = max(1, n_f // max(int(sc["snapshots"]), 1))
        snaps = [(0, P)]
        p = P.flat().copy()
        for s, k in enumerate(kernels, start=1):
            before = p.sum()
            p = k.matrix @ p
            p *= before / p.sum()
            if s % every == 0 or s == n_f:
                snaps.append((s, Distribution(mesh, p.copy())))
        final = snaps[-1][1]
        labels = list(mesh.labels)
        centers = mesh.centers()
        write_table(out / "predict" / "snapshots",
                    ["snapshot", "step", "t", *labels, "weight"],
                    ([j, s, s * dt_f, *centers[i], w[i]]
                     for j, (s, D) in enumerate(snaps) for w in [D.flat()]
                     for i in range(mesh.size)), fmt)
        threshold = float(sc["threshold"])
        occupancy = {}
        for k, lab in enumerate(labels):
            m = final.marginal([k])
            occupancy[lab] = float(np.sum(m.flat()[mesh.axis(k) > threshold]))
        write_table(out / "predict" / "occupancy", ["coordinate", "probability"],
                    occupancy.items(), fmt)
        summary = summarize(final)
        reference = wkb_reference(fitted, P, n_f, disc, dt_f)
        summary.update({"forecast_steps": n_f, "forecast_dt": dt_f,
                        "horizon_time": n_f * dt_f, "threshold": threshold,
                        "start_state": train.values[-1], "occupancy": occupancy,
                        "information_vs_wkb": information(final, reference)})
        k_real = int(round(n_f * dt_f / test.dt))
        if k_real < len(test):
            realized = test.values[k_real]
            summary["realized"] = realized
            summary["realized_in_interval"] = [
                bool(lo <= v <= hi) for v, (lo, hi) in
                zip(realized, (summary["intervals"][lab] for lab in labels))]
        write_json(out / "predict" / "summary.json", summary)

    with stage("score"):
        ranking = expected_gain(_responses(doc, fitted, occupancy))
        write_table(out / "predict" / "gain", ["rank", "label", "expected_gain"],
                    ([k, lab, g] for k, (lab, g) in enumerate(ranking)), fmt)

    with stage("evaluate"):
        in_sample = result.objective / train.n_increments
        out_sample = negative_log_likelihood(fitted, test, disc) / test.n_increments
        truth_in = negative_log_likelihood(truth, train, disc) / train.n_increments
        report = {"seed": seed, "coefficients": result.coefficients,
                  "train_increments": train.n_increments, "test_increments": test.n_increments,
                  "in_sample_per_step": in_sample, "out_of_sample_per_step": out_sample,
                  "relative_gap": abs(out_sample - in_sample) / abs(in_sample),
                  "truth_in_sample_per_step": truth_in, "ranking": ranking}
        write_json(out / "predict" / "evaluation.json", report)

    with stage("plotdata"):
        emit_plotdata(out)

    with stage("manifest"):
        cmd = command or ["demo-radar", "--seed", str(seed), "--format", fmt,
                          "--out-dir", OUT_DIR_TOKEN]
        RunManifest(cmd, seed, fmt, configs or {}).write(out)
    return report


def _find_table(path: Path) -> Path:
    for suffix in (".csv", ".json"):
        p = path.with_suffix(suffix)
        if p.exists():
            return p
    raise ConfigError(f"incomplete run: {path.name} table not found", str(path.parent))


def _read_table(path: Path):
    p = _find_table(path)
    if p.suffix == ".csv":
        header, rows = read_csv(p)
        return p.suffix[1:], header, rows
    recs = json.loads(p.read_text(encoding="utf-8"))
    header = list(recs[0]) if recs else []
    return p.suffix[1:], header, [[r[h] for h in header] for r in recs]


def emit_plotdata(run_dir) -> dict:
    """Write plot-ready tables under ``run_dir/plots`` from a completed run.

    Files (column order fixed)::

        distribution_snapshots   snapshot, step, t, coordinates..., weight
        moments                  snapshot, step, t, mean_<coord>..., var_<coord>...
        objective_trace          iteration, restart, objective, temperature
        minima                   rank, objective, parameters...

    Each snapshot's weights are checked to sum to one within 1e-9. Returns
    the written paths by name.
    """
    run = Path(run_dir)
    if not run.is_dir():
        raise ConfigError("incomplete run: directory does not exist", str(run))
    fmt, header, rows = _read_table(run / "predict" / "snapshots")
    n_coord = len(header) - 4
    if n_coord < 1 or header[:3] != ["snapshot", "step", "t"] or header[-1] != "weight":
        raise ConfigError("incomplete run: malformed snapshot table", str(run / "predict"))
    labels = header[3:-1]
    arr = np.array(rows, dtype=float).reshape(-1, len(header))
    written = {}
    written["distribution_snapshots"] = write_table(run / "plots" / "distribution_snapshots",
                                                    header, _snapshot_rows(arr), fmt)
    moments = []
    for j in np.unique(arr[:, 0]):
        blk = arr[arr[:, 0] == j]
        w = blk[:, -1]
        total = w.sum()
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"snapshot {int(j)} weights sum to {total!r}",
                              str(run / "predict"))
        x = blk[:, 3:-1]
        mean = w @ x / total
        var = w @ (x - mean) ** 2 / total
        moments.append([int(j), int(blk[0, 1]), blk[0, 2], *mean, *var])
    written["moments"] = write_table(run / "plots" / "moments",
                                     ["snapshot", "step", "t", *(f"mean_{lab}" for lab in labels),
                                      *(f"var_{lab}" for lab in labels)], moments, fmt)
    _, th, trows = _read_table(run / "fit" / "trace")
    written["objective_trace"] = write_table(
        run / "plots" / "objective_trace", ["iteration", "restart", "objective", "temperature"],
        ([int(float(r[0])), int(float(r[1])), float(r[2]), float(r[3])] for r in trows), fmt)
    _, mh, mrows = _read_table(run / "fit" / "minima")
    written["minima"] = write_table(
        run / "plots" / "minima", mh,
        ([int(float(r[0])), *(float(v) for v in r[1:])] for r in mrows), fmt)
    return written


def _snapshot_rows(arr):
    for row in arr:
        yield [int(row[0]), int(row[1]), *row[2:]]
