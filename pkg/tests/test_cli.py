import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathfold.cli import ResponseOption, demo_radar, emit_plotdata, expected_gain
from pathfold.cli.main import main
from pathfold.errors import ConfigError, ConvergenceError, ValidationError

from conftest import OU_TEMPLATE, OU_TOML


# expected gain -------------------------------------------------------------------------------

def test_gain_examples():
    assert ResponseOption("A", [10.0, 0.0], [0.2, 0.8]).expected == pytest.approx(2.0)
    ranked = expected_gain([ResponseOption("A", [10.0, 0.0], [0.2, 0.8]),
                            ResponseOption("B", [3.0], [1.0])])
    assert [(lab, pytest.approx(v)) for lab, v in ranked] == [("B", 3.0), ("A", 2.0)]
    assert ResponseOption("v", [-4.25], [1.0]).expected == -4.25


def test_gain_ties_by_label():
    ranked = expected_gain([ResponseOption("b", [1.0], [1.0]), ResponseOption("a", [1.0], [1.0])])
    assert [lab for lab, _ in ranked] == ["a", "b"]


@pytest.mark.parametrize("values,probs", [([1.0, 2.0], [0.5, 0.6]), ([1.0], [0.5, 0.5]),
                                          ([1.0, 2.0], [-0.1, 1.1]), ([], [])])
def test_gain_rejects_bad_options(values, probs):
    with pytest.raises(ValidationError):
        ResponseOption("x", values, probs)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(-100, 100), st.floats(0.01, 1.0)), min_size=1, max_size=8),
       st.integers(0, 7), st.floats(0.0, 1.0))
def test_gain_refinement_invariance(items, which, share):
    values = [v for v, _ in items]
    weights = np.array([w for _, w in items])
    probs = list(weights / weights.sum())
    k = which % len(values)
    split_values = values + [values[k]]
    split_probs = probs[:k] + [probs[k] * share] + probs[k + 1:] + [probs[k] * (1 - share)]
    a = ResponseOption("a", values, probs).expected
    b = ResponseOption("a", split_values, split_probs).expected
    assert abs(a - b) <= 1e-12 * max(1.0, max(abs(v) for v in values))


# command line ------------------------------------------------------------------------------

@pytest.fixture
def ou_file(tmp_path):
    p = tmp_path / "ou.toml"
    p.write_text(OU_TOML)
    return p


def _error(out_dir):
    return json.loads((out_dir / "error.json").read_text())


def test_simulate_writes_outputs_and_manifest(tmp_path, ou_file):
    out = tmp_path / "sim"
    code = main(["simulate", "--config", str(ou_file), "--initial", "1.0", "--steps", "20",
                 "--n-traj", "50", "--seed", "3", "--out-dir", str(out)])
    assert code == 0
    assert {"trajectories.csv", "moments.csv", "summary.json", "manifest.json"} <= {
        p.name for p in out.iterdir()}
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 3
    assert main(["replay", str(out / "manifest.json"), "--out-dir", str(tmp_path / "re")]) == 0


def test_json_format(tmp_path, ou_file):
    out = tmp_path / "p"
    assert main(["propagate", "--config", str(ou_file), "--initial", "1", "--steps", "10",
                 "--format", "json", "--out-dir", str(out)]) == 0
    rows = json.loads((out / "moments.json").read_text())
    assert isinstance(rows, list) and {"t", "mean_M", "var_M"} <= set(rows[0])


def test_config_error_exit_code(tmp_path):
    out = tmp_path / "e"
    code = main(["simulate", "--config", str(tmp_path / "missing.toml"), "--initial", "0",
                 "--steps", "1", "--out-dir", str(out)])
    assert code == 2
    err = _error(out)
    assert err["exit_code"] == 2 and err["error"]


def test_argument_error_writes_error_json(tmp_path):
    out = tmp_path / "a"
    assert main(["simulate", "--steps", "x", "--out-dir", str(out)]) == 2
    assert _error(out)["exit_code"] == 2


def test_numerical_error_exit_code(tmp_path, ou_file):
    out = tmp_path / "n"
    code = main(["propagate", "--config", str(ou_file), "--initial", "0", "--steps", "2",
                 "--dt", "1e-5", "--out-dir", str(out)])
    assert code == 3
    assert _error(out)["error"] == "MeshConsistencyError"


def test_error_classes_map_to_exit_codes():
    assert ConfigError("x").exit_code == 2
    assert ConvergenceError("x").exit_code == 4


def test_seed_precedence(tmp_path, ou_file, monkeypatch):
    args = ["simulate", "--config", str(ou_file), "--initial", "0", "--steps", "2",
            "--n-traj", "2"]
    monkeypatch.setenv("PATHFOLD_SEED", "5")
    assert main(args + ["--out-dir", str(tmp_path / "env")]) == 0
    assert json.loads((tmp_path / "env" / "manifest.json").read_text())["seed"] == 5
    assert main(args + ["--seed", "6", "--out-dir", str(tmp_path / "flag")]) == 0
    assert json.loads((tmp_path / "flag" / "manifest.json").read_text())["seed"] == 6
    monkeypatch.setenv("PATHFOLD_OUT_DIR", str(tmp_path / "envdir"))
    assert main(args) == 0
    assert (tmp_path / "envdir" / "manifest.json").exists()


def test_gain_subcommand(tmp_path):
    opts = tmp_path / "opts.json"
    opts.write_text(json.dumps({"responses": [
        {"label": "A", "values": [10, 0], "probabilities": [0.2, 0.8]},
        {"label": "B", "values": [3], "probabilities": [1]}]}))
    out = tmp_path / "g"
    assert main(["gain", "--config", str(opts), "--out-dir", str(out)]) == 0
    with open(out / "gain.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["label"] for r in rows] == ["B", "A"]
    opts.write_text(json.dumps({"responses": [
        {"label": "A", "values": [1, 0], "probabilities": [0.2, 0.7]}]}))
    assert main(["gain", "--config", str(opts), "--out-dir", str(out)]) == 2


def test_fit_and_predict_subcommands(tmp_path, ou_file):
    sim = tmp_path / "s"
    assert main(["simulate", "--config", str(ou_file), "--initial", "0", "--steps", "600",
                 "--n-traj", "1", "--keep", "1", "--out-dir", str(sim)]) == 0
    tpl = tmp_path / "tpl.toml"
    tpl.write_text(OU_TEMPLATE)
    with open(sim / "trajectories.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    data = tmp_path / "data.csv"
    with open(data, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "M"])
        for r in rows:
            w.writerow([r["t"], r["M"]])
    fit_dir = tmp_path / "f"
    assert main(["fit", "--config", str(tpl), "--data", str(data), "--restarts", "1",
                 "--evals-factor", "20", "--out-dir", str(fit_dir)]) == 0
    result = json.loads((fit_dir / "fit.json").read_text())
    assert set(result["coefficients"]) == {"a", "c"}
    pred = tmp_path / "pr"
    assert main(["predict", "--config", str(fit_dir / "fitted_model.toml"), "--initial", "1.0",
                 "--horizon", "10", "--out-dir", str(pred)]) == 0
    assert json.loads((pred / "summary.json").read_text())["mean"]


# demo and plot data ------------------------------------------------------------------------

def scenario(drift="-1.0", rows=1, cols=1, lo=-4.0, hi=4.0, points=41, noise=0.8, steps=3000,
             horizon=2.0, restarts=1, evals_factor=30, initial="[0.0]", responses=""):
    drift_block = "" if drift is None else f"""
[[truth.drift]]
variable = "M"
coefficient = {drift}
monomial = {{ M = 1 }}

[[template.drift]]
variable = "M"
param = "a"
scale = -1.0
monomial = {{ M = 1 }}

[[template.parameters]]
name = "a"
initial = 0.5
bounds = [0.05, 3.0]
"""
    return f"""
[scenario]
seed = 11
steps = {steps}
train_fraction = 0.8
initial = {initial}
horizon_time = {horizon}
snapshots = 8
threshold = 0.5

[scenario.anneal]
restarts = {restarts}
evals_factor = {evals_factor}

[truth]
dt = 0.01

[[truth.variables]]
name = "M"
range = [{lo}, {hi}]
points = {points}

[truth.lattice]
rows = {rows}
cols = {cols}

[[truth.noise]]
source = 1
variable = "M"
coefficient = {noise}
monomial = {{}}

[template]
dt = 0.01

[[template.variables]]
name = "M"
range = [{lo}, {hi}]
points = {points}

[template.lattice]
rows = {rows}
cols = {cols}

[[template.noise]]
source = 1
variable = "M"
param = "c"
scale = 1.0
monomial = {{}}

[[template.parameters]]
name = "c"
initial = 0.5
bounds = [0.1, 2.0]
{drift_block}
{responses}
"""


def _table(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def ou_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("ou_run")
    demo_radar(scenario(initial="[2.0]"), out_dir=out)
    return out


def test_plotdata_snapshots(ou_run):
    rows = _table(ou_run / "plots" / "distribution_snapshots.csv")
    by_snap = {}
    for r in rows:
        by_snap.setdefault(r["snapshot"], []).append(float(r["weight"]))
    for weights in by_snap.values():
        assert len(weights) == 41
        assert abs(sum(weights) - 1.0) <= 1e-9
    assert list(rows[0]) == ["snapshot", "step", "t", "M", "weight"]


def test_ou_variance_relaxes_toward_stationary(ou_run):
    fitted = json.loads((ou_run / "fit" / "fit.json").read_text())["coefficients"]
    stationary = fitted["c"] ** 2 / (2 * fitted["a"])
    var = [float(r["var_M"]) for r in _table(ou_run / "plots" / "moments.csv")]
    assert all(b > a for a, b in zip(var, var[1:]))
    assert all(v < stationary for v in var)
    assert stationary - var[-1] < 0.1 * stationary


def test_out_of_sample_close_to_in_sample(ou_run):
    ev = json.loads((ou_run / "predict" / "evaluation.json").read_text())
    assert ev["relative_gap"] <= 0.1


def test_empty_trace_is_header_only(tmp_path):
    demo_radar(scenario(steps=400, evals_factor=0, horizon=0.5), out_dir=tmp_path)
    lines = (tmp_path / "plots" / "objective_trace.csv").read_text().splitlines()
    assert lines == ["iteration,restart,objective,temperature"]


def test_incomplete_run(tmp_path):
    (tmp_path / "fit").mkdir()
    with pytest.raises(ConfigError, match="incomplete run"):
        emit_plotdata(tmp_path)


def test_plotdata_regenerates_identically(ou_run, tmp_path):
    before = {p.name: p.read_bytes() for p in (ou_run / "plots").iterdir()}
    emit_plotdata(ou_run)
    after = {p.name: p.read_bytes() for p in (ou_run / "plots").iterdir()}
    assert before == after


def test_zero_drift_symmetric_occupancy(tmp_path):
    responses = "\n".join(f"""
[[responses]]
label = "watch {c}"
cell = [0, {c}]
variable = "M"
hit = 1.0
miss = 0.0
""" for c in range(2))
    demo_radar(scenario(drift=None, cols=2, lo=-1.0, hi=1.0, points=21, noise=1.0, steps=2000,
                        horizon=6.0, responses=responses), out_dir=tmp_path)
    occ = [float(r["probability"]) for r in _table(tmp_path / "predict" / "occupancy.csv")]
    assert len(occ) == 2
    assert occ[0] == pytest.approx(occ[1], abs=0.01)
    # the relaxed distribution is uniform on [-1, 1]: P(M > 0.5) = 1/4
    assert occ[0] == pytest.approx(0.25, abs=0.02)
