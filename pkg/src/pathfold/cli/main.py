"""``pathfold`` command line.

Global options (accepted after the subcommand):

``--config``   model TOML (scenario TOML for ``demo-radar``, options file for ``gain``)
``--seed``     random seed
``--out-dir``  output directory (created if missing)
``--format``   ``csv`` or ``json`` for tabular outputs

Settings resolve in the order: command-line flag, then the environment
(``PATHFOLD_CONFIG``, ``PATHFOLD_SEED``, ``PATHFOLD_OUT_DIR``,
``PATHFOLD_FORMAT``), then the config file (the ``seed`` of a demo
scenario), then the built-in default.

Exit status: 0 success, 2 configuration or input error, 3 numerical
failure, 4 non-convergence, 1 anything else. Failures print one JSON
object on stderr and also write it to ``<out-dir>/error.json``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from ..errors import ConfigError, ConvergenceError, PathfoldError
from ..fitting import AnnealConfig, FitTemplate, fit, predict, scan_minima
from ..fokker_planck import build_fd_operator, propagate_fpe
from ..langevin import simulate_ensemble
from ..lattice import run_sweeps
from ..model import Distribution, ingest_timeseries, load_model_file, serialize_model
from ..path_integral import most_probable_path, sample_paths_metropolis
from ..path_integral.kernel import kernels_for
from .demo import demo_radar, emit_plotdata, load_scenario
from .gain import ResponseOption, expected_gain
from .io import FORMATS, parse_vector, sha256_file, write_json, write_table
from .manifest import ERROR_NAME, OUT_DIR_TOKEN, RunManifest, compare_outputs

ENV_PREFIX = "PATHFOLD_"
DEFAULTS = {"seed": 0, "out_dir": ".", "format": "csv", "config": None}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message, "command line")


def resolve(args, name, config_value=None):
    """CLI flag > environment > config file > default."""
    value = getattr(args, name, None)
    if value is not None:
        return value
    env = os.environ.get(ENV_PREFIX + name.upper())
    if env not in (None, ""):
        return env
    if config_value is not None:
        return config_value
    return DEFAULTS[name]


def _seed(value) -> int:
    try:
        seed = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"seed must be an integer, got {value!r}", "seed") from None
    if seed < 0:
        raise ConfigError("seed must be non-negative", "seed")
    return seed


def _require_config(ctx):
    if ctx["config"] is None:
        raise ConfigError("this subcommand needs --config", "command line")
    return ctx["config"]


def _moments_rows(mesh, dists, times):
    labels = list(mesh.labels)
    header = ["t", *(f"mean_{lab}" for lab in labels), *(f"var_{lab}" for lab in labels)]
    rows = [[t, *D.mean(), *D.variance()] for t, D in zip(times, dists)]
    return header, rows


def _write_snapshots(path, mesh, dists, times, fmt):
    centers = mesh.centers()
    labels = list(mesh.labels)
    rows = ([j, t, *centers[i], w[i]] for j, (t, D) in enumerate(zip(times, dists))
            for w in [D.flat()] for i in range(mesh.size))
    write_table(path, ["snapshot", "t", *labels, "weight"], rows, fmt)


# subcommands -------------------------------------------------------------------------------

def cmd_simulate(args, ctx):
    spec = load_model_file(_require_config(ctx))
    x0 = parse_vector(args.initial, spec.dim, "--initial")
    res = simulate_ensemble(spec, x0, args.n_traj, args.steps, ctx["seed"], dt=args.dt,
                            boundary=args.boundary, record_every=args.record_every)
    out, fmt = ctx["out_dir"], ctx["format"]
    keep = min(args.keep, res.n_traj)
    write_table(out / "trajectories", ["trajectory", "t", *spec.labels],
                ([j, t, *x] for j in range(keep) for t, x in zip(res.t, res.states[j])), fmt)
    means, covs = res.moments() if res.n_traj > 1 else (res.states[0], None)
    var = (np.diagonal(covs, axis1=1, axis2=2) if covs is not None
           else np.zeros_like(means))
    write_table(out / "moments",
                ["t", *(f"mean_{lab}" for lab in spec.labels),
                 *(f"var_{lab}" for lab in spec.labels)],
                ([t, *m, *v] for t, m, v in zip(res.t, means, var)), fmt)
    write_json(out / "summary.json", {"n_traj": res.n_traj, "steps": args.steps,
                                      "dt": float(res.t[1] - res.t[0]) if len(res.t) > 1 else 0,
                                      "alive": int(res.alive[:, -1].sum()),
                                      "final_mean": means[-1], "final_variance": var[-1]})


def cmd_propagate(args, ctx):
    spec = load_model_file(_require_config(ctx))
    mesh = spec.mesh()
    P0 = Distribution.point_mass(mesh, parse_vector(args.initial, spec.dim, "--initial"))
    dt = float(args.dt or spec.dt)
    n_snap = max(1, args.snapshots)
    info = {"method": args.method, "steps": args.steps, "dt": dt}
    times, dists = [0.0], [P0]
    if args.method == "fpe":
        op = build_fd_operator(spec, mesh, boundary=args.boundary, scheme=args.scheme)
        final, snaps = propagate_fpe(op, P0, args.steps * dt, snapshots=n_snap)
        times += [args.steps * dt * (j + 1) / len(snaps) for j in range(len(snaps))]
        dists += snaps
        info.update({"fpe_steps": final.info["steps"], "fpe_dt": final.info["dt"]})
    else:
        kernels = kernels_for(spec, args.steps, mesh, dt, args.discretization, args.boundary)
        every = max(1, args.steps // n_snap)
        p, drift = P0.flat().copy(), []
        for s, k in enumerate(kernels, start=1):
            before = p.sum()
            p = k.matrix @ p
            drift.append(p.sum() - before)
            if k.conservative and p.sum() > 0:
                p *= before / p.sum()
            if s % every == 0 or s == args.steps:
                times.append(s * dt)
                dists.append(Distribution(mesh, p.copy()))
        info.update({"discretization": args.discretization,
                     "max_mass_drift": float(np.max(np.abs(drift))) if drift else 0.0})
    final = dists[-1]
    out, fmt = ctx["out_dir"], ctx["format"]
    _write_snapshots(out / "snapshots", mesh, dists, times, fmt)
    header, rows = _moments_rows(mesh, dists, times)
    write_table(out / "moments", header, rows, fmt)
    info.update({"mass": final.total, "mean": final.mean(), "covariance": final.covariance()})
    write_json(out / "summary.json", info)


def _template_and_data(ctx, args):
    spec = load_model_file(_require_config(ctx))
    template = FitTemplate(spec)
    data = ingest_timeseries(args.data, spec)
    return template, data


def cmd_fit(args, ctx):
    template, data = _template_and_data(ctx, args)
    if args.train_fraction is not None:
        data, _ = data.split(args.train_fraction)
    cfg = AnnealConfig(restarts=args.restarts, evals_factor=args.evals_factor,
                       polish=not args.no_polish)
    res = fit(template, data, cfg, seed=ctx["seed"], discretization=args.discretization)
    out, fmt = ctx["out_dir"], ctx["format"]
    write_json(out / "fit.json", res.to_dict())
    (out / "fitted_model.toml").write_text(serialize_model(res.spec), encoding="utf-8")
    write_table(out / "trace", ["iteration", "restart", "objective", "temperature"],
                ([r["iteration"], r["restart"], r["objective"], r["temperature"]]
                 for r in res.trace), fmt)


def _grid_arg(text):
    try:
        name, rng = text.split("=", 1)
        lo, hi, n = rng.split(":")
        return name.strip(), (float(lo), float(hi), int(n))
    except ValueError:
        raise ConfigError(f"grid must look like name=low:high:points, got {text!r}",
                          "--grid") from None


def cmd_scan(args, ctx):
    template, data = _template_and_data(ctx, args)
    if not args.grid:
        raise ConfigError("at least one --grid is required", "command line")
    grid = dict(_grid_arg(g) for g in args.grid)
    minima, values = scan_minima(template, data, grid, args.epoch_stride, args.discretization)
    names = list(template.names)
    out, fmt = ctx["out_dir"], ctx["format"]
    write_table(out / "minima", ["rank", "objective", *names],
                ([k, m.objective, *(m.coefficients[n] for n in names)]
                 for k, m in enumerate(minima)), fmt)
    axes = [np.linspace(*grid[n][:2], grid[n][2]) for n in grid]
    write_table(out / "grid", [*grid, "objective"],
                ([*(a[i] for a, i in zip(axes, idx)), values[idx]]
                 for idx in np.ndindex(values.shape)), fmt)


def cmd_predict(args, ctx):
    spec = load_model_file(_require_config(ctx))
    if args.data:
        start = ingest_timeseries(args.data, spec).values[-1]
    elif args.initial is not None:
        start = parse_vector(args.initial, spec.dim, "--initial")
    else:
        raise ConfigError("predict needs --initial or --data", "command line")
    pred = predict(spec, start, args.horizon, discretization=args.discretization, dt=args.dt)
    out, fmt = ctx["out_dir"], ctx["format"]
    t = args.horizon * float(args.dt or spec.dt)
    _write_snapshots(out / "forecast", spec.mesh(), [pred.distribution], [t], fmt)
    write_json(out / "summary.json", {**pred.summary, "horizon_steps": args.horizon,
                                      "horizon_time": t, "start_state": start})


def cmd_mpp(args, ctx):
    spec = load_model_file(_require_config(ctx))
    a = parse_vector(args.start, spec.dim, "--start")
    b = parse_vector(args.end, spec.dim, "--end")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = most_probable_path(spec, a, b, args.u, dt=args.dt,
                                 discretization=args.discretization, restarts=args.restarts,
                                 seed=ctx["seed"])
    out, fmt = ctx["out_dir"], ctx["format"]
    write_table(out / "path", ["epoch", "t", *spec.labels],
                ([s, t, *x] for s, (t, x) in enumerate(zip(res.t, res.states))), fmt)
    write_json(out / "mpp.json", {"action": res.action, "log_prefactor": res.log_prefactor,
                                  "dt": res.dt, "el_residual": res.el_residual,
                                  "converged": res.converged, **res.info})
    if not res.converged:
        raise ConvergenceError(f"most probable path did not converge: {res.info['message']}")


def cmd_sample_paths(args, ctx):
    spec = load_model_file(_require_config(ctx))
    a = parse_vector(args.start, spec.dim, "--start")
    b = parse_vector(args.end, spec.dim, "--end") if args.end is not None else None
    res = sample_paths_metropolis(spec, a, b, args.u, args.samples, ctx["seed"], dt=args.dt,
                                  discretization=args.discretization, burn_in=args.burn_in,
                                  thin=args.thin, n_chains=args.chains,
                                  temperature=args.temperature)
    out, fmt = ctx["out_dir"], ctx["format"]
    write_table(out / "samples", ["sample", "epoch", *spec.labels],
                ([n, s, *res.paths[n, s]] for n in range(res.paths.shape[0])
                 for s in range(res.paths.shape[1])), fmt)
    write_json(out / "diagnostics.json", {
        "acceptance": res.acceptance, "shift_acceptance": res.shift_acceptance,
        "widths": res.widths, "autocorrelation_time": res.autocorrelation_time,
        "n_samples": res.paths.shape[0], "dt": res.dt, "seed": res.seed,
        "mean_path": res.paths.mean(axis=0),
        "burn_in": res.info["burn_in"], "thin": res.info["thin"],
        "n_chains": res.info["n_chains"]})


def cmd_lattice_sample(args, ctx):
    spec = load_model_file(_require_config(ctx))
    x0 = parse_vector(args.initial, spec.dim, "--initial")
    chain = np.tile(x0, (args.epochs + 1, 1))
    if args.cooling is not None:
        T0, cool = args.temperature, args.cooling

        def temperature(k):
            return T0 * cool ** k
    else:
        temperature = args.temperature
    samples, diag = run_sweeps(spec, chain, args.sweeps, temperature, ctx["seed"],
                               burn_in=args.burn_in, order=args.order,
                               record_every=args.record_every)
    out, fmt = ctx["out_dir"], ctx["format"]
    write_table(out / "energy", ["sweep", "energy"], enumerate(diag.energy), fmt)
    mean = samples.mean(axis=0) if len(samples) else chain
    write_table(out / "mean_chain", ["epoch", *spec.labels],
                ([s, *row] for s, row in enumerate(mean)), fmt)
    write_json(out / "diagnostics.json", {"sweeps": diag.sweeps, "records": len(samples),
                                          "acceptance": diag.acceptance,
                                          "mean_acceptance": diag.mean_acceptance,
                                          "widths": diag.widths})


def cmd_gain(args, ctx):
    path = _require_config(ctx)
    text = Path(path).read_text(encoding="utf-8")
    if str(path).endswith(".json"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}", str(path)) from None
        entries = doc["responses"] if isinstance(doc, dict) else doc
    else:
        from ..model.config import parse_toml

        entries = parse_toml(text).get("responses", [])
    if not entries:
        raise ConfigError("no responses declared", str(path))
    ranking = expected_gain(ResponseOption.from_dict(e) for e in entries)
    write_table(ctx["out_dir"] / "gain", ["rank", "label", "expected_gain"],
                ([k, lab, g] for k, (lab, g) in enumerate(ranking)), ctx["format"])


def cmd_demo_radar(args, ctx):
    config = ctx["config"]
    scenario = load_scenario(config)
    seed = ctx["seed_flag"]
    if seed is None:
        seed = _seed(resolve(argparse.Namespace(), "seed", scenario["scenario"].get("seed")))
    configs = {str(config): sha256_file(config)} if config else {}
    report = demo_radar(scenario, seed, ctx["out_dir"], ctx["format"],
                        command=ctx["canonical"](seed), configs=configs)
    print(json.dumps({"in_sample_per_step": report["in_sample_per_step"],
                      "out_of_sample_per_step": report["out_of_sample_per_step"],
                      "relative_gap": report["relative_gap"]}))


def cmd_plotdata(args, ctx):
    written = emit_plotdata(ctx["out_dir"])
    print(json.dumps({k: str(v) for k, v in written.items()}))


def cmd_replay(args, ctx):
    manifest = RunManifest.read(args.manifest)
    for path, digest in manifest.configs.items():
        if not Path(path).exists() or sha256_file(path) != digest:
            raise ConfigError("input file differs from the recorded one", path)
    out = ctx["out_dir"]
    code = main(manifest.argv(out))
    if code != 0:
        return code
    diff = compare_outputs(manifest.outputs, out)
    same = not any(diff.values())
    print(json.dumps({"identical": same, **diff}))
    return 0 if same else 1


# parser ------------------------------------------------------------------------------------

def _globals() -> argparse.ArgumentParser:
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--config", default=None, help="model / scenario / options file")
    g.add_argument("--seed", default=None, help="random seed (non-negative integer)")
    g.add_argument("--out-dir", dest="out_dir", default=None, help="output directory")
    g.add_argument("--format", default=None, choices=FORMATS, help="table format")
    return g


def build_parser() -> argparse.ArgumentParser:
    parent = _globals()
    p = _Parser(prog="pathfold", description=__doc__.split("\n\n")[0],
                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        sp = sub.add_parser(name, parents=[parent], help=help_, description=help_)
        sp.set_defaults(func=func)
        return sp

    def disc(sp):
        sp.add_argument("--discretization", default="midpoint", choices=("midpoint", "prepoint"))

    sp = add("simulate", cmd_simulate, "Langevin ensemble from a point")
    sp.add_argument("--initial", required=True)
    sp.add_argument("--steps", type=int, required=True)
    sp.add_argument("--n-traj", dest="n_traj", type=int, default=1000)
    sp.add_argument("--dt", type=float, default=None)
    sp.add_argument("--boundary", default="reflecting", choices=("reflecting", "absorbing"))
    sp.add_argument("--record-every", dest="record_every", type=int, default=1)
    sp.add_argument("--keep", type=int, default=10, help="trajectories written in full")

    sp = add("propagate", cmd_propagate, "propagate a point mass on the model mesh")
    sp.add_argument("--initial", required=True)
    sp.add_argument("--steps", type=int, required=True, help="number of model time steps")
    sp.add_argument("--method", default="pathint", choices=("pathint", "fpe"))
    sp.add_argument("--scheme", default="central", choices=("central", "chang-cooper"))
    sp.add_argument("--boundary", default="reflecting", choices=("reflecting", "absorbing"))
    sp.add_argument("--dt", type=float, default=None)
    sp.add_argument("--snapshots", type=int, default=1)
    disc(sp)

    sp = add("fit", cmd_fit, "fit template parameters to a time series")
    sp.add_argument("--data", required=True)
    sp.add_argument("--train-fraction", dest="train_fraction", type=float, default=None)
    sp.add_argument("--restarts", type=int, default=3)
    sp.add_argument("--evals-factor", dest="evals_factor", type=int, default=600)
    sp.add_argument("--no-polish", dest="no_polish", action="store_true")
    disc(sp)

    sp = add("scan", cmd_scan, "grid scan of the fit objective for local minima")
    sp.add_argument("--data", required=True)
    sp.add_argument("--grid", action="append", default=[], help="name=low:high:points")
    sp.add_argument("--epoch-stride", dest="epoch_stride", type=int, default=1)
    disc(sp)

    sp = add("predict", cmd_predict, "forecast distribution from a state")
    sp.add_argument("--initial", default=None)
    sp.add_argument("--data", default=None, help="start from the last observation")
    sp.add_argument("--horizon", type=int, required=True, help="steps of --dt")
    sp.add_argument("--dt", type=float, default=None)
    disc(sp)

    sp = add("mpp", cmd_mpp, "most probable path between two states")
    sp.add_argument("--start", required=True)
    sp.add_argument("--end", required=True)
    sp.add_argument("--u", type=int, required=True, help="interior epochs")
    sp.add_argument("--dt", type=float, default=None)
    sp.add_argument("--restarts", type=int, default=3)
    disc(sp)

    sp = add("sample-paths", cmd_sample_paths, "Metropolis path samples")
    sp.add_argument("--start", required=True)
    sp.add_argument("--end", default=None, help="omit for a free end point")
    sp.add_argument("--u", type=int, required=True)
    sp.add_argument("--samples", type=int, default=1000)
    sp.add_argument("--thin", type=int, default=1)
    sp.add_argument("--chains", type=int, default=1)
    sp.add_argument("--burn-in", dest="burn_in", type=int, default=None)
    sp.add_argument("--temperature", type=float, default=1.0)
    sp.add_argument("--dt", type=float, default=None)
    disc(sp)

    sp = add("lattice-sample", cmd_lattice_sample, "checkerboard sweeps of a lattice chain")
    sp.add_argument("--initial", required=True)
    sp.add_argument("--epochs", type=int, required=True, help="transitions in the chain")
    sp.add_argument("--sweeps", type=int, default=1000)
    sp.add_argument("--burn-in", dest="burn_in", type=int, default=200)
    sp.add_argument("--temperature", type=float, default=1.0)
    sp.add_argument("--cooling", type=float, default=None, help="T multiplied per sweep")
    sp.add_argument("--order", default="checkerboard", choices=("checkerboard", "sequential"))
    sp.add_argument("--record-every", dest="record_every", type=int, default=1)

    add("gain", cmd_gain, "rank responses by expected gain")
    add("demo-radar", cmd_demo_radar, "end-to-end radar-grid scenario run")
    add("plotdata", cmd_plotdata, "regenerate plot tables of a run directory")

    sp = add("replay", cmd_replay, "re-run a manifest and compare output hashes")
    sp.add_argument("manifest")
    return p


def _canonical(argv, seed, fmt):
    """Command line with the output directory tokenised and seed/format explicit."""
    out, skip = [], False
    for k, a in enumerate(argv):
        if skip:
            skip = False
            continue
        flag = a.split("=", 1)[0]
        if flag in ("--seed", "--format", "--out-dir"):
            skip = "=" not in a
            continue
        out.append(a)
    return out + ["--seed", str(seed), "--format", fmt, "--out-dir", OUT_DIR_TOKEN]


def _scan_out_dir(argv):
    """Best-effort output directory when the command line itself is invalid."""
    for k, a in enumerate(argv):
        if a.startswith("--out-dir="):
            return a.split("=", 1)[1]
        if a == "--out-dir" and k + 1 < len(argv):
            return argv[k + 1]
    return os.environ.get(ENV_PREFIX + "OUT_DIR") or None


def _report_error(exc, code, out_dir, argv=None):
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("stage", "location", "suggested_dt", "max_dt", "epoch", "trajectory"):
        v = getattr(exc, attr, None)
        if v is not None:
            payload[attr] = v
    text = json.dumps(payload, default=float)
    print(text, file=sys.stderr)
    out_dir = out_dir if out_dir is not None else _scan_out_dir(sys.argv[1:] if argv is None
                                                                 else argv)
    if out_dir is not None:
        try:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            (Path(out_dir) / ERROR_NAME).write_text(text + "\n", encoding="utf-8")
        except OSError:
            pass


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    out_dir = None
    try:
        args = build_parser().parse_args(argv)
        out_dir = Path(resolve(args, "out_dir"))
        seed_flag = args.seed if args.seed is not None else os.environ.get(ENV_PREFIX + "SEED")
        fmt = resolve(args, "format")
        if fmt not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}", "format")
        ctx = {"config": resolve(args, "config"), "out_dir": out_dir, "format": fmt,
               "seed_flag": _seed(seed_flag) if seed_flag not in (None, "") else None}
        ctx["seed"] = ctx["seed_flag"] if ctx["seed_flag"] is not None else DEFAULTS["seed"]
        ctx["canonical"] = lambda s: _canonical(argv, s, fmt)
        out_dir.mkdir(parents=True, exist_ok=True)
        stale = out_dir / ERROR_NAME
        if stale.exists():
            stale.unlink()
        code = args.func(args, ctx)
        if code:
            return int(code)
        if args.command not in ("demo-radar", "replay", "plotdata"):
            configs = {str(ctx["config"]): sha256_file(ctx["config"])} if ctx["config"] else {}
            data = getattr(args, "data", None)
            if data:
                configs[str(data)] = sha256_file(data)
            RunManifest(ctx["canonical"](ctx["seed"]), ctx["seed"], fmt, configs).write(out_dir)
        return 0
    except PathfoldError as exc:
        _report_error(exc, exc.exit_code, out_dir, argv)
        return exc.exit_code
    except (ValueError, OSError) as exc:
        _report_error(exc, ConfigError.exit_code, out_dir, argv)
        return ConfigError.exit_code
    except Exception as exc:  # noqa: BLE001 - every failure must be reported as JSON
        _report_error(exc, 1, out_dir, argv)
        return 1


if __name__ == "__main__":
    sys.exit(main())
