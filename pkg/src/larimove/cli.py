"""Command line front end.

Exit codes: 0 success, 2 usage error, 3 bad input data, 4 numerical failure.
Every subcommand accepts ``--config file.json``; keys are option names with
dashes replaced by underscores, and explicit flags override them.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import (
    PARAMS,
    FitSummary,
    ci_width_stats,
    design_compare,
    geweke_z,
    gradient_vector_metrics,
    motility_mse,
    pmse,
    summarize_fit,
)
from .errors import DataError, LariError, NumericalError, UndefinedZError
from .experiments import RECIPES, config_from_dict, preset_config, run_experiment
from .io import to_jsonable, read_paths, write_columns, write_json, write_paths, write_table
from .mcmc import MCMCConfig, Priors, credible_interval, run_mwg
from .ols import build_whitened_quadratic, build_whitened_sign, fit_ols
from .pls import DEFAULT_LOG_LAMBDAS, fit_full
from .rng import substream
from .sampling import SamplingDesign, Subsample, remove_stationary
from .sim import QuadraticSimParams, simulate_quadratic_ar2, simulate_sign_drift
from .surfaces import Constant, read_raster, rasterize, write_raster

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class UsageError(Exception):
    pass


def _emit(obj, out):
    if out:
        write_json(obj, out)
    else:
        print(json.dumps(to_jsonable(obj), indent=2, sort_keys=True))


def _single_path(file):
    paths = read_paths(file)
    if len(paths) != 1:
        raise DataError(f"{file}: expected one path, found {len(paths)}")
    return paths[0]


# --------------------------------------------------------------------------
# subcommands


def cmd_simulate(a):
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if a.recipe:
        from .experiments import TRUTH, simulate_surface_paths

        cfg = preset_config(a.recipe, a.preset, a.seed, **({"replicates": a.replicates} if a.replicates else {}))
        paths = []
        for rep in range(cfg.replicates):
            if a.recipe in ("sim-study", "no-infill"):
                paths.append(simulate_quadratic_ar2(TRUTH, substream(cfg.seed, "path", rep), path_id=f"rep{rep}"))
            elif a.recipe in ("pls-study", "lari-vs-regular-pls"):
                paths.extend(simulate_surface_paths(cfg, rep))
            else:
                raise UsageError("simulate --recipe supports sim-study, no-infill, pls-study, lari-vs-regular-pls")
        params = asdict(cfg)
    else:
        n = a.n
        paths = []
        for i in range(a.paths):
            rng = substream(a.seed, "simulate", i)
            pid = str(i)
            if a.model == "quadratic":
                p = QuadraticSimParams(beta=a.beta, alpha=a.alpha, sigma=a.sigma, h=a.h, n=n,
                                       init=(tuple(a.init), tuple(a.init)))
                paths.append(simulate_quadratic_ar2(p, rng, path_id=pid))
            elif a.model == "sign":
                if a.attractor is None:
                    raise UsageError("--model sign needs --attractor")
                paths.append(simulate_sign_drift(a.beta, a.k, a.attractor, a.sigma, a.h, n,
                                                 (tuple(a.init), tuple(a.init)), rng, path_id=pid))
        params = {k: getattr(a, k) for k in ("model", "n", "h", "beta", "alpha", "k", "sigma", "attractor",
                                              "init", "paths", "seed")}
    files = []
    for p in paths:
        f = out / f"path_{p.id}.csv"
        write_paths(p, f)
        files.append(f.name)
    write_json({"parameters": params, "seed": a.seed, "files": files, "version": __version__},
               out / "manifest.json")


def cmd_subsample(a):
    if a.h is None:
        raise UsageError("--h is required")
    path = _single_path(a.input)
    design = SamplingDesign(a.design, a.h, a.resolution)
    sub = design.apply(path, substream(a.seed, "subsample", path.id))
    obs = sub.observed
    if a.remove_stationary is not None:
        obs = remove_stationary(obs, a.remove_stationary)
    write_paths(obs, f"{a.out_prefix}_obs.csv")
    if len(sub.unobserved_times):
        with open(f"{a.out_prefix}_unobs.csv", "w") as fh:
            fh.write("id,time,x,y\n")
            for t, (x, y) in zip(sub.unobserved_times, sub.unobserved_truth):
                fh.write(f"{path.id},{t:.17g},{x:.17g},{y:.17g}\n")
    else:
        Path(f"{a.out_prefix}_unobs.csv").write_text("id,time,x,y\n")


def cmd_fit_ols(a):
    paths = [p for f in a.input for p in read_paths(f)]
    if a.model == "sign":
        if a.attractor is None:
            raise UsageError("--model sign needs --attractor")
        rows = build_whitened_sign(paths, a.attractor)
    else:
        rows = build_whitened_quadratic(paths)
    fit = fit_ols(rows, level=a.level)
    _emit(fit.to_dict(), a.out)


def _read_unobs(file):
    lines = Path(file).read_text().splitlines()
    if not lines or lines[0].strip() != "id,time,x,y":
        raise DataError(f"{file}:1: expected header id,time,x,y")
    rows = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        try:
            rows.append([float(v) for v in parts[1:]])
        except ValueError:
            raise DataError(f"{file}:{i}: non-numeric value") from None
        if len(parts) != 4:
            raise DataError(f"{file}:{i}: expected 4 fields")
    arr = np.array(rows, dtype=float).reshape(-1, 3)
    return arr[:, 0], arr[:, 1:]


def cmd_fit_mcmc(a):
    obs = _single_path(a.obs)
    truth_pos = None
    if a.unobs:
        ut, truth_pos = _read_unobs(a.unobs)
    elif a.impute_step:
        full = np.arange(obs.times[0], obs.times[-1] + a.impute_step / 2, a.impute_step)
        ut = full[~np.isclose(full[:, None], obs.times[None, :]).any(axis=1)]
    else:
        ut = np.empty(0)
    sub = Subsample(obs, ut, truth_pos)
    priors = Priors().widened(a.prior_widen) if a.prior_widen != 1.0 else Priors()
    cfg = MCMCConfig(adapt_iters=a.adapt, sample_iters=a.sample, seed=a.seed, position_thin=a.position_thin)
    draws = run_mwg(sub, priors, cfg)
    truth = None
    if a.truth is not None:
        truth = dict(zip(PARAMS, a.truth))
    s = summarize_fit(draws, truth, a.replicate, a.design, truth_pos, a.level)
    cols = {"alpha": draws.alpha, "beta": draws.beta, "sigma": draws.sigma, "sigma2": draws.sigma2}
    write_columns(cols, f"{a.out_prefix}_draws.csv")
    if len(ut):
        write_table(
            [{"time": float(t), "x": float(m[0]), "y": float(m[1]),
              "x_lo": float(lo[0]), "x_hi": float(hi[0]), "y_lo": float(lo[1]), "y_hi": float(hi[1])}
             for t, m, lo, hi in zip(draws.unobserved_times, draws.position_mean,
                                     *credible_interval(draws.position_draws, a.level))],
            f"{a.out_prefix}_positions.csv",
        )
    summary = {
        "means": {k: float(np.mean(v)) for k, v in cols.items()},
        "ci": {p: s.ci[p] for p in PARAMS},
        "acceptance": draws.acceptance,
        "geweke": s.geweke,
        "stuck": draws.stuck,
        "fit_summary": asdict(s),
    }
    write_json(summary, f"{a.out_prefix}_summary.json")


def _grid_from_args(a):
    if a.grid:
        g = read_raster(a.grid)
        return g
    if None in (a.nx, a.ny, a.cell):
        raise UsageError("give --grid or all of --nx --ny --cell")
    return rasterize(Constant(0.0), a.nx, a.ny, tuple(a.origin), a.cell)


def cmd_fit_pls(a):
    paths = [p for f in a.input for p in read_paths(f)]
    grid = _grid_from_args(a)
    logs = a.log_lambdas if a.log_lambdas else DEFAULT_LOG_LAMBDAS
    fit = fit_full(paths, grid, [math.exp(x) for x in logs], seed=a.seed, holdout_fraction=a.holdout,
                   outside=a.outside)
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_raster(fit.p_hat, out / "p_hat.asc")
    write_raster(fit.m_hat, out / "m_hat.asc")
    write_json(fit.report(), out / "report.json")


def cmd_diagnose(a):
    lines = Path(a.draws).read_text().splitlines()
    header = lines[0].split(",")
    try:
        data = np.array([[float(v) for v in l.split(",")] for l in lines[1:] if l.strip()])
    except ValueError:
        raise DataError(f"{a.draws}: non-numeric draw") from None
    cols = {h: data[:, i] for i, h in enumerate(header)}
    truth = dict(zip(PARAMS, a.truth)) if a.truth else {}
    report, hist_rows = {}, []
    for name, x in cols.items():
        lo, hi = credible_interval(x, a.level)
        try:
            z = geweke_z(x)
        except UndefinedZError:
            z = float("nan")
        entry = {"mean": float(np.mean(x)), "ci": [float(lo), float(hi)], "ci_width": ci_width_stats(x, a.level),
                 "geweke_z": z}
        if name in truth:
            entry["pmse"] = pmse(x, truth[name])
            entry["covers"] = bool(lo <= truth[name] <= hi)
        report[name] = entry
        counts, edges = np.histogram(x, bins=a.bins)
        for c, l, h in zip(counts, edges[:-1], edges[1:]):
            hist_rows.append({"quantity": name, "bin_lo": float(l), "bin_hi": float(h), "count": int(c)})
    keys = [k for k in ("alpha", "beta", "sigma2") if k in report]
    report["converged"] = bool(keys) and all(abs(report[k]["geweke_z"]) < 3 for k in keys)
    if a.hist_out:
        write_table(hist_rows, a.hist_out)
    _emit(report, a.out)


def _nan_for_null(o):
    if isinstance(o, dict):
        return {k: _nan_for_null(v) for k, v in o.items()}
    if isinstance(o, list):
        return [_nan_for_null(v) for v in o]
    return float("nan") if o is None else o


def cmd_compare(a):
    if a.summaries:
        fits = []
        for f in a.summaries:
            d = json.loads(Path(f).read_text())
            d = _nan_for_null(d.get("fit_summary", d))
            d["ci"] = {k: tuple(v) for k, v in d["ci"].items()}
            fits.append(FitSummary(**{fl.name: d.get(fl.name) for fl in fields(FitSummary)}))
        report = design_compare(fits)
        if a.table:
            write_table(report.rows(), a.table)
        _emit(report.summaries(), a.out)
    elif a.p_hat and a.p_ref:
        p_hat, p_ref = read_raster(a.p_hat), read_raster(a.p_ref)
        g = gradient_vector_metrics(p_hat, p_ref, radius=a.radius, center=a.center)
        out = {"gradient": asdict(g)}
        if a.m_hat and a.m_ref:
            m = motility_mse(read_raster(a.m_hat), read_raster(a.m_ref), log_scale=not a.linear_motility,
                             radius=a.radius, center=a.center)
            out["motility"] = asdict(m)
        _emit(out, a.out)
    else:
        raise UsageError("give --summaries, or --p-hat and --p-ref")


def cmd_run_experiment(a):
    if a.manifest:
        cfg = config_from_dict(json.loads(Path(a.manifest).read_text()))
    else:
        if not a.recipe:
            raise UsageError("--recipe is required")
        overrides = {k: getattr(a, k) for k in ("replicates", "adapt_iters", "sample_iters", "workers")
                     if getattr(a, k) is not None}
        cfg = preset_config(a.recipe, a.preset, a.seed, output_dir=a.out_dir, **overrides)
    if a.out_dir and a.manifest:
        from dataclasses import replace

        cfg = replace(cfg, output_dir=a.out_dir)
    summary = run_experiment(cfg)
    if a.print_summary:
        _emit(summary, None)


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="larimove", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        s = sub.add_parser(name, help=help)
        s.add_argument("--config", help="JSON file of option defaults")
        s.set_defaults(func=fn)
        return s

    s = add("simulate", cmd_simulate, "simulate movement paths")
    s.add_argument("--recipe", choices=RECIPES)
    s.add_argument("--preset", choices=("desk", "full"), default="desk")
    s.add_argument("--replicates", type=int)
    s.add_argument("--model", choices=("quadratic", "sign"), default="quadratic")
    s.add_argument("--n", type=int, default=500)
    s.add_argument("--h", type=float, default=1.0)
    s.add_argument("--beta", type=float, default=0.4)
    s.add_argument("--alpha", type=float, default=0.08)
    s.add_argument("--k", type=float, default=0.2)
    s.add_argument("--sigma", type=float, default=0.5)
    s.add_argument("--attractor", type=float, nargs=2)
    s.add_argument("--init", type=float, nargs=2, default=[1.0, 1.0])
    s.add_argument("--paths", type=int, default=1)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out-dir", required=True)

    s = add("subsample", cmd_subsample, "subsample a path under a regular or LARI design")
    s.add_argument("--input", required=True)
    s.add_argument("--design", choices=("regular", "lari"), required=True)
    s.add_argument("--h", type=float, required=True)
    s.add_argument("--resolution", type=float)
    s.add_argument("--remove-stationary", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-prefix", required=True)

    s = add("fit-ols", cmd_fit_ols, "least-squares fit of the whitened model")
    s.add_argument("--input", nargs="+", required=True)
    s.add_argument("--model", choices=("quadratic", "sign"), default="quadratic")
    s.add_argument("--attractor", type=float, nargs=2)
    s.add_argument("--level", type=float, default=0.95)
    s.add_argument("--out")

    s = add("fit-mcmc", cmd_fit_mcmc, "Metropolis-within-Gibbs fit with imputation")
    s.add_argument("--obs", required=True)
    s.add_argument("--unobs")
    s.add_argument("--impute-step", type=float)
    s.add_argument("--adapt", type=int, default=20000)
    s.add_argument("--sample", type=int, default=20000)
    s.add_argument("--position-thin", type=int, default=10)
    s.add_argument("--prior-widen", type=float, default=1.0)
    s.add_argument("--truth", type=float, nargs=3, metavar=("ALPHA", "BETA", "SIGMA2"))
    s.add_argument("--level", type=float, default=0.95)
    s.add_argument("--replicate", type=int, default=0)
    s.add_argument("--design", default="")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-prefix", required=True)

    s = add("fit-pls", cmd_fit_pls, "penalized 3-step surface fit")
    s.add_argument("--input", nargs="+", required=True)
    s.add_argument("--grid")
    s.add_argument("--nx", type=int)
    s.add_argument("--ny", type=int)
    s.add_argument("--cell", type=float)
    s.add_argument("--origin", type=float, nargs=2, default=[0.0, 0.0])
    s.add_argument("--log-lambdas", type=float, nargs="+")
    s.add_argument("--holdout", type=float, default=0.2)
    s.add_argument("--outside", choices=("error", "skip"), default="error")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)

    s = add("diagnose", cmd_diagnose, "Geweke, credible intervals and PMSE for a draws CSV")
    s.add_argument("--draws", required=True)
    s.add_argument("--truth", type=float, nargs=3, metavar=("ALPHA", "BETA", "SIGMA2"))
    s.add_argument("--level", type=float, default=0.95)
    s.add_argument("--bins", type=int, default=30)
    s.add_argument("--hist-out")
    s.add_argument("--out")

    s = add("compare", cmd_compare, "compare designs (fit summaries) or surfaces (rasters)")
    s.add_argument("--summaries", nargs="+")
    s.add_argument("--table")
    s.add_argument("--p-hat")
    s.add_argument("--p-ref")
    s.add_argument("--m-hat")
    s.add_argument("--m-ref")
    s.add_argument("--linear-motility", action="store_true")
    s.add_argument("--radius", type=float)
    s.add_argument("--center", type=float, nargs=2)
    s.add_argument("--out")

    s = add("run-experiment", cmd_run_experiment, "run a named experiment recipe")
    s.add_argument("--recipe", choices=RECIPES)
    s.add_argument("--preset", choices=("desk", "full"), default="desk")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--replicates", type=int)
    s.add_argument("--adapt-iters", type=int)
    s.add_argument("--sample-iters", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--manifest", help="re-run from a previous manifest.json")
    s.add_argument("--out-dir", default="results")
    s.add_argument("--print-summary", action="store_true")
    return p


def _apply_config(parser, argv):
    """Load ``--config`` defaults into the chosen subparser before parsing."""
    cfg_path = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            cfg_path = argv[i + 1]
        elif tok.startswith("--config="):
            cfg_path = tok.split("=", 1)[1]
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    command = next((t for t in argv if not t.startswith("-")), None)
    if cfg_path and command in subparsers.choices:
        try:
            cfg = json.loads(Path(cfg_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read config {cfg_path}: {exc}") from None
        if not isinstance(cfg, dict):
            raise DataError("config must be a JSON object")
        sp = subparsers.choices[command]
        known = {a.dest for a in sp._actions}
        unknown = set(cfg) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        for action in sp._actions:
            if action.dest in cfg:
                action.required = False
        sp.set_defaults(**cfg)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = _apply_config(parser, argv)
        args.func(args)
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, LariError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
