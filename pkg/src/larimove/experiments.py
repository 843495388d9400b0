"""Experiment recipes: simulate, subsample, fit and summarize end to end.

Each recipe writes CSV tables, a JSON report and ``manifest.json`` into the
output directory. The manifest holds the full config, so passing it back as
``--config`` reproduces the bundle byte for byte.
"""
from __future__ import annotations

import math
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .diagnostics import design_compare, gradient_vector_metrics, motility_mse, summarize_fit
from .io import write_json, write_paths, write_table
from .mcmc import MCMCConfig, Priors, run_mwg
from .ols import build_whitened_quadratic, fit_ols
from .pls import fit_full
from .rng import substream
from .sampling import Subsample, subsample_lari, subsample_regular
from .sim import (
    ModelParams,
    QuadraticSimParams,
    simulate_em,
    simulate_quadratic_ar2,
    step_size_stats,
)
from .surfaces import Constant, LinearX, LinearY, Quadratic, StepY, rasterize, write_raster

RECIPES = ("sim-study", "capability", "no-infill", "pls-study", "lari-vs-regular-pls")

PRESETS = {
    "sim-study": {
        "desk": dict(replicates=20, adapt_iters=20000, sample_iters=20000),
        "full": dict(replicates=150, adapt_iters=100000, sample_iters=100000),
    },
    "capability": {"desk": dict(replicates=1), "full": dict(replicates=1)},
    "no-infill": {"desk": dict(replicates=50), "full": dict(replicates=50)},
    "pls-study": {"desk": dict(replicates=10), "full": dict(replicates=100)},
    "lari-vs-regular-pls": {"desk": dict(replicates=3), "full": dict(replicates=50)},
}


@dataclass(frozen=True)
class ExperimentConfig:
    recipe: str
    seed: int
    replicates: int = 1
    preset: str = "desk"
    output_dir: str = "results"
    workers: int = 1
    # sim-study / no-infill
    adapt_iters: int = 20000
    sample_iters: int = 20000
    h: float = 5.0
    level: float = 0.95
    prior_widen: float = 1.0
    position_thin: int = 10
    no_infill_mcmc: bool = False
    # surface studies
    n_paths: int = 5
    n_steps: int = 2000
    surface_beta: float = 0.5
    holdout_fraction: float = 0.2
    radius: float = 23.0
    # capability
    capability_steps: int = 1000

    def __post_init__(self):
        if self.recipe not in RECIPES:
            raise ValueError(f"unknown recipe {self.recipe!r}; choose from {', '.join(RECIPES)}")
        if self.seed is None:
            raise ValueError("an explicit seed is required")
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


def preset_config(recipe, preset="desk", seed=0, **overrides) -> ExperimentConfig:
    if preset not in ("desk", "full"):
        raise ValueError("preset must be 'desk' or 'full'")
    base = dict(PRESETS[recipe][preset]) if recipe in PRESETS else {}
    base.update(overrides)
    return ExperimentConfig(recipe=recipe, seed=seed, preset=preset, **base)


def config_from_dict(d: dict) -> ExperimentConfig:
    """Build a config from a plain dict or a manifest (which nests it under ``config``)."""
    d = d.get("config", d)
    names = {f.name for f in fields(ExperimentConfig)}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(**d)


def _map(fn, cfg, items):
    items = list(items)
    if cfg.workers == 1 or len(items) <= 1:
        return [fn(cfg, i) for i in items]
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(fn, [cfg] * len(items), items))


# --------------------------------------------------------------------------
# sim-study


TRUTH = QuadraticSimParams()


def _truth_dict(p=TRUTH):
    return {"alpha": p.alpha, "beta": p.beta, "sigma2": p.sigma**2}


def _sim_study_replicate(cfg: ExperimentConfig, rep: int):
    path = simulate_quadratic_ar2(TRUTH, substream(cfg.seed, "path", rep), path_id=f"rep{rep}")
    designs = {
        "regular": subsample_regular(path, cfg.h),
        "lari": subsample_lari(path, cfg.h, substream(cfg.seed, "lari", rep)),
    }
    priors = Priors().widened(cfg.prior_widen) if cfg.prior_widen != 1.0 else Priors()
    mc = MCMCConfig(adapt_iters=cfg.adapt_iters, sample_iters=cfg.sample_iters, seed=cfg.seed,
                    position_thin=cfg.position_thin)
    out = []
    for name, sub in designs.items():
        draws = run_mwg(sub, priors, mc, rng=substream(cfg.seed, "mcmc", rep, name))
        out.append(summarize_fit(draws, _truth_dict(), rep, name, sub.unobserved_truth, cfg.level))
    return path, out


def run_sim_study(cfg: ExperimentConfig, out: Path) -> dict:
    results = _map(_sim_study_replicate, cfg, range(cfg.replicates))
    write_paths([r[0] for r in results], out / "paths.csv")
    report = design_compare([f for r in results for f in r[1]], ("regular", "lari"))
    write_table(report.rows(), out / "fits.csv")
    summary = report.summaries()
    write_json({"truth": _truth_dict(), "summaries": summary}, out / "report.json")
    return summary


# --------------------------------------------------------------------------
# capability


CAPABILITY_SCENARIOS = {
    "steep-high": (LinearX(1.0), StepY(5.0, 20.0, 0.0)),
    "steep-moderate": (LinearX(1.0), StepY(5.0, 10.0, 0.0)),
    "gentle-high": (LinearX(0.5), StepY(5.0, 20.0, 0.0)),
}


def run_capability(cfg: ExperimentConfig, out: Path) -> dict:
    summary, hist_rows, paths = {}, [], []
    times = np.arange(float(cfg.capability_steps))
    for rep in range(cfg.replicates):
        for name, (pot, mot) in CAPABILITY_SCENARIOS.items():
            params = ModelParams(beta=0.4, sigma=0.5, potential=pot, motility=mot)
            path = simulate_em(params, times, ((0.0, 0.0), (0.0, 0.0)), substream(cfg.seed, "capability", rep, name),
                               path_id=f"{name}-{rep}")
            paths.append(path)
            groups = step_size_stats(path, mot)
            summary[f"{name}-{rep}"] = {
                "mean_step": {str(k): g.mean for k, g in groups.items()},
                "count": {str(k): g.count for k, g in groups.items()},
                "net_displacement": (path.positions[-1] - path.positions[0]).tolist(),
            }
            for k, g in groups.items():
                for lo, hi, c in zip(g.edges[:-1], g.edges[1:], g.hist):
                    hist_rows.append({"scenario": name, "replicate": rep, "motility": k,
                                      "bin_lo": float(lo), "bin_hi": float(hi), "count": int(c)})
    write_paths(paths, out / "paths.csv")
    write_table(hist_rows, out / "step_histograms.csv")
    write_json(summary, out / "report.json")
    return summary


# --------------------------------------------------------------------------
# no-infill


def _no_infill_replicate(cfg: ExperimentConfig, rep: int):
    path = simulate_quadratic_ar2(TRUTH, substream(cfg.seed, "path", rep), path_id=f"rep{rep}")
    sub = subsample_regular(path, 2 * TRUTH.h)
    fit = fit_ols(build_whitened_quadratic(sub.observed), level=cfg.level)
    truth = _truth_dict()
    row = {"replicate": rep}
    for p in ("alpha", "beta", "sigma2"):
        lo, hi = fit.ci[p]
        row[f"ols_{p}"] = fit.estimates[p]
        row[f"ols_lo_{p}"], row[f"ols_hi_{p}"] = lo, hi
        row[f"ols_covers_{p}"] = bool(lo <= truth[p] <= hi)
    if cfg.no_infill_mcmc:
        bare = Subsample(sub.observed, np.empty(0))
        mc = MCMCConfig(adapt_iters=cfg.adapt_iters, sample_iters=cfg.sample_iters, seed=cfg.seed)
        draws = run_mwg(bare, Priors(), mc, rng=substream(cfg.seed, "mcmc-no-infill", rep))
        s = summarize_fit(draws, truth, rep, "no-infill", None, cfg.level)
        for p in ("alpha", "beta", "sigma2"):
            row[f"mcmc_lo_{p}"], row[f"mcmc_hi_{p}"] = s.ci[p]
            row[f"mcmc_covers_{p}"] = s.covers[p]
    return row


def run_no_infill(cfg: ExperimentConfig, out: Path) -> dict:
    rows = _map(_no_infill_replicate, cfg, range(cfg.replicates))
    write_table(rows, out / "fits.csv")
    summary = {"replicates": len(rows)}
    prefixes = ("ols", "mcmc") if cfg.no_infill_mcmc else ("ols",)
    for m in prefixes:
        for p in ("alpha", "beta", "sigma2"):
            summary[f"{m}_coverage_{p}"] = float(np.mean([r[f"{m}_covers_{p}"] for r in rows]))
    write_json(summary, out / "report.json")
    return summary


# --------------------------------------------------------------------------
# surface studies

SURFACE_CENTER = (50.0, 50.0)


def surface_truth():
    """Linear motility and quadratic potential on a 50 x 50 grid of 2 x 2 cells."""
    pot = Quadratic(0.02, SURFACE_CENTER)
    mot = LinearY(0.02, 2.0)
    return pot, mot


def surface_grid():
    return rasterize(Constant(0.0), 50, 50, (0.0, 0.0), 2.0)


def simulate_surface_paths(cfg: ExperimentConfig, run: int):
    pot, mot = surface_truth()
    params = ModelParams(beta=cfg.surface_beta, sigma=1.0, potential=pot, motility=mot)
    times = np.arange(float(cfg.n_steps))
    return [
        simulate_em(params, times, (SURFACE_CENTER, SURFACE_CENTER), substream(cfg.seed, "surface", run, i),
                    path_id=f"run{run}-{i}")
        for i in range(cfg.n_paths)
    ]


def _surface_metrics(fit, p_ref, m_ref, cfg, log_scale=False):
    g = gradient_vector_metrics(fit.p_hat, p_ref, radius=cfg.radius, center=SURFACE_CENTER)
    m = motility_mse(fit.m_hat, m_ref, log_scale=log_scale, radius=cfg.radius, center=SURFACE_CENTER)
    return {
        "msd": g.msd, "mean_angle_error": g.mean_angle_error, "mean_magnitude_error": g.mean_magnitude_error,
        "motility_mse": m.mse, "motility_mean_error": m.mean_error, "n_cells": g.n_cells,
    }


def _pls_study_run(cfg: ExperimentConfig, run: int):
    paths = simulate_surface_paths(cfg, run)
    grid = surface_grid()
    fit = fit_full(paths, grid, seed=substream_seed(cfg.seed, "pls", run), holdout_fraction=cfg.holdout_fraction,
                   outside="skip")
    pot, mot = surface_truth()
    row = {"run": run, "beta_hat": fit.beta_hat, "log_lambda": math.log(fit.lam)}
    row.update(_surface_metrics(fit, rasterize(pot, 50, 50, (0.0, 0.0), 2.0), rasterize(mot, 50, 50, (0.0, 0.0), 2.0), cfg))
    pts = np.concatenate([p.positions for p in paths])
    row["fraction_within_radius"] = float(np.mean(np.hypot(*(pts - SURFACE_CENTER).T) <= cfg.radius))
    return row, fit


def substream_seed(seed: int, *keys) -> int:
    """A 63-bit integer seed derived from a substream (for APIs that take a seed)."""
    return int(substream(seed, *keys).integers(0, 2**63 - 1))


def run_pls_study(cfg: ExperimentConfig, out: Path) -> dict:
    results = _map(_pls_study_run, cfg, range(cfg.replicates))
    rows = [r[0] for r in results]
    write_table(rows, out / "runs.csv")
    first = results[0][1]
    write_raster(first.p_hat, out / "run0_p_hat.asc")
    write_raster(first.m_hat, out / "run0_m_hat.asc")
    summary = {
        "runs": len(rows),
        "mean_angle_error": float(np.mean([r["mean_angle_error"] for r in rows])),
        "magnitude_error_negative_runs": int(sum(r["mean_magnitude_error"] < 0 for r in rows)),
        "motility_error_negative_runs": int(sum(r["motility_mean_error"] < 0 for r in rows)),
        "mean_fraction_within_radius": float(np.mean([r["fraction_within_radius"] for r in rows])),
    }
    write_json(summary, out / "report.json")
    return summary


PLS_DESIGNS = (("regular-3", "regular", 3.0), ("regular-5", "regular", 5.0), ("lari-5", "lari", 5.0))


def _lari_vs_regular_run(cfg: ExperimentConfig, run: int):
    paths = simulate_surface_paths(cfg, run)
    grid = surface_grid()
    fseed = substream_seed(cfg.seed, "pls", run)
    full = fit_full(paths, grid, seed=fseed, holdout_fraction=cfg.holdout_fraction, outside="skip")
    pot, mot = surface_truth()
    p_true, m_true = rasterize(pot, 50, 50, (0.0, 0.0), 2.0), rasterize(mot, 50, 50, (0.0, 0.0), 2.0)
    rows = []
    for name, kind, h in PLS_DESIGNS:
        subs = []
        for i, p in enumerate(paths):
            s = subsample_regular(p, h) if kind == "regular" else subsample_lari(p, h, substream(cfg.seed, "lari", run, i))
            subs.append(s.observed)
        fit = fit_full(subs, grid, seed=fseed, holdout_fraction=cfg.holdout_fraction, outside="skip")
        vs_full = _surface_metrics(fit, full.p_hat, full.m_hat, cfg, log_scale=True)
        vs_truth = _surface_metrics(fit, p_true, m_true, cfg, log_scale=True)
        row = {"run": run, "design": name, "log_lambda": math.log(fit.lam), "beta_hat": fit.beta_hat}
        row.update({f"vs_full_{k}": v for k, v in vs_full.items()})
        row.update({f"vs_truth_{k}": v for k, v in vs_truth.items()})
        rows.append(row)
    return rows


def run_lari_vs_regular_pls(cfg: ExperimentConfig, out: Path) -> dict:
    rows = [r for rs in _map(_lari_vs_regular_run, cfg, range(cfg.replicates)) for r in rs]
    write_table(rows, out / "runs.csv")
    summary = {}
    for name, _, _ in PLS_DESIGNS:
        sel = [r for r in rows if r["design"] == name]
        summary[name] = {
            k: float(np.mean([r[k] for r in sel]))
            for k in ("vs_full_motility_mse", "vs_full_msd", "vs_full_mean_magnitude_error",
                      "vs_full_mean_angle_error", "vs_truth_motility_mse", "vs_truth_msd")
        }
    write_json(summary, out / "report.json")
    return summary


RUNNERS = {
    "sim-study": run_sim_study,
    "capability": run_capability,
    "no-infill": run_no_infill,
    "pls-study": run_pls_study,
    "lari-vs-regular-pls": run_lari_vs_regular_pls,
}


def _manifest(cfg, status, stage=None, error=None):
    config = asdict(cfg)
    del config["output_dir"]  # where the bundle lives is not part of it
    return {
        "config": config,
        "status": status,
        "failed_stage": stage,
        "error": error,
        "versions": {"larimove": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "rng": "numpy Philox, SeedSequence(seed, spawn_key=crc32/int keys)",
        "tolerances": {"credible_level": cfg.level, "geweke_threshold": 3.0},
    }


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run a recipe and write its bundle; a failure leaves a partial manifest naming the stage."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        summary = RUNNERS[cfg.recipe](cfg, out)
    except Exception as exc:
        write_json(_manifest(cfg, "failed", cfg.recipe, f"{type(exc).__name__}: {exc}"), out / "manifest.json")
        raise
    write_json(_manifest(cfg, "complete"), out / "manifest.json")
    return summary


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
