"""Convergence checks, accuracy metrics and design comparison summaries."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import signal

from .errors import GridMismatchError, UnavailableTruthError, UndefinedZError
from .mcmc import PosteriorDraws, credible_interval

PARAMS = ("alpha", "beta", "sigma2")


# --------------------------------------------------------------------------
# Geweke


def _autocov(x, maxlag):
    x = x - x.mean()
    n = len(x)
    full = signal.correlate(x, x, mode="full", method="auto")[n - 1 : n + maxlag]
    return full / n


def _levinson(r, pmax):
    """Yule-Walker AR fits of every order 0..pmax; returns (coefs per order, innovation variances)."""
    phis = [np.empty(0)]
    v = [r[0]]
    phi = np.empty(0)
    for p in range(1, pmax + 1):
        k = (r[p] - phi @ r[p - 1 : 0 : -1]) / v[-1] if p > 1 else r[1] / r[0]
        phi = np.concatenate([phi - k * phi[::-1], [k]])
        v.append(v[-1] * (1.0 - k * k))
        phis.append(phi)
        if v[-1] <= 0:
            break
    return phis, np.asarray(v)


def spectrum0(x) -> float:
    """Spectral density at frequency zero (scaled so var(mean) ~ S/n) from an AR fit.

    The AR order minimizes AIC over 0..floor(n/10).
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    pmax = max(0, n // 10)
    r = _autocov(x, pmax)
    if not r[0] > 0:
        raise UndefinedZError("segment has zero variance")
    phis, v = _levinson(r, pmax)
    v = np.maximum(v, np.finfo(float).tiny)
    aic = n * np.log(v) + 2 * np.arange(len(v))
    p = int(np.argmin(aic))
    return float(v[p] / (1.0 - phis[p].sum()) ** 2)


def geweke_z(chain, first_frac=0.1, last_frac=0.5) -> float:
    """(mean of first segment - mean of last segment) / spectral standard error."""
    x = np.asarray(chain, dtype=float).ravel()
    n = len(x)
    if n < 20:
        raise ValueError("chain must have at least 20 draws")
    if not (0 < first_frac < 1 and 0 < last_frac < 1) or first_frac + last_frac > 1:
        raise ValueError("segment fractions must lie in (0, 1) and not overlap")
    a = x[: int(math.floor(first_frac * n))]
    b = x[n - int(math.floor(last_frac * n)) :]
    se2 = spectrum0(a) / len(a) + spectrum0(b) / len(b)
    if not se2 > 0:
        raise UndefinedZError("zero spectral density")
    return float((a.mean() - b.mean()) / math.sqrt(se2))


# --------------------------------------------------------------------------
# accuracy metrics


def pmse(draws, truth) -> float:
    d = np.asarray(draws, dtype=float)
    if d.size == 0:
        raise ValueError("need at least one draw")
    return float(np.mean((d - truth) ** 2))


def _posterior_mean(position_draws):
    d = np.asarray(position_draws, dtype=float)
    return d.mean(axis=0) if d.ndim == 3 else d


def mspe_missing(position_draws, truth) -> float:
    """Sum over unobserved points of the squared distance from the posterior mean to the truth.

    ``position_draws`` is either draws ``(k, n, 2)`` or posterior means ``(n, 2)``.
    """
    if truth is None:
        raise UnavailableTruthError("true positions are not available")
    diff = _posterior_mean(position_draws) - np.asarray(truth, dtype=float)
    return float(np.sum(diff * diff))


def ci_width_stats(draws, level=0.95):
    """Credible interval width; for multi-dimensional draws (draw axis first) the mean width."""
    lo, hi = credible_interval(draws, level)
    w = np.asarray(hi - lo)
    return float(w) if w.ndim == 0 else float(w.mean())


@dataclass(frozen=True)
class MotilityError:
    mse: float
    sse: float
    mean_error: float  # signed mean of (estimate - reference)
    n_cells: int


def _region_mask(grid, mask=None, radius=None, center=None):
    m = grid.active.copy()
    if mask is not None:
        m &= np.asarray(mask, dtype=bool).reshape(m.shape)
    if radius is not None:
        c = grid.cell_centers()
        cx, cy = center if center is not None else (
            grid.origin[0] + grid.nx * grid.cell / 2, grid.origin[1] + grid.ny * grid.cell / 2)
        m &= np.hypot(c[..., 0] - cx, c[..., 1] - cy) <= radius
    return m


def motility_mse(m_hat, m_ref, log_scale=True, mask=None, radius=None, center=None) -> MotilityError:
    if not m_hat.same_grid(m_ref):
        raise GridMismatchError("motility surfaces are on different grids")
    sel = _region_mask(m_hat, mask, radius, center)
    a, b = m_hat.values[sel], m_ref.values[sel]
    if log_scale:
        a, b = np.log(a), np.log(b)
    d = a - b
    sse = float(d @ d)
    n = int(d.size)
    return MotilityError(sse / n if n else float("nan"), sse, float(d.mean()) if n else float("nan"), n)


@dataclass(frozen=True)
class GradientMetrics:
    msd: float
    mean_angle_error: float
    mean_magnitude_error: float
    n_cells: int
    n_zero_reference: int


def _wrap(a):
    return np.pi - np.mod(np.pi - a, 2 * np.pi)


def gradient_vector_metrics(p_hat, p_ref, mask=None, radius=None, center=None) -> GradientMetrics:
    """Compare negative-gradient vectors cell by cell.

    MSD is the mean squared distance between vector tips; angle errors are signed,
    wrapped to (-pi, pi], and skip cells where the reference vector is zero.
    """
    if not p_hat.same_grid(p_ref):
        raise GridMismatchError("potential surfaces are on different grids")
    sel = _region_mask(p_hat, mask, radius, center)
    gh = -p_hat.gradient_field()[sel]
    gr = -p_ref.gradient_field()[sel]
    if gh.shape[0] == 0:
        return GradientMetrics(float("nan"), float("nan"), float("nan"), 0, 0)
    msd = float(np.mean(np.sum((gh - gr) ** 2, axis=1)))
    mag = float(np.mean(np.linalg.norm(gh, axis=1) - np.linalg.norm(gr, axis=1)))
    nz = np.any(gr != 0, axis=1)
    ang = _wrap(np.arctan2(gh[nz, 1], gh[nz, 0]) - np.arctan2(gr[nz, 1], gr[nz, 0]))
    mean_ang = float(ang.mean()) if ang.size else float("nan")
    return GradientMetrics(msd, mean_ang, mag, int(gh.shape[0]), int((~nz).sum()))


# --------------------------------------------------------------------------
# per-fit summaries and design comparison


@dataclass
class FitSummary:
    replicate: int
    design: str
    geweke: dict
    converged: bool
    ci: dict
    covers: dict
    ci_width: dict
    pmse: dict
    mspe: float
    mspe_mean: float
    missing_ci_width: float
    acceptance: dict = field(default_factory=dict)

    @property
    def covers_all(self) -> bool:
        return all(v is True for v in self.covers.values())

    def row(self) -> dict:
        out = {"replicate": self.replicate, "design": self.design, "converged": self.converged,
               "covers_all": self.covers_all}
        for p in PARAMS:
            out[f"geweke_{p}"] = self.geweke[p]
            out[f"ci_lo_{p}"], out[f"ci_hi_{p}"] = self.ci[p]
            out[f"covers_{p}"] = self.covers[p]
            out[f"ci_width_{p}"] = self.ci_width[p]
            out[f"pmse_{p}"] = self.pmse[p]
        out["mspe"] = self.mspe
        out["mspe_mean"] = self.mspe_mean
        out["missing_ci_width"] = self.missing_ci_width
        return out


def summarize_fit(draws: PosteriorDraws, truth: dict, replicate=0, design="", unobserved_truth=None,
                  level=0.95, geweke_on_sigma2=True) -> FitSummary:
    """Metrics for one chain. ``truth`` maps alpha, beta, sigma2 to true values (None in real-data mode)."""
    gw, ci, cov, wid, pm = {}, {}, {}, {}, {}
    for p in PARAMS:
        x = draws.parameter(p)
        gname = p if (p != "sigma2" or geweke_on_sigma2) else "sigma"
        try:
            gw[p] = geweke_z(draws.parameter(gname))
        except UndefinedZError:
            gw[p] = float("nan")
        lo, hi = credible_interval(x, level)
        ci[p] = (float(lo), float(hi))
        wid[p] = float(hi - lo)
        if truth is None:
            cov[p], pm[p] = None, float("nan")
        else:
            cov[p] = bool(lo <= truth[p] <= hi)
            pm[p] = pmse(x, truth[p])
    converged = all(abs(z) < 3 for z in gw.values())
    n_miss = draws.position_mean.shape[0]
    if unobserved_truth is not None and n_miss:
        mspe = mspe_missing(draws.position_mean, unobserved_truth)
        mspe_mean = mspe / n_miss
    else:
        mspe = mspe_mean = float("nan")
    miss_w = ci_width_stats(draws.position_draws, level) if n_miss and len(draws.position_draws) >= 2 else float("nan")
    return FitSummary(replicate, design, gw, converged, ci, cov, wid, pm, mspe, mspe_mean, miss_w,
                      dict(draws.acceptance))


def _summary_table(fits):
    out = {"count": len(fits)}
    if not fits:
        return out
    out["coverage_all"] = float(np.mean([f.covers_all for f in fits]))
    for p in PARAMS:
        out[f"coverage_{p}"] = float(np.mean([f.covers[p] for f in fits]))
        out[f"mean_ci_width_{p}"] = float(np.mean([f.ci_width[p] for f in fits]))
        out[f"mean_pmse_{p}"] = float(np.mean([f.pmse[p] for f in fits]))
    ms = np.array([f.mspe for f in fits])
    out["mean_mspe"] = float(np.mean(ms))
    out["median_mspe"] = float(np.median(ms))
    out["mean_missing_ci_width"] = float(np.mean([f.missing_ci_width for f in fits]))
    return out


@dataclass
class DesignComparisonReport:
    fits: list  # FitSummary, sorted by (replicate, design)
    designs: tuple

    def by_replicate(self) -> dict:
        out = {}
        for f in self.fits:
            out.setdefault(f.replicate, {})[f.design] = f
        return out

    def subset(self, name) -> dict:
        """Fits per design in a named subset.

        ``all``; ``converged`` (each design's own converged fits);
        ``both_converged`` (replicates where every design converged);
        ``best_case`` (replicates where every design converged and covered all parameters).
        """
        reps = self.by_replicate()
        out = {d: [] for d in self.designs}
        for r in sorted(reps):
            fs = reps[r]
            complete = all(d in fs for d in self.designs)
            for d in self.designs:
                f = fs.get(d)
                if f is None:
                    continue
                if name == "all":
                    keep = True
                elif name == "converged":
                    keep = f.converged
                elif name == "both_converged":
                    keep = complete and all(fs[e].converged for e in self.designs)
                elif name == "best_case":
                    keep = complete and all(fs[e].converged and fs[e].covers_all for e in self.designs)
                else:
                    raise ValueError(f"unknown subset {name!r}")
                if keep:
                    out[d].append(f)
        return out

    def summaries(self) -> dict:
        names = ("all", "converged", "both_converged", "best_case")
        out = {}
        for n in names:
            sub = self.subset(n)
            out[n] = {d: _summary_table(sub[d]) for d in self.designs}
        out["convergence_rate"] = {
            d: float(np.mean([f.converged for f in self.subset("all")[d]])) if self.subset("all")[d] else float("nan")
            for d in self.designs
        }
        return out

    def rows(self) -> list:
        return [f.row() for f in self.fits]

    def to_dict(self) -> dict:
        return {"designs": list(self.designs), "summaries": self.summaries(),
                "fits": [asdict(f) for f in self.fits]}


def design_compare(summaries, designs=None) -> DesignComparisonReport:
    """Assemble per-fit summaries into a report; order is by replicate, then design order."""
    summaries = list(summaries)
    if designs is None:
        designs = tuple(dict.fromkeys(f.design for f in summaries))
    rank = {d: i for i, d in enumerate(designs)}
    fits = sorted(summaries, key=lambda f: (f.replicate, rank[f.design]))
    return DesignComparisonReport(fits, tuple(designs))
