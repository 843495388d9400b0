"""Three-step penalized estimator of gridded potential and motility surfaces.

Per observation triple and axis the model row is

    g = v * beta + m(r0) * a' gamma + eps,     eps ~ N(0, h0 m(r0)^2)   (sigma = 1)

with g the change in finite-difference velocity, v = r0 - r1, gamma = -beta p
over active cells, and ``a`` the centered raster difference at r0 scaled by h0.

1. penalized least squares for (beta, gamma) with m absorbed into gamma;
2. a penalized grid smoother of log(resid^2 / h) gives m-hat;
3. rows divided by m-hat(r0) h0^(1/2) (the A block by h0^(1/2) only) and refit.

The smoothing parameter of steps 1 and 3 is chosen by prediction error on a
held-out set of triples.

Gauge: a constant added to gamma on a connected component of the grid changes
neither the rows nor the penalty, so the normal equations are singular. One
reference cell per component is pinned to zero; the potential estimate is
centered afterwards anyway.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy import linalg, optimize
from scipy.sparse.linalg import splu

from .errors import ComponentError, OutOfDomainError, RankError
from .rng import as_generator
from .sim import MovementPath
from .surfaces import GriddedSurface, car_penalty, center_surface, grid_components

# -E[log chi^2_1] = -(digamma(1/2) + log 2)
LOG_CHISQ1_BIAS = 1.2703628454614782

DEFAULT_LOG_LAMBDAS = tuple(range(-8, 9))


@dataclass(frozen=True, eq=False)
class RegressionRows:
    g: np.ndarray
    v: np.ndarray
    A: sp.csr_matrix
    h: np.ndarray
    cell: np.ndarray  # active-cell index of r0
    triple: np.ndarray
    direction: np.ndarray  # 0 = x, 1 = y
    path: np.ndarray  # index of the source path
    time: np.ndarray  # time of r0
    holdout: np.ndarray | None = None

    def __len__(self):
        return len(self.g)

    @property
    def n_cells(self) -> int:
        return self.A.shape[1]

    @property
    def E(self) -> sp.csr_matrix:
        return sp.hstack([sp.csr_matrix(self.v[:, None]), self.A], format="csr")

    def subset(self, mask) -> "RegressionRows":
        idx = np.flatnonzero(mask)
        return RegressionRows(
            self.g[idx], self.v[idx], self.A[idx], self.h[idx], self.cell[idx], self.triple[idx],
            self.direction[idx], self.path[idx], self.time[idx],
            None if self.holdout is None else self.holdout[idx],
        )


def _as_paths(paths):
    return [paths] if isinstance(paths, MovementPath) else list(paths)


def build_rows(paths, grid: GriddedSurface, fd_step=None, outside="error") -> RegressionRows:
    """Stack x and y rows for every interior triple, ordered by path, time, direction.

    ``A`` carries +h0/(2 d) at the cell containing r0 + d e_u and -h0/(2 d) at
    the cell containing r0 - d e_u (d = ``fd_step``, one cell side by default).
    A missing neighbour makes the difference one-sided (+-h0/d); both missing
    leaves the row empty. ``outside="skip"`` drops triples whose r0 is not in an
    active cell instead of raising.
    """
    d = grid.cell if fd_step is None else float(fd_step)
    rows_g, rows_v, rows_h, rows_cell, rows_trip, rows_dir, rows_path, rows_time = ([] for _ in range(8))
    data, ri, ci = [], [], []
    offset = 0
    trip_offset = 0
    for p_idx, path in enumerate(_as_paths(paths)):
        if len(path) < 3:
            raise ValueError(f"path {path.id} has fewer than three observations")
        r, t = path.positions, path.times
        h = np.diff(t)
        r0, r1, r2 = r[:-2], r[1:-1], r[2:]
        h0, h1 = h[:-1], h[1:]
        cells = grid.active_cell(r0)
        ok = cells >= 0
        if not ok.all():
            if outside == "error":
                k = int(np.flatnonzero(~ok)[0])
                raise OutOfDomainError(f"path {path.id}: observation at time {t[k]:g} is outside the active grid")
            r0, r1, r2, h0, h1, cells = r0[ok], r1[ok], r2[ok], h0[ok], h1[ok], cells[ok]
            times0 = t[:-2][ok]
        else:
            times0 = t[:-2]
        m = len(cells)
        if m == 0:
            continue
        g = (r2 - r1) / h1[:, None] - (r1 - r0) / h0[:, None]
        v = r0 - r1
        for axis in range(2):
            e = np.zeros(2)
            e[axis] = d
            cp = grid.active_cell(r0 + e)
            cm = grid.active_cell(r0 - e)
            hp, hm = cp >= 0, cm >= 0
            row = offset + 2 * np.arange(m) + axis
            both = hp & hm
            only_p = hp & ~hm
            only_m = hm & ~hp
            w = h0 / (2 * d)
            for sel, cols, vals in (
                (both, cp, w), (both, cm, -w),
                (only_p, cp, 2 * w), (only_p, cells, -2 * w),
                (only_m, cells, 2 * w), (only_m, cm, -2 * w),
            ):
                ri.append(row[sel])
                ci.append(cols[sel])
                data.append(vals[sel])
        rows_g.append(g.ravel())
        rows_v.append(v.ravel())
        rows_h.append(np.repeat(h0, 2))
        rows_cell.append(np.repeat(cells, 2))
        rows_trip.append(np.repeat(trip_offset + np.arange(m), 2))
        rows_dir.append(np.tile([0, 1], m))
        rows_path.append(np.full(2 * m, p_idx))
        rows_time.append(np.repeat(times0, 2))
        offset += 2 * m
        trip_offset += m
    J = grid.n_active
    A = sp.csr_matrix(
        (np.concatenate(data) if data else [], (np.concatenate(ri) if ri else [], np.concatenate(ci) if ci else [])),
        shape=(offset, J),
    )
    A.sum_duplicates()
    cat = (lambda xs, dt=float: np.concatenate(xs) if xs else np.empty(0, dtype=dt))
    return RegressionRows(
        cat(rows_g), cat(rows_v), A, cat(rows_h), cat(rows_cell, np.int64), cat(rows_trip, np.int64),
        cat(rows_dir, np.int64), cat(rows_path, np.int64), cat(rows_time),
    )


def holdout_split(rows: RegressionRows, fraction: float, rng):
    """Assign a ``fraction`` of triples (both axes together) to the holdout set."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie strictly between 0 and 1")
    triples = np.unique(rows.triple)
    n_hold = int(round(fraction * triples.size))
    gen = as_generator(rng)
    held = np.sort(gen.choice(triples, size=n_hold, replace=False)) if n_hold else np.empty(0, dtype=np.int64)
    mask = np.isin(rows.triple, held)
    train = rows.subset(~mask)
    hold = rows.subset(mask)
    if len(train) < rows.n_cells + 1:
        warnings.warn(
            f"training set has {len(train)} rows for {rows.n_cells + 1} unknowns; the fit is penalty dominated",
            RuntimeWarning,
        )
    return train, hold


# --------------------------------------------------------------------------
# penalized solves


def _components_from_penalty(Q: sp.spmatrix) -> np.ndarray:
    from scipy.sparse.csgraph import connected_components

    _, labels = connected_components(Q[1:, 1:] != 0, directed=False)
    return labels


def penalized_solve(E: sp.spmatrix, g, Q: sp.spmatrix, lam: float, labels=None):
    """Solve (E'E + lam Q) theta = E'g with one gamma cell per component pinned at 0.

    Returns ``(theta, stats)``. ``labels`` gives the grid component of each cell
    (derived from ``Q`` when omitted).
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    E = sp.csr_matrix(E)
    if labels is None:
        labels = _components_from_penalty(Q)
    n = E.shape[1]
    refs = 1 + np.unique(labels, return_index=True)[1]
    keep = np.setdiff1d(np.arange(n), refs)
    M = (E.T @ E + lam * Q).tocsc()
    rhs = E.T @ np.asarray(g, dtype=float)
    Msub = M[keep][:, keep].tocsc()
    try:
        lu = splu(Msub)
        sol = lu.solve(rhs[keep])
    except RuntimeError:
        sol = None
    if sol is None or not np.all(np.isfinite(sol)):
        informed = np.asarray(abs(E[:, 1:]).sum(axis=0)).ravel() > 0
        bad = sorted({int(labels[i]) for i in np.flatnonzero(~informed) if (i + 1) not in set(refs)})
        raise RankError(f"penalized system is singular; grid components without data: {bad}")
    theta = np.zeros(n)
    theta[keep] = sol
    resid_norm = float(np.linalg.norm(Msub @ sol - rhs[keep]))
    stats = {
        "solver": "sparse LU (SuperLU), reference cell per component pinned",
        "unknowns": int(keep.size),
        "components": int(refs.size),
        "normal_eq_residual": resid_norm,
    }
    return theta, stats


def step1_fit(rows: RegressionRows, Q: sp.spmatrix, lam: float, labels=None):
    """Preliminary fit with constant motility; returns ``(beta, gamma, residuals)``."""
    E = rows.E
    theta, _ = penalized_solve(E, rows.g, Q, lam, labels)
    resid = rows.g - E @ theta
    return float(theta[0]), theta[1:], resid


def step3_refit(rows: RegressionRows, m_hat: GriddedSurface, Q: sp.spmatrix, lam: float, labels=None):
    """Refit after dividing g, v by m-hat(r0) h0^(1/2) and A by h0^(1/2); returns ``(beta, gamma)``."""
    m_rows = m_hat.active_values[rows.cell]
    if np.any(~(m_rows > 0)):
        raise ValueError("motility estimate must be positive at every row cell")
    sh = np.sqrt(rows.h)
    scale = 1.0 / (m_rows * sh)
    A_t = sp.diags(1.0 / sh) @ rows.A
    E_t = sp.hstack([sp.csr_matrix((rows.v * scale)[:, None]), A_t], format="csr")
    theta, _ = penalized_solve(E_t, rows.g * scale, Q, lam, labels)
    return float(theta[0]), theta[1:]


# --------------------------------------------------------------------------
# step 2: log squared-residual smoother


@dataclass
class SmootherFit:
    values: np.ndarray  # fitted log(resid^2/h) per active cell
    lam: float
    gcv: float
    edf: float


def smooth_log_variance(y, cells, grid: GriddedSurface, log_lam_bounds=(-10.0, 20.0)) -> SmootherFit:
    """Penalized piecewise-constant smoother of ``y`` over active cells.

    Minimizes sum (y_i - f[cell_i])^2 + lam f' Q f with the first-difference
    penalty ``Q``; ``lam`` minimizes generalized cross-validation. Cells without
    data are eliminated exactly (Kron reduction), so they take the harmonic
    extension of the fitted field.
    """
    y = np.asarray(y, dtype=float)
    cells = np.asarray(cells)
    J = grid.n_active
    Q = car_penalty(grid, include_beta=False).tocsr()
    counts = np.bincount(cells, minlength=J).astype(float)
    sums = np.bincount(cells, weights=y, minlength=J)
    obs = counts > 0
    labels = grid_components(grid)
    empty = sorted(set(np.unique(labels)) - set(np.unique(labels[obs])))
    if empty:
        raise ComponentError(f"grid components {empty} contain no residuals")
    O, Em = np.flatnonzero(obs), np.flatnonzero(~obs)
    Q_OO = Q[O][:, O].toarray()
    if Em.size:
        Q_EE = Q[Em][:, Em].tocsc()
        Q_EO = Q[Em][:, O].toarray()
        X = splu(Q_EE).solve(Q_EO)
        Qt = Q_OO - Q_EO.T @ X
    else:
        X = None
        Qt = Q_OO
    Qt = 0.5 * (Qt + Qt.T)
    d = counts[O]
    dm = 1.0 / np.sqrt(d)
    theta, U = linalg.eigh(dm[:, None] * Qt * dm[None, :])
    theta = np.maximum(theta, 0.0)
    b = sums[O]
    bt = U.T @ (dm * b)
    N = y.size
    ybar = b / d
    within = float(np.sum(y * y) - np.sum(b * b / d))

    def fit(loglam):
        lam = math.exp(loglam)
        f = dm * (U @ (bt / (1.0 + lam * theta)))
        tr = float(np.sum(1.0 / (1.0 + lam * theta)))
        rss = within + float(np.sum(d * (ybar - f) ** 2))
        return f, tr, rss

    def gcv(loglam):
        _, tr, rss = fit(loglam)
        return N * rss / max(N - tr, 1e-12) ** 2

    lo, hi = log_lam_bounds
    grid_pts = np.linspace(lo, hi, 61)
    scores = np.array([gcv(x) for x in grid_pts])
    k = int(np.argmin(scores))
    a, c = grid_pts[max(k - 1, 0)], grid_pts[min(k + 1, len(grid_pts) - 1)]
    best = optimize.minimize_scalar(gcv, bounds=(a, c), method="bounded", options={"xatol": 1e-6})
    loglam = best.x if best.fun <= scores[k] else grid_pts[k]
    f_O, tr, _ = fit(loglam)
    f = np.empty(J)
    f[O] = f_O
    if Em.size:
        f[Em] = -X @ f_O
    return SmootherFit(f, math.exp(loglam), float(gcv(loglam)), tr)


def step2_motility(residuals, cells, h, grid: GriddedSurface, floor=1e-12, bias_correction=True) -> GriddedSurface:
    """Motility surface from squared residuals.

    Smooths log(max(resid^2, floor)/h) over the grid and returns
    m = exp((fit + c)/2) per cell, where ``c`` = -E[log chi^2_1] when
    ``bias_correction`` (log of a squared Gaussian is biased low by that much).
    """
    r = np.asarray(residuals, dtype=float)
    if not np.all(np.isfinite(r)):
        raise ValueError("residuals must be finite")
    y = np.log(np.maximum(r * r, floor) / np.asarray(h, dtype=float))
    sm = smooth_log_variance(y, cells, grid)
    shift = LOG_CHISQ1_BIAS if bias_correction else 0.0
    return grid.with_active_values(np.exp(0.5 * (sm.values + shift)))


# --------------------------------------------------------------------------
# full pipeline


@dataclass
class ThreeStepFit:
    lam: float
    beta1: float
    gamma1: np.ndarray
    m_hat: GriddedSurface
    beta_star: float
    gamma_star: np.ndarray


def three_step(train: RegressionRows, grid: GriddedSurface, lam: float, Q=None, labels=None,
               bias_correction=True) -> ThreeStepFit:
    Q = car_penalty(grid) if Q is None else Q
    labels = grid_components(grid) if labels is None else labels
    b1, g1, resid = step1_fit(train, Q, lam, labels)
    m_hat = step2_motility(resid, train.cell, train.h, grid, bias_correction=bias_correction)
    b3, g3 = step3_refit(train, m_hat, Q, lam, labels)
    return ThreeStepFit(lam, b1, g1, m_hat, b3, g3)


def holdout_mspe(fit: ThreeStepFit, holdout: RegressionRows) -> float:
    """Mean squared error of g on held-out rows, predicted as v beta* + m-hat(r0) a' gamma*."""
    if len(holdout) == 0:
        return float("nan")
    m_rows = fit.m_hat.active_values[holdout.cell]
    pred = holdout.v * fit.beta_star + m_rows * (holdout.A @ fit.gamma_star)
    err = holdout.g - pred
    return float(err @ err / len(err))


def select_lambda(train: RegressionRows, holdout: RegressionRows, grid: GriddedSurface, lambdas=None,
                  bias_correction=True):
    """Run the 3-step fit for each lambda and pick the lowest holdout MSPE.

    Ties go to the larger lambda. Returns ``(best_lambda, mspe, fits)`` with
    ``mspe`` and ``fits`` aligned to ``lambdas``.
    """
    lambdas = [math.exp(x) for x in DEFAULT_LOG_LAMBDAS] if lambdas is None else list(lambdas)
    if not lambdas:
        raise ValueError("lambda grid is empty")
    Q = car_penalty(grid)
    labels = grid_components(grid)
    fits, mspe = [], []
    for lam in lambdas:
        f = three_step(train, grid, lam, Q, labels, bias_correction)
        fits.append(f)
        mspe.append(holdout_mspe(f, holdout))
    mspe = np.asarray(mspe)
    if np.all(np.isnan(mspe)):
        best = int(np.argmax(lambdas))
    else:
        lowest = np.nanmin(mspe)
        ties = [i for i in range(len(lambdas)) if mspe[i] == lowest]
        best = max(ties, key=lambda i: lambdas[i])
    return lambdas[best], mspe, fits


@dataclass
class PLSFit:
    beta_hat: float
    gamma_hat: np.ndarray
    p_hat: GriddedSurface
    m_hat: GriddedSurface
    lam: float
    lambdas: list
    holdout_mspe: np.ndarray
    n_train: int
    n_holdout: int
    solver: dict = field(default_factory=dict)

    def report(self) -> dict:
        return {
            "beta": self.beta_hat,
            "lambda": self.lam,
            "log_lambda": math.log(self.lam),
            "mspe_curve": [
                {"lambda": lam, "log_lambda": math.log(lam), "mspe": float(m)}
                for lam, m in zip(self.lambdas, self.holdout_mspe)
            ],
            "n_train_rows": self.n_train,
            "n_holdout_rows": self.n_holdout,
            "solver": self.solver,
        }


def potential_from_gamma(gamma, beta, grid: GriddedSurface) -> GriddedSurface:
    return center_surface(grid.with_active_values(-np.asarray(gamma) / beta))


def fit_full(paths, grid: GriddedSurface, lambda_grid=None, seed=0, holdout_fraction=0.2, outside="error",
             fd_step=None, bias_correction=True) -> PLSFit:
    """Holdout split, lambda selection and the final 3-step fit at the chosen lambda."""
    from .rng import substream

    rows = build_rows(paths, grid, fd_step=fd_step, outside=outside)
    train, hold = holdout_split(rows, holdout_fraction, substream(seed, "holdout"))
    lam, mspe, fits = select_lambda(train, hold, grid, lambda_grid, bias_correction)
    best = fits[[f.lam for f in fits].index(lam)]
    Q = car_penalty(grid)
    _, stats = penalized_solve(
        step3_design(train, best.m_hat), step3_response(train, best.m_hat), Q, lam, grid_components(grid)
    )
    return PLSFit(
        beta_hat=best.beta_star,
        gamma_hat=best.gamma_star,
        p_hat=potential_from_gamma(best.gamma_star, best.beta_star, grid),
        m_hat=best.m_hat,
        lam=lam,
        lambdas=[f.lam for f in fits],
        holdout_mspe=mspe,
        n_train=len(train),
        n_holdout=len(hold),
        solver=stats,
    )


def step3_design(rows: RegressionRows, m_hat: GriddedSurface) -> sp.csr_matrix:
    sh = np.sqrt(rows.h)
    scale = 1.0 / (m_hat.active_values[rows.cell] * sh)
    return sp.hstack([sp.csr_matrix((rows.v * scale)[:, None]), sp.diags(1.0 / sh) @ rows.A], format="csr")


def step3_response(rows: RegressionRows, m_hat: GriddedSurface) -> np.ndarray:
    return rows.g / (m_hat.active_values[rows.cell] * np.sqrt(rows.h))
