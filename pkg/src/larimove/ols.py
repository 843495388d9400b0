"""Least-squares fits of the whitened discretized model.

Dividing the second-difference equation by h0^(1/2) gives a linear model with
iid N(0, sigma^2) errors:

    (r2 - r1)/(h1 h0^(1/2)) - (r1 - r0)/h0^(3/2)
        = theta * drift_column - beta * (r1 - r0)/h0^(1/2) + sigma * eps

For the quadratic potential the drift column is -2 h0^(1/2) r0 and its
coefficient is alpha = k beta. For the sign potential it is
-h0^(1/2) sign(r0 - a) and its coefficient is k beta as well; ``k`` is
reported as coefficient / beta.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import DegenerateStepError, SingularFitError
from .sim import MovementPath


@dataclass(frozen=True, eq=False)
class WhitenedRows:
    response: np.ndarray
    design: np.ndarray
    columns: tuple = ("alpha", "beta")
    model: str = "quadratic"

    def __len__(self):
        return len(self.response)


def _as_paths(paths):
    return [paths] if isinstance(paths, MovementPath) else list(paths)


def _triples(path: MovementPath):
    if len(path) < 3:
        raise DegenerateStepError("need at least three observations")
    t, r = path.times, path.positions
    h = np.diff(t)
    if np.any(h <= 0):
        raise DegenerateStepError("duplicate or decreasing times")
    h0, h1 = h[:-1, None], h[1:, None]
    return r[:-2], r[1:-1], r[2:], h0, h1


def _whiten(paths, drift_column, columns, model):
    resp, X = [], []
    for path in _as_paths(paths):
        r0, r1, r2, h0, h1 = _triples(path)
        sh0 = np.sqrt(h0)
        y = (r2 - r1) / (h1 * sh0) - (r1 - r0) / (h0 * sh0)
        c_drift = drift_column(r0, sh0)
        c_beta = -(r1 - r0) / sh0
        # x and y rows interleaved per triple
        resp.append(y.ravel())
        X.append(np.column_stack([c_drift.ravel(), c_beta.ravel()]))
    return WhitenedRows(np.concatenate(resp), np.concatenate(X), columns, model)


def build_whitened_quadratic(paths) -> WhitenedRows:
    return _whiten(paths, lambda r0, sh0: -2.0 * sh0 * r0, ("alpha", "beta"), "quadratic")


def build_whitened_sign(paths, attractor) -> WhitenedRows:
    a = np.asarray(attractor, dtype=float)
    return _whiten(paths, lambda r0, sh0: -sh0 * np.sign(r0 - a), ("kbeta", "beta"), "sign")


@dataclass
class OLSFit:
    model: str
    estimates: dict
    ci: dict
    sigma2: float
    n_rows: int
    level: float = 0.95
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "estimates": self.estimates,
            "ci": {k: list(v) for k, v in self.ci.items()},
            "sigma2": self.sigma2,
            "n_rows": self.n_rows,
            "level": self.level,
        }


def fit_ols(rows: WhitenedRows, level=0.95) -> OLSFit:
    """OLS with t intervals for the coefficients and a chi-square interval for sigma^2."""
    X, y = rows.design, rows.response
    n = len(y)
    if n < 3:
        raise SingularFitError("need at least three rows")
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise SingularFitError("design matrix is rank deficient")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    df = n - X.shape[1]
    rss = float(resid @ resid)
    s2 = rss / df
    cov = s2 * np.linalg.inv(X.T @ X)
    se = np.sqrt(np.diag(cov))
    tq = stats.t.ppf(0.5 + level / 2, df)
    est = {name: float(c) for name, c in zip(rows.columns, coef)}
    ci = {name: (float(c - tq * s), float(c + tq * s)) for name, c, s in zip(rows.columns, coef, se)}
    a = 1 - level
    ci["sigma2"] = (rss / stats.chi2.ppf(1 - a / 2, df), rss / stats.chi2.ppf(a / 2, df))
    est["sigma2"] = s2
    if rows.model == "sign":
        est["k"] = est["kbeta"] / est["beta"]
    return OLSFit(rows.model, est, ci, s2, n, level, {"se": dict(zip(rows.columns, se.tolist()))})
