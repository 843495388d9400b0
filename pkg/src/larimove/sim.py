"""Simulation of movement paths from the discretized velocity SDE.

The second-order recursion works directly on positions,

    r[t+2] = r[t+1] + (h1/h0)(r[t+1] - r[t])
             + beta h0 h1 (mu(r[t]) - (r[t+1] - r[t])/h0)
             + c(r[t]) h0^(1/2) h1 eps[t],

with h0 = t[t+1] - t[t], h1 = t[t+2] - t[t+1], mu = m * (-grad p) and c = sigma * m.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, signal

from .errors import DomainExitError, OutOfDomainError, ParameterError
from .rng import as_generator
from .surfaces import AbsSign, Constant, GriddedSurface, Quadratic, drift, evaluate, noise_scale


@dataclass(frozen=True)
class ModelParams:
    beta: float
    sigma: float
    potential: object
    motility: object = Constant(1.0)

    def __post_init__(self):
        if not self.beta > 0:
            raise ParameterError("beta must be positive")
        if self.sigma < 0:
            raise ParameterError("sigma must be non-negative")


@dataclass(frozen=True, eq=False)
class MovementPath:
    id: str
    times: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        r = np.array(self.positions, dtype=float).reshape(-1, 2)
        if t.ndim != 1 or len(t) != len(r):
            raise ValueError("times and positions must have matching length")
        if len(t) < 2:
            raise ValueError("a path needs at least two observations")
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        t.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "positions", r)

    def __len__(self):
        return len(self.times)

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.times)

    def __eq__(self, other):
        return (
            isinstance(other, MovementPath)
            and self.id == other.id
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.positions, other.positions)
        )


@dataclass(frozen=True)
class QuadraticSimParams:
    """Constant-step quadratic-potential simulation; ``alpha = k * beta``."""

    beta: float = 0.4
    alpha: float = 0.08
    sigma: float = 0.5
    h: float = 1.0
    n: int = 500
    init: tuple = ((1.0, 1.0), (1.0, 1.0))

    def __post_init__(self):
        if self.n < 3:
            raise ParameterError("n must be at least 3")
        if not self.h > 0:
            raise ParameterError("h must be positive")
        if not self.beta > 0:
            raise ParameterError("beta must be positive")

    @property
    def k(self) -> float:
        return self.alpha / self.beta


def _standard_normals(rng, n):
    return as_generator(rng).standard_normal((n, 2))


def simulate_em(params: ModelParams, times, init, rng, *, path_id="0", noise=None) -> MovementPath:
    """Simulate positions at ``times`` from the irregular-step recursion.

    ``init`` gives the positions at the first two times. ``noise`` overrides the
    standard normal draws (shape ``(len(times) - 2, 2)``).
    """
    t = np.asarray(times, dtype=float)
    n = len(t)
    if n < 3:
        raise ParameterError("need at least three times")
    h = np.diff(t)
    if np.any(h <= 0):
        raise ParameterError("times must be strictly increasing")
    eps = _standard_normals(rng, n - 2) if noise is None else np.asarray(noise, dtype=float)
    r = np.empty((n, 2))
    r[0], r[1] = init[0], init[1]
    gridded = isinstance(params.potential, GriddedSurface) or isinstance(params.motility, GriddedSurface)
    for s in (0, 1):
        if gridded:
            _check_inside(params, r[s], s)
    for tau in range(n - 2):
        h0, h1 = h[tau], h[tau + 1]
        r0, r1 = r[tau], r[tau + 1]
        try:
            mu = drift(params.potential, params.motility, r0)
            c = noise_scale(params.motility, params.sigma, r0)
        except OutOfDomainError:
            raise DomainExitError(tau, r0) from None
        vel = (r1 - r0) / h0
        r[tau + 2] = r1 + h1 * vel + params.beta * h0 * h1 * (mu - vel) + c * np.sqrt(h0) * h1 * eps[tau]
        if gridded:
            _check_inside(params, r[tau + 2], tau + 2)
    return MovementPath(path_id, t, r)


def _check_inside(params, pos, step):
    try:
        evaluate(params.motility, pos)
        evaluate(params.potential, pos)
    except OutOfDomainError:
        raise DomainExitError(step, pos) from None


def simulate_quadratic_ar2(p: QuadraticSimParams, rng, *, path_id="0", noise=None) -> MovementPath:
    """Constant-step AR(2) form of the quadratic-potential model.

    r[t+2] = (2 - beta h) r[t+1] + (beta h - 1 - 2 beta k h^2) r[t] + h^(3/2) sigma eps[t]
    """
    eps = _standard_normals(rng, p.n - 2) if noise is None else np.asarray(noise, dtype=float)
    a1 = 2.0 - p.beta * p.h
    a2 = p.beta * p.h - 1.0 - 2.0 * p.alpha * p.h**2
    scale = p.h**1.5 * p.sigma
    r1, r2 = np.asarray(p.init[0], dtype=float), np.asarray(p.init[1], dtype=float)
    out = np.empty((p.n, 2))
    out[0], out[1] = r1, r2
    a = [1.0, -a1, -a2]
    for d in range(2):
        zi = signal.lfiltic([1.0], a, y=[r2[d], r1[d]])
        out[2:, d], _ = signal.lfilter([1.0], a, scale * eps[:, d], zi=zi)
    return MovementPath(path_id, p.h * np.arange(p.n), out)


def simulate_sign_drift(beta, k, attractor, sigma, h, n, init, rng, *, path_id="0") -> MovementPath:
    """Constant-step simulation with drift -k sign(r - a) and unit motility."""
    if n < 3:
        raise ParameterError("n must be at least 3")
    params = ModelParams(beta=beta, sigma=sigma, potential=AbsSign(k, tuple(attractor)), motility=Constant(1.0))
    return simulate_em(params, h * np.arange(n), init, rng, path_id=path_id)


def quadratic_model(p: QuadraticSimParams) -> ModelParams:
    """The ModelParams equivalent of a QuadraticSimParams."""
    return ModelParams(beta=p.beta, sigma=p.sigma, potential=Quadratic(p.k), motility=Constant(1.0))


def stationary_moments(beta, alpha, sigma):
    """Stationary variances of position and velocity (per axis) of the linear SDE.

    Solves A S + S A' + B B' = 0 with A = [[0, 1], [-2 alpha, -beta]], B = (0, sigma)'.
    """
    if not beta > 0 or not alpha > 0:
        raise ParameterError("beta and alpha must be positive")
    if sigma < 0:
        raise ParameterError("sigma must be non-negative")
    A = np.array([[0.0, 1.0], [-2.0 * alpha, -beta]])
    BB = np.array([[0.0, 0.0], [0.0, sigma**2]])
    S = linalg.solve_continuous_lyapunov(A, -BB)
    return float(S[0, 0]), float(S[1, 1])


def ar2_stationary_variance(p: QuadraticSimParams) -> float:
    """Exact stationary variance of the discrete AR(2) recursion (per axis)."""
    a1 = 2.0 - p.beta * p.h
    a2 = p.beta * p.h - 1.0 - 2.0 * p.alpha * p.h**2
    s2 = p.h**3 * p.sigma**2
    return s2 * (1 - a2) / ((1 + a2) * ((1 - a2) ** 2 - a1**2))


@dataclass
class StepGroup:
    motility: float
    count: int
    mean: float
    hist: np.ndarray
    edges: np.ndarray


def step_size_stats(path: MovementPath, motility, bins=20) -> dict:
    """Step lengths |r[t] - r[t-1]| grouped by the motility at r[t-2].

    Returns ``{motility value: StepGroup}``; every group shares the same bin edges.
    """
    r = path.positions
    if len(r) < 3:
        raise ParameterError("path needs at least three observations")
    steps = np.linalg.norm(r[2:] - r[1:-1], axis=1)
    m = np.atleast_1d(np.asarray(evaluate(motility, r[:-2]), dtype=float))
    if m.shape != steps.shape:
        m = np.full(steps.shape, float(m[0]))
    lo, hi = float(steps.min()), float(steps.max())
    if hi == lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    out = {}
    for val in np.unique(m):
        s = steps[m == val]
        hist, _ = np.histogram(s, bins=edges)
        out[float(val)] = StepGroup(float(val), int(s.size), float(s.mean()), hist, edges)
    return out
