"""Bayesian fit of (alpha, beta, sigma) with imputation of unobserved positions.

The augmented path puts observed and unobserved times on one time axis. Given
the two previous positions, each position is Gaussian with

    mean = r1 + (h1/h0)(r1 - r0) - beta h1 (r1 - r0) - 2 alpha h0 h1 r0
    sd   = sigma h0^(1/2) h1            (per axis)

Priors: sigma ~ InverseGamma, beta ~ Exponential, alpha ~ Normal, and the
first two positions uniform over the box spanned by the observed coordinates.

Sampler: each sweep makes one adaptive random-walk update of the block
(alpha, beta, log sigma), then updates every unobserved position with a 2-D
random-walk step. A position at index k only enters the transition densities
k-2, k-1 and k, so positions whose indices differ by a multiple of three are
conditionally independent; the sweep updates the three residue classes in turn,
each class in one vectorized pass.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ParameterError
from .ols import build_whitened_quadratic, fit_ols
from .errors import LariError
from .rng import as_generator
from .sampling import Subsample
from .sim import MovementPath

LOG_2PI = math.log(2 * math.pi)


@dataclass(frozen=True)
class Priors:
    sigma_shape: float = 1.0
    sigma_scale: float = 1.0
    beta_rate: float = 1.0
    alpha_mean: float = 0.0
    alpha_sd: float = 10.0
    init_box: tuple | None = None  # (xmin, xmax, ymin, ymax) for the first two positions

    def __post_init__(self):
        if min(self.sigma_shape, self.sigma_scale, self.beta_rate, self.alpha_sd) <= 0:
            raise ParameterError("prior shape, scale, rate and sd must be positive")

    def widened(self, factor=10.0) -> "Priors":
        """Multiply prior variances by ``factor`` (InverseGamma: scale by sqrt(factor))."""
        s = math.sqrt(factor)
        return replace(self, alpha_sd=self.alpha_sd * s, beta_rate=self.beta_rate / s, sigma_scale=self.sigma_scale * s)

    def log_prior(self, alpha, beta, sigma) -> float:
        if not (beta > 0 and sigma > 0):
            return -math.inf
        a, b = self.sigma_shape, self.sigma_scale
        lp = a * math.log(b) - math.lgamma(a) - (a + 1) * math.log(sigma) - b / sigma
        lp += math.log(self.beta_rate) - self.beta_rate * beta
        z = (alpha - self.alpha_mean) / self.alpha_sd
        lp += -0.5 * z * z - math.log(self.alpha_sd) - 0.5 * LOG_2PI
        return lp


def observed_box(positions) -> tuple:
    r = np.asarray(positions, dtype=float)
    return (float(r[:, 0].min()), float(r[:, 0].max()), float(r[:, 1].min()), float(r[:, 1].max()))


def _box_logpdf(box, pts) -> float:
    xmin, xmax, ymin, ymax = box
    pts = np.atleast_2d(pts)
    inside = (pts[:, 0] >= xmin) & (pts[:, 0] <= xmax) & (pts[:, 1] >= ymin) & (pts[:, 1] <= ymax)
    if not inside.all():
        return -math.inf
    wx, wy = xmax - xmin, ymax - ymin
    if wx <= 0 or wy <= 0:
        return 0.0  # degenerate box: treat as flat
    return -len(pts) * (math.log(wx) + math.log(wy))


class _Geometry:
    """Per-transition step constants for a time axis."""

    def __init__(self, times):
        t = np.asarray(times, dtype=float)
        h = np.diff(t)
        if np.any(h <= 0):
            raise ParameterError("times must be strictly increasing")
        self.h0 = h[:-1, None]
        self.h1 = h[1:, None]
        self.ratio = self.h1 / self.h0
        self.weight = (1.0 / (self.h0 * self.h1**2)).ravel()  # 1 / sd_base^2
        self.log_sd_base_sum = float(np.sum(np.log(np.sqrt(self.h0) * self.h1)))
        self.n_trans = len(h) - 1

    def parts(self, R):
        """D, U, W with residual e = D + beta U + alpha W (each shape (n-2, 2))."""
        R0, R1, R2 = R[:-2], R[1:-1], R[2:]
        d1 = R1 - R0
        D = R2 - R1 - self.ratio * d1
        U = self.h1 * d1
        W = 2.0 * self.h0 * self.h1 * R0
        return D, U, W


def _log_lik_from_residual(e, geom, sigma):
    q = float(np.sum(geom.weight * np.sum(e * e, axis=1)))
    nt = geom.n_trans
    return -nt * LOG_2PI - 2 * geom.log_sd_base_sum - 2 * nt * math.log(sigma) - q / (2 * sigma**2)


def log_joint(alpha, beta, sigma, path: MovementPath, priors: Priors = Priors()) -> float:
    """Log prior plus log transition densities of a complete (augmented) path."""
    lp = priors.log_prior(alpha, beta, sigma)
    if lp == -math.inf:
        return lp
    box = priors.init_box if priors.init_box is not None else observed_box(path.positions)
    lp += _box_logpdf(box, path.positions[:2])
    if lp == -math.inf:
        return lp
    geom = _Geometry(path.times)
    D, U, W = geom.parts(path.positions)
    return lp + _log_lik_from_residual(D + beta * U + alpha * W, geom, sigma)


def log_joint_grad(alpha, beta, sigma, path: MovementPath, priors: Priors = Priors()) -> np.ndarray:
    """Analytic gradient of :func:`log_joint` in (alpha, beta, sigma)."""
    geom = _Geometry(path.times)
    D, U, W = geom.parts(path.positions)
    e = D + beta * U + alpha * W
    w = geom.weight[:, None]
    s2 = sigma**2
    q = float(np.sum(w * e * e))
    d_alpha = -float(np.sum(w * e * W)) / s2 - (alpha - priors.alpha_mean) / priors.alpha_sd**2
    d_beta = -float(np.sum(w * e * U)) / s2 - priors.beta_rate
    a, b = priors.sigma_shape, priors.sigma_scale
    d_sigma = -2 * geom.n_trans / sigma + q / sigma**3 - (a + 1) / sigma + b / sigma**2
    return np.array([d_alpha, d_beta, d_sigma])


@dataclass(frozen=True)
class MCMCConfig:
    adapt_iters: int = 20000
    sample_iters: int = 20000
    seed: int = 0
    target_param_accept: float = 0.234
    target_position_accept: float = 0.44
    init_param_scale: tuple = (0.01, 0.02, 0.05)  # alpha, beta, log sigma
    init_position_scale: float = 0.25
    adapt_start: int = 200  # diagonal proposals before switching to empirical covariance
    adapt_decay: float = 0.6  # Robbins-Monro step t^-decay for the log proposal scale
    cov_epsilon: float = 1e-10
    position_thin: int = 1

    def __post_init__(self):
        if self.adapt_iters < 0 or self.sample_iters < 1:
            raise ParameterError("adapt_iters >= 0 and sample_iters >= 1 required")
        if self.position_thin < 1:
            raise ParameterError("position_thin must be >= 1")


@dataclass(eq=False)
class PosteriorDraws:
    alpha: np.ndarray
    beta: np.ndarray
    sigma: np.ndarray
    times: np.ndarray  # full augmented time axis
    unobserved_index: np.ndarray  # indices into ``times``
    position_draws: np.ndarray  # (kept draws, n_unobserved, 2), thinned
    position_mean: np.ndarray  # mean over every sampling iteration
    acceptance: dict = field(default_factory=dict)
    proposal: dict = field(default_factory=dict)
    stuck: bool = False

    @property
    def sigma2(self) -> np.ndarray:
        return self.sigma**2

    @property
    def unobserved_times(self) -> np.ndarray:
        return self.times[self.unobserved_index]

    def parameter(self, name) -> np.ndarray:
        return {"alpha": self.alpha, "beta": self.beta, "sigma": self.sigma, "sigma2": self.sigma2}[name]

    def __len__(self):
        return len(self.alpha)


def _chol2(c):
    """Cholesky factors of a stack of 2x2 SPD matrices given as (..., 3) = (c00, c01, c11)."""
    l00 = np.sqrt(c[..., 0])
    l10 = c[..., 1] / l00
    l11 = np.sqrt(np.maximum(c[..., 2] - l10**2, 0.0))
    return l00, l10, l11


class MWGSampler:
    """Adaptive Metropolis-within-Gibbs sampler on one augmented path."""

    def __init__(self, times, positions, fixed, priors: Priors, config: MCMCConfig, rng, init_params):
        self.times = np.asarray(times, dtype=float)
        self.R = np.array(positions, dtype=float)
        self.fixed = np.asarray(fixed, dtype=bool)
        self.priors = priors
        self.config = config
        self.rng = as_generator(rng)
        self.geom = _Geometry(self.times)
        self.box = priors.init_box if priors.init_box is not None else observed_box(self.R[self.fixed])
        self.free = np.flatnonzero(~self.fixed)
        self.colors = [self.free[self.free % 3 == c] for c in range(3)]
        self.theta = np.array(init_params, dtype=float)  # alpha, beta, sigma
        if not self.theta[1] > 0 or not self.theta[2] > 0:
            raise ParameterError("initial beta and sigma must be positive")
        n = len(self.times)
        # parameter block adaptation state (alpha, beta, log sigma)
        self.p_logscale = 0.0
        self.p_mean = np.zeros(3)
        self.p_m2 = np.zeros((3, 3))
        self.p_count = 0
        self.p_chol = np.diag(np.asarray(config.init_param_scale, dtype=float))
        # per-site 2x2 adaptation state
        self.s_logscale = np.zeros(n)
        self.s_mean = np.zeros((n, 2))
        self.s_m2 = np.zeros((n, 3))
        self.s_count = 0
        self.s_chol = None  # (l00, l10, l11) once empirical covariances are in use
        self.n_accept_params = 0
        self.n_accept_sites = 0
        self.n_prop_sites = 0

    # densities -------------------------------------------------------------

    def _param_logpost(self, alpha, beta, sigma, stats):
        lp = self.priors.log_prior(alpha, beta, sigma)
        if lp == -math.inf:
            return lp
        sDD, sDU, sDW, sUU, sUW, sWW = stats
        q = sDD + 2 * beta * sDU + 2 * alpha * sDW + beta * beta * sUU + 2 * alpha * beta * sUW + alpha * alpha * sWW
        nt = self.geom.n_trans
        return lp - 2 * nt * math.log(sigma) - q / (2 * sigma * sigma)

    def _stats(self):
        D, U, W = self.geom.parts(self.R)
        w = self.geom.weight[:, None]
        wD, wU = w * D, w * U
        return (
            float(np.sum(wD * D)),
            float(np.sum(wD * U)),
            float(np.sum(wD * W)),
            float(np.sum(wU * U)),
            float(np.sum(wU * W)),
            float(np.sum(w * W * W)),
        )

    def _trans_quad(self, R):
        alpha, beta, _ = self.theta
        D, U, W = self.geom.parts(R)
        e = D + beta * U + alpha * W
        return self.geom.weight * np.sum(e * e, axis=1)

    def position_log_ratio(self, sites, proposal):
        """Log acceptance ratios for moving each of ``sites`` (one residue class) to ``proposal``."""
        sigma = self.theta[2]
        cur = self._trans_quad(self.R)
        R_new = self.R.copy()
        R_new[sites] = proposal
        new = self._trans_quad(R_new)
        dq = np.zeros(len(self.times) + 2)
        dq[2:] = np.concatenate([new - cur, [0.0, 0.0]])
        # site k touches transitions k-2, k-1, k -> padded indices k, k+1, k+2
        delta = dq[sites] + dq[sites + 1] + dq[sites + 2]
        out = -delta / (2 * sigma * sigma)
        early = sites < 2
        if np.any(early):
            for j in np.flatnonzero(early):
                if _box_logpdf(self.box, proposal[j]) == -math.inf:
                    out[j] = -math.inf
        return out

    # updates -------------------------------------------------------------------

    def _update_params(self, adapting, t):
        stats = self._stats()
        alpha, beta, sigma = self.theta
        cur = self._param_logpost(alpha, beta, sigma, stats) + math.log(sigma)
        z = self.rng.standard_normal(3)
        step = math.exp(self.p_logscale) * (self.p_chol @ z)
        a2, b2, ls2 = alpha + step[0], beta + step[1], math.log(sigma) + step[2]
        accepted = False
        if b2 > 0:
            s2 = math.exp(ls2)
            new = self._param_logpost(a2, b2, s2, stats) + ls2
            if math.log(self.rng.random()) < new - cur:
                self.theta[:] = (a2, b2, s2)
                accepted = True
        else:
            self.rng.random()  # keep the stream aligned
        if accepted:
            self.n_accept_params += 1
        if adapting:
            acc = 1.0 if accepted else 0.0
            self.p_logscale += (t + 1) ** -self.config.adapt_decay * (acc - self.config.target_param_accept)
            x = np.array([self.theta[0], self.theta[1], math.log(self.theta[2])])
            self.p_count += 1
            d = x - self.p_mean
            self.p_mean += d / self.p_count
            self.p_m2 += np.outer(d, x - self.p_mean)
            if self.p_count >= self.config.adapt_start:
                cov = self.p_m2 / (self.p_count - 1) * (2.38**2 / 3) + self.config.cov_epsilon * np.eye(3)
                try:
                    self.p_chol = np.linalg.cholesky(cov)
                except np.linalg.LinAlgError:
                    pass
        return accepted

    def _update_positions(self, adapting, t):
        cfg = self.config
        for sites in self.colors:
            if sites.size == 0:
                continue
            z = self.rng.standard_normal((sites.size, 2))
            scale = np.exp(self.s_logscale[sites])
            if self.s_chol is None:
                step = (cfg.init_position_scale * scale)[:, None] * z
            else:
                l00, l10, l11 = (c[sites] for c in self.s_chol)
                step = scale[:, None] * np.column_stack([l00 * z[:, 0], l10 * z[:, 0] + l11 * z[:, 1]])
            proposal = self.R[sites] + step
            logr = self.position_log_ratio(sites, proposal)
            u = self.rng.random(sites.size)
            acc = np.log(u) < logr
            self.R[sites[acc]] = proposal[acc]
            self.n_accept_sites += int(acc.sum())
            self.n_prop_sites += sites.size
            if adapting:
                self.s_logscale[sites] += (t + 1) ** -cfg.adapt_decay * (acc - cfg.target_position_accept)
        if adapting and self.free.size:
            f = self.free
            self.s_count += 1
            x = self.R[f]
            d = x - self.s_mean[f]
            self.s_mean[f] += d / self.s_count
            d2 = x - self.s_mean[f]
            self.s_m2[f] += np.column_stack([d[:, 0] * d2[:, 0], d[:, 0] * d2[:, 1], d[:, 1] * d2[:, 1]])
            if self.s_count >= cfg.adapt_start:
                c = self.s_m2 / (self.s_count - 1) * (2.38**2 / 2)
                c[:, 0] += cfg.cov_epsilon
                c[:, 2] += cfg.cov_epsilon
                self.s_chol = _chol2(c)

    def run(self) -> PosteriorDraws:
        cfg = self.config
        for t in range(cfg.adapt_iters):
            self._update_params(True, t)
            self._update_positions(True, t)
        stuck = cfg.adapt_iters > 0 and (self.n_accept_params == 0 or (self.free.size and self.n_accept_sites == 0))
        if stuck:
            warnings.warn("no proposal was accepted during adaptation; chain may be stuck", RuntimeWarning)
        self.n_accept_params = self.n_accept_sites = self.n_prop_sites = 0
        n = cfg.sample_iters
        draws = np.empty((n, 3))
        free = self.free
        kept = []
        total = np.zeros((free.size, 2))
        for t in range(n):
            self._update_params(False, t)
            self._update_positions(False, t)
            draws[t] = self.theta
            pos = self.R[free]
            total += pos
            if t % cfg.position_thin == 0:
                kept.append(pos.copy())
        pos_draws = np.array(kept) if kept else np.empty((0, free.size, 2))
        return PosteriorDraws(
            alpha=draws[:, 0].copy(),
            beta=draws[:, 1].copy(),
            sigma=draws[:, 2].copy(),
            times=self.times.copy(),
            unobserved_index=free.copy(),
            position_draws=pos_draws,
            position_mean=total / n,
            acceptance={
                "params": self.n_accept_params / n,
                "positions": self.n_accept_sites / self.n_prop_sites if self.n_prop_sites else float("nan"),
            },
            proposal={
                "param_chol": (math.exp(self.p_logscale) * self.p_chol).tolist(),
            },
            stuck=bool(stuck),
        )


def initial_state(subsample: Subsample):
    """Full time axis, linearly interpolated starting positions and the fixed mask."""
    obs = subsample.observed
    times = np.union1d(obs.times, np.asarray(subsample.unobserved_times, dtype=float))
    fixed = np.isin(times, obs.times)
    R = np.column_stack([np.interp(times, obs.times, obs.positions[:, d]) for d in range(2)])
    return times, R, fixed


def initial_params(observed: MovementPath):
    try:
        fit = fit_ols(build_whitened_quadratic(observed))
        alpha = fit.estimates["alpha"]
        beta = fit.estimates["beta"]
        sigma = math.sqrt(fit.sigma2)
    except LariError:
        return 0.1, 0.5, 1.0
    if not np.isfinite([alpha, beta, sigma]).all():
        return 0.1, 0.5, 1.0
    return float(alpha), float(min(max(beta, 0.05), 5.0)), float(max(sigma, 1e-3))


def run_mwg(subsample: Subsample, priors: Priors = Priors(), config: MCMCConfig = MCMCConfig(), rng=None,
            init_params=None) -> PosteriorDraws:
    """Sample alpha, beta, sigma and the unobserved positions of ``subsample``.

    ``rng`` defaults to a stream seeded by ``config.seed``.
    """
    if len(subsample.observed) < 2:
        raise ParameterError("need at least two observed positions")
    times, R, fixed = initial_state(subsample)
    if priors.init_box is None:
        priors = replace(priors, init_box=observed_box(subsample.observed.positions))
    if init_params is None:
        init_params = initial_params(subsample.observed) if len(subsample.observed) >= 3 else (0.1, 0.5, 1.0)
    gen = as_generator(config.seed if rng is None else rng)
    return MWGSampler(times, R, fixed, priors, config, gen, init_params).run()


def credible_interval(draws, level=0.95):
    """Equal-tailed interval; quantiles interpolate linearly between order statistics
    placed at plotting positions (i - 1/2)/n."""
    x = np.asarray(draws, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two draws")
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    a = (1 - level) / 2
    lo, hi = np.quantile(x, [a, 1 - a], axis=0, method="hazen")
    return lo, hi
