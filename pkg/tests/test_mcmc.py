import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from larimove.mcmc import (
    MCMCConfig,
    MWGSampler,
    Priors,
    credible_interval,
    initial_state,
    log_joint,
    log_joint_grad,
    run_mwg,
)
from larimove.rng import substream
from larimove.sampling import Subsample, subsample_lari, subsample_regular
from larimove.sim import MovementPath, QuadraticSimParams, simulate_quadratic_ar2

BOX = Priors(init_box=(-10.0, 10.0, -10.0, 10.0))


def _short_path(seed=0, n=60):
    return simulate_quadratic_ar2(QuadraticSimParams(n=n), substream(seed, "mcmc-test"))


def test_support_violations():
    p = _short_path()
    assert log_joint(0.08, -0.1, 0.5, p, BOX) == -math.inf
    assert log_joint(0.08, 0.4, 0.0, p, BOX) == -math.inf
    outside = Priors(init_box=(100.0, 101.0, 100.0, 101.0))
    assert log_joint(0.08, 0.4, 0.5, p, outside) == -math.inf


def test_gaussian_mode_density():
    alpha, beta = 0.08, 0.4
    r0, r1 = np.array([1.0, 2.0]), np.array([1.5, 1.0])
    r2 = r1 + (r1 - r0) - beta * (r1 - r0) - 2 * alpha * r0
    p = MovementPath("m", [0.0, 1.0, 2.0], np.array([r0, r1, r2]))
    lj = log_joint(alpha, beta, 1.0, p, BOX)
    rest = BOX.log_prior(alpha, beta, 1.0) - 2 * 2 * math.log(20.0)
    assert lj - rest == pytest.approx(-math.log(2 * math.pi), abs=1e-12)


@given(st.integers(0, 10_000), st.floats(-0.5, 0.5), st.floats(0.05, 2.0), st.floats(0.1, 3.0))
def test_gradient_matches_finite_differences(seed, alpha, beta, sigma):
    g = np.random.default_rng(seed)
    t = np.cumsum(g.uniform(0.3, 2.0, 25))
    p = MovementPath("fd", t, g.normal(size=(25, 2)))
    pri = Priors(init_box=(-50, 50, -50, 50))
    grad = log_joint_grad(alpha, beta, sigma, p, pri)
    x0 = np.array([alpha, beta, sigma])
    for i in range(3):
        eps = 1e-6 * max(1.0, abs(x0[i]))
        up, dn = x0.copy(), x0.copy()
        up[i] += eps
        dn[i] -= eps
        fd = (log_joint(*up, p, pri) - log_joint(*dn, p, pri)) / (2 * eps)
        assert fd == pytest.approx(grad[i], rel=1e-5, abs=1e-5 * max(1.0, abs(log_joint(*x0, p, pri))) * 1e-3)


def test_credible_interval_rule():
    lo, hi = credible_interval(np.arange(1, 101), 0.9)
    assert (lo, hi) == pytest.approx((5.5, 95.5))
    assert credible_interval(np.full(50, 3.25)) == (3.25, 3.25)
    x = np.concatenate([np.linspace(-2, 2, 1001)])
    lo, hi = credible_interval(x, 0.95)
    assert lo == pytest.approx(-hi)
    with pytest.raises(ValueError):
        credible_interval([1.0])
    with pytest.raises(ValueError):
        credible_interval([1.0, 2.0], 1.0)


def test_null_proposal_log_ratio_is_zero():
    path = _short_path(n=40)
    sub = subsample_lari(path, 5, substream(1))
    times, R, fixed = initial_state(sub)
    s = MWGSampler(times, R, fixed, Priors(), MCMCConfig(adapt_iters=0, sample_iters=1), 0, (0.1, 0.4, 0.5))
    for sites in s.colors:
        assert np.all(s.position_log_ratio(sites, s.R[sites].copy()) == 0.0)


def test_position_ratio_matches_log_joint_difference():
    path = _short_path(n=40)
    sub = subsample_regular(path, 5)
    times, R, fixed = initial_state(sub)
    pri = Priors(init_box=(-20, 20, -20, 20))
    s = MWGSampler(times, R, fixed, pri, MCMCConfig(adapt_iters=0, sample_iters=1), 0, (0.08, 0.4, 0.5))
    sites = s.colors[1]
    prop = s.R[sites] + np.random.default_rng(0).normal(scale=0.3, size=(sites.size, 2))
    ratios = s.position_log_ratio(sites, prop)
    base = log_joint(0.08, 0.4, 0.5, MovementPath("a", times, s.R), pri)
    for k, site in enumerate(sites[:5]):
        R2 = s.R.copy()
        R2[site] = prop[k]
        assert ratios[k] == pytest.approx(log_joint(0.08, 0.4, 0.5, MovementPath("a", times, R2), pri) - base, abs=1e-8)


def test_draws_shape_support_and_reproducibility():
    sub = subsample_lari(_short_path(n=80), 5, substream(2))
    cfg = MCMCConfig(adapt_iters=300, sample_iters=200, position_thin=5)
    a = run_mwg(sub, config=cfg, rng=substream(3, "chain"))
    b = run_mwg(sub, config=cfg, rng=substream(3, "chain"))
    assert len(a) == 200
    assert np.all(a.beta > 0) and np.all(a.sigma > 0)
    assert np.array_equal(a.alpha, b.alpha) and np.array_equal(a.position_draws, b.position_draws)
    assert a.position_draws.shape == (40, len(sub.unobserved_times), 2)
    assert np.array_equal(a.unobserved_times, sub.unobserved_times)


def test_no_unobserved_positions():
    obs = _short_path(n=50)
    d = run_mwg(Subsample(obs, np.empty(0)), config=MCMCConfig(adapt_iters=200, sample_iters=200), rng=1)
    assert d.position_mean.shape == (0, 2)
    assert math.isnan(d.acceptance["positions"])
    assert 0 < d.acceptance["params"] < 1


@pytest.mark.slow
def test_prior_reproduction_without_data():
    """Two fixed points and no transitions: the parameter marginals are the priors."""
    obs = MovementPath("p", [0.0, 1.0], [[0.0, 0.0], [1.0, 1.0]])
    cfg = MCMCConfig(adapt_iters=5000, sample_iters=300_000)
    d = run_mwg(Subsample(obs, np.empty(0)), config=cfg, rng=substream(4, "prior"))
    thin = slice(None, None, 30)
    assert stats.kstest(d.alpha[thin], stats.norm(0, 10).cdf).pvalue > 0.01
    assert stats.kstest(d.beta[thin], stats.expon().cdf).pvalue > 0.01
    assert stats.kstest(d.sigma[thin], stats.invgamma(1, scale=1).cdf).pvalue > 0.01


@pytest.mark.slow
def test_xy_relabeling_gives_same_marginals():
    path = _short_path(seed=7, n=100)
    swapped = MovementPath(path.id, path.times, path.positions[:, ::-1])
    cfg = MCMCConfig(adapt_iters=3000, sample_iters=15_000)
    a = run_mwg(subsample_regular(path, 2), config=cfg, rng=substream(5, "a"))
    b = run_mwg(subsample_regular(swapped, 2), config=cfg, rng=substream(5, "b"))
    thin = slice(None, None, 50)
    for name in ("alpha", "beta", "sigma"):
        assert stats.ks_2samp(a.parameter(name)[thin], b.parameter(name)[thin]).pvalue > 0.01


@pytest.mark.slow
def test_lari_desk_chain_recovers_parameters():
    path = simulate_quadratic_ar2(QuadraticSimParams(), substream(21, "desk"))
    sub = subsample_lari(path, 5, substream(21, "lari"))
    d = run_mwg(sub, config=MCMCConfig(adapt_iters=5000, sample_iters=5000, position_thin=50), rng=substream(21, "m"))
    for name, truth in (("alpha", 0.08), ("beta", 0.4), ("sigma2", 0.25)):
        lo, hi = credible_interval(d.parameter(name))
        assert lo < truth * 2.5 and hi > truth / 2.5


def test_priors_validation_and_widening():
    with pytest.raises(ValueError):
        Priors(alpha_sd=0)
    w = Priors().widened(10)
    assert w.alpha_sd == pytest.approx(10 * math.sqrt(10))
    with pytest.raises(ValueError):
        MCMCConfig(sample_iters=0)
