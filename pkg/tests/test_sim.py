import numpy as np
import pytest
from hypothesis import given, strategies as st

from larimove.errors import DomainExitError, ParameterError
from larimove.rng import substream
from larimove.sim import (
    ModelParams,
    MovementPath,
    QuadraticSimParams,
    ar2_stationary_variance,
    quadratic_model,
    simulate_em,
    simulate_quadratic_ar2,
    simulate_sign_drift,
    stationary_moments,
    step_size_stats,
)
from larimove.surfaces import Constant, LinearX, Quadratic, StepY, rasterize


def test_zero_noise_hand_recursion():
    p = ModelParams(beta=0.4, sigma=0.0, potential=Quadratic(0.2), motility=Constant(1.0))
    path = simulate_em(p, np.arange(4.0), ((1, 1), (1, 1)), 0)
    assert np.allclose(path.positions[2], [0.84, 0.84], atol=1e-12)
    assert np.allclose(path.positions[3], [0.584, 0.584], atol=1e-12)


def test_drift_free_velocity_decays_by_friction():
    p = ModelParams(beta=0.4, sigma=0.0, potential=Constant(0.0))
    path = simulate_em(p, np.arange(6.0), ((0, 0), (1, 0)), 0)
    v = np.diff(path.positions[:, 0])
    assert np.allclose(v[1:] / v[:-1], 0.6)


def test_ar2_matches_em_with_shared_noise():
    q = QuadraticSimParams(n=300)
    eps = substream(1, "eps").standard_normal((q.n - 2, 2))
    a = simulate_quadratic_ar2(q, 0, noise=eps)
    b = simulate_em(quadratic_model(q), q.h * np.arange(q.n), q.init, 0, noise=eps)
    assert np.max(np.abs(a.positions - b.positions)) <= 1e-12 * max(1.0, np.abs(a.positions).max())


def test_ar2_matches_em_zero_noise_h2():
    q = QuadraticSimParams(sigma=0.0, h=0.5, n=50, init=((1.0, -2.0), (1.2, -1.5)))
    a = simulate_quadratic_ar2(q, 0)
    b = simulate_em(quadratic_model(q), q.h * np.arange(q.n), q.init, 0)
    assert np.allclose(a.positions, b.positions, atol=1e-12)


def test_seed_determinism():
    q = QuadraticSimParams()
    assert simulate_quadratic_ar2(q, substream(5, 1)) == simulate_quadratic_ar2(q, substream(5, 1))
    assert simulate_quadratic_ar2(q, substream(5, 1)) != simulate_quadratic_ar2(q, substream(5, 2))


def test_stationary_moments_closed_form():
    vp, vv = stationary_moments(0.4, 0.08, 0.5)
    assert vp == pytest.approx(1.953125, rel=1e-12)
    assert vv == pytest.approx(0.3125, rel=1e-12)
    assert stationary_moments(0.4, 0.08, 0.0) == (0.0, 0.0)
    with pytest.raises(ParameterError):
        stationary_moments(-0.4, 0.08, 0.5)


@given(st.floats(0.05, 3), st.floats(0.01, 2), st.floats(0.01, 3), st.floats(0.1, 10))
def test_stationary_moments_scaling(beta, alpha, sigma, c):
    vp, vv = stationary_moments(beta, alpha, sigma)
    assert vp == pytest.approx(sigma**2 / (4 * alpha * beta), rel=1e-8)
    assert vv == pytest.approx(sigma**2 / (2 * beta), rel=1e-8)
    vp2, vv2 = stationary_moments(beta, alpha, c * sigma)
    assert vp2 == pytest.approx(c * c * vp, rel=1e-8)
    assert vv2 == pytest.approx(c * c * vv, rel=1e-8)


def test_discrete_variance_at_unit_step():
    # the h = 1 recursion has its own stationary variance; check it by simulation
    q = QuadraticSimParams(n=200_000)
    x = simulate_quadratic_ar2(q, substream(9, "long")).positions[1000:]
    v = ar2_stationary_variance(q)
    assert x.var(axis=0) == pytest.approx([v, v], rel=0.08)


def test_small_step_variance_approaches_continuous():
    q = QuadraticSimParams(h=0.05, n=400_000)
    x = simulate_quadratic_ar2(q, substream(9, "fine")).positions[20000:]
    assert x.var() == pytest.approx(stationary_moments(0.4, 0.08, 0.5)[0], rel=0.1)
    assert ar2_stationary_variance(q) == pytest.approx(1.953125, rel=0.05)


def test_xy_increments_uncorrelated():
    q = QuadraticSimParams(n=100_002)
    d = np.diff(simulate_quadratic_ar2(q, substream(2)).positions, axis=0)
    assert abs(np.corrcoef(d[:, 0], d[:, 1])[0, 1]) < 0.05


def test_sign_drift_cases():
    # pure friction
    p = simulate_sign_drift(0.4, 0.0, (0, 0), 0.0, 1.0, 6, ((0, 0), (1, 1)), 0)
    v = np.diff(p.positions, axis=0)
    assert np.allclose(v[1:] / v[:-1], 0.6)
    # starting at the attractor, first step is pure noise N(0, h^3 sigma^2)
    draws = np.array([
        simulate_sign_drift(0.4, 3.0, (281, 434), 0.5, 2.0, 3, ((281, 434), (281, 434)), substream(3, i)).positions[2]
        for i in range(4000)
    ]) - [281, 434]
    assert draws.mean(axis=0) == pytest.approx([0, 0], abs=0.1)
    assert draws.var(axis=0) == pytest.approx([8 * 0.25] * 2, rel=0.1)


def test_domain_exit_reports_step():
    grid = rasterize(LinearX(1.0), 5, 5, (0.0, 0.0), 1.0)
    p = ModelParams(beta=0.4, sigma=0.0, potential=grid)
    with pytest.raises(DomainExitError) as e:
        simulate_em(p, np.arange(50.0), ((2.5, 2.5), (2.5, 2.5)), 0)
    assert e.value.step > 0


def test_path_validation():
    with pytest.raises(ValueError):
        MovementPath("a", [0.0, 0.0], [[0, 0], [1, 1]])
    with pytest.raises(ValueError):
        MovementPath("a", [0.0], [[0, 0]])


def test_step_size_stats():
    p = simulate_em(ModelParams(0.4, 0.5, LinearX(1.0), StepY(5.0, 20.0)), np.arange(1000.0), ((0, 0), (0, 0)),
                    substream(4, "cap"))
    groups = step_size_stats(p, StepY(5.0, 20.0))
    assert set(groups) <= {5.0, 20.0}
    if len(groups) == 2:
        assert groups[20.0].mean > groups[5.0].mean
    assert sum(g.count for g in groups.values()) == len(p) - 2
    single = step_size_stats(p, Constant(1.0))
    assert list(single) == [1.0]


def test_zero_noise_zero_drift_steps_equal():
    p = ModelParams(beta=1e-12, sigma=0.0, potential=Constant(0.0))
    path = simulate_em(p, np.arange(10.0), ((0, 0), (1, 1)), 0)
    steps = np.linalg.norm(np.diff(path.positions, axis=0), axis=1)
    assert np.allclose(steps, steps[0], rtol=1e-9)
