import numpy as np
import pytest
from hypothesis import given, strategies as st

from larimove.errors import DegenerateStepError, SingularFitError
from larimove.ols import build_whitened_quadratic, build_whitened_sign, fit_ols
from larimove.rng import substream
from larimove.sim import MovementPath, QuadraticSimParams, simulate_quadratic_ar2, simulate_sign_drift


def _irregular_path(seed, n=40):
    g = np.random.default_rng(seed)
    t = np.cumsum(g.uniform(0.2, 2.0, n))
    return MovementPath("p", t, g.normal(size=(n, 2)))


@given(st.integers(0, 10_000), st.floats(-1, 1), st.floats(0.05, 2))
def test_whitening_identity(seed, alpha, beta):
    """Rows reproduce the recursion residual divided by h0^(1/2) h1."""
    p = _irregular_path(seed)
    rows = build_whitened_quadratic(p)
    resid = rows.response - rows.design @ np.array([alpha, beta])
    r, t = p.positions, p.times
    h = np.diff(t)
    h0, h1 = h[:-1, None], h[1:, None]
    mean = r[1:-1] + (h1 / h0) * (r[1:-1] - r[:-2]) - beta * h1 * (r[1:-1] - r[:-2]) - 2 * alpha * h0 * h1 * r[:-2]
    expect = (r[2:] - mean) / (np.sqrt(h0) * h1)
    assert np.allclose(resid, expect.ravel(), atol=1e-10)


def test_rows_interleaved_and_pooled():
    p = _irregular_path(1, 10)
    rows = build_whitened_quadratic([p, p])
    assert len(rows) == 2 * 2 * 8
    assert np.array_equal(rows.response[:16], rows.response[16:])


def test_zero_noise_exact_recovery():
    q = QuadraticSimParams(sigma=0.0, n=60, init=((3.0, -1.0), (2.5, 0.5)))
    fit = fit_ols(build_whitened_quadratic(simulate_quadratic_ar2(q, 0)))
    assert fit.estimates["alpha"] == pytest.approx(0.08, abs=1e-9)
    assert fit.estimates["beta"] == pytest.approx(0.4, abs=1e-9)


def test_large_sample_consistency():
    q = QuadraticSimParams(n=50_000)
    fit = fit_ols(build_whitened_quadratic(simulate_quadratic_ar2(q, substream(1))))
    for k, v in {"alpha": 0.08, "beta": 0.4, "sigma2": 0.25}.items():
        lo, hi = fit.ci[k]
        assert lo <= v <= hi or abs(fit.estimates[k] - v) < 0.01


def test_sign_model_recovers_k():
    p = simulate_sign_drift(0.5, 3.0, (281.0, 434.0), 0.0, 0.1, 300, ((200.0, 300.0), (200.5, 300.0)), 0)
    fit = fit_ols(build_whitened_sign(p, (281.0, 434.0)))
    assert fit.estimates["beta"] == pytest.approx(0.5, rel=1e-6)
    assert fit.estimates["k"] == pytest.approx(3.0, rel=1e-6)


def test_singular_and_degenerate():
    straight = MovementPath("a", np.arange(10.0), np.zeros((10, 2)))
    with pytest.raises(SingularFitError):
        fit_ols(build_whitened_quadratic(straight))
    with pytest.raises(DegenerateStepError):
        build_whitened_quadratic(MovementPath("a", [0, 1], np.zeros((2, 2))))


def test_interval_level_nesting():
    fit90 = fit_ols(build_whitened_quadratic(simulate_quadratic_ar2(QuadraticSimParams(), 3)), level=0.9)
    fit99 = fit_ols(build_whitened_quadratic(simulate_quadratic_ar2(QuadraticSimParams(), 3)), level=0.99)
    for k in ("alpha", "beta", "sigma2"):
        assert fit99.ci[k][0] <= fit90.ci[k][0] and fit90.ci[k][1] <= fit99.ci[k][1]
