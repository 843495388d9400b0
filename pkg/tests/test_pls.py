import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from larimove.errors import ComponentError, OutOfDomainError, RankError
from larimove.pls import (
    DEFAULT_LOG_LAMBDAS,
    build_rows,
    fit_full,
    holdout_split,
    penalized_solve,
    select_lambda,
    smooth_log_variance,
    step1_fit,
    step2_motility,
    step3_refit,
)
from larimove.rng import substream
from larimove.sim import ModelParams, MovementPath, simulate_em
from larimove.surfaces import Constant, LinearX, Quadratic, car_penalty, grid_components, rasterize

N = 10


def _grid(values=None, n=N, active=None):
    fn = Quadratic(0.05, (n / 2, n / 2)) if values is None else values
    return rasterize(fn, n, n, (0.0, 0.0), 1.0, active)


def _paths(grid, n_paths=6, n_steps=60, sigma=0.3, beta=0.5, seed=0, h=1.0, zero_noise=False):
    params = ModelParams(beta, sigma, grid, Constant(1.0))
    out = []
    for k in range(n_paths):
        g = substream(seed, "pls-paths", k)
        start = g.uniform(3.5, 6.5, 2)
        init = (start, start + g.normal(scale=0.2, size=2))
        times = h * np.arange(n_steps)
        noise = np.zeros((n_steps - 2, 2)) if zero_noise else None
        out.append(simulate_em(params, times, init, g, path_id=str(k), noise=noise))
    return out


def _neighbour_pairs(mask):
    ny, nx = mask.shape
    idx = -np.ones(mask.shape, dtype=int)
    idx[mask] = np.arange(mask.sum())
    pairs = []
    for j in range(ny):
        for i in range(nx):
            if not mask[j, i]:
                continue
            if i + 1 < nx and mask[j, i + 1]:
                pairs.append((idx[j, i], idx[j, i + 1]))
            if j + 1 < ny and mask[j + 1, i]:
                pairs.append((idx[j, i], idx[j + 1, i]))
    return pairs


def test_rows_per_triple_and_entries():
    grid = _grid(n=6)
    t = np.arange(5) * 2.0
    r = np.array([[2.5, 2.5], [2.6, 2.4], [2.7, 2.6], [2.9, 2.5], [3.1, 2.7]])
    rows = build_rows(MovementPath("a", t, r), grid)
    assert len(rows) == 6
    assert list(rows.direction) == [0, 1, 0, 1, 0, 1]
    assert set(np.unique(rows.A.data)) <= {-1.0, 1.0}
    assert np.all(np.diff(rows.A.indptr) == 2)
    g0 = (r[2] - r[1]) / 2 - (r[1] - r[0]) / 2
    assert rows.g[:2] == pytest.approx(g0)
    assert rows.v[:2] == pytest.approx(r[0] - r[1])


def test_boundary_rows_are_one_sided():
    grid = _grid(n=4)
    r = np.array([[0.5, 1.5], [0.6, 1.5], [0.7, 1.6]])
    rows = build_rows(MovementPath("a", [0, 1, 2], r), grid)
    x_row = rows.A[0].toarray().ravel()
    assert x_row[grid.active_cell(np.array([1.5, 1.5]))] == pytest.approx(1.0)
    assert x_row[grid.active_cell(np.array([0.5, 1.5]))] == pytest.approx(-1.0)


def test_raster_difference_of_linear_surface():
    """A gamma reproduces h0 times the exact gradient of a linear field off the edges."""
    grid = _grid(LinearX(0.7), n=8)
    paths = _paths(_grid(n=8), n_paths=2, n_steps=30, sigma=0.1)
    rows = build_rows(paths, grid)
    ag = rows.A @ grid.active_values
    ix = grid.active_centers()[rows.cell][:, 0]
    interior = (ix > 1) & (ix < 7)
    expect = np.where(rows.direction == 0, 0.7 * rows.h, 0.0)
    assert ag[interior] == pytest.approx(expect[interior], abs=1e-12)


def test_outside_rows_error_or_skip():
    grid = _grid(n=4)
    r = np.array([[0.5, 0.5], [1.5, 0.5], [5.0, 0.5], [2.5, 0.5], [2.0, 0.5]])
    path = MovementPath("a", np.arange(5.0), r)
    with pytest.raises(OutOfDomainError):
        build_rows(path, grid)
    rows = build_rows(path, grid, outside="skip")
    assert len(rows) == 4


@settings(max_examples=20)
@given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
def test_penalized_solve_matches_dense_least_squares(seed, lam):
    """Oracle: stacked least squares with explicit neighbour differences."""
    rng = np.random.default_rng(seed)
    n = 5
    mask = rng.uniform(size=(n, n)) > 0.15
    mask[0, 0] = True
    grid = _grid(n=n, active=mask)
    J = grid.n_active
    E = np.hstack([rng.normal(size=(80, 1)), rng.normal(size=(80, J)) * (rng.uniform(size=(80, J)) < 0.2)])
    g = rng.normal(size=80)
    labels = grid_components(grid)
    theta, _ = penalized_solve(E, g, car_penalty(grid), lam, labels)
    pairs = _neighbour_pairs(np.asarray(grid.active))
    D = np.zeros((len(pairs), J + 1))
    for r, (a, b) in enumerate(pairs):
        D[r, 1 + a], D[r, 1 + b] = 1.0, -1.0
    pinned = {1 + int(np.flatnonzero(labels == c)[0]) for c in np.unique(labels)}
    free = [k for k in range(J + 1) if k not in pinned]
    X = np.vstack([E, math.sqrt(lam) * D])[:, free]
    y = np.concatenate([g, np.zeros(len(pairs))])
    sol = np.linalg.lstsq(X, y, rcond=None)[0]
    assert theta[free] == pytest.approx(sol, rel=1e-8, abs=1e-8)
    assert np.all(theta[sorted(pinned)] == 0)


def test_rank_error_when_unpenalized_cell_has_no_data():
    grid = _grid(n=4)
    J = grid.n_active
    E = np.zeros((10, J + 1))
    E[:, 0] = 1.0
    E[:, 1] = np.arange(10)
    with pytest.raises(RankError):
        penalized_solve(E, np.ones(10), car_penalty(grid), 0.0)


def test_large_lambda_flattens_gamma():
    grid = _grid()
    rows = build_rows(_paths(grid), grid)
    _, gamma, _ = step1_fit(rows, car_penalty(grid), 1e8)
    assert np.ptp(gamma) < 1e-5


def test_noise_free_recovery():
    grid = _grid()
    beta = 0.5
    rows = build_rows(_paths(grid, n_paths=30, n_steps=12, zero_noise=True, beta=beta), grid)
    b, gamma, resid = step1_fit(rows, car_penalty(grid), 1e-9)
    assert b == pytest.approx(beta, rel=1e-5)
    assert np.max(np.abs(resid)) < 1e-6
    truth = -beta * grid.active_values
    assert rows.A @ gamma == pytest.approx(rows.A @ truth, abs=1e-6)


def test_smoother_matches_dense_solution():
    rng = np.random.default_rng(3)
    grid = _grid(n=6)
    J = grid.n_active
    cells = rng.integers(0, J, 60)
    cells = cells[cells % 5 != 0]
    y = rng.normal(size=cells.size) + 0.3 * (cells % 6)
    fit = smooth_log_variance(y, cells, grid)
    Q = car_penalty(grid, include_beta=False).toarray()
    C = np.diag(np.bincount(cells, minlength=J).astype(float))
    b = np.bincount(cells, weights=y, minlength=J)
    dense = np.linalg.solve(C + fit.lam * Q, b)
    assert fit.values == pytest.approx(dense, rel=1e-8, abs=1e-8)
    X = np.zeros((cells.size, J))
    X[np.arange(cells.size), cells] = 1.0
    H = X @ np.linalg.solve(C + fit.lam * Q, X.T)
    rss = np.sum((y - H @ y) ** 2)
    assert fit.gcv == pytest.approx(cells.size * rss / (cells.size - np.trace(H)) ** 2, rel=1e-8)
    assert fit.edf == pytest.approx(np.trace(H), rel=1e-8)


def test_homoscedastic_motility_is_flat():
    grid = _grid()
    rng = np.random.default_rng(4)
    cells = rng.integers(0, grid.n_active, 10_000)
    h = rng.uniform(0.5, 3.0, cells.size)
    m = step2_motility(rng.normal(size=cells.size) * np.sqrt(h), cells, h, grid)
    logm = np.log(m.active_values)
    assert logm.std() < 0.1
    assert abs(logm.mean()) < 0.1


def test_two_regime_motility_ratio():
    grid = _grid()
    rng = np.random.default_rng(5)
    cells = rng.integers(0, grid.n_active, 20_000)
    y = grid.active_centers()[cells][:, 1]
    sd = np.where(y > N / 2, 2.0, 1.0)
    m = step2_motility(rng.normal(size=cells.size) * sd, cells, np.ones(cells.size), grid)
    ys = grid.active_centers()[:, 1]
    hi = np.median(m.active_values[ys > N / 2 + 2])
    lo = np.median(m.active_values[ys < N / 2 - 2])
    assert hi / lo == pytest.approx(2.0, rel=0.2)
    assert np.all(m.active_values > 0)


def test_zero_residuals_are_floored():
    grid = _grid(n=4)
    cells = np.arange(grid.n_active).repeat(3)
    m = step2_motility(np.zeros(cells.size), cells, np.ones(cells.size), grid)
    assert np.all(np.isfinite(m.active_values)) and np.all(m.active_values > 0)


def test_component_without_residuals():
    mask = np.ones((4, 5), dtype=bool)
    mask[:, 2] = False
    grid = rasterize(Constant(0.0), 5, 4, (0, 0), 1.0, mask)
    left = grid.active_cell(np.array([[0.5, 0.5], [1.5, 2.5]]))
    with pytest.raises(ComponentError):
        step2_motility(np.ones(2), left, np.ones(2), grid)


def test_step3_reduces_to_step1_for_unit_motility():
    grid = _grid()
    rows = build_rows(_paths(grid), grid)
    Q = car_penalty(grid)
    b1, g1, _ = step1_fit(rows, Q, 1.0)
    b3, g3 = step3_refit(rows, grid.with_active_values(np.ones(grid.n_active)), Q, 1.0)
    assert b3 == pytest.approx(b1, rel=1e-10)
    assert g3 == pytest.approx(g1, rel=1e-8, abs=1e-10)


@given(st.floats(0.1, 10.0))
def test_step3_constant_motility_rescales_gamma(c):
    grid = _grid(n=8)
    rows = build_rows(_paths(grid, n_paths=2, n_steps=40), grid)
    Q = car_penalty(grid)
    b1, g1, _ = step1_fit(rows, Q, 0.5)
    b3, g3 = step3_refit(rows, grid.with_active_values(np.full(grid.n_active, c)), Q, 0.5)
    assert b3 == pytest.approx(b1, rel=1e-8)
    assert g3 == pytest.approx(g1 / c, rel=1e-6, abs=1e-10)


def test_holdout_split_by_triples():
    grid = _grid()
    path = _paths(grid, n_paths=1, n_steps=102)
    rows = build_rows(path, grid)
    train, hold = holdout_split(rows, 0.2, substream(1, "holdout"))
    assert np.unique(hold.triple).size == 20 and len(hold) == 40
    assert not set(hold.triple) & set(train.triple)
    again, _ = holdout_split(rows, 0.2, substream(1, "holdout"))
    assert np.array_equal(again.triple, train.triple)


def test_lambda_selection_grid():
    assert len(DEFAULT_LOG_LAMBDAS) == 17
    grid = _grid()
    rows = build_rows(_paths(grid), grid)
    train, hold = holdout_split(rows, 0.2, substream(2))
    lam, mspe, fits = select_lambda(train, hold, grid, [0.25])
    assert lam == 0.25 and len(mspe) == 1 and np.isfinite(mspe[0])


def test_fit_full_deterministic_and_centered():
    grid = _grid()
    paths = _paths(grid, n_paths=5, n_steps=120)
    a = fit_full(paths, grid, lambda_grid=[math.exp(x) for x in (-2, 0, 2)], seed=7)
    b = fit_full(paths, grid, lambda_grid=[math.exp(x) for x in (-2, 0, 2)], seed=7)
    assert a.beta_hat == b.beta_hat and np.array_equal(a.gamma_hat, b.gamma_hat)
    assert abs(np.nanmean(a.p_hat.values)) < 1e-12
    assert np.all(a.m_hat.active_values > 0)
    assert a.report()["lambda"] in a.lambdas


def test_potential_offset_does_not_change_fit():
    base = _grid()
    shifted = base.with_active_values(base.active_values + 5.0)
    pa = _paths(base, n_paths=3, n_steps=80)
    pb = _paths(shifted, n_paths=3, n_steps=80)
    for x, y in zip(pa, pb):
        assert x.positions == pytest.approx(y.positions, abs=1e-9)
    fa = fit_full(pa, base, lambda_grid=[1.0], seed=1)
    fb = fit_full(pb, shifted, lambda_grid=[1.0], seed=1)
    assert fb.p_hat.active_values == pytest.approx(fa.p_hat.active_values, abs=1e-6)
