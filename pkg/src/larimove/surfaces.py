"""Potential and motility surfaces.

Two families live here: closed-form surfaces used by the synthetic studies
(quadratic bowls, sign/L1 attractors, step and linear motility) and gridded
zeroth-order surfaces (one value per square cell). Both expose ``value`` and
``grad`` on arrays of positions with trailing dimension 2.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import BoundaryError, OutOfDomainError, ParseError

__all__ = [
    "AnalyticSurface",
    "Constant",
    "Quadratic",
    "AbsSign",
    "LinearX",
    "LinearY",
    "StepY",
    "GriddedSurface",
    "evaluate",
    "gradient",
    "drift",
    "noise_scale",
    "car_penalty",
    "grid_components",
    "center_surface",
    "rasterize",
    "read_raster",
    "write_raster",
    "surface_from_dict",
]


# --------------------------------------------------------------------------
# analytic surfaces


class AnalyticSurface:
    """Base for closed-form surfaces defined on the whole plane."""

    kind: str = ""

    def value(self, pos):
        raise NotImplementedError

    def grad(self, pos):
        raise NotImplementedError

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        d.update({k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()})
        return d


@dataclass(frozen=True)
class Constant(AnalyticSurface):
    c: float = 1.0
    kind = "constant"

    def value(self, pos):
        pos = np.asarray(pos, dtype=float)
        return np.full(pos.shape[:-1], float(self.c)) if pos.ndim > 1 else float(self.c)

    def grad(self, pos):
        return np.zeros_like(np.asarray(pos, dtype=float))


@dataclass(frozen=True)
class Quadratic(AnalyticSurface):
    """p(r) = k |r - center|^2"""

    k: float
    center: tuple = (0.0, 0.0)
    kind = "quadratic"

    def value(self, pos):
        d = np.asarray(pos, dtype=float) - np.asarray(self.center, dtype=float)
        return self.k * np.sum(d * d, axis=-1)

    def grad(self, pos):
        return 2.0 * self.k * (np.asarray(pos, dtype=float) - np.asarray(self.center, dtype=float))


@dataclass(frozen=True)
class AbsSign(AnalyticSurface):
    """p(r) = k (|x - ax| + |y - ay|), gradient k sign(r - a) with sign(0) = 0."""

    k: float
    attractor: tuple = (0.0, 0.0)
    kind = "abs-sign"

    def value(self, pos):
        d = np.asarray(pos, dtype=float) - np.asarray(self.attractor, dtype=float)
        return self.k * np.sum(np.abs(d), axis=-1)

    def grad(self, pos):
        return self.k * np.sign(np.asarray(pos, dtype=float) - np.asarray(self.attractor, dtype=float))


@dataclass(frozen=True)
class LinearX(AnalyticSurface):
    c: float = 1.0
    kind = "linear-x"

    def value(self, pos):
        return self.c * np.asarray(pos, dtype=float)[..., 0]

    def grad(self, pos):
        g = np.zeros_like(np.asarray(pos, dtype=float))
        g[..., 0] = self.c
        return g


@dataclass(frozen=True)
class LinearY(AnalyticSurface):
    slope: float
    intercept: float = 0.0
    kind = "linear-y"

    def value(self, pos):
        return self.slope * np.asarray(pos, dtype=float)[..., 1] + self.intercept

    def grad(self, pos):
        g = np.zeros_like(np.asarray(pos, dtype=float))
        g[..., 1] = self.slope
        return g


@dataclass(frozen=True)
class StepY(AnalyticSurface):
    """``low`` where y <= threshold, ``high`` above it."""

    low: float
    high: float
    threshold: float = 0.0
    kind = "step-y"

    def value(self, pos):
        y = np.asarray(pos, dtype=float)[..., 1]
        out = np.where(y > self.threshold, float(self.high), float(self.low))
        return out if out.ndim else float(out)

    def grad(self, pos):
        return np.zeros_like(np.asarray(pos, dtype=float))


_ANALYTIC = {cls.kind: cls for cls in (Constant, Quadratic, AbsSign, LinearX, LinearY, StepY)}


# --------------------------------------------------------------------------
# gridded surfaces


@dataclass(frozen=True, eq=False)
class GriddedSurface:
    """Piecewise-constant surface on ``ny`` x ``nx`` square cells.

    ``values`` and ``active`` have shape ``(ny, nx)``; row ``j`` holds cells
    whose y-range is ``[y0 + j*cell, y0 + (j+1)*cell)``. Flat cell indices are
    row-major, ``j*nx + i``. Active-cell indices (used by the penalty and the
    regression rows) enumerate active cells in flat order.
    """

    nx: int
    ny: int
    origin: tuple
    cell: float
    values: np.ndarray
    active: np.ndarray = None
    _active_index: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1 or not self.cell > 0:
            raise ValueError("grid needs nx >= 1, ny >= 1 and cell > 0")
        values = np.array(self.values, dtype=float).reshape(self.ny, self.nx)
        if self.active is None:
            active = np.ones((self.ny, self.nx), dtype=bool)
        else:
            active = np.array(self.active, dtype=bool).reshape(self.ny, self.nx)
        values = np.where(active, values, np.nan)
        values.setflags(write=False)
        active.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "active", active)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "cell", float(self.cell))
        idx = np.full(self.nx * self.ny, -1, dtype=np.int64)
        flat = np.flatnonzero(active.ravel())
        idx[flat] = np.arange(flat.size)
        idx.setflags(write=False)
        object.__setattr__(self, "_active_index", idx)

    # geometry -------------------------------------------------------------

    @property
    def n_active(self) -> int:
        return int(self.active.sum())

    @property
    def active_flat(self) -> np.ndarray:
        """Flat indices of the active cells, in active-index order."""
        return np.flatnonzero(self.active.ravel())

    @property
    def active_values(self) -> np.ndarray:
        return self.values.ravel()[self.active_flat]

    def cell_centers(self) -> np.ndarray:
        """Centers of all cells, shape ``(ny, nx, 2)``."""
        xs = self.origin[0] + (np.arange(self.nx) + 0.5) * self.cell
        ys = self.origin[1] + (np.arange(self.ny) + 0.5) * self.cell
        X, Y = np.meshgrid(xs, ys)
        return np.stack([X, Y], axis=-1)

    def active_centers(self) -> np.ndarray:
        return self.cell_centers().reshape(-1, 2)[self.active_flat]

    def flat_index(self, pos) -> np.ndarray:
        """Flat cell index for each position, -1 outside the grid or in inactive cells.

        Cells are half-open; a coordinate exactly on the upper grid edge goes to
        the last cell.
        """
        pos = np.asarray(pos, dtype=float)
        if pos.ndim == 1:
            return self.flat_index(pos[None, :])[0]
        u = (pos[..., 0] - self.origin[0]) / self.cell
        w = (pos[..., 1] - self.origin[1]) / self.cell
        i = np.floor(u).astype(np.int64)
        j = np.floor(w).astype(np.int64)
        i = np.where(u == self.nx, self.nx - 1, i)
        j = np.where(w == self.ny, self.ny - 1, j)
        inside = (i >= 0) & (i < self.nx) & (j >= 0) & (j < self.ny) & np.isfinite(u) & np.isfinite(w)
        flat = np.where(inside, j * self.nx + np.clip(i, 0, self.nx - 1), -1)
        ok = inside.copy()
        ok[inside] = self.active.ravel()[flat[inside]]
        return np.where(ok, flat, -1)

    def active_cell(self, pos) -> np.ndarray:
        """Active-cell index for each position, -1 where not in an active cell."""
        flat = self.flat_index(pos)
        return np.where(flat >= 0, self._active_index[np.maximum(flat, 0)], -1)

    def with_values(self, values) -> "GriddedSurface":
        return GriddedSurface(self.nx, self.ny, self.origin, self.cell, values, self.active)

    def with_active_values(self, active_values) -> "GriddedSurface":
        full = np.full(self.nx * self.ny, np.nan)
        full[self.active_flat] = active_values
        return self.with_values(full)

    def same_grid(self, other: "GriddedSurface") -> bool:
        return (
            self.nx == other.nx
            and self.ny == other.ny
            and self.cell == other.cell
            and self.origin == other.origin
            and np.array_equal(self.active, other.active)
        )

    # evaluation ----------------------------------------------------------

    def value(self, pos):
        pos = np.asarray(pos, dtype=float)
        flat = self.flat_index(pos)
        if np.any(flat < 0):
            bad = pos.reshape(-1, 2)[np.flatnonzero(np.ravel(flat) < 0)[0]]
            raise OutOfDomainError(f"position {tuple(bad)} is not inside an active cell")
        out = self.values.ravel()[flat]
        return out if out.ndim else float(out)

    def grad(self, pos, fd_step=None, boundary="fallback"):
        """Raster centered-difference gradient.

        With ``boundary="fallback"`` a missing neighbour turns the difference
        one-sided, and a component is 0 when both neighbours are missing. With
        ``boundary="error"`` a missing neighbour raises :class:`BoundaryError`.
        """
        pos = np.asarray(pos, dtype=float)
        step = self.cell if fd_step is None else float(fd_step)
        here = self.flat_index(pos)
        if np.any(here < 0):
            raise OutOfDomainError("gradient requested outside the active region")
        vals = self.values.ravel()
        g = np.zeros(pos.shape, dtype=float)
        for axis in range(2):
            e = np.zeros(2)
            e[axis] = step
            fp = self.flat_index(pos + e)
            fm = self.flat_index(pos - e)
            has_p, has_m = fp >= 0, fm >= 0
            if boundary == "error" and not np.all(has_p & has_m):
                raise BoundaryError("finite-difference offset falls outside the active region")
            vp = np.where(has_p, vals[np.maximum(fp, 0)], 0.0)
            vm = np.where(has_m, vals[np.maximum(fm, 0)], 0.0)
            v0 = vals[here]
            comp = np.where(
                has_p & has_m,
                (vp - vm) / (2 * step),
                np.where(has_p, (vp - v0) / step, np.where(has_m, (v0 - vm) / step, 0.0)),
            )
            g[..., axis] = comp
        return g

    def gradient_field(self) -> np.ndarray:
        """Gradient at every cell center, shape ``(ny, nx, 2)``; NaN on inactive cells."""
        centers = self.cell_centers()
        out = np.full((self.ny, self.nx, 2), np.nan)
        out[self.active] = self.grad(centers[self.active])
        return out


# --------------------------------------------------------------------------
# module-level operations


def evaluate(surface, position):
    """p(r) or m(r) at ``position`` (any leading shape)."""
    return surface.value(position)


def gradient(surface, position, fd_step=None, boundary="fallback"):
    if isinstance(surface, GriddedSurface):
        return surface.grad(position, fd_step=fd_step, boundary=boundary)
    return surface.grad(position)


def drift(potential, motility, position, fd_step=None):
    """m(r) * (-grad p(r))."""
    m = np.asarray(evaluate(motility, position), dtype=float)
    g = gradient(potential, position, fd_step=fd_step)
    return -m[..., None] * g


def noise_scale(motility, sigma, position):
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    return sigma * evaluate(motility, position)


def _rook_pairs(active: np.ndarray):
    """Active-index pairs (i, j), i < j, of rook-adjacent active cells."""
    ny, nx = active.shape
    idx = np.full(active.shape, -1, dtype=np.int64)
    idx[active] = np.arange(int(active.sum()))
    pairs = []
    h = active[:, :-1] & active[:, 1:]
    pairs.append(np.stack([idx[:, :-1][h], idx[:, 1:][h]], axis=1))
    v = active[:-1, :] & active[1:, :]
    pairs.append(np.stack([idx[:-1, :][v], idx[1:, :][v]], axis=1))
    return np.concatenate(pairs, axis=0)


def _mask_of(grid) -> np.ndarray:
    if isinstance(grid, GriddedSurface):
        return np.asarray(grid.active)
    return np.asarray(grid, dtype=bool)


def car_penalty(grid, include_beta=True) -> sp.csr_matrix:
    """First-difference (CAR-style) penalty over active cells.

    ``Q[i, i]`` counts the active rook neighbours of cell ``i`` and ``Q[i, j] = -1``
    for adjacent cells, so ``g' Q g`` sums ``(g_i - g_j)^2`` over adjacent pairs.
    With ``include_beta`` a zero leading row/column is prepended so the friction
    coefficient goes unpenalized.
    """
    active = _mask_of(grid)
    J = int(active.sum())
    if J < 1:
        raise ValueError("penalty needs at least one active cell")
    pairs = _rook_pairs(active)
    off = 1 if include_beta else 0
    n = J + off
    i, j = pairs[:, 0] + off, pairs[:, 1] + off
    ones = np.ones(len(pairs))
    W = sp.coo_matrix((ones, (i, j)), shape=(n, n))
    W = (W + W.T).tocsr()
    deg = np.asarray(W.sum(axis=1)).ravel()
    return (sp.diags(deg) - W).tocsr()


def grid_components(grid) -> np.ndarray:
    """Connected-component label of each active cell under rook adjacency."""
    Q = car_penalty(grid, include_beta=False)
    _, labels = connected_components(Q != 0, directed=False)
    return labels


def center_surface(surface: GriddedSurface) -> GriddedSurface:
    vals = surface.active_values
    return surface.with_active_values(vals - vals.mean())


def rasterize(fn, nx, ny, origin, cell, active=None) -> GriddedSurface:
    """Sample an analytic surface (or callable) at cell centers."""
    probe = GriddedSurface(nx, ny, origin, cell, np.zeros((ny, nx)), active)
    f = fn.value if hasattr(fn, "value") else fn
    return probe.with_values(np.asarray(f(probe.cell_centers()), dtype=float))


# --------------------------------------------------------------------------
# ASCII raster I/O


def write_raster(surface: GriddedSurface, path) -> None:
    """Header ``nx ny x0 y0 cell``, then rows top (largest y) first, ``NA`` when inactive."""
    lines = [f"{surface.nx} {surface.ny} {surface.origin[0]:.17g} {surface.origin[1]:.17g} {surface.cell:.17g}"]
    for j in range(surface.ny - 1, -1, -1):
        row = [
            f"{surface.values[j, i]:.17g}" if surface.active[j, i] else "NA"
            for i in range(surface.nx)
        ]
        lines.append(" ".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_raster(path) -> GriddedSurface:
    text = Path(path).read_text().splitlines()
    lines = [ln for ln in text if ln.strip()]
    if not lines:
        raise ParseError(f"{path}: empty raster")
    head = lines[0].split()
    if len(head) != 5:
        raise ParseError(f"{path}:1: expected header 'nx ny x0 y0 cell'")
    try:
        nx, ny = int(head[0]), int(head[1])
        x0, y0, cell = (float(t) for t in head[2:])
    except ValueError as exc:
        raise ParseError(f"{path}:1: {exc}") from None
    if len(lines) - 1 != ny:
        raise ParseError(f"{path}: expected {ny} data rows, found {len(lines) - 1}")
    values = np.full((ny, nx), np.nan)
    active = np.zeros((ny, nx), dtype=bool)
    for r, ln in enumerate(lines[1:]):
        toks = ln.split()
        if len(toks) != nx:
            raise ParseError(f"{path}:{r + 2}: expected {nx} values, found {len(toks)}")
        j = ny - 1 - r
        for i, t in enumerate(toks):
            if t == "NA":
                continue
            try:
                values[j, i] = float(t)
            except ValueError:
                raise ParseError(f"{path}:{r + 2}: bad value {t!r}") from None
            active[j, i] = True
    return GriddedSurface(nx, ny, (x0, y0), cell, values, active)


def surface_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind")
    cls = _ANALYTIC.get(kind)
    if cls is None:
        raise ValueError(f"unknown surface kind {kind!r}")
    for key in ("center", "attractor"):
        if key in d:
            d[key] = tuple(d[key])
    return cls(**d)
