"""Regular and LARI subsampling of recorded paths."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, DesignError, TooShortError
from .rng import as_generator
from .sim import MovementPath

_TOL = 1e-9


@dataclass(frozen=True)
class SamplingDesign:
    """``kind`` is ``"regular"`` or ``"lari"``; LARI lattice spacing is ``2 * h``."""

    kind: str
    h: float
    resolution: float | None = None

    def __post_init__(self):
        if self.kind not in ("regular", "lari"):
            raise ValueError(f"unknown design {self.kind!r}")
        if not self.h > 0:
            raise ValueError("h must be positive")
        if self.resolution is not None:
            q = 2 * self.h / self.resolution
            if self.resolution <= 0 or abs(q - round(q)) > _TOL * max(1.0, q):
                raise ValueError("resolution must divide the lattice spacing 2h")

    def apply(self, path: MovementPath, rng=None) -> "Subsample":
        if self.kind == "regular":
            return subsample_regular(path, self.h)
        return subsample_lari(path, self.h, rng, resolution=self.resolution)


@dataclass(frozen=True, eq=False)
class Subsample:
    observed: MovementPath
    unobserved_times: np.ndarray
    unobserved_truth: np.ndarray | None = None
    observed_index: np.ndarray | None = None
    unobserved_index: np.ndarray | None = None

    @property
    def all_times(self) -> np.ndarray:
        return np.sort(np.concatenate([self.observed.times, self.unobserved_times]))

    def unobserved_path(self) -> MovementPath | None:
        if self.unobserved_truth is None or len(self.unobserved_times) < 2:
            return None
        return MovementPath(self.observed.id, self.unobserved_times, self.unobserved_truth)


def _native_ratio(path: MovementPath, h: float) -> int:
    steps = path.steps
    dt = steps[0]
    if not np.allclose(steps, dt, rtol=1e-9, atol=0):
        raise AlignmentError("source path is not on a regular time grid")
    q = h / dt
    if q < 1 - _TOL or abs(q - round(q)) > _TOL * max(1.0, q):
        raise AlignmentError(f"h={h} is not an integer multiple of the native spacing {dt}")
    return int(round(q))


def _split(path: MovementPath, keep: np.ndarray) -> Subsample:
    keep = np.unique(keep)
    drop = np.setdiff1d(np.arange(len(path)), keep)
    obs = MovementPath(path.id, path.times[keep], path.positions[keep])
    return Subsample(
        observed=obs,
        unobserved_times=path.times[drop],
        unobserved_truth=path.positions[drop],
        observed_index=keep,
        unobserved_index=drop,
    )


def subsample_regular(path: MovementPath, h: float) -> Subsample:
    """Keep the observations at times 0, h, 2h, ... measured from the first time."""
    q = _native_ratio(path, h)
    return _split(path, np.arange(0, len(path), q))


def subsample_lari(path: MovementPath, h: float, rng, resolution=None) -> Subsample:
    """Lattice every ``2h`` plus one uniformly drawn interior time per lattice interval.

    Interior draws are discrete-uniform over source times strictly inside the
    interval (restricted to multiples of ``resolution`` when given). A trailing
    partial interval gets a lattice point at the final time and no interior draw.
    """
    q = _native_ratio(path, h)
    dt = path.steps[0]
    step = 2 * q
    n = len(path)
    sub = 1
    if resolution is not None:
        r = resolution / dt
        if abs(r - round(r)) > _TOL * max(1.0, r) or round(r) < 1:
            raise AlignmentError("resolution is not a multiple of the native spacing")
        sub = int(round(r))
        if step % sub:
            raise DesignError("resolution must divide the lattice spacing 2h")
    lattice = np.arange(0, n, step)
    candidates = np.arange(sub, step, sub)
    if candidates.size == 0:
        raise DesignError("lattice interval has no interior sampling time")
    gen = as_generator(rng)
    n_full = len(lattice) - 1
    draws = lattice[:-1] + gen.choice(candidates, size=n_full, replace=True)
    keep = [lattice, draws]
    if lattice[-1] != n - 1:
        keep.append(np.array([n - 1]))
    return _split(path, np.concatenate(keep))


def remove_stationary(path: MovementPath, threshold: float) -> MovementPath:
    """Drop observations closer than ``threshold`` to the previously retained one."""
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    r = path.positions
    keep = [0]
    last = r[0]
    for i in range(1, len(r)):
        if np.hypot(*(r[i] - last)) >= threshold:
            keep.append(i)
            last = r[i]
    if len(keep) < 3:
        raise TooShortError(f"only {len(keep)} observations remain after removing stationary points")
    keep = np.asarray(keep)
    return MovementPath(path.id, path.times[keep], r[keep])
