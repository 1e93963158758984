"""Periodic space grid, time grid and dyadic level nesting.

Points of the space grid are ``i / (2n)`` for ``i = 0..2n-1`` and points of
the time grid are ``k * h`` with ``h = c / (2n)**2``.  Everything is stored as
integer indices; reals only appear at the API boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# absorbs representation error of times/points meant to lie on the grid
FLOOR_GUARD = 1e-12


class GridError(ValueError):
    """Invalid grid construction or an off-grid query."""


class CFLError(GridError):
    """The CFL constant is outside (0, 1/2)."""


@dataclass(frozen=True)
class GridConfig:
    n: int
    c: float

    def __post_init__(self):
        if isinstance(self.n, bool) or int(self.n) != self.n or self.n < 1:
            raise GridError(f"n must be a positive integer, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        c = float(self.c)
        if not (0.0 < c < 0.5):
            raise CFLError(f"CFL violation: c={self.c!r} must lie strictly between 0 and 1/2")
        object.__setattr__(self, "c", c)

    @property
    def num_space(self) -> int:
        return 2 * self.n

    @property
    def dx(self) -> float:
        return 1.0 / (2 * self.n)

    @property
    def h(self) -> float:
        return self.c / (2 * self.n) ** 2

    def points(self) -> np.ndarray:
        return np.arange(self.num_space) / self.num_space

    def time(self, k: int) -> float:
        return k * self.h

    def step_index(self, t: float) -> int:
        """Index of the largest grid time not exceeding ``t``."""
        if t < 0:
            raise GridError(f"time must be non-negative, got {t}")
        return int(math.floor(t / self.h + FLOOR_GUARD))

    def exact_step_index(self, t: float, tol: float = 1e-9) -> int:
        """Index of ``t`` on the time grid; raises if ``t`` is not a grid time."""
        if t < 0:
            raise GridError(f"time must be non-negative, got {t}")
        k = round(t / self.h)
        if abs(t / self.h - k) > tol * max(1.0, abs(k)):
            raise GridError(f"t={t} is not on the time grid with h={self.h}")
        return int(k)

    def point_index(self, x: float) -> int:
        return int(math.floor(x * self.num_space + FLOOR_GUARD)) % self.num_space

    def exact_point_index(self, x: float, tol: float = 1e-9) -> int:
        i = round(x * self.num_space)
        if abs(x * self.num_space - i) > tol:
            raise GridError(f"x={x} is not a point of the space grid with 2n={self.num_space}")
        return int(i) % self.num_space


def make_grid(n: int, c: float) -> GridConfig:
    return GridConfig(n, c)


def kappa_n(grid: GridConfig, t: float) -> float:
    """Largest grid time not exceeding ``t``."""
    return grid.step_index(t) * grid.h


def rho_n(grid: GridConfig, x: float) -> float:
    """Leftmost space gridpoint at or below ``x`` (``x`` in [0, 1))."""
    return grid.point_index(x) / grid.num_space


def periodic_add(grid: GridConfig, i: int, j: int) -> int:
    return (i + j) % grid.num_space


@dataclass(frozen=True)
class LevelPair:
    coarse: GridConfig
    fine: GridConfig
    spatial_ratio: int
    temporal_ratio: int


def dyadic_ratio(coarse: GridConfig, fine: GridConfig) -> int:
    """Spatial ratio ``fine.n / coarse.n``; must be a power of two (1 allowed)."""
    if coarse.c != fine.c:
        raise GridError(f"c mismatch between levels: {coarse.c} vs {fine.c}")
    if fine.n % coarse.n:
        raise GridError(f"non-dyadic levels: {fine.n} is not a multiple of {coarse.n}")
    r = fine.n // coarse.n
    if r & (r - 1):
        raise GridError(f"non-dyadic levels: ratio {r} is not a power of 2")
    return r


def make_level_pair(coarse: GridConfig, fine: GridConfig) -> LevelPair:
    r = dyadic_ratio(coarse, fine)
    if r == 1:
        raise GridError("fine level must be strictly finer than the coarse level")
    return LevelPair(coarse, fine, r, r * r)
