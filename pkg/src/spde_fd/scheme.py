"""Forward-Euler finite-difference scheme for du = (Lap u + b(u)) dt + dW on the torus.

One step reads ``u + h * Lap_n u + h * b(u) + h * eta`` where ``eta`` is the
noise increment of the current time row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import GridConfig, GridError
from .kernels import FourierSeries, discrete_laplacian, kernel_matrix

# --- drifts ------------------------------------------------------------------


@dataclass(frozen=True)
class DriftSpec:
    name: str
    func: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    bound: float

    def __call__(self, u):
        return self.func(np.asarray(u, dtype=float))


def _zero(u):
    return np.zeros_like(u)


def _sign(u):
    # sign(0) = -1 by convention
    return np.where(u > 0, 1.0, -1.0)


def _window(u):
    # indicator of [0, 1)
    return ((u >= 0.0) & (u < 1.0)).astype(float)


def builtin_drifts() -> list[DriftSpec]:
    return [
        DriftSpec("zero", _zero, 0.0),
        DriftSpec("smooth", np.sin, 1.0),
        DriftSpec("sign", _sign, 1.0),
        DriftSpec("window", _window, 1.0),
    ]


_DRIFT_ALIASES = {"sin": "smooth", "0": "zero", "none": "zero", "indicator": "window"}


def get_drift(name) -> DriftSpec:
    if isinstance(name, DriftSpec):
        return name
    key = _DRIFT_ALIASES.get(str(name).lower(), str(name).lower())
    for d in builtin_drifts():
        if d.name == key:
            return d
    raise KeyError(f"unknown drift {name!r}; known: {[d.name for d in builtin_drifts()]}")


def constant_drift(value: float) -> DriftSpec:
    return DriftSpec(f"const({value})", lambda u: np.full_like(u, value), abs(value))


# --- initial conditions -------------------------------------------------------


@dataclass(frozen=True)
class InitialCondition:
    name: str
    func: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    alpha: float
    fourier: FourierSeries | None = field(default=None, repr=False)

    def __call__(self, x):
        return self.func(np.asarray(x, dtype=float))

    def on_grid(self, grid: GridConfig) -> np.ndarray:
        return np.asarray(self(grid.points()), dtype=float) + np.zeros(grid.num_space)


def _series(modes, coeffs) -> FourierSeries:
    return FourierSeries(np.asarray(modes, dtype=float), np.asarray(coeffs, dtype=complex))


WEIERSTRASS_TERMS = 10


def _weierstrass_series() -> FourierSeries:
    modes, coeffs = [], []
    for k in range(WEIERSTRASS_TERMS):
        a = 2.0 ** (-k / 2) / 2
        modes += [2**k, -(2**k)]
        coeffs += [a, a]
    return _series(modes, coeffs)


def builtin_initials() -> list[InitialCondition]:
    w = _weierstrass_series()
    return [
        InitialCondition("zero", np.zeros_like, 1.0, _series([0], [0.0])),
        InitialCondition("constant", np.ones_like, 1.0, _series([0], [1.0])),
        InitialCondition(
            "sine", lambda x: np.sin(2 * np.pi * x), 1.0, _series([1, -1], [-0.5j, 0.5j])
        ),
        InitialCondition("weierstrass", w, 0.5, w),
    ]


_INITIAL_ALIASES = {"sin": "sine", "sin(2pix)": "sine", "0": "zero", "const": "constant", "one": "constant"}


def get_initial(name) -> InitialCondition:
    if isinstance(name, InitialCondition):
        return name
    key = _INITIAL_ALIASES.get(str(name).lower(), str(name).lower())
    for ic in builtin_initials():
        if ic.name == key:
            return ic
    raise KeyError(f"unknown initial condition {name!r}; known: {[i.name for i in builtin_initials()]}")


def holder_seminorm(values: np.ndarray, alpha: float) -> np.ndarray:
    """Discrete C^alpha seminorm over all gridpoint pairs (periodic distance), last axis."""
    m = values.shape[-1]
    best = np.zeros(values.shape[:-1])
    for lag in range(1, m // 2 + 1):
        diff = np.abs(np.roll(values, -lag, axis=-1) - values).max(axis=-1)
        best = np.maximum(best, diff / (lag / m) ** alpha)
    return best


# --- stepping -----------------------------------------------------------------


class Stepper:
    """Reusable buffers for repeated forward-Euler steps on a fixed batch shape."""

    def __init__(self, grid: GridConfig, drift, shape):
        self.grid = grid
        self.drift = drift if callable(drift) else get_drift(drift)
        self._lap = np.empty(shape)
        self._tmp = np.empty(shape)

    def advance(self, u: np.ndarray, eta: np.ndarray, out: np.ndarray) -> np.ndarray:
        h = self.grid.h
        lap = discrete_laplacian(self.grid, u, out=self._lap)
        lap *= h
        np.add(u, lap, out=out)
        np.multiply(self.drift(u), h, out=self._tmp)
        out += self._tmp
        np.multiply(eta, h, out=self._tmp)
        out += self._tmp
        return out


def _check_shapes(grid: GridConfig, *arrays) -> None:
    for a in arrays:
        if np.shape(a)[-1:] != (grid.num_space,):
            raise ValueError(f"array of shape {np.shape(a)} does not live on {grid.num_space} gridpoints")


def step(grid: GridConfig, state, drift, eta_slice) -> np.ndarray:
    """One forward-Euler update; ``eta_slice`` is the noise increment ``eta(t, .)``."""
    u = np.asarray(state, dtype=float)
    eta = np.asarray(eta_slice, dtype=float)
    _check_shapes(grid, u, eta)
    if eta.shape != u.shape:
        eta = np.broadcast_to(eta, u.shape)
    out = np.empty(u.shape)
    return Stepper(grid, drift, u.shape).advance(u, eta, out)


@dataclass(eq=False)
class SchemeRun:
    grid: GridConfig
    drift: DriftSpec
    initial: np.ndarray
    cells: np.ndarray = field(repr=False)
    num_steps: int
    snapshots: dict[int, np.ndarray]
    trajectory: np.ndarray | None = field(default=None, repr=False)

    @property
    def horizon(self) -> float:
        return self.num_steps * self.grid.h

    def at(self, t: float) -> np.ndarray:
        k = self.grid.exact_step_index(t)
        if k not in self.snapshots:
            raise KeyError(f"no snapshot recorded at t={t}")
        return self.snapshots[k]

    def times(self) -> list[float]:
        return [k * self.grid.h for k in sorted(self.snapshots)]


def _noise_cells(grid: GridConfig, noise) -> np.ndarray:
    cells = np.asarray(getattr(noise, "cells", noise), dtype=float)
    ngrid = getattr(noise, "grid", None)
    if ngrid is not None and ngrid != grid:
        raise GridError(f"noise lives on {ngrid}, scheme on {grid}")
    if cells.ndim != 2 or cells.shape[1] != grid.num_space:
        raise ValueError(f"noise cells of shape {cells.shape} do not match {grid.num_space} gridpoints")
    return cells


def initial_values(grid: GridConfig, initial) -> np.ndarray:
    if isinstance(initial, str):
        initial = get_initial(initial)
    if isinstance(initial, InitialCondition):
        return initial.on_grid(grid)
    if callable(initial):
        return np.asarray(initial(grid.points()), dtype=float) + np.zeros(grid.num_space)
    psi = np.array(initial, dtype=float)
    _check_shapes(grid, psi)
    return psi


def run(grid: GridConfig, drift, initial, noise, horizon: float, snapshot_times=(), record_all: bool = False) -> SchemeRun:
    """Iterate the scheme up to ``horizon``, recording the requested grid times.

    ``noise`` is a NoiseField/NoiseView on ``grid`` or a raw ``(K, 2n)`` array
    of cell integrals.
    """
    drift = get_drift(drift) if not isinstance(drift, DriftSpec) else drift
    cells = _noise_cells(grid, noise)
    k_end = grid.exact_step_index(horizon)
    if k_end > cells.shape[0]:
        raise GridError(f"noise covers {cells.shape[0]} steps, run needs {k_end}")
    wanted = {grid.exact_step_index(t) for t in snapshot_times}
    bad = [k for k in wanted if k > k_end]
    if bad:
        raise GridError(f"snapshot times beyond horizon: {[k * grid.h for k in bad]}")
    psi = initial_values(grid, initial)
    scale = grid.num_space / grid.h
    stepper = Stepper(grid, drift, psi.shape)
    traj = np.empty((k_end + 1, grid.num_space)) if record_all else None
    snaps: dict[int, np.ndarray] = {}
    u = psi.copy()
    nxt = np.empty_like(u)
    for k in range(k_end + 1):
        if k in wanted:
            snaps[k] = u.copy()
        if traj is not None:
            traj[k] = u
        if k == k_end:
            break
        stepper.advance(u, cells[k] * scale, nxt)
        u, nxt = nxt, u
    return SchemeRun(grid, drift, psi, cells, k_end, snaps, traj)


def mild_field(result: SchemeRun, t: float) -> np.ndarray:
    """Mild-form value of the scheme at grid time ``t`` on all gridpoints.

    Sums the three Duhamel terms with discrete kernels built by direct mode
    summation; the drift is evaluated on the recorded trajectory.
    """
    grid = result.grid
    if result.trajectory is None:
        raise ValueError("mild evaluation needs a run with record_all=True")
    k_end = grid.exact_step_index(t)
    if k_end > result.num_steps:
        raise GridError(f"t={t} beyond the recorded horizon")
    m = grid.num_space
    kern = [kernel_matrix(grid, j * grid.h) for j in range(k_end + 1)]
    val = kern[k_end] @ result.initial / m
    for k in range(k_end):
        lag = k_end - 1 - k
        val = val + grid.h * (kern[lag] @ result.drift(result.trajectory[k])) / m
        val = val + kern[lag] @ result.cells[k]
    return val


def mild_eval(result: SchemeRun, t: float, x: float) -> float:
    i = result.grid.exact_point_index(x)
    return float(mild_field(result, t)[i])


def linear_growth_bound(grid: GridConfig, drift: DriftSpec, k: int) -> float:
    return math.fsum([grid.h * drift.bound] * k)
