"""Space-time white noise on the finest grid and its exact coarse aggregates.

A cell is ``[k h, (k+1) h] x [i / 2n, (i+1) / 2n]``; its white-noise integral
is centred Gaussian with variance equal to the cell area ``h / 2n``.  Cell
values come from a counter-based generator (Philox) keyed by
``(seed, sample_index)`` whose counter is the cell position ``k * 2n + i``, so
any block of cells can be produced without generating the ones before it.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .grid import GridConfig, GridError, dyadic_ratio

_MASK64 = (1 << 64) - 1
_TWO_M53 = 2.0**-53

DUMP_MAGIC = b"SWNF"
DUMP_VERSION = 1
_HEADER = struct.Struct("<4sIQdQQQ")


def _key(seed: int, sample_index: int) -> np.ndarray:
    return np.array([seed & _MASK64, sample_index & _MASK64], dtype=np.uint64)


def standard_normals(seed: int, sample_index: int, start: int, count: int) -> np.ndarray:
    """Standard normals at stream positions ``start .. start+count-1``."""
    block, lane = divmod(start, 4)
    gen = np.random.Philox(key=_key(seed, sample_index), counter=[block, 0, 0, 0])
    raw = gen.random_raw(count + lane)[lane:]
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53
    return ndtri(u)


def noise_rows(grid: GridConfig, seed: int, sample_index: int, k0: int, k1: int) -> np.ndarray:
    """Cells of time rows ``k0 .. k1-1`` as an array of shape ``(k1-k0, 2n)``."""
    m = grid.num_space
    z = standard_normals(seed, sample_index, k0 * m, (k1 - k0) * m)
    return z.reshape(k1 - k0, m) * np.sqrt(grid.h / m)


def cell_value(grid: GridConfig, seed: int, sample_index: int, k: int, i: int) -> float:
    m = grid.num_space
    return float(standard_normals(seed, sample_index, k * m + i, 1)[0] * np.sqrt(grid.h / m))


def aggregate_cells(cells: np.ndarray, spatial_ratio: int, temporal_ratio: int) -> np.ndarray:
    """Sum blocks of ``temporal_ratio x spatial_ratio`` fine cells.

    Works on the last two axes ``(time, space)``.  The summation order is fixed:
    time-major, left to right, one constituent at a time.
    """
    if spatial_ratio == 1 and temporal_ratio == 1:
        return cells.copy()
    kt, ms = cells.shape[-2:]
    if kt % temporal_ratio or ms % spatial_ratio:
        raise GridError(f"cell array {cells.shape} does not tile into {temporal_ratio}x{spatial_ratio} blocks")
    out = np.zeros(cells.shape[:-2] + (kt // temporal_ratio, ms // spatial_ratio))
    for a in range(temporal_ratio):
        rows = cells[..., a::temporal_ratio, :]
        for b in range(spatial_ratio):
            out += rows[..., b::spatial_ratio]
    return out


class _EtaMixin:
    grid: GridConfig
    cells: np.ndarray

    @property
    def num_steps(self) -> int:
        return self.cells.shape[0]

    @property
    def horizon(self) -> float:
        return self.num_steps * self.grid.h

    def eta(self, k: int, i: int) -> float:
        if not (0 <= k < self.num_steps and 0 <= i < self.grid.num_space):
            raise IndexError(f"cell ({k}, {i}) outside {self.cells.shape}")
        return float(self.grid.num_space / self.grid.h * self.cells[k, i])

    def eta_row(self, k: int) -> np.ndarray:
        if not 0 <= k < self.num_steps:
            raise IndexError(f"time index {k} outside noise horizon of {self.num_steps} steps")
        return self.cells[k] * (self.grid.num_space / self.grid.h)


@dataclass(frozen=True, eq=False)
class NoiseField(_EtaMixin):
    grid: GridConfig
    cells: np.ndarray
    seed: int
    sample_index: int

    def __post_init__(self):
        self.cells.setflags(write=False)


@dataclass(frozen=True, eq=False)
class NoiseView(_EtaMixin):
    grid: GridConfig
    source: NoiseField = field(repr=False)
    spatial_ratio: int
    temporal_ratio: int
    cells: np.ndarray = field(repr=False)


def sample_noise(grid: GridConfig, horizon: float, seed: int, sample_index: int = 0) -> NoiseField:
    if horizon <= 0:
        raise GridError(f"noise horizon must be positive, got {horizon}")
    k = grid.exact_step_index(horizon)
    return NoiseField(grid, noise_rows(grid, seed, sample_index, 0, k), seed, sample_index)


def aggregate(noise: NoiseField, coarse: GridConfig) -> NoiseView:
    r = dyadic_ratio(coarse, noise.grid)
    cells = aggregate_cells(noise.cells, r, r * r)
    cells.setflags(write=False)
    return NoiseView(coarse, noise, r, r * r, cells)


def eta(noise, k: int, i: int) -> float:
    """Scheme increment ``2n / h`` times the cell integral at the noise's level."""
    return noise.eta(k, i)


def stream_rows(grid: GridConfig, seed: int, sample_index: int, num_steps: int, block: int):
    """Yield ``(k0, cells)`` slabs of ``block`` fine rows covering ``num_steps`` rows."""
    for k0 in range(0, num_steps, block):
        k1 = min(k0 + block, num_steps)
        yield k0, noise_rows(grid, seed, sample_index, k0, k1)


def dump_noise(noise: NoiseField, path) -> None:
    header = _HEADER.pack(
        DUMP_MAGIC, DUMP_VERSION, noise.grid.n, noise.grid.c, noise.num_steps,
        noise.seed & _MASK64, noise.sample_index & _MASK64,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(noise.cells, dtype="<f8").tobytes())


def load_noise(path) -> NoiseField:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError("truncated noise dump: missing header")
    magic, version, n, c, k, seed, sample_index = _HEADER.unpack_from(raw)
    if magic != DUMP_MAGIC:
        raise ValueError(f"not a noise dump (magic {magic!r})")
    if version != DUMP_VERSION:
        raise ValueError(f"unsupported noise dump version {version}")
    grid = GridConfig(n, c)
    body = raw[_HEADER.size:]
    if len(body) != 8 * k * grid.num_space:
        raise ValueError("truncated noise dump: body size does not match header")
    cells = np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(k, grid.num_space)
    return NoiseField(grid, cells, seed, sample_index)
