"""Eigenstructure of the periodic Laplacians and the associated heat kernels.

Modes are kept in FFT order, i.e. ``j = 0, 1, ..., n-1, -n, ..., -1``, which is
exactly the range ``-n <= j <= n-1`` used by the discrete basis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import polygamma

from .grid import FLOOR_GUARD, GridConfig, GridError

FOUR_PI2 = 4.0 * math.pi**2
# below this time the periodic kernel is evaluated through Gaussian images
CONT_CROSSOVER = 1e-3
N_IMAGES = 6
IMAG_TOL = 1e-12


def lambda_cont(j):
    return -FOUR_PI2 * np.asarray(j, dtype=float) ** 2


def _check_mode(n: int, j) -> None:
    ja = np.asarray(j)
    if np.any(ja < -n) or np.any(ja > n - 1):
        raise ValueError(f"mode index {j} outside [-{n}, {n - 1}]")


def lambda_disc(n: int, j):
    """Eigenvalue ``-16 n^2 sin^2(j pi / 2n)`` of the discrete Laplacian."""
    _check_mode(n, j)
    return -16.0 * n * n * np.sin(np.asarray(j, dtype=float) * math.pi / (2 * n)) ** 2


def fft_modes(n: int) -> np.ndarray:
    return np.rint(np.fft.fftfreq(2 * n) * 2 * n).astype(np.int64)


@dataclass(frozen=True, eq=False)
class SpectralTable:
    grid: GridConfig
    modes: np.ndarray
    lambda_cont: np.ndarray
    lambda_disc: np.ndarray
    gamma: np.ndarray
    one_plus_h_lambda: np.ndarray

    def index(self, j: int) -> int:
        _check_mode(self.grid.n, j)
        return int(j) % self.grid.num_space


@lru_cache(maxsize=64)
def spectral_table(grid: GridConfig) -> SpectralTable:
    j = fft_modes(grid.n)
    lc = lambda_cont(j)
    ld = lambda_disc(grid.n, j)
    gamma = np.ones_like(ld)
    nz = j != 0
    gamma[nz] = ld[nz] / lc[nz]
    for arr in (j, lc, ld, gamma):
        arr.setflags(write=False)
    ohl = 1.0 + grid.h * ld
    ohl.setflags(write=False)
    return SpectralTable(grid, j, lc, ld, gamma, ohl)


def delta0(c: float) -> float:
    """Exponent ``delta_0(c)`` with ``|1 - x| <= exp(-delta_0 x)`` on ``[0, 4c]``."""
    if 4 * c > 1:
        return min(1.0, -(c / 4.0) * math.log(4 * c - 1))
    return 1.0


def cfl_delta(c: float) -> float:
    return 16.0 * delta0(c)


def _split_time(grid: GridConfig, t: float) -> tuple[int, float]:
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t}")
    k = int(math.floor(t / grid.h + FLOOR_GUARD))
    frac = min(max(t / grid.h - k, 0.0), 1.0)
    return k, frac


def mu_vector(grid: GridConfig, t: float) -> np.ndarray:
    """Temporal factors ``mu_j(t)`` for all modes (FFT order)."""
    base = spectral_table(grid).one_plus_h_lambda
    k, frac = _split_time(grid, t)
    lo = np.power(base, k)
    if frac == 0.0:
        return lo
    return lo + frac * (lo * base - lo)


def mu_coeff(grid: GridConfig, j: int, t: float) -> float:
    _check_mode(grid.n, j)
    return float(mu_vector(grid, t)[int(j) % grid.num_space])


def basis_eval(n: int, j, x):
    """Piecewise-linear interpolant of ``e_j`` through the space gridpoints."""
    _check_mode(n, j)
    x = np.asarray(x, dtype=float) % 1.0
    m = 2 * n
    i = np.floor(x * m + FLOOR_GUARD)
    theta = np.clip(x * m - i, 0.0, 1.0)
    j = np.asarray(j)
    left = np.exp(2j * np.pi * j * i / m)
    right = np.exp(2j * np.pi * j * (i + 1) / m)
    out = left + theta * (right - left)
    return out if out.ndim else complex(out)


def _real(z: np.ndarray, what: str) -> np.ndarray:
    scale = max(1.0, float(np.max(np.abs(z.real), initial=0.0)))
    resid = float(np.max(np.abs(z.imag), initial=0.0))
    if resid > IMAG_TOL * scale:
        raise ArithmeticError(f"{what}: imaginary residue {resid:.3e} exceeds tolerance")
    return np.array(z.real, copy=True)


def discrete_heat_kernel(grid: GridConfig, t: float, x, y):
    """``p^n_t(x, y)`` for arbitrary points (broadcast over ``x`` and ``y``)."""
    tab = spectral_table(grid)
    mu = mu_vector(grid, t)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float) % 1.0
    yg = np.floor(y * grid.num_space + FLOOR_GUARD) / grid.num_space
    j = tab.modes
    ex = basis_eval(grid.n, j, x[..., None])
    ey = np.exp(-2j * np.pi * j * yg[..., None])
    val = _real(np.sum(mu * ex * ey, axis=-1), "discrete heat kernel")
    return val if val.ndim else float(val)


def kernel_matrix(grid: GridConfig, t: float) -> np.ndarray:
    """``P[a, b] = p^n_t(x_a, x_b)`` on the gridpoints, by direct mode summation."""
    m = grid.num_space
    j = spectral_table(grid).modes
    e = np.exp(2j * np.pi * np.outer(np.arange(m), j) / m)
    return _real((e * mu_vector(grid, t)) @ e.conj().T, "kernel matrix")


def _check_field(grid: GridConfig, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.ndim == 0 or f.shape[-1] != grid.num_space:
        raise ValueError(f"field of shape {f.shape} does not live on a grid with {grid.num_space} points")
    return f


def apply_semigroup_disc(grid: GridConfig, f, t: float) -> np.ndarray:
    """``P^n_t f`` for ``f`` on the space grid (last axis), via the DFT."""
    f = _check_field(grid, f)
    g = np.fft.ifft(np.fft.fft(f, axis=-1) * mu_vector(grid, t), axis=-1)
    return _real(g, "discrete semigroup")


def walk_distribution(grid: GridConfig, k: int) -> np.ndarray:
    """Law of the lazy walk on Z/2nZ after ``k`` steps, by dynamic programming."""
    c = grid.c
    p = np.zeros(grid.num_space)
    p[0] = 1.0
    for _ in range(k):
        p = (1.0 - 2.0 * c) * p + c * np.roll(p, 1) + c * np.roll(p, -1)
    return p


def random_walk_semigroup(grid: GridConfig, f, t: float) -> np.ndarray:
    """``E f(x + S_t)`` for the lazy random walk with steps {-1: c, 0: 1-2c, 1: c}."""
    f = _check_field(grid, f)
    k = grid.exact_step_index(t)
    p = walk_distribution(grid, k)
    out = np.zeros_like(f)
    for shift, w in enumerate(p):
        if w != 0.0:
            out += w * np.roll(f, -shift, axis=-1)
    return out


def discrete_laplacian(grid: GridConfig, f, out: np.ndarray | None = None) -> np.ndarray:
    """Periodic second difference ``(2n)^2 (f(x+dx) - 2 f(x) + f(x-dx))`` on the last axis."""
    f = _check_field(grid, f)
    if out is None:
        out = np.empty_like(f)
    out[..., 1:-1] = f[..., 2:] + f[..., :-2]
    out[..., 0] = f[..., 1] + f[..., -1]
    out[..., -1] = f[..., 0] + f[..., -2]
    out -= 2.0 * f
    out *= float(grid.num_space) ** 2
    return out


# --- continuum torus ---------------------------------------------------------


@dataclass(frozen=True)
class FourierSeries:
    """Real function ``sum_k coeffs[k] exp(i 2 pi modes[k] x)`` on the torus."""

    modes: np.ndarray
    coeffs: np.ndarray

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        z = np.exp(2j * np.pi * x[..., None] * self.modes) @ self.coeffs
        return z.real

    def heat(self, t: float) -> "FourierSeries":
        return FourierSeries(self.modes, self.coeffs * np.exp(-FOUR_PI2 * self.modes**2 * t))


def _fourier_cutoff(t: float, tol: float) -> int:
    return int(math.ceil(math.sqrt(-math.log(tol) / (FOUR_PI2 * t)))) + 1


def heat_kernel_cont(t: float, x, tol: float = 1e-16):
    """Periodic heat kernel ``p_t(x) = sum_k exp(-4 pi^2 k^2 t) e_k(x)``."""
    if t <= 0:
        raise ValueError("continuum heat kernel needs t > 0")
    x = np.asarray(x, dtype=float) % 1.0
    if t < CONT_CROSSOVER:
        k = np.arange(-N_IMAGES, N_IMAGES + 1)
        z = x[..., None] + k
        out = np.exp(-(z**2) / (4 * t)).sum(axis=-1) / math.sqrt(4 * math.pi * t)
    else:
        k = np.arange(1, _fourier_cutoff(t, tol) + 1)
        out = 1.0 + 2.0 * (np.exp(-FOUR_PI2 * k**2 * t) * np.cos(2 * np.pi * x[..., None] * k)).sum(axis=-1)
    return out if out.ndim else float(out)


def apply_semigroup_cont(f, t: float, x=None, tol: float = 1e-16):
    """``P_t f`` on the torus.

    ``f`` is a :class:`FourierSeries` (evaluated at ``x``, default: returns the
    damped series) or an array of samples on a uniform grid over [0, 1), in
    which case its trigonometric interpolant is damped mode by mode.
    """
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t}")
    if isinstance(f, FourierSeries):
        g = f if t == 0 else f.heat(t)
        return g if x is None else g(x)
    f = np.asarray(f, dtype=float)
    if t == 0:
        return f.copy()
    m = f.shape[-1]
    k = np.fft.fftfreq(m) * m
    damp = np.exp(-FOUR_PI2 * k**2 * t)
    damp[damp < tol] = 0.0
    return np.fft.ifft(np.fft.fft(f, axis=-1) * damp, axis=-1).real


# --- kernel distance ---------------------------------------------------------


def _alias_tail(u: np.ndarray, m_max: int) -> np.ndarray:
    """``sum_{|m| > m_max} sinc(u + m)^2`` in closed form, for ``|u| <= 1/2``."""
    s2 = np.sin(np.pi * u) ** 2 / np.pi**2
    tail = polygamma(1, u + m_max + 1) + polygamma(1, m_max + 1 - u)
    return np.where(u == 0, 0.0, s2 * tail)


def _image_modes(grid: GridConfig, t_min: float) -> tuple[np.ndarray, int]:
    m = grid.num_space
    cutoff = _fourier_cutoff(t_min, 1e-17) if t_min > 0 else 16 * m
    m_max = max(1, int(math.ceil(cutoff / m)) + 1)
    j = spectral_table(grid).modes
    ell = j[None, :] + m * np.arange(-m_max, m_max + 1)[:, None]
    return ell, m_max


def kernel_l2_distance_sq(grid: GridConfig, t: float, x: float = 0.0) -> float:
    """``|| p_t(x - .) - p^n_{kappa(t)}(x, .) ||^2`` in L2 of the torus.

    The discrete kernel is piecewise constant in ``y``; its Fourier coefficient
    at frequency ``l = j + 2n m`` is ``b_j exp(i pi l / 2n) sinc(l / 2n)``.
    Frequencies beyond the retained images only carry the discrete part and are
    summed exactly with the trigamma function.
    """
    if t < grid.h * (1 - 1e-12):
        raise ValueError(f"t={t} is below the time step h={grid.h}")
    tab = spectral_table(grid)
    s = grid.step_index(t) * grid.h
    b = mu_vector(grid, s) * basis_eval(grid.n, tab.modes, x)
    ell, m_max = _image_modes(grid, t)
    u = ell / grid.num_space
    a = np.exp(-FOUR_PI2 * ell**2 * t) * np.exp(2j * np.pi * ell * x)
    d = np.exp(1j * np.pi * u) * np.sinc(u)
    main = np.sum(np.abs(a - b[None, :] * d) ** 2)
    tail = np.sum(np.abs(b) ** 2 * _alias_tail(tab.modes / grid.num_space, m_max))
    return float(main + tail)


def kernel_l2_distance_sq_quadrature(grid: GridConfig, t: float, x: float = 0.0, resolution: int = 2**14) -> float:
    """Brute-force midpoint quadrature of the same distance (cross-check only)."""
    y = (np.arange(resolution) + 0.5) / resolution
    cont = heat_kernel_cont(t, x - y)
    disc = discrete_heat_kernel(grid, grid.step_index(t) * grid.h, x, y)
    return float(np.mean((cont - disc) ** 2))


def semigroup_compose_check(grid: GridConfig, s: float, t: float) -> float:
    """Max over gridpoint pairs of ``|(p_t *_n p_s(., y))(x) - p_{t+s}(x, y)|``."""
    ks = grid.exact_step_index(s)
    kt = grid.exact_step_index(t)
    pt = kernel_matrix(grid, kt * grid.h)
    ps = kernel_matrix(grid, ks * grid.h)
    composed = pt @ ps / grid.num_space
    direct = kernel_matrix(grid, (ks + kt) * grid.h)
    return float(np.max(np.abs(composed - direct)))


def cfl_decay_margins(grid: GridConfig, k_max: int) -> tuple[float, float]:
    """Largest log-violations of ``|1+h l|^k <= exp(d0 k h l) <= exp(-d k h j^2)``.

    Returned values are ``max(lhs - rhs)`` in log space over all modes and
    ``k = 1..k_max``; both are ``<= 0`` (up to rounding) when the bound holds.
    """
    tab = spectral_table(grid)
    d0 = delta0(grid.c)
    d = cfl_delta(grid.c)
    base = np.abs(tab.one_plus_h_lambda)
    with np.errstate(divide="ignore"):
        logb = np.log(base)
    hl = grid.h * tab.lambda_disc
    hj2 = grid.h * tab.modes.astype(float) ** 2
    # all three sides are linear in k, so the worst case sits at k = 1 or k_max
    ks = np.array([1.0, float(k_max)])[:, None]
    first = ks * logb - ks * d0 * hl
    second = ks * d0 * hl + ks * d * hj2
    return float(np.max(first)), float(np.max(second))
