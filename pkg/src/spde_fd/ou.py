"""Continuum and discrete Ornstein-Uhlenbeck processes (the b = 0, psi = 0 case).

``O_t(x) = int_0^t int p_{t-r}(x - y) xi(dy, dr)`` and its discrete analogue
``O^n`` produced by the scheme.  Their pointwise variances are ``Q(t)`` and
``Q^n(t)``; both are evaluated exactly here, as is the coupled error
``E|O_t(x) - O^n_t(x)|^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import erfc, polygamma

from .grid import GridConfig, dyadic_ratio
from .kernels import CONT_CROSSOVER, FOUR_PI2, apply_semigroup_disc, spectral_table
from .noise import noise_rows, standard_normals
from .scheme import Stepper, get_drift, run

EIGHT_PI2 = 2 * FOUR_PI2
# counter offset for auxiliary normals, far away from any noise cell
AUX_STREAM_START = 2**62

# --- variance functions -------------------------------------------------------


def _q_fourier(t: float) -> float:
    # t + 2 sum_{k>=1} (1 - exp(-8 pi^2 k^2 t)) / (8 pi^2 k^2); the far tail
    # (exp part below 1e-17) collapses to a trigamma value
    kmax = int(math.ceil(math.sqrt(40.0 / (EIGHT_PI2 * t)))) + 1
    k = np.arange(1, kmax + 1, dtype=float)
    head = np.sum(-np.expm1(-EIGHT_PI2 * k**2 * t) / k**2)
    return t + 2.0 * (head + float(polygamma(1, kmax + 1))) / EIGHT_PI2


def _q_images(t: float) -> float:
    # int_0^t p_{2r}(0) dr with p in image form
    s = 2.0 * math.sqrt(t)
    m = np.arange(1, 8, dtype=float)
    a = m**2 / 8.0
    terms = 2.0 * math.sqrt(t) * np.exp(-a / t) - 2.0 * np.sqrt(np.pi * a) * erfc(np.sqrt(a / t))
    return (s + 2.0 * float(np.sum(terms))) / math.sqrt(8 * math.pi)


def q_cont(t: float) -> float:
    """Pointwise variance ``Q(t) = int_0^t ||p_r||^2 dr`` of the continuum OU process."""
    if t < 0:
        raise ValueError(f"Q needs t >= 0, got {t}")
    if t == 0:
        return 0.0
    return _q_images(t) if t < CONT_CROSSOVER else _q_fourier(t)


def _geom(logq: np.ndarray, q: np.ndarray, count: int) -> np.ndarray:
    """``sum_{k<count} q^k`` elementwise, stable for q near 1."""
    out = np.empty_like(q, dtype=float)
    pos = q > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        lq = logq[pos]
        one = lq == 0.0
        num = -np.expm1(count * lq)
        den = -np.expm1(lq)
        out[pos] = np.where(one, float(count), num / np.where(one, 1.0, den))
    qn = q[~pos]
    out[~pos] = np.where(qn == 0.0, 1.0 if count > 0 else 0.0, (1.0 - qn**count) / (1.0 - qn))
    if count == 0:
        out[:] = 0.0
    return out


def _log_rho(grid: GridConfig) -> tuple[np.ndarray, np.ndarray]:
    tab = spectral_table(grid)
    rho = tab.one_plus_h_lambda
    with np.errstate(divide="ignore"):
        logabs = np.log(np.abs(rho))
    return rho, logabs


def step_power_sums(grid: GridConfig, k: int) -> np.ndarray:
    """``G_j = sum_{m<k} (1 + h lambda_j)^{2m}`` for every mode (FFT order)."""
    rho, _ = _log_rho(grid)
    q = rho * rho
    with np.errstate(divide="ignore"):
        logq = np.log(q)
    return _geom(logq, q, k)


def q_disc(grid: GridConfig, t: float) -> float:
    """``Q^n(t) = int_0^t sum_j (1+h lambda_j)^{2 kappa(r)/h} dr`` evaluated exactly."""
    if t < 0:
        raise ValueError(f"Q^n needs t >= 0, got {t}")
    k = grid.step_index(t)
    rem = max(t - k * grid.h, 0.0)
    if k == 0:
        return grid.num_space * rem
    rho, _ = _log_rho(grid)
    full = grid.h * float(np.sum(step_power_sums(grid, k)))
    last = rem * float(np.sum(rho ** (2 * k))) if rem > 0 else 0.0
    return full + last


@dataclass(frozen=True)
class VarianceCurve:
    kind: str
    grid: GridConfig | None = None

    def __post_init__(self):
        if self.kind not in ("continuum", "discrete"):
            raise ValueError(f"unknown variance curve kind {self.kind!r}")
        if self.kind == "discrete" and self.grid is None:
            raise ValueError("discrete variance curve needs a grid")

    def __call__(self, t: float) -> float:
        return q_cont(t) if self.kind == "continuum" else q_disc(self.grid, t)


# --- discrete OU simulation ---------------------------------------------------


@dataclass(eq=False)
class OuTrajectory:
    grid: GridConfig
    values: np.ndarray = field(repr=False)  # (K + 1, 2n), row k is O^n at time k h
    noise: object = field(repr=False)

    def state(self, k: int) -> "OuState":
        return OuState(self.grid, k, self.values[k], self.noise)


@dataclass(frozen=True, eq=False)
class OuState:
    grid: GridConfig
    step: int
    values: np.ndarray = field(repr=False)
    noise: object = field(repr=False)

    @property
    def time(self) -> float:
        return self.step * self.grid.h


def simulate_ou_disc(grid: GridConfig, noise, t_end: float) -> OuTrajectory:
    """Discrete OU trajectory on ``[0, t_end]``; the same recursion as the scheme with b = 0."""
    res = run(grid, "zero", np.zeros(grid.num_space), noise, t_end, record_all=True)
    return OuTrajectory(grid, res.trajectory, noise)


def simulate_ou_batch(grid: GridConfig, cells: np.ndarray) -> np.ndarray:
    """Final O^n for a batch of cell arrays of shape ``(B, K, 2n)``."""
    b, k, m = cells.shape
    if m != grid.num_space:
        raise ValueError(f"cells of width {m} do not match {grid.num_space} gridpoints")
    stepper = Stepper(grid, get_drift("zero"), (b, m))
    u = np.zeros((b, m))
    nxt = np.empty_like(u)
    scale = grid.num_space / grid.h
    for j in range(k):
        stepper.advance(u, cells[:, j, :] * scale, nxt)
        u, nxt = nxt, u
    return u


def sample_ou_disc_marginal(grid: GridConfig, t: float, seed: int, size: int) -> np.ndarray:
    """Exact draws of the field ``O^n_t`` (shape ``(size, 2n)``) at a grid time.

    ``O^n_t`` is a stationary Gaussian field with circulant covariance whose
    eigenvalues are ``2n h G_j``; white normals are filtered in Fourier space.
    """
    k = grid.exact_step_index(t)
    m = grid.num_space
    amp = np.sqrt(m * grid.h * step_power_sums(grid, k))
    z = np.stack([standard_normals(seed, i, 0, m) for i in range(size)])
    return np.fft.ifft(np.fft.fft(z, axis=-1) * amp, axis=-1).real


def ou_hat(grid: GridConfig, state_s: np.ndarray, s: float, t: float) -> np.ndarray:
    """The F_s-measurable part of ``O^n_t``: the discrete semigroup applied to ``O^n_s``."""
    ks, kt = grid.exact_step_index(s), grid.exact_step_index(t)
    if kt < ks:
        raise ValueError(f"need s <= t, got s={s}, t={t}")
    return apply_semigroup_disc(grid, state_s, (kt - ks) * grid.h)


_GH_NODES, _GH_WEIGHTS = hermegauss(64)
_GH_WEIGHTS = _GH_WEIGHTS / math.sqrt(2 * math.pi)


def gauss_smooth(g, variance: float, z):
    """``E g(z + sqrt(variance) Z)`` for standard normal ``Z`` (Gauss-Hermite, 64 nodes)."""
    if variance < 0:
        raise ValueError(f"variance must be non-negative, got {variance}")
    z = np.asarray(z, dtype=float)
    if variance == 0:
        out = np.asarray(g(z), dtype=float)
    else:
        pts = z[..., None] + math.sqrt(variance) * _GH_NODES
        out = np.asarray(g(pts), dtype=float) @ _GH_WEIGHTS
    return out if out.ndim else float(out)


# --- exact coupling error -------------------------------------------------------


def _image_grid(grid: GridConfig, m_max: int):
    m = grid.num_space
    j = spectral_table(grid).modes
    ell = (j[None, :] + m * np.arange(-m_max, m_max + 1)[:, None]).astype(float)
    u = ell / m
    return ell, u


def _default_images(grid: GridConfig) -> int:
    return max(64, 2**20 // grid.num_space // 2)


def _coupling_integral(grid: GridConfig, k_lo: int, k_hi: int, m_max: int) -> float:
    """``int ||p_s - p^n_{kappa(s)}(x, .)||^2 ds`` over ``s in [k_lo h, k_hi h]``."""
    h = grid.h
    count = k_hi - k_lo
    if count <= 0:
        return 0.0
    rho, logabs = _log_rho(grid)
    ell, u = _image_grid(grid, m_max)
    alpha = FOUR_PI2 * ell**2
    zero = ell == 0
    a_safe = np.where(zero, 1.0, alpha)
    lo, hi = k_lo * h, k_hi * h
    # int e^{-2 alpha s}
    i2 = np.where(zero, hi - lo, np.exp(-2 * alpha * lo) * -np.expm1(-2 * alpha * (hi - lo)) / (2 * a_safe))
    # sum_k rho^k int_{kh}^{(k+1)h} e^{-alpha s} ds
    step_int = np.where(zero, h, -np.expm1(-alpha * h) / a_safe)
    q = rho[None, :] * np.exp(-alpha * h)
    logq = logabs[None, :] - alpha * h
    with np.errstate(divide="ignore", invalid="ignore"):
        start = np.where(q > 0, np.exp(k_lo * logq), np.where(q == 0, float(k_lo == 0), q**k_lo))
    cross = step_int * start * _geom(logq, q, count)
    d_re = np.cos(np.pi * u) * np.sinc(u)
    d_sq = np.sinc(u) ** 2
    rho2 = rho * rho
    with np.errstate(divide="ignore"):
        g = (rho2**k_lo) * _geom(np.log(rho2), rho2, count)
    main = np.sum(i2 - 2 * d_re * cross + d_sq * h * g[None, :])
    # frequencies beyond the images: the discrete part via trigamma, the
    # continuum part only matters when the window starts at s = 0
    s2 = np.sin(np.pi * spectral_table(grid).modes / grid.num_space) ** 2 / np.pi**2
    uj = spectral_table(grid).modes / grid.num_space
    alias = np.where(uj == 0, 0.0, s2 * (polygamma(1, uj + m_max + 1) + polygamma(1, m_max + 1 - uj)))
    tail = h * float(np.sum(g * alias))
    if k_lo == 0:
        l_hi = grid.n - 1 + grid.num_space * m_max
        l_lo = grid.n + grid.num_space * m_max
        tail += float(polygamma(1, l_hi + 1) + polygamma(1, l_lo + 1)) / EIGHT_PI2
    return float(main + tail)


def ou_coupling_error_sq(grid: GridConfig, t: float, images: int | None = None, split: bool = False):
    """Exact ``E|O_t(x) - O^n_t(x)|^2`` at a grid time ``t`` (independent of the gridpoint x).

    By the Ito isometry this is ``int_0^t ||p_s - p^n_{kappa(s)}||^2 ds``.  On
    each step the discrete kernel is frozen, so every Fourier mode contributes
    a closed-form integral; the sum over steps is geometric.  With
    ``split=True`` returns ``(int_0^h, int_h^t)`` separately.
    """
    k = grid.exact_step_index(t)
    if k == 0:
        return (0.0, 0.0) if split else 0.0
    m_max = images or _default_images(grid)
    first = _coupling_integral(grid, 0, 1, m_max)
    rest = _coupling_integral(grid, 1, k, m_max)
    return (first, rest) if split else first + rest


def ou_pair_coupling_error_sq(coarse: GridConfig, fine: GridConfig, t: float) -> float:
    """Exact ``E|O^{fine}_t(x) - O^{coarse}_t(x)|^2`` for coarse noise aggregated from the fine noise."""
    r = dyadic_ratio(coarse, fine)
    wf = _disc_weights(fine, fine.exact_step_index(t))
    wc = _disc_weights(coarse, coarse.exact_step_index(t))
    parent = np.repeat(np.repeat(wc, r * r, axis=0), r, axis=1)
    area = fine.h / fine.num_space
    return float(np.sum((wf - parent) ** 2) * area)


def _disc_weights(grid: GridConfig, k: int) -> np.ndarray:
    """Weights ``w[k', l]`` with ``O^n_{kh}(0) = sum w[k', l] * cell[k', l]``."""
    m = grid.num_space
    out = np.empty((k, m))
    v = np.zeros(m)
    v[0] = float(m)  # p^n_0(0, y_l) = 2n delta
    lap = np.empty(m)
    for lag in range(k):
        out[k - 1 - lag] = v
        lap[1:-1] = v[2:] + v[:-2]
        lap[0] = v[1] + v[-1]
        lap[-1] = v[0] + v[-2]
        lap -= 2 * v
        v = v + grid.h * m * m * lap
    return out


def cont_cell_weights(grid: GridConfig, t: float, images: int = 256) -> np.ndarray:
    """Projection weights of ``O_t(0)`` on the cell integrals of ``grid``.

    ``w[k, l] = |cell|^{-1} int_cell p_{t-r}(-y) dy dr``, so that
    ``O_t(0) = sum w * cell + (independent remainder)``.
    """
    kt = grid.exact_step_index(t)
    m = grid.num_space
    h = grid.h
    ell, u = _image_grid(grid, images)
    alpha = FOUR_PI2 * ell**2
    zero = ell == 0
    step_int = np.where(zero, h, -np.expm1(-alpha * h) / np.where(zero, 1.0, alpha))
    dconj = np.exp(-1j * np.pi * u) * np.sinc(u)
    out = np.empty((kt, m))
    for k in range(kt):
        lag = t - (k + 1) * h
        tk = np.exp(-alpha * lag) * step_int
        wj = np.sum(tk * dconj, axis=0)  # per discrete mode j (FFT order)
        # w[l] = (1/h) sum_j wj e^{-2 pi i j l / 2n}
        out[k] = np.fft.fft(wj).real / h
    return out


@dataclass(frozen=True)
class CoupledOuOracle:
    """Joint law of ``(O_t(0), O^n_t(0))`` driven by the same cell noise."""

    grid: GridConfig
    t: float
    w_cont: np.ndarray = field(repr=False)
    w_disc: np.ndarray = field(repr=False)
    residual_var: float

    @property
    def error_sq(self) -> float:
        area = self.grid.h / self.grid.num_space
        return float(np.sum((self.w_cont - self.w_disc) ** 2) * area + self.residual_var)


def coupled_ou_oracle(grid: GridConfig, t: float, images: int = 256) -> CoupledOuOracle:
    k = grid.exact_step_index(t)
    wc = cont_cell_weights(grid, t, images)
    wd = _disc_weights(grid, k)
    area = grid.h / grid.num_space
    resid = q_cont(t) - float(np.sum(wc**2) * area)
    if resid < -1e-10:
        raise ArithmeticError(f"negative residual variance {resid:.3e}; increase images")
    return CoupledOuOracle(grid, t, wc, wd, max(resid, 0.0))


def coupled_ou_samples(grid: GridConfig, t: float, seed: int, samples: int, images: int = 256, batch: int = 500):
    """Monte Carlo pairs ``(O_t(0), O^n_t(0))`` under common noise.

    ``O^n`` is produced by the scheme recursion; ``O_t`` from its exact
    projection on the same cells plus an independent remainder drawn from an
    auxiliary stream of the same sample key.
    """
    oracle = coupled_ou_oracle(grid, t, images)
    k = grid.exact_step_index(t)
    cont = np.empty(samples)
    disc = np.empty(samples)
    sd = math.sqrt(oracle.residual_var)
    for b0 in range(0, samples, batch):
        idx = range(b0, min(b0 + batch, samples))
        cells = np.stack([noise_rows(grid, seed, i, 0, k) for i in idx])
        disc[b0:b0 + len(idx)] = simulate_ou_batch(grid, cells)[:, 0]
        aux = np.array([standard_normals(seed, i, AUX_STREAM_START, 1)[0] for i in idx])
        cont[b0:b0 + len(idx)] = np.einsum("bkl,kl->b", cells, oracle.w_cont) + sd * aux
    return cont, disc
