"""Constants of the scaling limits.

Exponents of the rescaling regimes, the Brownian diffusion constant
``gamma_R``, the stable jump kernel ``phi_kernel``, the Lévy symbol of the
(pre-)limiting jump law and the fractional generator built on it.
"""
from __future__ import annotations

import csv
import functools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .errors import ConfigError, InputError, ResolutionWarning
from .events import EventModel, FixedRadius, StableRadii
from .geometry import _check_dimension, ball_intersection_volume, ball_volume

_QUAD = dict(epsabs=0.0, epsrel=1e-12, limit=500)


@dataclass(frozen=True)
class ScalingParams:
    """Exponents and rescaled parameters u_n = u / n^gamma, s_n = sigma / n^delta."""

    n: float
    beta: float
    gamma: float
    delta: float
    u_n: float
    s_n: float
    case: FixedRadius | StableRadii

    @property
    def alpha(self) -> float:
        return 2.0 if isinstance(self.case, FixedRadius) else self.case.alpha

    @property
    def space_factor(self) -> float:
        """Multiply unscaled coordinates by this to get rescaled ones."""
        return self.n ** (-self.beta)

    @property
    def time_factor(self) -> float:
        """Unscaled time elapsed per unit of rescaled time."""
        return float(self.n)

    def model(self) -> EventModel:
        return EventModel(self.case, self.u_n, self.s_n)


def exponents(alpha: float) -> tuple[float, float, float]:
    """(beta, gamma, delta) for tail index ``alpha``; alpha = 2 is the fixed-radius regime."""
    k = 2 * alpha - 1
    return 1 / k, (alpha - 1) / k, alpha / k


def scaling_params(n: float, case: FixedRadius | StableRadii, u: float = 1.0,
                   sigma: float = 1.0) -> ScalingParams:
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    if isinstance(case, FixedRadius):
        beta, gamma, delta = 1 / 3, 1 / 3, 2 / 3
    elif isinstance(case, StableRadii):
        if not 1 < case.alpha < 2:
            raise ConfigError(f"alpha must be in (1,2), got {case.alpha}")
        beta, gamma, delta = exponents(case.alpha)
    else:
        raise ConfigError(f"unknown rescaling case {case!r}")
    return ScalingParams(n=n, beta=beta, gamma=gamma, delta=delta,
                         u_n=u / n**gamma, s_n=sigma / n**delta, case=case)


def _section_volume(d: int, rho: float) -> float:
    # volume of the (d-1)-ball of radius rho cut by a hyperplane
    if d == 1:
        return 1.0
    if rho <= 0:
        return 0.0
    k = d - 1
    return math.pi ** (k / 2) * rho**k / math.gamma(k / 2 + 1)


@functools.lru_cache(maxsize=None)
def gamma_R(d: int, R: float) -> float:
    """(1/V_R) int_{B(0,R)} int_{B(x,R)} z_1^2 dz dx by deterministic quadrature.

    Both integrands depend on the first coordinate only, so each ball integral
    is reduced to a one-dimensional integral against hyperplane sections.
    """
    _check_dimension(d)
    if R <= 0:
        raise InputError(f"R must be positive, got {R}")

    def inner(z1, x1):
        return z1 * z1 * _section_volume(d, math.sqrt(max(R * R - (z1 - x1) ** 2, 0.0)))

    def outer(x1):
        return _section_volume(d, math.sqrt(max(R * R - x1 * x1, 0.0)))

    val, _ = integrate.dblquad(lambda z1, x1: inner(z1, x1) * outer(x1),
                               -R, R, lambda x1: x1 - R, lambda x1: x1 + R,
                               epsabs=0.0, epsrel=1e-11)
    return val / ball_volume(d, R)


def phi_kernel(d: int, alpha: float, m: float) -> float:
    """Jump kernel int_{m/2}^inf r^-(d+1+alpha) V_r(m) / V_r dr of the stable limit."""
    _check_dimension(d)
    if not m > 0:
        raise InputError(f"m must be positive, got {m}")

    def integrand(r):
        return r ** (-(d + 1 + alpha)) * ball_intersection_volume(d, r, m) / ball_volume(d, r)

    lo = m / 2
    head, _ = integrate.quad(integrand, lo, 4 * lo, **_QUAD)
    tail, _ = integrate.quad(integrand, 4 * lo, math.inf, **_QUAD)
    return head + tail


def phi_kernel_1d_closed(alpha: float, m):
    """Closed form of ``phi_kernel`` in one dimension."""
    m = np.asarray(m, dtype=float)
    return (m / 2) ** (-(1 + alpha)) / ((1 + alpha) * (2 + alpha))


def ball_charfn(d: int, rho):
    """Characteristic function of the uniform law on the unit ball at |theta| = rho."""
    rho = np.abs(np.asarray(rho, dtype=float))
    out = np.empty_like(rho)
    small = rho < 0.5
    # power series Gamma(d/2+1) sum (-1)^k (rho/2)^2k / (k! Gamma(k+d/2+1))
    x = (rho[small] / 2) ** 2
    acc = np.zeros_like(x)
    term = np.ones_like(x)
    nu = d / 2
    for k in range(12):
        if k > 0:
            term = term * (-x) / (k * (k + nu))
        acc += term
    out[small] = acc
    big = rho[~small]
    if d == 1:
        out[~small] = np.sin(big) / big
    elif d == 2:
        out[~small] = 2 * special.j1(big) / big
    else:
        out[~small] = 3 * (np.sin(big) - big * np.cos(big)) / big**3
    return out


def _charfn_scalar(d: int, rho: float) -> float:
    if rho < 0.5:
        return float(ball_charfn(d, rho))
    if d == 1:
        return math.sin(rho) / rho
    if d == 2:
        return 2 * special.j1(rho) / rho
    return 3 * (math.sin(rho) - rho * math.cos(rho)) / rho**3


def _one_minus_charfn_sq(d: int, rho: float) -> float:
    phi = _charfn_scalar(d, rho)
    if rho < 0.5:
        # 1 - phi^2 = (1 - phi)(1 + phi) without cancellation
        x = (rho / 2) ** 2
        nu = d / 2
        term, acc = 1.0, 0.0
        for k in range(1, 14):
            term = term * (-x) / (k * (k + nu))
            acc -= term
        return acc * (1 + phi)
    return 1.0 - phi * phi


def _cutoff(n, alpha: float) -> float:
    if n is None or math.isinf(n):
        return 0.0
    return float(n) ** (-1.0 / (2 * alpha - 1))


_TAIL_RHO = 2.0e3


def _charfn_sq_tail(d: int, alpha: float, k: float, r1: float) -> float:
    """int_{r1}^inf V_1 r^-(1+alpha) phi(k r)^2 dr."""
    v1 = ball_volume(d, 1.0)
    total = 0.0
    lo = r1
    r_end = _TAIL_RHO / k
    while lo < r_end:
        hi = min(2 * lo, r_end)
        total += integrate.quad(lambda r: v1 * r ** (-(1 + alpha)) * _charfn_scalar(d, k * r) ** 2,
                                lo, hi, epsabs=0.0, epsrel=1e-10, limit=1000)[0]
        lo = hi
    # far tail: replace phi^2 by its local average over an oscillation
    p = {1: 2, 2: 3, 3: 4}[d]
    c = {1: 0.5, 2: 4 / math.pi, 3: 4.5}[d]
    total += v1 * c * k ** (-p) * lo ** (-(alpha + p)) / (alpha + p)
    return total


def levy_symbol(theta, d: int, alpha: float, n=None) -> float:
    """Lévy symbol of the rescaled single-lineage jump law (without the factor u).

    ``n = None`` (or inf) gives the limit symbol; finite ``n`` truncates the
    radius integral below n^-beta.  The jump density given a radius is the
    two-fold convolution of the uniform ball law, whose characteristic
    function is the squared uniform-ball characteristic function.
    """
    _check_dimension(d)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    k = float(np.linalg.norm(theta))
    if k == 0:
        return 0.0
    a = _cutoff(n, alpha)
    v1 = ball_volume(d, 1.0)

    def integrand(r):
        return -v1 * r ** (-(1 + alpha)) * _one_minus_charfn_sq(d, k * r)

    r1 = max(a, 8.0 / k)
    val = 0.0
    if r1 > a:
        # split the non-oscillatory head at r = 1/k for accuracy
        mid = min(max(a, 1.0 / k), r1)
        if mid > a:
            val += integrate.quad(integrand, a, mid, **_QUAD)[0]
        val += integrate.quad(integrand, mid, r1, **_QUAD)[0]
    # beyond r1: -V_1 int r^-(1+alpha) dr exactly, plus the decaying phi^2 part
    val += -v1 * r1 ** (-alpha) / alpha
    val += _charfn_sq_tail(d, alpha, k, r1)
    return val


def levy_symbol_gap(theta, d: int, alpha: float, n) -> float:
    """psi^n(theta) - psi(theta), integrated directly over radii below the cutoff."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    k = float(np.linalg.norm(theta))
    a = _cutoff(n, alpha)
    if k == 0 or a == 0:
        return 0.0
    v1 = ball_volume(d, 1.0)
    val, _ = integrate.quad(lambda r: v1 * r ** (-(1 + alpha)) * _one_minus_charfn_sq(d, k * r),
                            0.0, a, **_QUAD)
    return val


@functools.lru_cache(maxsize=None)
def stable_constant(d: int, alpha: float) -> float:
    """c such that the limit symbol is psi(theta) = -c |theta|^alpha."""
    return -levy_symbol(1.0, d, alpha)


@dataclass
class KernelSpec:
    """Stable kernel data for dimension ``d``, index ``alpha`` and impact ``u``."""

    d: int
    alpha: float
    u: float
    n: float | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        _check_dimension(self.d)
        if not 1 < self.alpha < 2:
            raise ConfigError(f"alpha must be in (1,2), got {self.alpha}")

    def phi(self, m) -> np.ndarray:
        return np.array([phi_kernel(self.d, self.alpha, float(x)) for x in np.atleast_1d(m)])

    def psi(self, k: float) -> float:
        """Symbol at |theta| = k, cached."""
        key = round(float(k), 12)
        if key not in self._cache:
            if self.n is None:
                # exact homogeneity of the limit symbol makes one quadrature enough
                self._cache[key] = -stable_constant(self.d, self.alpha) * abs(key) ** self.alpha
            else:
                self._cache[key] = levy_symbol(key, self.d, self.alpha, self.n)
        return self._cache[key]

    def generator_symbol(self, k) -> np.ndarray:
        """Fourier multiplier u * psi(|theta|) of the fractional generator."""
        k = np.asarray(k, dtype=float)
        flat = k.ravel()
        uniq, inv = np.unique(np.round(flat, 12), return_inverse=True)
        vals = np.array([self.psi(x) for x in uniq])
        return self.u * vals[inv].reshape(k.shape)


def wavenumbers(d: int, m: int, L: float) -> np.ndarray:
    """|theta| on the FFT grid of an m^d periodic grid of side L."""
    k1 = 2 * np.pi * np.fft.fftfreq(m, d=L / m)
    grids = np.meshgrid(*([k1] * d), indexing="ij")
    return np.sqrt(sum(g * g for g in grids))


MIN_CELLS_PER_SIDE = 16


def apply_fractional_generator(f: np.ndarray, spec: KernelSpec, L: float) -> np.ndarray:
    """Fractional generator of a periodic grid function via its Fourier multiplier."""
    f = np.asarray(f, dtype=float)
    m = f.shape[-1]
    if m < MIN_CELLS_PER_SIDE:
        warnings.warn(f"{m} cells per side is too coarse for the stable generator",
                      ResolutionWarning, stacklevel=2)
    axes = tuple(range(f.ndim - spec.d, f.ndim))
    mult = spec.generator_symbol(wavenumbers(spec.d, m, L))
    return np.real(np.fft.ifftn(mult * np.fft.fftn(f, axes=axes), axes=axes))


def fractional_generator_quadrature(f, y: float, spec: KernelSpec, m0: float = 2e-3,
                                    M: float = 1000.0) -> float:
    """u int Phi(|z - y|)(f(z) - f(y)) dz in d = 1 by direct quadrature.

    ``f`` is a bounded smooth callable on the real line.  Below ``m0`` the
    second difference is replaced by f''(y) m^2 (Richardson estimate) and
    integrated exactly; ``[m0, M]`` is integrated in unit chunks; beyond
    ``M`` only the -2 f(y) part is kept, which leaves an oscillating
    remainder of order Phi(M) for periodic f.
    """
    if spec.d != 1:
        raise InputError("direct quadrature is implemented for d = 1 only")
    a = spec.alpha
    norm = (1 + a) * (2 + a)
    fy = f(y)

    def d2(h):
        return (f(y + h) + f(y - h) - 2 * fy) / (h * h)

    curvature = (4 * d2(m0 / 2) - d2(m0)) / 3
    total = curvature * 2 ** (1 + a) * m0 ** (2 - a) / ((2 - a) * norm)

    def integrand(m):
        return phi_kernel_1d_closed(a, m) * (f(y + m) + f(y - m) - 2 * fy)

    edges = np.concatenate([np.geomspace(m0, 1.0, 12), np.arange(2.0, M + 1)])
    for lo, hi in zip(edges[:-1], edges[1:]):
        total += integrate.quad(integrand, lo, hi, epsabs=0, epsrel=1e-12, limit=200)[0]
    total += -2 * fy * 2 ** (1 + a) * M ** (-a) / (a * norm)
    return spec.u * total


def kernel_table_rows(spec: KernelSpec, m_values, theta_values) -> list[list]:
    """Rows (quantity, argument, value) tabulating Phi(m) and psi(theta)."""
    rows = [["phi", repr(float(m)), repr(float(v))] for m, v in zip(m_values, spec.phi(m_values))]
    rows += [["psi", repr(float(th)), repr(float(spec.psi(th)))] for th in theta_values]
    return rows


def export_kernel_table(path, spec: KernelSpec, m_values, theta_values) -> None:
    """Write Phi(m) and psi(theta) tables as CSV for plotting."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "argument", "value"])
        w.writerows(kernel_table_rows(spec, m_values, theta_values))
