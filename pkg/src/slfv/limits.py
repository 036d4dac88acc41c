"""Reference solvers for the scaling limits.

Deterministic and stochastic Fisher-KPP on a periodic grid, the fractional
variant driven by the stable generator, and a time-stepped branching
(and, in one dimension, coalescing) particle system for the limiting dual.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, InputError, ResolutionWarning
from .geometry import ball_volume
from .scaling import MIN_CELLS_PER_SIDE, KernelSpec, gamma_R, stable_constant, wavenumbers


@dataclass(frozen=True)
class PdeConfig:
    """dw/dt = D Lap w (or the stable generator) - a w(1-w) + noise sqrt(w(1-w)) W-dot."""

    d: int
    L: float
    m: int
    diffusion: float
    reaction: float
    noise: float
    dt: float
    T: float
    kernel: KernelSpec | None = None

    def __post_init__(self):
        if min(self.diffusion, self.reaction, self.noise) < 0:
            raise ConfigError("PDE coefficients must be non-negative")
        if self.noise > 0 and self.d != 1:
            raise ConfigError("space-time white noise is only used in d = 1")
        if self.dt <= 0 or self.T < 0:
            raise ConfigError("dt must be positive and T non-negative")
        if self.kernel is None and self.diffusion > 0 and self.dt > self.cfl_bound:
            raise ConfigError(f"CFL violated: dt={self.dt} > {self.cfl_bound}")

    @property
    def h(self) -> float:
        return self.L / self.m

    @property
    def cfl_bound(self) -> float:
        return self.h**2 / (2 * self.d * self.diffusion) if self.diffusion > 0 else math.inf

    @classmethod
    def fixed_radius(cls, d, R, u, sigma, L, m, T, dt=None, noise=True) -> PdeConfig:
        """Coefficients of the fixed-radius limit; noise only in d = 1."""
        D = u * gamma_R(d, R) / 2
        h = L / m
        dt = 0.9 * h**2 / (2 * d * D) if dt is None else dt
        a = u * sigma * ball_volume(d, R)  # equals 2 R u sigma in d = 1
        b = 2 * R * u if (d == 1 and noise) else 0.0
        return cls(d, L, m, D, a, b, dt, T)

    @classmethod
    def stable(cls, d, alpha, u, sigma, L, m, T, dt, noise=True) -> PdeConfig:
        """Coefficients of the stable-radii limit; noise only in d = 1."""
        a = u * sigma * ball_volume(d, 1.0) / alpha  # 2 u sigma / alpha in d = 1
        b = 2 * u / math.sqrt(alpha - 1) if (d == 1 and noise) else 0.0
        return cls(d, L, m, 0.0, a, b, dt, T, kernel=KernelSpec(d, alpha, u))


@dataclass
class PdeTrajectory:
    times: np.ndarray
    fields: list
    clamped: int = 0

    @property
    def final(self) -> np.ndarray:
        return self.fields[-1]


def logistic_decay(w, a: float, t: float):
    """Exact flow of dw/dt = -a w (1 - w) for time t."""
    e = math.exp(-a * t)
    return w * e / (1 - w + w * e)


def periodic_laplacian(w: np.ndarray, h: float, d: int) -> np.ndarray:
    out = -2.0 * d * w
    for ax in range(w.ndim - d, w.ndim):
        out = out + np.roll(w, 1, axis=ax) + np.roll(w, -1, axis=ax)
    return out / (h * h)


def _step_plan(t0: float, times: np.ndarray, dt: float):
    """Yield (step size, record-after) pairs landing exactly on each sample time."""
    t = t0
    for target in times:
        span = target - t
        if span < -1e-12:
            raise InputError("sample times must be sorted and >= 0")
        k = max(int(math.ceil(span / dt - 1e-9)), 0)
        for j in range(k):
            yield span / k, False
        yield 0.0, True
        t = target


def _default_times(T: float, sample_times):
    if sample_times is None:
        return np.linspace(0.0, T, 11)
    return np.asarray(sample_times, dtype=float)


def _check_field(w0, config: PdeConfig) -> np.ndarray:
    w = np.array(w0, dtype=float)
    if w.shape[-config.d:] != (config.m,) * config.d:
        raise InputError(f"field shape {w.shape} does not end with the grid {(config.m,) * config.d}")
    if np.any(w < 0) or np.any(w > 1):
        raise InputError("initial field must lie in [0, 1]")
    return w


def _integrate(config: PdeConfig, w0, rng, sample_times, linear_step) -> PdeTrajectory:
    w = _check_field(w0, config)
    times = _default_times(config.T, sample_times)
    fields, clamped = [], 0
    for tau, record in _step_plan(0.0, times, config.dt):
        if record:
            fields.append(w.copy())
            continue
        w = linear_step(w, tau)
        if config.reaction > 0:
            w = logistic_decay(w, config.reaction, tau)
        if config.noise > 0:
            z = rng.standard_normal(w.shape)
            w = w + config.noise * np.sqrt(np.maximum(w * (1 - w), 0.0)) * z * math.sqrt(tau / config.h)
        bad = (w < 0) | (w > 1)
        if bad.any():
            clamped += int(bad.sum())
            w = np.clip(w, 0.0, 1.0)
    return PdeTrajectory(times, fields, clamped)


def solve_fkpp(config: PdeConfig, w0, sample_times: Sequence[float] | None = None) -> PdeTrajectory:
    """Deterministic Fisher-KPP: explicit diffusion step, then the exact logistic flow.

    Leading axes of ``w0`` beyond the d grid axes are treated as a batch.
    """
    if config.kernel is not None:
        raise ConfigError("use solve_fractional_fkpp for a stable kernel")
    deterministic = PdeConfig(config.d, config.L, config.m, config.diffusion,
                              config.reaction, 0.0, config.dt, config.T)
    return _integrate(deterministic, w0, None, sample_times, _diffusion_step(config))


def _diffusion_step(config: PdeConfig):
    def step(w, tau):
        if config.diffusion == 0:
            return w
        return w + tau * config.diffusion * periodic_laplacian(w, config.h, config.d)
    return step


def solve_fkpp_stochastic_1d(config: PdeConfig, w0, rng: np.random.Generator,
                             sample_times: Sequence[float] | None = None) -> PdeTrajectory:
    """Euler-Maruyama for the d = 1 stochastic Fisher-KPP; the result is clamped to [0, 1].

    ``w0`` may carry leading batch axes (independent realisations).
    """
    if config.d != 1:
        raise ConfigError("the stochastic solver is one-dimensional")
    return _integrate(config, w0, rng, sample_times, _diffusion_step(config))


def solve_fractional_fkpp(config: PdeConfig, w0, rng: np.random.Generator | None = None,
                          sample_times: Sequence[float] | None = None) -> PdeTrajectory:
    """Fisher-KPP with the stable generator, advanced exactly in Fourier space."""
    spec = config.kernel
    if spec is None:
        raise ConfigError("a KernelSpec is required")
    if config.m < MIN_CELLS_PER_SIDE:
        warnings.warn(f"{config.m} cells per side is too coarse for the stable generator",
                      ResolutionWarning, stacklevel=2)
    if config.noise > 0 and rng is None:
        raise InputError("a random generator is needed when noise > 0")
    symbol = spec.generator_symbol(wavenumbers(config.d, config.m, config.L))
    axes = tuple(range(-config.d, 0))
    cache = {}

    def step(w, tau):
        key = round(tau, 15)
        if key not in cache:
            cache[key] = np.exp(tau * symbol)
        return np.real(np.fft.ifftn(cache[key] * np.fft.fftn(w, axes=axes), axes=axes))

    return _integrate(config, w0, rng, sample_times, step)


@dataclass(frozen=True)
class LimitDualConfig:
    """Branching Brownian or stable particles; pairwise local-time coalescence in d = 1."""

    d: int
    branch_rate: float
    coalescence_rate: float
    dt: float
    eps: float = 0.05
    variance: float = 0.0  # Brownian variance parameter per unit time
    alpha: float | None = None  # stable index; None means Brownian motion
    stable_scale: float = 0.0  # c with symbol -c |theta|^alpha

    def __post_init__(self):
        if min(self.branch_rate, self.coalescence_rate, self.variance, self.stable_scale) < 0:
            raise ConfigError("rates must be non-negative")
        if self.d == 1 and not self.eps > 0:
            raise ConfigError("the local-time band needs eps > 0")
        if self.alpha is not None and not 0 < self.alpha < 2:
            raise ConfigError(f"alpha must be in (0,2), got {self.alpha}")

    @property
    def coalescing(self) -> bool:
        return self.d == 1 and self.coalescence_rate > 0

    @classmethod
    def fixed_radius(cls, d, R, u, sigma, dt, eps=0.05) -> LimitDualConfig:
        return cls(d, branch_rate=u * sigma * ball_volume(d, R),
                   coalescence_rate=4 * R * R * u * u if d == 1 else 0.0,
                   dt=dt, eps=eps, variance=u * gamma_R(d, R))

    @classmethod
    def stable(cls, d, alpha, u, sigma, dt, eps=0.05) -> LimitDualConfig:
        return cls(d, branch_rate=u * sigma * ball_volume(d, 1.0) / alpha,
                   coalescence_rate=4 * u * u / (alpha - 1) if d == 1 else 0.0,
                   dt=dt, eps=eps, alpha=alpha, stable_scale=u * stable_constant(d, alpha))


def symmetric_stable(rng: np.random.Generator, alpha: float, size) -> np.ndarray:
    """Chambers-Mallows-Stuck draw with characteristic function exp(-|theta|^alpha)."""
    V = rng.uniform(-math.pi / 2, math.pi / 2, size)
    W = rng.exponential(1.0, size)
    if alpha == 1:
        return np.tan(V)
    return (np.sin(alpha * V) / np.cos(V) ** (1 / alpha)
            * (np.cos(V - alpha * V) / W) ** ((1 - alpha) / alpha))


def positive_stable(rng: np.random.Generator, alpha: float, size) -> np.ndarray:
    """Kanter's draw with Laplace transform exp(-lambda^alpha), 0 < alpha < 1."""
    U = rng.uniform(0.0, math.pi, size)
    W = rng.exponential(1.0, size)
    return (np.sin(alpha * U) / np.sin(U) ** (1 / alpha)
            * (np.sin((1 - alpha) * U) / W) ** ((1 - alpha) / alpha))


def isotropic_stable(rng: np.random.Generator, alpha: float, d: int, n: int) -> np.ndarray:
    """n draws in R^d with characteristic function exp(-|theta|^alpha)."""
    if d == 1:
        return symmetric_stable(rng, alpha, (n, 1))
    # sub-Gaussian: sqrt(A) G with A positive (alpha/2)-stable and G ~ N(0, 2 I)
    A = positive_stable(rng, alpha / 2, (n, 1))
    return np.sqrt(2 * A) * rng.standard_normal((n, d))


@dataclass
class LimitDualTrajectory:
    times: np.ndarray
    N: np.ndarray
    positions: list
    branches: int = 0
    coalescences: int = 0
    first_coalescence: float = math.inf


def simulate_limit_dual(config: LimitDualConfig, positions, T: float, rng: np.random.Generator,
                        sample_times: Sequence[float] | None = None) -> LimitDualTrajectory:
    """Time-stepped limit dual.

    Each step: every particle is replaced by a Geometric(exp(-b dt)) number
    of copies (the exact Yule count over the step), then moves by a Gaussian
    or stable increment, then (d = 1) each pair closer than eps coalesces
    with probability 1 - exp(-c dt / (2 eps)).
    """
    x = np.atleast_2d(np.asarray(positions, dtype=float)).reshape(-1, config.d).copy()
    times = np.array([0.0, T] if sample_times is None else sample_times, dtype=float)
    Ns, snaps = [], []
    branches = coalescences = 0
    first_coal = math.inf
    t = 0.0
    for tau, record in _step_plan(0.0, times, config.dt):
        if record:
            Ns.append(x.shape[0])
            snaps.append(x.copy())
            continue
        if config.branch_rate > 0:
            copies = rng.geometric(math.exp(-config.branch_rate * tau), size=x.shape[0])
            branches += int(copies.sum()) - x.shape[0]
            x = np.repeat(x, copies, axis=0)
        x = x + _increments(config, rng, x.shape[0], tau)
        t += tau
        if config.coalescing and x.shape[0] > 1:
            before = x.shape[0]
            x = _coalesce(x, config, tau, rng)
            if x.shape[0] < before:
                coalescences += before - x.shape[0]
                first_coal = min(first_coal, t)
    return LimitDualTrajectory(times, np.array(Ns), snaps, branches, coalescences, first_coal)


def _increments(config: LimitDualConfig, rng, n: int, tau: float) -> np.ndarray:
    if config.alpha is None:
        return rng.standard_normal((n, config.d)) * math.sqrt(config.variance * tau)
    scale = (config.stable_scale * tau) ** (1 / config.alpha)
    return scale * isotropic_stable(rng, config.alpha, config.d, n)


def _coalesce(x: np.ndarray, config: LimitDualConfig, tau: float, rng) -> np.ndarray:
    order = np.argsort(x[:, 0])
    xs = x[order, 0]
    # candidate pairs (i, j), i < j in sorted order, with separation < eps
    hi = np.searchsorted(xs, xs + config.eps, side="left")
    pairs = [(i, j) for i in range(xs.size) for j in range(i + 1, hi[i])]
    if not pairs:
        return x
    p = -math.expm1(-config.coalescence_rate * tau / (2 * config.eps))
    alive = np.ones(xs.size, dtype=bool)
    for k in rng.permutation(len(pairs)):
        i, j = pairs[k]
        if alive[i] and alive[j] and rng.random() < p:
            alive[j if rng.random() < 0.5 else i] = False
    return x[order][alive]
