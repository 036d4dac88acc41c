from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from slfv.errors import ConfigError, ResolutionWarning
from slfv.geometry import ball_volume
from slfv.limits import (LimitDualConfig, PdeConfig, isotropic_stable, logistic_decay,
                         positive_stable, simulate_limit_dual, solve_fkpp,
                         solve_fkpp_stochastic_1d, solve_fractional_fkpp, symmetric_stable)
from slfv.scaling import KernelSpec, gamma_R


def _grid(L, m):
    return (np.arange(m) + 0.5) * L / m


def test_equilibria():
    cfg = PdeConfig.fixed_radius(2, 1.0, 1.0, 1.0, 8.0, 16, 1.0, noise=False)
    for c in (0.0, 1.0):
        traj = solve_fkpp(cfg, np.full((16, 16), c))
        assert all(np.all(w == c) for w in traj.fields)


def test_logistic_value():
    # a = u sigma V_R = 1 in d = 1 with R = 1/2
    cfg = PdeConfig.fixed_radius(1, 0.5, 1.0, 1.0, 10.0, 32, 1.0, noise=False)
    assert cfg.reaction == pytest.approx(1.0)
    traj = solve_fkpp(cfg, np.full(32, 0.5), [0.0, 1.0])
    assert np.allclose(traj.final, 1 / (1 + math.e), atol=1e-12)
    ode = solve_ivp(lambda t, w: -w * (1 - w), (0, 1), [0.5], rtol=1e-12, atol=1e-14)
    assert traj.final[0] == pytest.approx(ode.y[0, -1], abs=1e-9)
    assert logistic_decay(0.5, 1.0, 1.0) == pytest.approx(1 / (1 + math.e))


def test_mass_decreases():
    L, m = 10.0, 64
    x = _grid(L, m)
    w0 = np.exp(-((x - 5) ** 2))
    cfg = PdeConfig.fixed_radius(1, 1.0, 1.0, 1.0, L, m, 2.0, noise=False)
    mass = [w.sum() for w in solve_fkpp(cfg, w0, np.linspace(0, 2, 21)).fields]
    assert np.all(np.diff(mass) < 0)


def test_cfl():
    with pytest.raises(ConfigError, match="CFL"):
        PdeConfig.fixed_radius(1, 1.0, 1.0, 1.0, 10.0, 100, 1.0, dt=0.1)
    with pytest.raises(ConfigError):
        PdeConfig(2, 10.0, 16, 1.0, 1.0, 0.5, 0.01, 1.0)  # noise in d = 2


def test_stochastic_without_noise_is_deterministic():
    L, m = 10.0, 64
    w0 = 0.5 + 0.3 * np.cos(2 * np.pi * _grid(L, m) / L)
    noisy = PdeConfig.fixed_radius(1, 1.0, 1.0, 1.0, L, m, 1.0)
    quiet = PdeConfig(1, L, m, noisy.diffusion, noisy.reaction, 0.0, noisy.dt, 1.0)
    a = solve_fkpp_stochastic_1d(quiet, w0, np.random.default_rng(0))
    b = solve_fkpp(noisy, w0)
    assert all(np.array_equal(x, y) for x, y in zip(a.fields, b.fields))


@pytest.mark.parametrize("c", [0.0, 1.0])
def test_stochastic_frozen(c):
    cfg = PdeConfig.fixed_radius(1, 1.0, 1.0, 1.0, 10.0, 32, 1.0)
    traj = solve_fkpp_stochastic_1d(cfg, np.full(32, c), np.random.default_rng(1))
    assert all(np.all(w == c) for w in traj.fields)


def test_stochastic_mean_follows_heat_flow():
    L, m, T, u = 10.0, 64, 0.5, 0.1
    x = _grid(L, m)
    w0 = 0.5 + 0.2 * np.cos(2 * np.pi * x / L)
    cfg = PdeConfig.fixed_radius(1, 1.0, u, 0.0, L, m, T)
    reps = 10_000
    batch = np.broadcast_to(w0, (reps, m)).copy()
    traj = solve_fkpp_stochastic_1d(cfg, batch, np.random.default_rng(2), [T])
    f = np.cos(2 * np.pi * x / L)
    vals = traj.final @ f * (L / m)
    k = 2 * np.pi / L
    D = u * gamma_R(1, 1.0) / 2
    exact = np.sum(w0 * f) * (L / m) * math.exp(-D * k * k * T)
    assert abs(vals.mean() - exact) <= 4 * vals.std(ddof=1) / math.sqrt(reps) + 1e-3 * abs(exact)


def test_fractional_constant_is_logistic():
    cfg = PdeConfig.stable(2, 1.5, 0.8, 0.5, 8.0, 16, 1.0, 0.01, noise=False)
    assert cfg.reaction == pytest.approx(0.8 * 0.5 * ball_volume(2, 1.0) / 1.5)
    traj = solve_fractional_fkpp(cfg, np.full((16, 16), 0.6), sample_times=np.linspace(0, 1, 5))
    for t, w in zip(traj.times, traj.fields):
        assert np.allclose(w, logistic_decay(0.6, cfg.reaction, t), atol=1e-12)


def test_fractional_mode_decay():
    L, m, u = 2 * math.pi, 64, 0.7
    x = _grid(L, m)
    cfg = PdeConfig(1, L, m, 0.0, 0.0, 0.0, 0.01, 1.0, kernel=KernelSpec(1, 1.5, u))
    for k in (1, 2, 3):
        w0 = 0.5 + 0.1 * np.cos(k * x)
        out = solve_fractional_fkpp(cfg, w0, sample_times=[0.0, 1.0]).final
        amp = 2 * np.mean((out - 0.5) * np.cos(k * x)) / 0.1
        assert amp == pytest.approx(math.exp(u * cfg.kernel.psi(k)), rel=1e-10)


def test_alpha_near_two_matches_laplacian():
    L, m, u = 2 * math.pi, 64, 1.0
    x = _grid(L, m)
    spec = KernelSpec(1, 1.99, u)
    D = -spec.generator_symbol(1.0) / 1.0  # diffusion constant fitted at the lowest mode
    T = 0.5 / (9 * D)  # the third mode decays by about e^-0.5
    frac = PdeConfig(1, L, m, 0.0, 0.0, 0.0, 0.01, T, kernel=spec)
    h = L / m
    lap = PdeConfig(1, L, m, float(D), 0.0, 0.0, 0.5 * h * h / (2 * D), T)
    for k in (1, 2, 3):
        w0 = 0.5 + 0.1 * np.cos(k * x)
        rates = []
        for solve, cfg in ((solve_fractional_fkpp, frac), (solve_fkpp, lap)):
            out = solve(cfg, w0, sample_times=[0.0, T]).final
            rates.append(-math.log(2 * np.mean((out - 0.5) * np.cos(k * x)) / 0.1) / T)
        assert rates[0] == pytest.approx(rates[1], rel=0.02)


def test_fractional_resolution_warning():
    cfg = PdeConfig(1, 1.0, 8, 0.0, 0.0, 0.0, 0.01, 0.1, kernel=KernelSpec(1, 1.5, 1.0))
    with pytest.warns(ResolutionWarning):
        solve_fractional_fkpp(cfg, np.full(8, 0.5))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        solve_fractional_fkpp(PdeConfig(1, 1.0, 32, 0.0, 0.0, 0.0, 0.01, 0.1,
                                        kernel=KernelSpec(1, 1.5, 1.0)), np.full(32, 0.5))


def test_symmetric_stable_charfn():
    rng = np.random.default_rng(3)
    for alpha in (1.2, 1.5, 1.8):
        xs = symmetric_stable(rng, alpha, 400_000)
        for th in (0.5, 1.0, 2.0):
            assert np.mean(np.cos(th * xs)) == pytest.approx(math.exp(-th**alpha), abs=5e-3)


def test_positive_stable_laplace():
    rng = np.random.default_rng(4)
    a = positive_stable(rng, 0.75, 400_000)
    assert np.all(a > 0)
    for lam in (0.5, 1.0, 2.0):
        assert np.mean(np.exp(-lam * a)) == pytest.approx(math.exp(-lam**0.75), abs=5e-3)


def test_isotropic_stable_2d():
    xs = isotropic_stable(np.random.default_rng(5), 1.5, 2, 400_000)
    for th in ([1.0, 0.0], [0.6, 0.8], [1.0, 1.0]):
        th = np.array(th)
        expected = math.exp(-np.linalg.norm(th) ** 1.5)
        assert np.mean(np.cos(xs @ th)) == pytest.approx(expected, abs=5e-3)


def test_limit_dual_pure_diffusion():
    cfg = LimitDualConfig.fixed_radius(1, 1.0, 1.0, 0.0, 0.05)
    cfg = LimitDualConfig(1, 0.0, 0.0, 0.05, variance=cfg.variance)
    rng = np.random.default_rng(6)
    finals = np.array([simulate_limit_dual(cfg, [[0.0]], 1.0, rng).positions[-1][0, 0]
                       for _ in range(10_000)])
    target = gamma_R(1, 1.0)
    se = target * math.sqrt(2 / finals.size)
    assert abs(finals.var() - target) <= 4 * se


def test_limit_dual_yule_mean():
    cfg = LimitDualConfig.fixed_radius(2, 1.0, 1.0, 0.3, 0.05)
    assert not cfg.coalescing
    rng = np.random.default_rng(7)
    n = np.array([simulate_limit_dual(cfg, [[0.0, 0.0]] * 2, 1.0, rng).N[-1] for _ in range(4000)])
    target = 2 * math.exp(cfg.branch_rate * 1.0)
    assert abs(n.mean() - target) <= 4 * n.std(ddof=1) / math.sqrt(n.size)


def test_limit_dual_coalescence_1d():
    cfg = LimitDualConfig.fixed_radius(1, 1.0, 1.0, 0.0, 0.01, eps=0.05)
    assert cfg.coalescing and cfg.coalescence_rate == pytest.approx(4.0)
    traj = simulate_limit_dual(cfg, [[0.0], [0.0]], 5.0, np.random.default_rng(8), [0.0, 5.0])
    assert traj.N[0] == 2 and traj.N[-1] == 1 and traj.first_coalescence < 5.0
    stable = LimitDualConfig.stable(1, 1.5, 1.0, 1.0, 0.01)
    assert stable.coalescence_rate == pytest.approx(4 / 0.5)
    assert stable.branch_rate == pytest.approx(2 / 1.5)
