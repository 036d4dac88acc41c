"""Acceptance criteria, one check per criterion.

Run under pytest (a PASS/FAIL line per criterion is printed in the summary)
or directly: ``python tests/test_acceptance.py``.  Each check returns
``(passed, detail)``; ``KNOWN_FAILURES`` lists checks that are expected to
stay red, with the reason.
"""
from __future__ import annotations

import json
import math
import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest

from slfv.analysis import (duality_check, exponential_rate_check, hill_estimator, l1_distance,
                           lineage_msd, mean_averaged_field, averaged_observables, qv_estimate)
from slfv.dual import lineage_paths, rescaled_dual_config
from slfv.events import EventModel, FixedRadius, StableRadii
from slfv.forward import ForwardState, GaussianBump, rescaled_config, run_forward
from slfv.geometry import TorusDomain, ball_volume
from slfv.limits import LimitDualConfig, PdeConfig, logistic_decay, simulate_limit_dual, solve_fkpp
from slfv.parallel import replicate_rng
from slfv.runner import main
from slfv.scaling import (exponents, gamma_R, levy_symbol, levy_symbol_gap, phi_kernel,
                          phi_kernel_1d_closed)

pytestmark = pytest.mark.slow


def c1_duality():
    dom, h = TorusDomain(1, 10.0), 0.05
    w0 = ((np.arange(200) + 0.5) * h < 5.0).astype(float)
    dens = [GaussianBump((4.5,), 0.5), GaussianBump((5.5,), 0.5)]
    cases = {"fixed": FixedRadius(1.0), "stable": StableRadii(1.5, r_max=2.45)}
    zs, parts = [], []
    for name, law in cases.items():
        model = EventModel(law, 0.3, 0.1)
        for k in (1, 2):
            res = duality_check(model, dom, h, w0, dens[:k], 2.0, 10_000, seed=k)
            zs.append(res.z)
            parts.append(f"{name} k={k}: {res.forward.estimate:.4f} vs {res.dual.estimate:.4f} z={res.z:+.2f}")
    return max(abs(z) for z in zs) <= 3, "; ".join(parts)


def c2_gamma():
    e1 = abs(gamma_R(1, 1.0) - 4 / 3)
    e2 = max(abs(gamma_R(d, 2.0) - 2.0 ** (d + 2) * gamma_R(d, 1.0)) for d in (1, 2))
    return e1 <= 1e-6 and e2 <= 1e-6, f"|Gamma_1 - 4/3| = {e1:.1e}, scaling error {e2:.1e}"


def c3_phi():
    worst = 0.0
    for alpha in (1.2, 1.5, 1.8):
        for m in np.geomspace(0.1, 10, 41):
            worst = max(worst, abs(phi_kernel(1, alpha, m) / float(phi_kernel_1d_closed(alpha, m)) - 1))
    return worst <= 1e-8, f"max relative error {worst:.1e}"


def c4_homogeneity():
    alpha = 1.5
    th = np.geomspace(1e-2, 1e2, 20)
    psi = max(abs(levy_symbol(2 * t, 1, alpha) / levy_symbol(t, 1, alpha) - 2**alpha) for t in th)
    phi = max(abs(phi_kernel(d, alpha, 2 * m) / phi_kernel(d, alpha, m) - 2 ** -(d + alpha))
              for d in (1, 2, 3) for m in (0.3, 1.0, 3.0))
    return psi <= 1e-2 and phi <= 1e-6, f"psi ratio error {psi:.1e}, Phi ratio error {phi:.1e}"


def _symbol_ratio(alpha, const):
    beta = exponents(alpha)[0]
    th = np.geomspace(1e-2, 1e2, 17)
    return max(abs(levy_symbol_gap(t, 1, alpha, n)) / (const * n ** (-beta * (2 - alpha)) * t * t)
               for n in (1e2, 1e4) for t in th)


def c5_symbol_stated():
    r = {a: _symbol_ratio(a, 4 / 3) for a in (1.2, 1.5)}
    return max(r.values()) <= 1.0, "max gap / bound: " + ", ".join(f"alpha={a}: {v:.3f}" for a, v in r.items())


def c5_symbol_stated_18():
    r = _symbol_ratio(1.8, 4 / 3)
    return r <= 1.0, f"alpha=1.8: max gap / stated bound = {r:.3f}"


def c5_symbol_corrected():
    r = {a: _symbol_ratio(a, ball_volume(1, 1.0) / (3 * (2 - a))) for a in (1.2, 1.5, 1.8)}
    return max(r.values()) <= 1.0, "constant V_1/(3(2-alpha)): " + ", ".join(
        f"alpha={a}: {v:.4f}" for a, v in r.items())


def c6_diffusivity():
    rng = np.random.default_rng(6)
    plan = rescaled_dual_config(1e4, EventModel(FixedRadius(1.0), 1.0, 1.0))
    times = np.linspace(0.1, 1.0, 10)
    lp = lineage_paths(plan.model, 1, times, 10_000, rng, plan.time_factor, plan.space_factor)
    slope, _ = lineage_msd(lp.displacement, times).slope()
    target = gamma_R(1, 1.0) * (1 + plan.model.s)
    est, p = exponential_rate_check(lp.branch_times, 1.0)
    rate = ball_volume(1, 1.0)  # u sigma V_R with u = sigma = 1
    ok = abs(slope / target - 1) <= 0.05 and abs(est.estimate / rate - 1) <= 0.05 and p > 0.01
    return ok, (f"slope {slope:.4f} vs {target:.4f}; branch rate {est.estimate:.4f} vs {rate:.4f}; "
                f"KS p={p:.3f}")


def c7_stable_lineage():
    rng = np.random.default_rng(7)
    plan = rescaled_dual_config(1e4, EventModel(StableRadii(1.5), 1.0, 1.0))
    lp = lineage_paths(plan.model, 1, [1.0], 10_000, rng, plan.time_factor, plan.space_factor)
    jumps = np.abs(lp.jump_sizes).ravel()
    hill = hill_estimator(jumps, int(math.sqrt(jumps.size)))
    est, _ = exponential_rate_check(lp.branch_times, 1.0)
    rate = ball_volume(1, 1.0) / 1.5
    ok = abs(hill - 1.5) <= 0.15 and abs(est.estimate / rate - 1) <= 0.05
    return ok, f"Hill {hill:.3f} from {jumps.size} jumps; branch rate {est.estimate:.4f} vs {rate:.4f}"


def c8_invariants():
    rng = np.random.default_rng(8)
    events, configs = 0, 0
    while events < 1_000_000:
        d = int(rng.integers(1, 4))
        law = StableRadii(float(rng.uniform(1.1, 1.9)), r_max=1.9) if rng.random() < 0.5 else FixedRadius(1.0)
        model = EventModel(law, float(rng.uniform(0.05, 1.0)), float(rng.uniform(0.0, 2.0)))
        L, h = (10.0, 0.1) if d == 1 else (8.0, 0.25 if d == 2 else 0.5)
        m = int(round(L / h))
        w = np.clip(rng.random() + 0.4 * rng.standard_normal((m,) * d), 0.0, 1.0)
        state = ForwardState(TorusDomain(d, L), h, w)
        T = 100_000 / (L**d * (1 + model.s) * model.radius_mass(d))
        events += run_forward(state, model, T, rng=rng, validate=True).n_events  # raises on a bad cell
        configs += 1
    absorbing = True
    for c in (0.0, 1.0):
        st = ForwardState.constant(TorusDomain(2, 8.0), 0.25, c)
        run_forward(st, EventModel(FixedRadius(1.0), 0.7, 1.0), 50.0, rng=rng)
        absorbing &= bool(np.all(st.w == c))
    c = 0.3
    means = []
    for i in range(400):
        st = ForwardState.constant(TorusDomain(1, 10.0), 0.1, c)
        run_forward(st, EventModel(FixedRadius(1.0), 0.5, 0.0), 5.0, rng=replicate_rng(8, 0, i))
        means.append(st.w.mean())
    mean, se = float(np.mean(means)), float(np.std(means, ddof=1) / math.sqrt(len(means)))
    ok = absorbing and abs(mean - c) <= 4 * se
    return ok, (f"{events} events over {configs} configs stayed in [0,1]; absorbing={absorbing}; "
                f"neutral mean {mean:.4f} +- {se:.4f} vs {c}")


def _fkpp_gap(n, L=4.0):
    def fn(x, y):
        return 0.5 + 0.3 * np.cos(2 * np.pi * x / L) * np.cos(2 * np.pi * y / L)
    plan = rescaled_config(EventModel(FixedRadius(1.0), 1.0, 1.0), n, L=L, d=2)
    mean, _ = mean_averaged_field(plan, fn, 1.0, 200, seed=1)
    m = int(round(plan.domain.L / plan.h))
    cfg = PdeConfig.fixed_radius(2, 1.0, 1.0, 1.0, L, m, 1.0, noise=False)
    c = (np.arange(m) + 0.5) * L / m
    X, Y = np.meshgrid(c, c, indexing="ij")
    return l1_distance(mean, solve_fkpp(cfg, fn(X, Y), [0.0, 1.0]).final)


def c9_deterministic_limit():
    big, small = _fkpp_gap(200), _fkpp_gap(20)
    return big <= 0.05 and big < small, f"L1 at n=200: {big:.4f}; at n=20: {small:.4f}"


def c10_quadratic_variation():
    L, u = 4.0, 1.0
    plan = rescaled_config(EventModel(FixedRadius(1.0), u, 1.0), 1000, L=L, d=1)
    m = int(round(plan.domain.L / plan.h))
    x = (np.arange(m) + 0.5) * plan.scaled_h
    f = np.exp(-((x - L / 2) ** 2) / (2 * 0.5**2))
    ratios = []
    for i in range(100):
        state = plan.initial_state(lambda y: 0.5 + 0.3 * np.cos(2 * np.pi * y / L))
        ts, v, g = averaged_observables(plan, state, f, 1.0, 1000, replicate_rng(10, 0, i))
        ratios.append(qv_estimate(ts, v, g, coefficient=4 * u * u).ratio)
    r = float(np.mean(ratios))
    return 0.8 <= r <= 1.2, f"mean ratio {r:.4f} +- {np.std(ratios, ddof=1) / 10:.4f} over 100 replicates"


def c11_yule():
    cfg = LimitDualConfig.fixed_radius(1, 1.0, 1.0, 0.5, dt=0.01)
    cfg = LimitDualConfig(1, cfg.branch_rate, 0.0, cfg.dt, variance=cfg.variance)
    N = np.array([simulate_limit_dual(cfg, np.zeros((1, 1)), 2.0, replicate_rng(11, 0, i), [2.0]).N[-1]
                  for i in range(10_000)], dtype=float)
    target = math.exp(cfg.branch_rate * 2.0)
    se = N.std(ddof=1) / math.sqrt(N.size)
    return abs(N.mean() - target) <= 4 * se, f"E[N_T] = {N.mean():.4f} +- {se:.4f} vs {target:.4f}"


def c12_logistic():
    cfg = PdeConfig.fixed_radius(1, 1.0, 0.8, 0.6, 10.0, 64, 2.0, noise=False)
    times = np.linspace(0.2, 2.0, 10)
    traj = solve_fkpp(cfg, np.full(64, 0.7), times)
    err = max(float(np.max(np.abs(w - logistic_decay(0.7, cfg.reaction, t))))
              for t, w in zip(times, traj.fields[-10:]))
    return err <= 1e-6, f"max error {err:.1e} at 10 times"


def _outputs(out: Path):
    files = {p.relative_to(out).as_posix(): p.read_bytes()
             for p in sorted(out.rglob("*")) if p.is_file() and p.name != "manifest.json"}
    manifest = json.loads((out / "manifest.json").read_text())
    for stamp in ("started", "finished"):
        manifest.pop(stamp)
    return files, manifest


def c13_reproducibility():
    configs = {
        "forward": {"model": {"radius": {"kind": "fixed", "R": 1.0}, "u": 0.3, "s": 0.1},
                    "domain": {"d": 1, "L": 10.0}, "T": 1.0, "replicates": 16,
                    "initial": {"kind": "half"},
                    "observables": [{"kind": "gaussian", "centre": 4.5, "sigma": 0.5}],
                    "output": {"snapshots": True}},
        "duality-check": {"model": {"radius": {"kind": "stable", "alpha": 1.5, "r_max": 2.0}, "u": 0.3,
                                    "s": 0.1},
                          "domain": {"d": 1, "L": 10.0}, "T": 1.0, "replicates": 40,
                          "initial": {"kind": "half"},
                          "observables": [{"kind": "gaussian", "centre": 4.5, "sigma": 0.5}]},
        "limit-dual": {"model": {"radius": {"kind": "fixed", "R": 1.0}, "u": 1.0, "s": 0.5},
                       "T": 1.0, "replicates": 30},
    }
    bad = []
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        for name, doc in configs.items():
            cfg = tmp / f"{name}.json"
            cfg.write_text(json.dumps(doc))
            runs = []
            for k, jobs in enumerate(("1", "1", "8")):
                out = tmp / f"{name}-{k}"
                code = main([name, "--config", str(cfg), "--seed", "13", "--jobs", jobs, "--out", str(out)])
                runs.append((code, _outputs(out)))
            if any(r != runs[0] for r in runs):
                bad.append(name)
    return not bad, f"{len(configs)} experiments rerun with --jobs 1, 1, 8; differing: {bad or 'none'}"


CHECKS = {
    "1": c1_duality,
    "2": c2_gamma,
    "3": c3_phi,
    "4": c4_homogeneity,
    "5": c5_symbol_stated,
    "5[alpha=1.8]": c5_symbol_stated_18,
    "5[corrected]": c5_symbol_corrected,
    "6": c6_diffusivity,
    "7": c7_stable_lineage,
    "8": c8_invariants,
    "9": c9_deterministic_limit,
    "10": c10_quadratic_variation,
    "11": c11_yule,
    "12": c12_logistic,
    "13": c13_reproducibility,
}

KNOWN_FAILURES = {
    "5[alpha=1.8]": "the stated constant 4/3 is too small by 0.5/(2-alpha) once alpha > 1.5",
}


def _params():
    for cid in CHECKS:
        marks = [pytest.mark.xfail(strict=True, reason=KNOWN_FAILURES[cid])] if cid in KNOWN_FAILURES else []
        yield pytest.param(cid, marks=marks, id=f"criterion-{cid}")


@pytest.mark.parametrize("cid", list(_params()))
def test_criterion(cid):
    from conftest import ACCEPTANCE
    passed, detail = CHECKS[cid]()
    status = "PASS" if passed else "FAIL"
    if not passed and cid in KNOWN_FAILURES:
        detail += f" (known: {KNOWN_FAILURES[cid]})"
    ACCEPTANCE[cid] = (status, detail)
    assert passed, detail


if __name__ == "__main__":
    failed = 0
    for cid, check in CHECKS.items():
        passed, detail = check()
        note = f" (known: {KNOWN_FAILURES[cid]})" if cid in KNOWN_FAILURES and not passed else ""
        print(f"{'PASS' if passed else 'FAIL':<5} {cid:<14} {detail}{note}", flush=True)
        failed += not passed and cid not in KNOWN_FAILURES
    sys.exit(1 if failed else 0)
