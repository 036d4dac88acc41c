from __future__ import annotations

import math

import numpy as np
import pytest

from slfv.errors import ConfigError, DomainError, InputError, ResolutionError
from slfv.events import EventKind, EventModel, FixedRadius, ReproductionEvent, StableRadii
from slfv.forward import (BallIndicator, CosineMode, ForwardState, GaussianBump,
                          apply_neutral_event, apply_selective_event, averaged_field,
                          averaged_weights, local_average, pairing, read_snapshot,
                          rescaled_config, run_forward, write_snapshot)
from slfv.geometry import TorusDomain, torus_distance
from slfv.parallel import replicate_rng


def _event(x, r=1.0, u=0.2, selective=False, d=1):
    kind = EventKind.SELECTIVE if selective else EventKind.NEUTRAL
    return ReproductionEvent(0.0, np.broadcast_to(np.asarray(x, float), (d,)).copy(), r, u, kind)


@pytest.mark.parametrize("c", [0.0, 1.0])
@pytest.mark.parametrize("selective", [False, True])
def test_absorbing_states(c, selective):
    rng = np.random.default_rng(0)
    state = ForwardState.constant(TorusDomain(2, 8.0), 0.25, c)
    apply = apply_selective_event if selective else apply_neutral_event
    for _ in range(200):
        apply(state, _event(rng.uniform(0, 8, 2), u=0.7, selective=selective, d=2), rng)
    assert np.all(state.w == c)


@pytest.mark.parametrize("selective,p", [(False, 0.5), (True, 0.25)])
def test_affine_update_probabilities(selective, p):
    rng = np.random.default_rng(1)
    apply = apply_selective_event if selective else apply_neutral_event
    ups, trials = 0, 4000
    for _ in range(trials):
        state = ForwardState.constant(TorusDomain(1, 10.0), 0.1, 0.5)
        idx = apply(state, _event(5.0, selective=selective), rng)
        vals = np.unique(state.w[idx])
        assert vals.size == 1 and (np.isclose(vals[0], 0.6) or np.isclose(vals[0], 0.4))
        ups += bool(np.isclose(vals[0], 0.6))
        untouched = np.ones(state.w.shape, bool)
        untouched[idx] = False
        assert np.all(state.w[untouched] == 0.5)
    assert abs(ups / trials - p) <= 4 * math.sqrt(p * (1 - p) / trials)


def test_event_too_large():
    state = ForwardState.constant(TorusDomain(1, 10.0), 0.1, 0.5)
    with pytest.raises(DomainError):
        apply_neutral_event(state, _event(5.0, r=3.0), np.random.default_rng())


def test_state_validation():
    with pytest.raises(ConfigError):
        ForwardState.constant(TorusDomain(1, 10.0), 0.3, 0.5)
    with pytest.raises(ConfigError):
        ForwardState(TorusDomain(1, 1.0), 0.5, np.array([0.2, 1.2]))
    with pytest.raises(ConfigError):
        ForwardState(TorusDomain(1, 1.0), 0.5, np.array([0.2, 0.2, 0.2]))
    s = ForwardState.constant(TorusDomain(3, 4.0), 0.5, 0.3)
    assert s.w.size == 8**3


@pytest.mark.parametrize("d", [1, 2, 3])
def test_ball_cells_brute_force(d):
    rng = np.random.default_rng(d)
    dom = TorusDomain(d, 6.0)
    state = ForwardState.constant(dom, 0.25, 0.0)
    m = state.cells_per_side
    centres = np.stack(np.meshgrid(*[(np.arange(m) + 0.5) * 0.25] * d, indexing="ij"), -1).reshape(-1, d)
    for _ in range(10):
        x, r = dom.uniform(rng), rng.uniform(0.3, 1.4)
        mask = np.zeros((m,) * d, bool)
        mask[state.ball_cells(x, r)] = True
        brute = np.array([torus_distance(x, c, dom) <= r for c in centres]).reshape((m,) * d)
        assert np.array_equal(mask, brute)


def test_run_forward_zero_horizon():
    state = ForwardState.from_function(TorusDomain(1, 10.0), 0.1, lambda x: 0.5 + 0.2 * np.sin(x))
    f = GaussianBump((5.0,), 0.5)
    before = pairing(state, f)
    traj = run_forward(state, EventModel(FixedRadius(1.0), 0.5, 0.1), 0.0, [f], None,
                       np.random.default_rng())
    assert traj.n_events == 0 and np.allclose(traj.values, before)


def test_neutral_mean_preserved():
    dom, c = TorusDomain(1, 10.0), 0.3
    f = GaussianBump((5.0,), 0.7)
    probe = ForwardState.constant(dom, 0.1, 1.0)
    integral = pairing(probe, f)
    model = EventModel(FixedRadius(1.0), 0.5, 0.0)
    rng = np.random.default_rng(12)
    vals = []
    for _ in range(10_000):
        state = ForwardState.constant(dom, 0.1, c)
        vals.append(run_forward(state, model, 1.0, [f], [1.0], rng).values[0, 0])
    vals = np.array(vals)
    assert abs(vals.mean() - c * integral) <= 4 * vals.std(ddof=1) / math.sqrt(vals.size)


def test_total_replacement():
    rng = np.random.default_rng(2)
    f = BallIndicator((5.0,), 0.5)
    for _ in range(50):
        state = ForwardState.from_function(TorusDomain(1, 10.0), 0.1, lambda x: 0.5 + 0.4 * np.cos(x))
        full = pairing(ForwardState.constant(state.domain, 0.1, 1.0), f)
        apply_neutral_event(state, _event(5.0, r=1.0, u=1.0), rng)
        assert pairing(state, f) in (pytest.approx(0.0), pytest.approx(full))


@pytest.mark.parametrize("d,L,model", [
    (1, 10.0, EventModel(FixedRadius(1.0), 0.4, 0.5)),
    (2, 6.0, EventModel(FixedRadius(1.0), 0.3, 1.0)),
    (2, 10.0, EventModel(StableRadii(1.5, r_max=2.4), 0.5, 0.3)),
    (3, 4.5, EventModel(FixedRadius(1.0), 0.2, 0.2)),
])
def test_compiled_matches_reference(d, L, model):
    dom = TorusDomain(d, L)
    results = []
    for engine in ("numba", "python"):
        state = ForwardState.from_function(dom, 0.25, lambda *c: 0.5 + 0.3 * np.cos(2 * np.pi * c[0] / L))
        traj = run_forward(state, model, 3.0, [CosineMode((1,) * d)], [1.0, 2.0, 3.0],
                           np.random.default_rng(7), engine=engine, validate=True)
        results.append((state.w.copy(), traj.values, traj.n_events))
    assert np.array_equal(results[0][0], results[1][0])
    assert np.array_equal(results[0][1], results[1][1])
    assert results[0][2] == results[1][2] > 0


def test_run_forward_sample_times_and_snapshots():
    state = ForwardState.constant(TorusDomain(1, 10.0), 0.1, 0.5)
    ones = np.full(state.w.shape, 1.0 / state.w.size)
    traj = run_forward(state, EventModel(FixedRadius(1.0), 0.5, 0.5), 2.0, [ones], [0.0, 1.0, 2.0],
                       np.random.default_rng(3), snapshot_times=[1.0, 2.0])
    assert traj.values[0, 0] == pytest.approx(0.5)
    assert np.allclose(traj.snapshots[2.0], state.w)
    assert traj.values[2, 0] == pytest.approx(state.w.mean())
    assert state.t == 2.0
    with pytest.raises(InputError):
        run_forward(state, EventModel(FixedRadius(1.0), 0.5), 1.0, [], [0.5, 0.2])


def test_local_average():
    dom = TorusDomain(1, 10.0)
    assert local_average(ForwardState.constant(dom, 0.1, 0.37), 3.3, 1.0) == pytest.approx(0.37)
    step = ForwardState.from_function(dom, 0.1, lambda x: (x < 5.0).astype(float))
    assert local_average(step, 5.0, 1.0) == pytest.approx(0.5)
    with pytest.raises(ResolutionError):
        local_average(step, 5.0, 0.05)


def test_local_average_brute_force_2d():
    rng = np.random.default_rng(4)
    dom = TorusDomain(2, 5.0)
    state = ForwardState(dom, 0.25, rng.random((20, 20)))
    for _ in range(5):
        x, r = dom.uniform(rng), rng.uniform(0.3, 1.2)
        vals = [state.w[i, j] for i in range(20) for j in range(20)
                if torus_distance(x, ((i + 0.5) * 0.25, (j + 0.5) * 0.25), dom) <= r]
        assert local_average(state, x, r) == pytest.approx(np.mean(vals))


def test_averaged_field_consistency():
    rng = np.random.default_rng(5)
    dom = TorusDomain(2, 5.0)
    state = ForwardState(dom, 0.25, rng.random((20, 20)))
    wb = averaged_field(state, 0.9)
    for i, j in [(0, 0), (3, 17), (10, 10)]:
        assert wb[i, j] == pytest.approx(local_average(state, ((i + 0.5) * 0.25, (j + 0.5) * 0.25), 0.9))
    f = rng.random((20, 20))
    assert np.sum(wb * f) == pytest.approx(np.sum(state.w * averaged_weights(state, f, 0.9)))


def test_rescaled_config():
    base = EventModel(FixedRadius(1.0), 0.8, 0.6)
    plan = rescaled_config(base, 1, L=10.0)
    assert plan.space_factor == 1 and plan.model.u == 0.8 and plan.model.s == 0.6
    plan = rescaled_config(base, 1000, L=4.0)
    assert plan.params.gamma == pytest.approx(1 / 3) and plan.params.delta == pytest.approx(2 / 3)
    assert plan.domain.L == pytest.approx(40.0)
    assert plan.scaled_h == pytest.approx(0.1 / 4)
    assert plan.unscaled_time(0.5) == pytest.approx(500)
    stable = rescaled_config(EventModel(StableRadii(1.5), 1.0, 1.0), 100, L=4.0)
    assert stable.model.radius.r_max < stable.domain.L / 4
    with pytest.raises(ConfigError, match="L > 4R"):
        rescaled_config(base, 1, L=3.0)


def test_snapshot_round_trip(tmp_path):
    state = ForwardState(TorusDomain(2, 2.0), 0.5, np.random.default_rng(0).random((4, 4)), t=1.5)
    write_snapshot(tmp_path / "s.bin", state, seed=9, replicate=2)
    header, w = read_snapshot(tmp_path / "s.bin")
    assert np.array_equal(w, state.w)
    assert header["seed"] == 9 and header["t"] == 1.5 and header["replicate"] == 2


def test_grid_refinement_converges():
    # events and parents do not depend on h, so one seed couples the grids
    dom = TorusDomain(1, 10.0)
    model = EventModel(FixedRadius(1.0), 0.3, 0.1)
    f = GaussianBump((4.5,), 0.5)
    vals = {}
    for h in (0.2, 0.1, 0.05, 0.025):
        out = []
        for i in range(200):
            st = ForwardState.from_function(dom, h, lambda x: (x < 5).astype(float))
            out.append(run_forward(st, model, 2.0, [f], None, replicate_rng(0, 0, i)).values[-1, 0])
        vals[h] = np.array(out)
    gaps = [np.abs(vals[a] - vals[a / 2]).mean() for a in (0.2, 0.1, 0.05)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 0.25 * gaps[0]
