"""Branching and coalescing dual of the SLFV with selection.

Lineages live in continuous space, either on a torus or (``domain=None``)
in free space R^d.  Only events covering at least one lineage matter; they
are produced exactly by thinning a size-biased proposal stream.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .events import EventKind, EventModel, ReproductionEvent, sample_covering_radius
from .geometry import TorusDomain, torus_distances, uniform_in_ball
from .scaling import ScalingParams, scaling_params


@dataclass
class DualState:
    positions: np.ndarray  # shape (N, d)
    t: float = 0.0
    branches: int = 0
    coalescences: int = 0
    jumps: int = 0
    log: list = field(default_factory=list)

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if self.positions.shape[0] < 1:
            raise ValueError("the dual needs at least one lineage")

    @property
    def N(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    def summary(self, with_positions: bool = False) -> dict:
        out = {"t": self.t, "N": self.N, "branches": self.branches,
               "coalescences": self.coalescences, "jumps": self.jumps}
        if with_positions:
            out["positions"] = self.positions.tolist()
        return out


def _place(domain: TorusDomain | None, pts: np.ndarray) -> np.ndarray:
    return pts if domain is None else domain.wrap(pts)


def propose_covering_event(dual: DualState, model: EventModel, rng: np.random.Generator,
                           domain: TorusDomain | None = None,
                           max_wait: float = math.inf) -> tuple[float, ReproductionEvent | None]:
    """Waiting time to, and marks of, the next event covering at least one lineage.

    Proposals arrive at rate N (1+s) int V_r mu(dr): a uniformly chosen
    lineage, a size-biased radius and a centre uniform in the ball around the
    lineage.  A proposal covering k lineages is accepted with probability
    1/k.  Returns ``(wait, None)`` once ``max_wait`` is exceeded.
    """
    d = dual.d
    rate = dual.N * model.covering_rate(d)
    wait = 0.0
    while True:
        wait += rng.exponential(1.0 / rate)
        if wait > max_wait:
            return wait, None
        i = rng.integers(dual.N)
        r = float(sample_covering_radius(model, d, rng))
        x = _place(domain, dual.positions[i] + uniform_in_ball(rng, d, r))
        covered = int(np.count_nonzero(torus_distances(x, dual.positions, domain) <= r))
        if covered == 1 or rng.random() * covered < 1.0:
            selective = rng.random() * (1 + model.s) < model.s
            kind = EventKind.SELECTIVE if selective else EventKind.NEUTRAL
            return wait, ReproductionEvent(dual.t + wait, x, r, model.u, kind)


def apply_dual_event(dual: DualState, e: ReproductionEvent, rng: np.random.Generator,
                     domain: TorusDomain | None = None) -> int:
    """Mark covered lineages w.p. u and replace the marked ones; returns the number marked."""
    covered = np.flatnonzero(torus_distances(e.x, dual.positions, domain) <= e.r)
    marked = covered[rng.random(covered.size) < e.u]
    dual.t = e.t
    k = marked.size
    if k == 0:
        return 0
    n_new = 2 if e.selective else 1
    new = _place(domain, e.x + uniform_in_ball(rng, dual.d, e.r, size=n_new))
    keep = np.ones(dual.N, dtype=bool)
    keep[marked] = False
    dual.positions = np.concatenate([dual.positions[keep], new])
    if e.selective:
        dual.branches += 1
    elif k == 1:
        dual.jumps += 1
    dual.coalescences += k - 1
    dual.log.append((e.t, e.kind.value, int(k)))
    return int(k)


def run_dual(dual: DualState, model: EventModel, T: float,
             sample_times: Sequence[float] | None = None,
             rng: np.random.Generator | None = None,
             domain: TorusDomain | None = None,
             with_positions: bool = False) -> list[dict]:
    """Run the dual (in place) to ``dual.t + T``; summaries at the sample times."""
    if rng is None:
        rng = np.random.default_rng()
    if domain is not None:
        model.check_domain(domain)
    t0 = dual.t
    horizon = t0 + T
    times = [t0, horizon] if sample_times is None else list(sample_times)
    out = []
    i = 0
    while True:
        wait, e = propose_covering_event(dual, model, rng, domain, max_wait=horizon - dual.t)
        t_next = horizon if e is None else e.t
        while i < len(times) and times[i] < t_next:
            snap = dual.summary(with_positions)
            snap["t"] = times[i]
            out.append(snap)
            i += 1
        if e is None:
            break
        apply_dual_event(dual, e, rng, domain)
    dual.t = horizon
    while i < len(times):
        snap = dual.summary(with_positions)
        snap["t"] = times[i]
        out.append(snap)
        i += 1
    return out


@dataclass(frozen=True)
class RescaledDualPlan:
    params: ScalingParams
    model: EventModel

    @property
    def space_factor(self) -> float:
        return self.params.space_factor

    @property
    def time_factor(self) -> float:
        return self.params.time_factor

    def per_lineage_jump_rate(self, d: int) -> float:
        """Rescaled rate of events that mark a given lineage: n u_n (1+s_n) int V_r mu(dr)."""
        return self.time_factor * self.model.u * self.model.covering_rate(d)

    def per_lineage_branch_rate(self, d: int) -> float:
        """Rescaled rate of selective events marking a lineage: n u_n s_n int V_r mu(dr)."""
        m = self.model
        return self.time_factor * m.u * m.s * m.covering_rate(d) / (1 + m.s)

    def run(self, positions, T: float, rng: np.random.Generator, sample_times=None,
            domain: TorusDomain | None = None) -> list[dict]:
        """Run from rescaled ``positions`` for rescaled time ``T``; report rescaled positions."""
        s = self.space_factor
        dual = DualState(np.atleast_2d(positions) / s)
        times = None if sample_times is None else [t * self.time_factor for t in sample_times]
        out = run_dual(dual, self.model, T * self.time_factor, times, rng, domain, with_positions=True)
        for snap in out:
            snap["t"] /= self.time_factor
            snap["positions"] = (np.asarray(snap["positions"]) * s).tolist()
        return out


def rescaled_dual_config(n: float, base: EventModel) -> RescaledDualPlan:
    """Unscaled dual with u_n, s_n; times multiplied by n, positions by n^-beta."""
    params = scaling_params(n, base.radius, base.u, base.s)
    return RescaledDualPlan(params, params.model())


@dataclass
class LineagePaths:
    """Vectorised single-lineage paths: the marginal law of any tracked lineage."""

    times: np.ndarray
    displacement: np.ndarray  # (paths, len(times), d)
    jump_sizes: np.ndarray  # all jump vectors, pooled over paths
    branch_times: list  # per path, times of selective events marking the lineage


def lineage_paths(model: EventModel, d: int, times: Sequence[float], n_paths: int,
                  rng: np.random.Generator, time_factor: float = 1.0,
                  space_factor: float = 1.0) -> LineagePaths:
    """Exact sampler for the motion of one tracked lineage.

    A lineage is marked by events at rate u (1+s) int V_r mu(dr); each marking
    event displaces it by the sum of two independent uniform points of a ball
    whose radius has the size-biased law.  Other lineages never change this
    marginal, so paths are compound Poisson and can be drawn in bulk.  Times
    and displacements are reported after rescaling by the given factors.
    """
    times = np.asarray(times, dtype=float)
    rate = model.u * model.covering_rate(d) * time_factor
    p_sel = model.s / (1 + model.s)
    T = float(times[-1])
    counts = rng.poisson(rate * T, size=n_paths)
    total = int(counts.sum())
    jump_t = rng.uniform(0.0, T, size=total)
    r = np.asarray(sample_covering_radius(model, d, rng, size=total), dtype=float)
    steps = (uniform_in_ball(rng, d, r, size=total) + uniform_in_ball(rng, d, r, size=total)) * space_factor
    selective = rng.random(total) < p_sel
    path_of = np.repeat(np.arange(n_paths), counts)
    disp = np.zeros((n_paths, times.size, d))
    for j, t in enumerate(times):
        before = jump_t <= t
        for axis in range(d):
            disp[:, j, axis] = np.bincount(path_of[before], weights=steps[before, axis], minlength=n_paths)
    sel_path, sel_t = path_of[selective], jump_t[selective]
    order = np.lexsort((sel_t, sel_path))
    per_path = np.bincount(sel_path, minlength=n_paths)
    branch_times = np.split(sel_t[order], np.cumsum(per_path)[:-1])
    return LineagePaths(times, disp, steps, branch_times)


def write_trajectory_jsonl(path, records: Sequence[dict], replicate: int | None = None) -> None:
    with open(path, "a") as fh:
        for rec in records:
            if replicate is not None:
                rec = {"replicate": replicate, **rec}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
