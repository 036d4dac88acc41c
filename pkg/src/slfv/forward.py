"""Forward-in-time SLFV with selection on a gridded torus.

The field ``w`` (local frequency of the disfavoured type 0) is stored as
cell averages on a regular grid.  A cell belongs to an event ball when its
centre does, and a parent at location ``z`` reads the cell containing ``z``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, DomainError, InputError, ResolutionError
from ._kernels import apply_events
from .events import (EventBatch, EventModel, FixedRadius, ReproductionEvent, StableRadii,
                     draw_event_batch, total_event_rate)
from .geometry import TorusDomain, uniform_in_ball
from .scaling import ScalingParams, scaling_params


@dataclass
class ForwardState:
    domain: TorusDomain
    h: float
    w: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        m = self.domain.L / self.h
        if abs(m - round(m)) > 1e-9 * max(m, 1.0):
            raise ConfigError(f"L/h must be an integer, got L={self.domain.L}, h={self.h}")
        self.w = np.asarray(self.w, dtype=float)
        shape = (self.cells_per_side,) * self.domain.d
        if self.w.shape != shape:
            raise ConfigError(f"field shape {self.w.shape} does not match grid {shape}")
        if np.any(self.w < 0) or np.any(self.w > 1):
            raise ConfigError("field values must lie in [0, 1]")

    @property
    def cells_per_side(self) -> int:
        return int(round(self.domain.L / self.h))

    @property
    def cell_volume(self) -> float:
        return self.h**self.domain.d

    @classmethod
    def constant(cls, domain: TorusDomain, h: float, c: float) -> ForwardState:
        m = int(round(domain.L / h))
        return cls(domain, h, np.full((m,) * domain.d, float(c)))

    @classmethod
    def from_function(cls, domain: TorusDomain, h: float, fn) -> ForwardState:
        """Field with cell value ``fn(*centre_coordinates)`` (midpoint rule)."""
        m = int(round(domain.L / h))
        centres = cell_centres(domain, m)
        return cls(domain, h, np.asarray(fn(*centres), dtype=float) * np.ones((m,) * domain.d))

    def copy(self) -> ForwardState:
        return ForwardState(self.domain, self.h, self.w.copy(), self.t)

    def cell_index(self, z) -> tuple:
        """Index of the cell containing the torus point ``z``."""
        m = self.cells_per_side
        idx = np.floor(np.asarray(z, dtype=float) / self.h).astype(int) % m
        return tuple(idx)

    def ball_cells(self, x, r: float) -> tuple:
        """Fancy index of the cells whose centre lies within torus distance ``r`` of ``x``."""
        h, m = self.h, self.cells_per_side
        x = np.asarray(x, dtype=float)
        lo = np.ceil((x - r) / h - 0.5).astype(int)
        hi = np.floor((x + r) / h - 0.5).astype(int)
        if self.domain.d == 1:
            return (np.arange(lo[0], hi[0] + 1) % m,)
        axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
        grids = np.meshgrid(*axes, indexing="ij")
        dist2 = sum(((g + 0.5) * h - xi) ** 2 for g, xi in zip(grids, x))
        inside = dist2 <= r * r
        return tuple(g[inside] % m for g in grids)


def cell_centres(domain: TorusDomain, m: int) -> list[np.ndarray]:
    """Broadcastable coordinate arrays of the cell centres of an m^d grid."""
    h = domain.L / m
    c = (np.arange(m) + 0.5) * h
    return list(np.meshgrid(*([c] * domain.d), indexing="ij", sparse=True))


def _check_event(state: ForwardState, e: ReproductionEvent) -> None:
    if e.r > state.domain.L / 4:
        raise DomainError(f"event radius {e.r} exceeds L/4 = {state.domain.L / 4}")


def _parent_is_type0(state: ForwardState, e: ReproductionEvent, rng: np.random.Generator) -> bool:
    z = state.domain.wrap(e.x + uniform_in_ball(rng, state.domain.d, e.r))
    return rng.random() < state.w[state.cell_index(z)]


def _affine_update(state: ForwardState, e: ReproductionEvent, type0: bool) -> tuple:
    idx = state.ball_cells(e.x, e.r)
    state.w[idx] = (1 - e.u) * state.w[idx] + (e.u if type0 else 0.0)
    state.t = e.t
    return idx


def apply_neutral_event(state: ForwardState, e: ReproductionEvent, rng: np.random.Generator) -> tuple:
    """One parent, type read at a uniform point of the ball; returns the touched cells."""
    _check_event(state, e)
    return _affine_update(state, e, _parent_is_type0(state, e, rng))


def apply_selective_event(state: ForwardState, e: ReproductionEvent, rng: np.random.Generator) -> tuple:
    """Two potential parents; offspring is type 0 only if both are."""
    _check_event(state, e)
    first = _parent_is_type0(state, e, rng)
    second = _parent_is_type0(state, e, rng)
    return _affine_update(state, e, first and second)


def apply_event(state: ForwardState, e: ReproductionEvent, rng: np.random.Generator) -> tuple:
    if e.selective:
        return apply_selective_event(state, e, rng)
    return apply_neutral_event(state, e, rng)


class ObservableSpec:
    """Test function f with compact support; ``<w, f>`` is a midpoint cell sum."""

    support: float

    def values(self, domain: TorusDomain, m: int) -> np.ndarray:
        raise NotImplementedError

    def weights(self, state: ForwardState) -> np.ndarray:
        return self.values(state.domain, state.cells_per_side) * state.cell_volume

    def check(self, domain: TorusDomain) -> None:
        if self.support > domain.L / 2:
            raise ConfigError(f"observable support {self.support} does not fit in the torus")

    def _dist(self, domain: TorusDomain, m: int, centre) -> np.ndarray:
        centre = np.broadcast_to(np.asarray(centre, dtype=float), (domain.d,))
        coords = cell_centres(domain, m)
        sq = 0.0
        for ci, xi in zip(coords, centre):
            delta = ci - xi
            delta = delta - domain.L * np.round(delta / domain.L)
            sq = sq + delta * delta
        return np.sqrt(sq) * np.ones((m,) * domain.d)


@dataclass(frozen=True)
class GaussianBump(ObservableSpec):
    centre: tuple
    sigma: float
    cutoff: float = 4.0

    @property
    def support(self) -> float:
        return self.cutoff * self.sigma

    def values(self, domain, m):
        dist = self._dist(domain, m, self.centre)
        return np.where(dist < self.support, np.exp(-0.5 * (dist / self.sigma) ** 2), 0.0)


@dataclass(frozen=True)
class BallIndicator(ObservableSpec):
    centre: tuple
    radius: float

    @property
    def support(self) -> float:
        return self.radius

    def values(self, domain, m):
        return (self._dist(domain, m, self.centre) <= self.radius).astype(float)


@dataclass(frozen=True)
class CosineMode(ObservableSpec):
    """cos(2 pi k . x / L) on the whole torus (periodic rather than compactly supported)."""

    k: tuple
    support: float = 0.0

    def values(self, domain, m):
        coords = cell_centres(domain, m)
        k = np.broadcast_to(np.asarray(self.k, dtype=float), (domain.d,))
        phase = sum(2 * np.pi * ki * ci / domain.L for ki, ci in zip(k, coords))
        return np.cos(phase) * np.ones((m,) * domain.d)


def pairing(state: ForwardState, f: ObservableSpec | np.ndarray) -> float:
    """<w, f> by midpoint quadrature."""
    weights = f if isinstance(f, np.ndarray) else f.weights(state)
    return float(np.sum(state.w * weights))


@dataclass
class ForwardTrajectory:
    times: np.ndarray
    values: np.ndarray  # shape (len(times), len(observers))
    snapshots: dict = field(default_factory=dict)
    n_events: int = 0


@dataclass
class ParentDraws:
    """Offsets (inside the event ball) and uniforms deciding the parents' types."""

    z1: np.ndarray
    p1: np.ndarray
    z2: np.ndarray
    p2: np.ndarray


def draw_parents(batch: EventBatch, d: int, rng: np.random.Generator) -> ParentDraws:
    n = len(batch)
    z1 = uniform_in_ball(rng, d, batch.r, size=n)
    p1 = rng.random(n)
    z2 = uniform_in_ball(rng, d, batch.r, size=n)
    p2 = rng.random(n)
    return ParentDraws(z1, p1, z2, p2)


def _apply_batch_python(state: ForwardState, batch: EventBatch, parents: ParentDraws,
                        start: int, stop: int, validate: bool) -> int:
    """Reference loop with the same arithmetic as the compiled kernel."""
    L, bad = state.domain.L, 0
    for i in range(start, stop):
        e = batch.event(i)
        z = e.x + parents.z1[i]
        type0 = parents.p1[i] < state.w[state.cell_index(z - L * np.floor(z / L))]
        if e.selective:
            z = e.x + parents.z2[i]
            second = parents.p2[i] < state.w[state.cell_index(z - L * np.floor(z / L))]
            type0 = type0 and second
        idx = state.ball_cells(e.x, e.r)
        state.w[idx] = (1 - e.u) * state.w[idx] + (e.u if type0 else 0.0)
        if validate:
            touched = state.w[idx]
            bad += int(np.count_nonzero((touched < 0) | (touched > 1)))
    return bad


def _apply_batch(state, batch, parents, start, stop, validate, engine) -> int:
    if stop <= start:
        return 0
    if engine == "python":
        return _apply_batch_python(state, batch, parents, start, stop, validate)
    flat = state.w.reshape(-1)
    return int(apply_events(flat, state.cells_per_side, state.domain.d, state.h, state.domain.L,
                            batch.u, batch.x, batch.r, batch.selective, parents.z1, parents.p1,
                            parents.z2, parents.p2, start, stop, validate))


def run_forward(state: ForwardState, model: EventModel, T: float,
                observers: Sequence[ObservableSpec | np.ndarray] = (),
                sample_times: Sequence[float] | None = None,
                rng: np.random.Generator | None = None,
                snapshot_times: Sequence[float] = (),
                validate: bool = False, engine: str = "numba") -> ForwardTrajectory:
    """Apply the event stream to ``state`` (in place) up to time ``state.t + T``.

    Observables are recorded at each sample time (absolute times, default the
    start and the end); a recorded value reflects every event up to that
    time.  Events are drawn lazily in chunks sized to the remaining horizon.
    With ``validate`` any cell leaving [0, 1] raises AssertionError.
    ``engine="python"`` runs the uncompiled reference loop on the same draws.
    """
    if rng is None:
        rng = np.random.default_rng()
    if engine not in ("numba", "python"):
        raise ConfigError(f"unknown engine {engine!r}")
    model.check_domain(state.domain)
    t0 = state.t
    horizon = t0 + T
    times = np.array([t0, horizon] if sample_times is None else sample_times, dtype=float)
    if np.any(np.diff(times) < 0) or (times.size and (times[0] < t0 or times[-1] > horizon)):
        raise InputError("sample times must be sorted and lie in [t, t + T]")
    weights = [f if isinstance(f, np.ndarray) else f.weights(state) for f in observers]
    snap_set = set(float(s) for s in snapshot_times)
    marks = sorted(set(times.tolist()) | snap_set)
    values = np.empty((times.size, len(weights)))
    snapshots = {}
    recorded = {}

    def record(tau):
        recorded[tau] = [float(np.sum(state.w * wt)) for wt in weights]
        if tau in snap_set:
            snapshots[tau] = state.w.copy()

    rate = total_event_rate(model, state.domain)
    t, i_mark, n_events = t0, 0, 0
    while True:
        expected = rate * (horizon - t)
        chunk = int(min(65536, expected + 4 * math.sqrt(expected) + 16))
        batch = draw_event_batch(model, state.domain, rng, t, chunk)
        parents = draw_parents(batch, state.domain.d, rng)
        usable = int(np.searchsorted(batch.t, horizon, side="right"))
        pos = 0
        while i_mark < len(marks) and (usable < len(batch) or marks[i_mark] <= batch.t[-1]):
            stop = int(np.searchsorted(batch.t[:usable], marks[i_mark], side="right"))
            bad = _apply_batch(state, batch, parents, pos, stop, validate, engine)
            if bad:
                raise AssertionError(f"{bad} cell values left [0,1]")
            pos = stop
            record(marks[i_mark])
            i_mark += 1
        bad = _apply_batch(state, batch, parents, pos, usable, validate, engine)
        if bad:
            raise AssertionError(f"{bad} cell values left [0,1]")
        n_events += usable
        if usable < len(batch):
            break
        t = float(batch.t[-1])
    while i_mark < len(marks):
        record(marks[i_mark])
        i_mark += 1
    state.t = horizon
    for j, tau in enumerate(times):
        values[j] = recorded[float(tau)]
    return ForwardTrajectory(times, values, snapshots, n_events)


def ball_kernel(state: ForwardState, r: float) -> np.ndarray:
    """Indicator of the grid offsets whose centre-to-centre distance is <= r."""
    if r < state.h:
        raise ResolutionError(f"averaging radius {r} is below the cell width {state.h}")
    return _ball_kernel(state.domain.d, state.cells_per_side, state.h, r)


def _ball_kernel(d: int, m: int, h: float, r: float) -> np.ndarray:
    off = np.arange(m)
    off = np.minimum(off, m - off) * h
    grids = np.meshgrid(*([off] * d), indexing="ij", sparse=True)
    dist2 = sum(g * g for g in grids)
    return (dist2 <= r * r + 1e-12 * h * h).astype(float)


def averaged_field(state: ForwardState, r: float) -> np.ndarray:
    """Local average of w over B(c, r) at every cell centre c."""
    k = ball_kernel(state, r)
    k /= k.sum()
    return np.real(np.fft.ifftn(np.fft.fftn(state.w) * np.fft.fftn(k)))


def averaged_weights(state: ForwardState, f: np.ndarray, r: float) -> np.ndarray:
    """Weights g with <averaged_field(w, r), f> = sum(w * g) (the averaging is symmetric)."""
    k = ball_kernel(state, r)
    k /= k.sum()
    return np.real(np.fft.ifftn(np.fft.fftn(f) * np.fft.fftn(k)))


def local_average(state: ForwardState, x, r: float) -> float:
    """Average of the cell values over B(x, r) (cells counted by their centre)."""
    if r < state.h:
        raise ResolutionError(f"averaging radius {r} is below the cell width {state.h}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    idx = state.ball_cells(x, r)
    return float(np.mean(state.w[idx]))


@dataclass(frozen=True)
class RescaledPlan:
    """How to realise the rescaled process with an unscaled simulation.

    Simulate with ``model`` on ``domain`` (side n^beta L) for ``n`` times the
    rescaled horizon, then multiply coordinates by n^-beta.
    """

    params: ScalingParams
    model: EventModel
    domain: TorusDomain
    h: float
    averaging_radius: float  # unscaled radius of the local average w-bar

    @property
    def space_factor(self) -> float:
        return self.params.space_factor

    @property
    def time_factor(self) -> float:
        return self.params.time_factor

    @property
    def scaled_h(self) -> float:
        return self.h * self.space_factor

    def unscaled_time(self, t: float) -> float:
        return t * self.time_factor

    def unscaled_coords(self, x):
        return np.asarray(x, dtype=float) / self.space_factor

    def initial_state(self, fn) -> ForwardState:
        """State whose cell values are ``fn`` evaluated at rescaled cell centres."""
        s = self.space_factor
        return ForwardState.from_function(self.domain, self.h, lambda *c: fn(*(ci * s for ci in c)))


def rescaled_config(base: EventModel, n: float, L: float, d: int = 1,
                    h: float | None = None) -> RescaledPlan:
    """Plan for the rescaled forward process on a rescaled torus of side ``L``.

    ``base.u`` and ``base.s`` play the roles of u and sigma.  The default
    rescaled cell width is n^-beta R / 4 (R = 1 for stable radii), adjusted
    down so that it divides the side.  Unbounded stable radii are truncated
    just below a quarter of the unscaled side.
    """
    law = base.radius
    params = scaling_params(n, law, base.u, base.s)
    L_u = L / params.space_factor
    if isinstance(law, StableRadii) and math.isinf(law.r_max):
        law = StableRadii(law.alpha, r_max=0.99 * L_u / 4)
        params = scaling_params(n, law, base.u, base.s)
    R = law.R if isinstance(law, FixedRadius) else 1.0
    h_u = R / 4 if h is None else h / params.space_factor
    m = math.ceil(L_u / h_u - 1e-9)
    h_u = L_u / m
    domain = TorusDomain(d, L_u)
    model = params.model()
    model.check_domain(domain)
    return RescaledPlan(params, model, domain, h_u, R)


def encode_snapshot(state: ForwardState, seed: int | None = None, **extra) -> bytes:
    """One JSON header line, then the cell values as little-endian float64 (C order)."""
    header = {"d": state.domain.d, "L": state.domain.L, "h": state.h, "t": state.t,
              "seed": seed, "shape": list(state.w.shape), "dtype": "<f8", **extra}
    return (json.dumps(header, sort_keys=True).encode() + b"\n"
            + np.ascontiguousarray(state.w, dtype="<f8").tobytes())


def write_snapshot(path, state: ForwardState, seed: int | None = None, **extra) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_snapshot(state, seed, **extra))


def read_snapshot(path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        data = np.frombuffer(fh.read(), dtype=header.get("dtype", "<f8"))
    return header, data.reshape(header["shape"]).copy()
