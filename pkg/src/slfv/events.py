"""Poisson streams of reproduction events.

Neutral and selective events share one exponential clock; each event is
tagged selective with probability s / (1 + s).  By superposition this is
the same law as two independent Poisson processes with intensities
dt dx mu(dr) and s dt dx mu(dr).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Iterator, Union

import numpy as np

from .errors import ConfigError, InputError
from .geometry import TorusDomain, ball_volume


class EventKind(enum.Enum):
    NEUTRAL = "neutral"
    SELECTIVE = "selective"


@dataclass(frozen=True)
class FixedRadius:
    """mu(dr) = delta_R(dr)."""

    R: float

    def __post_init__(self):
        if not self.R > 0:
            raise ConfigError(f"R must be positive, got {self.R}")

    @property
    def max_radius(self) -> float:
        return self.R


@dataclass(frozen=True)
class StableRadii:
    """mu(dr) = 1{1 <= r <= r_max} r^-(d+alpha+1) dr.

    ``r_max = inf`` is the untruncated measure.  A finite ``r_max`` is needed
    to simulate the forward process on a torus of finite side.
    """

    alpha: float
    r_max: float = math.inf

    def __post_init__(self):
        if not 1 < self.alpha < 2:
            raise ConfigError(f"alpha must be in (1,2), got {self.alpha}")
        if not self.r_max > 1:
            raise ConfigError(f"r_max must exceed the minimal radius 1, got {self.r_max}")

    @property
    def max_radius(self) -> float:
        return self.r_max


RadiusLaw = Union[FixedRadius, StableRadii]


@dataclass(frozen=True)
class EventModel:
    """Radius law, impact ``u`` and selection ratio ``s`` (mu' = s mu, nu = delta_u)."""

    radius: RadiusLaw
    u: float
    s: float = 0.0

    def __post_init__(self):
        if not 0 < self.u <= 1:
            raise ConfigError(f"impact u must be in (0,1], got {self.u}")
        if self.s < 0:
            raise ConfigError(f"selection ratio s must be >= 0, got {self.s}")
        if not isinstance(self.radius, (FixedRadius, StableRadii)):
            raise ConfigError(f"unsupported radius law {self.radius!r}")

    def with_params(self, u: float | None = None, s: float | None = None) -> EventModel:
        return replace(self, u=self.u if u is None else u, s=self.s if s is None else s)

    def integrability(self, d: int) -> float:
        """Value of int r^d u mu(dr), finite for every supported law."""
        law = self.radius
        if isinstance(law, FixedRadius):
            return law.R**d * self.u
        # int_1^rmax r^d r^-(d+alpha+1) dr
        return self.u * (1 - law.r_max ** (-law.alpha)) / law.alpha

    def radius_mass(self, d: int) -> float:
        """Total mass of mu."""
        law = self.radius
        if isinstance(law, FixedRadius):
            return 1.0
        k = d + law.alpha
        return (1 - law.r_max ** (-k)) / k

    def covering_rate(self, d: int) -> float:
        """Rate at which events (of either kind) cover a given point: (1+s) int V_r mu(dr)."""
        law = self.radius
        if isinstance(law, FixedRadius):
            vol = ball_volume(d, law.R)
        else:
            vol = ball_volume(d, 1.0) * (1 - law.r_max ** (-law.alpha)) / law.alpha
        return (1 + self.s) * vol

    def check_domain(self, domain: TorusDomain) -> None:
        if math.isinf(self.radius.max_radius):
            raise ConfigError("unbounded event radii cannot be simulated on a torus; set r_max")
        domain.check_radius(self.radius.max_radius)


@dataclass(frozen=True)
class ReproductionEvent:
    t: float
    x: np.ndarray
    r: float
    u: float
    kind: EventKind

    @property
    def selective(self) -> bool:
        return self.kind is EventKind.SELECTIVE


def total_event_rate(model: EventModel, domain: TorusDomain) -> float:
    """Rate of all events on the torus, L^d (1 + s) mu((0, inf))."""
    return domain.volume * (1 + model.s) * model.radius_mass(domain.d)


def sample_stable_radius(alpha: float, d: int, U: float) -> float:
    """Inverse CDF of the normalised untruncated stable radius law."""
    if not 0 < U < 1:
        raise InputError(f"U must be in (0,1), got {U}")
    if not 1 < alpha < 2:
        raise ConfigError(f"alpha must be in (1,2), got {alpha}")
    return U ** (-1.0 / (d + alpha))


def _pareto_radius(U, tail: float, r_max: float):
    # inverse CDF of density ~ r^-(tail+1) on [1, r_max]
    if math.isinf(r_max):
        return U ** (-1.0 / tail)
    return (1 - (1 - U) * (1 - r_max ** (-tail))) ** (-1.0 / tail)


def sample_radius(model: EventModel, d: int, rng: np.random.Generator) -> float:
    """Radius drawn from mu normalised to a probability law."""
    law = model.radius
    if isinstance(law, FixedRadius):
        return law.R
    # 1 - U has the same law as U; keeps the untruncated case identical to sample_stable_radius
    return float(_pareto_radius(1.0 - rng.random(), d + law.alpha, law.r_max))


def sample_covering_radius(model: EventModel, d: int, rng: np.random.Generator, size=None):
    """Radius drawn from the size-biased law V_r mu(dr) / int V_r mu(dr)."""
    law = model.radius
    if isinstance(law, FixedRadius):
        return law.R if size is None else np.full(size, law.R)
    U = 1.0 - rng.random(size)
    return _pareto_radius(U, law.alpha, law.r_max)


def sample_event(model: EventModel, domain: TorusDomain, t: float, rng: np.random.Generator) -> ReproductionEvent:
    """Marks of one event: uniform centre, radius from mu, impact u, kind coin."""
    x = domain.uniform(rng)
    r = sample_radius(model, domain.d, rng)
    selective = rng.random() * (1 + model.s) < model.s
    kind = EventKind.SELECTIVE if selective else EventKind.NEUTRAL
    return ReproductionEvent(t=t, x=x, r=r, u=model.u, kind=kind)


@dataclass
class EventBatch:
    """Marks of consecutive events as arrays (one row per event)."""

    t: np.ndarray
    x: np.ndarray
    r: np.ndarray
    selective: np.ndarray
    u: float

    def __len__(self) -> int:
        return self.t.size

    def event(self, i: int) -> ReproductionEvent:
        kind = EventKind.SELECTIVE if self.selective[i] else EventKind.NEUTRAL
        return ReproductionEvent(float(self.t[i]), self.x[i], float(self.r[i]), self.u, kind)


def draw_event_batch(model: EventModel, domain: TorusDomain, rng: np.random.Generator,
                     t0: float, size: int) -> EventBatch:
    """The next ``size`` events after time ``t0``, drawn in bulk."""
    rate = total_event_rate(model, domain)
    t = t0 + np.cumsum(rng.exponential(1.0 / rate, size))
    x = rng.uniform(0.0, domain.L, size=(size, domain.d))
    law = model.radius
    if isinstance(law, FixedRadius):
        r = np.full(size, law.R)
    else:
        r = _pareto_radius(1.0 - rng.random(size), domain.d + law.alpha, law.r_max)
    selective = rng.random(size) * (1 + model.s) < model.s
    return EventBatch(t, x, np.asarray(r, dtype=float), selective, model.u)


def event_stream(model: EventModel, domain: TorusDomain, rng: np.random.Generator,
                 horizon: float = math.inf, t0: float = 0.0,
                 chunk: int = 1024) -> Iterator[ReproductionEvent]:
    """Lazily generated events in time order up to ``horizon``."""
    t = t0
    while True:
        batch = draw_event_batch(model, domain, rng, t, chunk)
        for i in range(len(batch)):
            if batch.t[i] > horizon:
                return
            yield batch.event(i)
        t = float(batch.t[-1])
