"""Balls, lens volumes and the periodic torus."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError

SUPPORTED_DIMENSIONS = (1, 2, 3)


def _check_dimension(d: int) -> None:
    if d not in SUPPORTED_DIMENSIONS:
        raise ConfigError(f"dimension must be one of {SUPPORTED_DIMENSIONS}, got {d}")


def ball_volume(d: int, r: float) -> float:
    """Volume of a Euclidean ball of radius ``r`` in ``d`` dimensions."""
    _check_dimension(d)
    if r <= 0:
        raise InputError(f"radius must be positive, got {r}")
    return math.pi ** (d / 2) * r**d / math.gamma(d / 2 + 1)


def ball_intersection_volume(d: int, r: float, m: float) -> float:
    """Volume of B(x, r) ∩ B(y, r) for two centres at distance ``m``.

    Closed-form lens volumes for d <= 3.
    """
    _check_dimension(d)
    if r <= 0:
        raise InputError(f"radius must be positive, got {r}")
    if m < 0:
        raise InputError(f"distance must be non-negative, got {m}")
    if m >= 2 * r:
        return 0.0
    if d == 1:
        return 2 * r - m
    if d == 2:
        return 2 * r * r * math.acos(m / (2 * r)) - 0.5 * m * math.sqrt(4 * r * r - m * m)
    return math.pi / 12 * (4 * r + m) * (2 * r - m) ** 2


def lens_volume_array(d: int, r, m) -> np.ndarray:
    """Vectorised ``ball_intersection_volume`` over arrays of radii and distances."""
    _check_dimension(d)
    r = np.asarray(r, dtype=float)
    m = np.asarray(m, dtype=float)
    r, m = np.broadcast_arrays(r, m)
    out = np.zeros(r.shape)
    inside = m < 2 * r
    ri, mi = r[inside], m[inside]
    if d == 1:
        out[inside] = 2 * ri - mi
    elif d == 2:
        out[inside] = 2 * ri**2 * np.arccos(mi / (2 * ri)) - 0.5 * mi * np.sqrt(4 * ri**2 - mi**2)
    else:
        out[inside] = np.pi / 12 * (4 * ri + mi) * (2 * ri - mi) ** 2
    return out


@dataclass(frozen=True)
class TorusDomain:
    """The periodic box [0, L)^d used in place of R^d."""

    d: int
    L: float

    def __post_init__(self):
        _check_dimension(self.d)
        if not self.L > 0:
            raise ConfigError(f"side length must be positive, got {self.L}")

    @property
    def volume(self) -> float:
        return self.L**self.d

    def check_radius(self, r: float) -> None:
        """Raise if a ball of radius ``r`` could overlap itself across the wrap."""
        if not self.L > 4 * r:
            raise ConfigError(f"L > 4R violated: L={self.L}, R={r}")

    def wrap(self, x):
        y = np.mod(np.asarray(x, dtype=float), self.L)
        # tiny negatives round up to exactly L
        return np.where(y >= self.L, 0.0, y)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all((x >= 0) & (x < self.L)))

    def displacement(self, x, y):
        """Minimum-image displacement y - x (broadcasts over leading axes)."""
        delta = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
        return delta - self.L * np.round(delta / self.L)

    def uniform(self, rng: np.random.Generator, size=None) -> np.ndarray:
        shape = (self.d,) if size is None else (size, self.d)
        return rng.uniform(0.0, self.L, size=shape)


def torus_distance(x, y, domain: TorusDomain) -> float:
    """Minimum-image Euclidean distance between two points of the torus."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != (domain.d,) or y.shape != (domain.d,):
        raise InputError(f"points must have {domain.d} coordinates")
    if not (domain.contains(x) and domain.contains(y)):
        raise InputError(f"coordinates must lie in [0, {domain.L})^{domain.d}")
    return float(np.linalg.norm(domain.displacement(x, y)))


def torus_distances(x, points, domain: TorusDomain | None) -> np.ndarray:
    """Distances from ``x`` to each row of ``points``; free space if ``domain`` is None."""
    points = np.asarray(points, dtype=float)
    if domain is None:
        delta = points - x
    else:
        delta = domain.displacement(x, points)
    return np.sqrt(np.sum(delta * delta, axis=-1))


def uniform_in_ball(rng: np.random.Generator, d: int, r, size: int | None = None) -> np.ndarray:
    """Uniform points in B(0, r); ``r`` may be an array broadcast against ``size``."""
    n = 1 if size is None else size
    if d == 1:
        pts = rng.uniform(-1.0, 1.0, size=(n, 1))
    else:
        g = rng.standard_normal((n, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        pts = g * rng.random((n, 1)) ** (1.0 / d)
    pts = pts * np.reshape(np.asarray(r, dtype=float), (-1, 1))
    return pts[0] if size is None else pts
