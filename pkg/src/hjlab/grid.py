"""Periodic grid fields and finite differences."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ConfigurationError(ValueError):
    """Raised for grids or solver settings that cannot be used."""


@dataclass
class GridFunction:
    """Samples of a periodic field on ``x_i = i * dx``, ``i = 0..nx-1``.

    ``values`` is 1-D for a spatial field or 2-D ``(nt + 1, nx)`` for a
    space-time field; in the latter case ``times`` holds the increasing
    time of each row.
    """

    values: np.ndarray
    dx: float
    times: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.dx = float(self.dx)
        if self.values.ndim not in (1, 2):
            raise ConfigurationError("values must be 1-D or 2-D")
        if self.nx < 4:
            raise ConfigurationError("need at least 4 grid nodes")
        if self.dx <= 0.0:
            raise ConfigurationError("dx must be positive")
        if not np.all(np.isfinite(self.values)):
            raise ConfigurationError("grid values must be finite")
        if self.values.ndim == 2:
            if self.times is None:
                raise ConfigurationError("space-time field needs times")
            self.times = np.asarray(self.times, dtype=float)
            if self.times.shape != (self.values.shape[0],):
                raise ConfigurationError("times must match the number of slices")
            if np.any(np.diff(self.times) <= 0.0):
                raise ConfigurationError("times must increase")

    @property
    def nx(self) -> int:
        return self.values.shape[-1]

    @property
    def period(self) -> float:
        return self.nx * self.dx

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.nx) * self.dx

    @property
    def is_spacetime(self) -> bool:
        return self.values.ndim == 2

    def slice_at(self, n: int) -> "GridFunction":
        return GridFunction(self.values[n], self.dx)

    def time_index(self, t: float) -> int:
        """Index of the stored slice nearest to ``t``."""
        if self.times is None:
            raise ConfigurationError("not a space-time field")
        return int(np.argmin(np.abs(self.times - t)))

    @classmethod
    def from_function(cls, f, nx: int, period: float = 1.0) -> "GridFunction":
        dx = period / nx
        return cls(f(np.arange(nx) * dx), dx)


def periodic_interp(values, dx, x):
    """Linear interpolation of periodic grid samples at arbitrary points."""
    values = np.asarray(values, dtype=float)
    n = values.shape[-1]
    s = np.asarray(x, dtype=float) / dx
    fl = np.floor(s)
    th = s - fl
    i0 = fl.astype(np.int64) % n
    i1 = (i0 + 1) % n
    return (1.0 - th) * values[..., i0] + th * values[..., i1]


def periodic_nearest(n, dx, x):
    """Index of the grid node nearest to ``x`` with periodic wrap."""
    return np.rint(np.asarray(x, dtype=float) / dx).astype(np.int64) % n


def periodic_distance(a, b, period):
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) % period
    return np.minimum(d, period - d)


def backward_diff(v, dx):
    return (v - np.roll(v, 1, axis=-1)) / dx


def forward_diff(v, dx):
    return (np.roll(v, -1, axis=-1) - v) / dx


def central_gradient(v, dx):
    return (np.roll(v, -1, axis=-1) - np.roll(v, 1, axis=-1)) / (2.0 * dx)


def second_difference(v, dx):
    return (np.roll(v, -1, axis=-1) - 2.0 * v + np.roll(v, 1, axis=-1)) / (dx * dx)


def upwind_gradient_norm(v, dx):
    """``max(D^- v, -D^+ v, 0)``: monotone approximation of ``|v_x|``."""
    return np.maximum(np.maximum(backward_diff(v, dx), -forward_diff(v, dx)), 0.0)
