"""Structure parameters and the two duality constants.

The running costs of the control problems attached to the extremal
equations are ``C_plus * |zeta|**p`` (lower equation) and
``C_minus * |a|**p`` (upper equation).  Both constants are fixed by
Legendre/Young duality with the Hamiltonians ``delta * |xi|**q`` and
``|xi|**q / delta``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


class StructureError(ValueError):
    """Raised when parameters violate the superquadratic structure condition."""


def conjugate_exponent(q: float) -> float:
    """Return ``p = q / (q - 1)``; requires ``q > 2`` so that ``p`` lies in (1, 2)."""
    q = float(q)
    if not np.isfinite(q) or q <= 2.0:
        raise StructureError(f"structure condition requires q>2, got q={q}")
    return q / (q - 1.0)


def abs_pow(x, e):
    """``|x|**e`` for ``e > 0`` with an exact zero at ``x = 0``."""
    ax = np.abs(np.asarray(x, dtype=float))
    safe = np.where(ax > 0.0, ax, 1.0)
    return np.where(ax > 0.0, np.exp(e * np.log(safe)), 0.0)


@dataclass(frozen=True)
class StructureParams:
    """Universal data ``(delta, q, M, T, tau)``; ``p`` is derived.

    Parameters
    ----------
    delta : float
        Ellipticity/growth constant, ``delta >= 1``.
    q : float
        Gradient growth exponent, ``q > 2``.
    sup_bound : float
        The bound ``M`` on ``|u|``.
    horizon : float
        Final time ``T``.
    tail_time : float
        The ``tau`` in ``(0, T)`` below which Hölder estimates are not claimed.
    """

    delta: float = 1.0
    q: float = 4.0
    sup_bound: float = 1.0
    horizon: float = 1.0
    tail_time: float = 0.2

    def __post_init__(self):
        for name in ("delta", "q", "sup_bound", "horizon", "tail_time"):
            val = float(getattr(self, name))
            if not np.isfinite(val):
                raise StructureError(f"{name} must be finite")
            object.__setattr__(self, name, val)
        if self.q <= 2.0:
            raise StructureError(f"structure condition requires q>2, got q={self.q}")
        if self.delta < 1.0:
            raise StructureError(f"structure condition requires delta>=1, got {self.delta}")
        if self.sup_bound <= 0.0 or self.horizon <= 0.0:
            raise StructureError("sup_bound and horizon must be positive")
        if not 0.0 < self.tail_time < self.horizon:
            raise StructureError("tail_time must lie in (0, horizon)")

    @cached_property
    def p(self) -> float:
        return conjugate_exponent(self.q)

    @cached_property
    def c_plus(self) -> float:
        return c_plus(self)

    @cached_property
    def c_minus(self) -> float:
        return c_minus(self)

    def replace(self, **changes) -> "StructureParams":
        fields = dict(delta=self.delta, q=self.q, sup_bound=self.sup_bound,
                      horizon=self.horizon, tail_time=self.tail_time)
        fields.update(changes)
        return StructureParams(**fields)


def c_plus(params: StructureParams) -> float:
    """``delta**(-p/q) / (p * q**(p/q))``."""
    p, q = conjugate_exponent(params.q), params.q
    return params.delta ** (-p / q) / (p * q ** (p / q))


def c_minus(params: StructureParams) -> float:
    """``delta**(p/q) / (p * q**(p/q))``."""
    p, q = conjugate_exponent(params.q), params.q
    return params.delta ** (p / q) / (p * q ** (p / q))


def _norm(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim == 0:
        return np.abs(v)
    return np.linalg.norm(v, axis=-1)


def legendre_maximizer(xi, params: StructureParams) -> np.ndarray:
    """Maximizer of ``zeta -> -<zeta, xi> - C_plus |zeta|**p``.

    Works on a single vector or on a stack of vectors (last axis is space);
    scalars are treated as one-dimensional vectors.
    """
    xi = np.asarray(xi, dtype=float)
    p = params.p
    r = _norm(xi)
    mag = abs_pow(r / (params.c_plus * p), 1.0 / (p - 1.0))
    scale = np.where(r > 0.0, mag / np.where(r > 0.0, r, 1.0), 0.0)
    if xi.ndim == 0:
        return -scale * xi
    return -scale[..., None] * xi


def legendre_value(xi, params: StructureParams) -> np.ndarray:
    """Closed-form ``sup_zeta (-<zeta, xi> - C_plus |zeta|**p)``."""
    xi = np.asarray(xi, dtype=float)
    zeta = legendre_maximizer(xi, params)
    inner = zeta * xi if xi.ndim == 0 else np.sum(zeta * xi, axis=-1)
    return -inner - params.c_plus * abs_pow(_norm(zeta), params.p)


def legendre_gap(xi, params: StructureParams) -> np.ndarray:
    """Closed-form Legendre value minus ``delta |xi|**q``; zero up to round-off."""
    xi = np.asarray(xi, dtype=float)
    return legendre_value(xi, params) - params.delta * abs_pow(_norm(xi), params.q)


def young_margin(a, b, params: StructureParams) -> np.ndarray:
    """``C_minus |a|**p + |b|**q / delta - |<a, b>|``, nonnegative by Young."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    inner = a * b if a.ndim == 0 else np.sum(a * b, axis=-1)
    return (params.c_minus * abs_pow(_norm(a), params.p)
            + abs_pow(_norm(b), params.q) / params.delta
            - np.abs(inner))


def young_critical_partner(a, params: StructureParams) -> np.ndarray:
    """The ``b`` parallel to ``a`` with ``|b| = C_minus p |a|**(p-1)`` (equality case)."""
    a = np.asarray(a, dtype=float)
    r = _norm(a)
    mag = params.c_minus * params.p * abs_pow(r, params.p - 1.0)
    scale = np.where(r > 0.0, mag / np.where(r > 0.0, r, 1.0), 0.0)
    return scale * a if a.ndim == 0 else scale[..., None] * a


@dataclass(frozen=True)
class RegularityEstimate:
    """Hölder exponents predicted from an integrability exponent ``theta`` in (p, 2)."""

    theta: float
    p: float
    constant: float = 1.0

    def __post_init__(self):
        if not self.p < self.theta <= 2.0:
            raise StructureError(f"theta must lie in (p, 2], got {self.theta} with p={self.p}")

    @property
    def space_exponent(self) -> float:
        return (self.theta - self.p) / (self.theta - 1.0)

    @property
    def time_exponent(self) -> float:
        return (self.theta - self.p) / self.theta
