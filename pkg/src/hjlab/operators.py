"""Discrete extremal operators, eigenvalue maps and Lévy integral operators.

The extremal quotient at ``x`` for jump ``lambda * b`` is

    (phi(x + lambda b) - phi(x) - <g, lambda b>) / |b|**2

with ``g`` the gradient supplied by the caller.  On a grid with spacing
``dx`` the controls are ``lambda = j / k`` and ``b = +-k dx`` with integers
``1 <= j <= k <= K = floor(1/dx)``.  For a fixed shift ``j`` the numerator
does not depend on ``k``, so the optimal ``k`` is either the smallest
admissible one or ``K`` depending on the numerator's sign, which makes the
per-node cost O(K).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .grid import (
    ConfigurationError,
    GridFunction,
    backward_diff,
    central_gradient,
    forward_diff,
    second_difference,
)
from .jumps import LevyMeasureSpec


def max_shift(dx: float) -> int:
    """``K = floor(1/dx)``, the largest base length in grid units."""
    K = int(math.floor(1.0 / dx + 1e-9))
    if K < 1:
        raise ConfigurationError(f"dx={dx} exceeds the unit jump radius")
    return K


def monotone_kmin(dx: float) -> int:
    """Smallest base length (grid units) used by the monotone scheme.

    Upwinding the gradient inside the quotient costs ``O(1/k)``; cutting
    ``|b| < k dx`` costs ``O(k dx)``.  Both balance at ``k ~ dx**-1/2``.
    """
    K = max_shift(dx)
    return max(1, min(K, int(math.ceil(math.sqrt(K)))))


def _as_field(phi) -> tuple[np.ndarray, float]:
    if isinstance(phi, GridFunction):
        if phi.is_spacetime:
            raise ConfigurationError("expected a spatial slice")
        return phi.values, phi.dx
    raise TypeError("phi must be a GridFunction")


def _gradient_array(gradient, n):
    g = np.asarray(gradient, dtype=float)
    return np.full(n, float(g)) if g.ndim == 0 else g


def extremal_field(phi: GridFunction, gradient=None, upper=False, kmin=1,
                   backend=None):
    """Extremal operator at every node with one supplied gradient per node.

    ``gradient`` defaults to the central difference.  Returns the values
    and the optimal ``(j, k, sign)`` per node.
    """
    v, dx = _as_field(phi)
    K = max_shift(dx)
    g = central_gradient(v, dx) if gradient is None else _gradient_array(gradient, v.size)
    return kernels.extremal_sweep(v, g, g, dx, K, kmin, upper, backend=backend)


def extremal_lower(phi: GridFunction, gradient, node: int) -> float:
    """Discrete ``M^-[phi]`` at one node (infimum over ``(j, k, sign)``)."""
    v, _ = _as_field(phi)
    if not 0 <= node < v.size:
        raise IndexError(node)
    vals, *_ = extremal_field(phi, _gradient_array(gradient, v.size), upper=False)
    return float(vals[node])


def extremal_upper(phi: GridFunction, gradient, node: int) -> float:
    """Discrete ``M^+[phi]`` at one node (supremum over ``(j, k, sign)``)."""
    v, _ = _as_field(phi)
    if not 0 <= node < v.size:
        raise IndexError(node)
    vals, *_ = extremal_field(phi, _gradient_array(gradient, v.size), upper=True)
    return float(vals[node])


def monotone_extremal(values, dx, upper=False, backend=None):
    """Extremal operator as used inside the solver.

    Positive shifts use the backward difference, negative shifts the
    forward difference, and bases shorter than ``monotone_kmin`` are
    dropped.  Every quotient is then nondecreasing in each neighbour value,
    so min/max over quotients keeps the scheme monotone.
    """
    values = np.asarray(values, dtype=float)
    K = max_shift(dx)
    return kernels.extremal_sweep(values, backward_diff(values, dx),
                                  forward_diff(values, dx), dx, K,
                                  monotone_kmin(dx), upper, backend=backend)


def monotone_center_weight(dx) -> float:
    """Largest coefficient of the centre value in ``monotone_extremal``."""
    kmin = monotone_kmin(dx)
    # quotient with shift j and base k >= max(j, kmin): centre weight (1+j)/(k dx)^2
    return max((1.0 + j) / (max(j, kmin) * dx) ** 2 for j in range(1, max_shift(dx) + 1))


# ---------------------------------------------------------------------------
# local case


@dataclass(frozen=True)
class SymmetricMatrix:
    """Symmetric ``N x N`` matrix (``N <= 3``) stored by its upper triangle."""

    n: int
    upper: tuple

    @classmethod
    def from_array(cls, X) -> "SymmetricMatrix":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n = X.shape[0]
        if X.shape != (n, n) or n > 3:
            raise ValueError("expected a square matrix of size at most 3")
        iu = np.triu_indices(n)
        return cls(n, tuple(float(x) for x in X[iu]))

    def to_array(self) -> np.ndarray:
        X = np.zeros((self.n, self.n))
        X[np.triu_indices(self.n)] = self.upper
        return X + np.triu(X, 1).T


def eigen_extremes(X) -> tuple[float, float]:
    """``(min_{|z|<=1} <Xz,z>, max_{|z|<=1} <Xz,z>)``; the ball contains ``z=0``."""
    if not isinstance(X, SymmetricMatrix):
        X = SymmetricMatrix.from_array(X)
    ev = np.linalg.eigvalsh(X.to_array())
    return min(0.0, float(ev[0])), max(0.0, float(ev[-1]))


# ---------------------------------------------------------------------------
# Lévy integral operators


@dataclass(frozen=True)
class JumpMap:
    """One jump map ``e -> j(x, e)`` with ``|j(x, e)| <= growth * |e|``."""

    name: str
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    growth: float = 1.0
    params: dict = field(default_factory=dict)

    def __call__(self, x, e):
        return self.fn(np.asarray(x, dtype=float), np.asarray(e, dtype=float))

    def check_growth(self, period: float = 1.0, n: int = 257) -> bool:
        x = np.linspace(0.0, period, 33)[:, None]
        e = np.linspace(-1.0, 1.0, n)[None, :]
        return bool(np.all(np.abs(self(x, e)) <= self.growth * np.abs(e) + 1e-12))


def _checker(x, width, period):
    return (np.floor(np.mod(x, period) / width).astype(np.int64) % 2).astype(float)


def make_jump_map(name: str, **params) -> JumpMap:
    """Build a catalogue jump map by name.

    ``linear(gamma)``, ``asymmetric(gamma_pos, gamma_neg)``, ``sine(amp)``
    and ``checker(lo, hi, width, period)`` (a rough x-dependent scaling).
    """
    if name == "linear":
        g = float(params.get("gamma", 1.0))
        return JumpMap(name, lambda x, e: g * e + 0.0 * x, abs(g), dict(gamma=g))
    if name == "asymmetric":
        gp = float(params.get("gamma_pos", 1.0))
        gn = float(params.get("gamma_neg", 0.5))
        return JumpMap(name, lambda x, e: np.where(e > 0, gp * e, gn * e) + 0.0 * x,
                       max(abs(gp), abs(gn)), dict(gamma_pos=gp, gamma_neg=gn))
    if name == "sine":
        amp = float(params.get("amp", 1.0))
        return JumpMap(name, lambda x, e: amp * np.sin(np.pi * e) / np.pi + 0.0 * x,
                       abs(amp), dict(amp=amp))
    if name == "checker":
        lo = float(params.get("lo", 0.5))
        hi = float(params.get("hi", 1.0))
        width = float(params.get("width", 0.125))
        period = float(params.get("period", 1.0))

        def fn(x, e):
            c = _checker(x, width, period)
            return (lo + (hi - lo) * c) * e

        return JumpMap(name, fn, max(abs(lo), abs(hi)),
                       dict(lo=lo, hi=hi, width=width, period=period))
    raise ValueError(f"unknown jump map {name!r}")


@dataclass
class LevyIntegralSpec:
    """``inf_alpha sup_beta`` of Lévy integrals over a finite jump catalogue.

    ``catalog[alpha][beta]`` is a :class:`JumpMap`.  The measure is
    supported in the unit ball, so the part of the integral outside the
    ball vanishes identically.
    """

    measure: LevyMeasureSpec
    catalog: Sequence[Sequence[JumpMap]]

    def __post_init__(self):
        if not self.catalog or not all(self.catalog):
            raise ValueError("jump catalogue must be nonempty")
        for row in self.catalog:
            for jm in row:
                if not jm.check_growth():
                    raise ValueError(f"jump map {jm.name} violates its growth bound")

    @property
    def max_growth(self) -> float:
        return max(jm.growth for row in self.catalog for jm in row)


@dataclass
class LevyQuadrature:
    """Per-map quadrature data on one grid (shifts in grid units, weights)."""

    shifts: list  # one (m, nx) array per catalogue entry, row-major over (alpha, beta)
    weights: np.ndarray
    inner: list  # coefficient multiplying the second difference, per entry (array over x)
    center_weight: float


def levy_quadrature(spec: LevyIntegralSpec, nx: int, dx: float) -> LevyQuadrature:
    """Quadrature of the radial measure on cells centred at ``e = +-m dx``.

    Cell weights are ``int_cell |e|^2 dnu / e_m^2`` so that integrands of
    the form ``|e|^2 * const`` are integrated exactly.  The region
    ``|e| < dx/2`` is replaced by the second-order term
    ``0.5 * D2 phi * int (j(e))^2 dnu``.
    """
    mu = spec.measure
    if mu.dim != 1:
        raise ConfigurationError("grid operators are one-dimensional")
    m = max_shift(dx)
    e = np.arange(1, m + 1) * dx
    lo = np.maximum(e - 0.5 * dx, 0.5 * dx)
    hi = np.minimum(e + 0.5 * dx, 1.0)
    w = np.where(hi > lo, (mu.second_moment_radial(hi) - mu.second_moment_radial(lo)) / 2.0, 0.0)
    w = w / (e * e)
    weights = np.concatenate([w, w])
    nodes = np.concatenate([e, -e])
    x = np.arange(nx) * dx
    inner_mass = mu.second_moment_radial(0.5 * dx) / 2.0  # per sign
    e0 = 0.25 * dx
    shifts, inner = [], []
    centre = 0.0
    for row in spec.catalog:
        for jm in row:
            sh = jm(x[None, :], nodes[:, None]) / dx
            slope_sq = (jm(x, e0) / e0) ** 2 + (jm(x, -e0) / e0) ** 2
            shifts.append(np.ascontiguousarray(sh))
            coef = 0.5 * slope_sq * inner_mass
            inner.append(coef)
            c = float(np.max(2.0 * coef / dx**2)) + float(
                np.max(np.sum(weights[:, None] * (1.0 + np.abs(sh)), axis=0)))
            centre = max(centre, c)
    return LevyQuadrature(shifts, weights, inner, centre)


def levy_field(spec: LevyIntegralSpec, values, dx, g_pos=None, g_neg=None,
               quad: LevyQuadrature | None = None, backend=None) -> np.ndarray:
    """``inf_alpha sup_beta`` of the discrete Lévy integral at every node.

    Without explicit gradients the central difference is used for both
    jump directions.
    """
    values = np.asarray(values, dtype=float)
    n = values.size
    if quad is None:
        quad = levy_quadrature(spec, n, dx)
    if g_pos is None:
        g_pos = central_gradient(values, dx)
    if g_neg is None:
        g_neg = g_pos
    d2 = second_difference(values, dx)
    out = None
    idx = 0
    for row in spec.catalog:
        best_beta = None
        for _ in row:
            val = kernels.levy_sweep(values, g_pos, g_neg, quad.shifts[idx],
                                     quad.weights, dx, backend=backend)
            val = val + quad.inner[idx] * d2
            best_beta = val if best_beta is None else np.maximum(best_beta, val)
            idx += 1
        out = best_beta if out is None else np.minimum(out, best_beta)
    return out


def levy_integral(spec: LevyIntegralSpec, phi: GridFunction, gradient, node: int) -> float:
    """Discrete Lévy operator at one node with a supplied gradient."""
    v, dx = _as_field(phi)
    g = _gradient_array(gradient, v.size)
    return float(levy_field(spec, v, dx, g, g)[node])


def monotone_levy(spec: LevyIntegralSpec, values, dx, quad=None, backend=None):
    """Lévy operator with upwind gradients, as used inside the solver."""
    return levy_field(spec, values, dx, backward_diff(values, dx),
                      forward_diff(values, dx), quad=quad, backend=backend)
