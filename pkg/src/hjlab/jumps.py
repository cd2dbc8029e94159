"""Exact simulation of controlled compensated-Poisson martingales.

For a jump control ``a = (lambda, b)`` the controlled martingale only
integrates over the annulus ``B \\ B(0, rho)`` whose measure is
``delta / |b|**2``.  It is therefore a compensated compound Poisson
process with rate ``delta / |b|**2`` and deterministic jump ``lambda * b``,
which can be simulated without any time discretisation error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


def rng_for(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator; each ``(seed, stream)`` pair is an independent stream."""
    return np.random.Generator(np.random.Philox(key=[int(seed) & 0xFFFFFFFFFFFFFFFF,
                                                     int(stream) & 0xFFFFFFFFFFFFFFFF]))


def _sphere_area(dim: int) -> float:
    return 2.0 * math.pi ** (dim / 2.0) / math.gamma(dim / 2.0)


@dataclass(frozen=True)
class LevyMeasureSpec:
    """Radial truncated-stable measure ``c |e|**(-N-s) de`` on the unit ball."""

    dim: int = 1
    index: float = 1.0
    intensity: float = 1.0

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError("dimension must be 1, 2 or 3")
        if not 0.0 < self.index < 2.0:
            raise ValueError("stability index must lie in (0, 2)")
        if self.intensity <= 0.0:
            raise ValueError("intensity must be positive")

    @property
    def _radial(self) -> float:
        return self.intensity * _sphere_area(self.dim)

    def tail(self, r):
        """``nu(B \\ B_r)``; infinite as ``r -> 0`` and zero for ``r >= 1``."""
        r = np.asarray(r, dtype=float)
        s = self.index
        with np.errstate(divide="ignore"):
            val = self._radial * (np.power(np.minimum(r, 1.0), -s) - 1.0) / s
        return np.where(r >= 1.0, 0.0, val)

    def inverse_tail(self, y):
        """``inf {r > 0 : tail(r) <= y}`` in closed form."""
        y = np.asarray(y, dtype=float)
        if np.any(y <= 0.0):
            raise ValueError("inverse_tail needs y > 0")
        out = np.power(1.0 + self.index * y / self._radial, -1.0 / self.index)
        return float(out) if out.ndim == 0 else out

    def second_moment_radial(self, r):
        """``int_{|e| < r} |e|**2 dnu`` for ``r <= 1``."""
        r = np.minimum(np.asarray(r, dtype=float), 1.0)
        return self._radial * np.power(r, 2.0 - self.index) / (2.0 - self.index)

    @property
    def second_moment(self) -> float:
        return float(self.second_moment_radial(1.0))


@dataclass(frozen=True)
class ControlValue:
    """Jump control ``(lambda, b)`` with ``0 < lambda <= 1`` and ``0 < |b| <= 1``."""

    lam: float
    b: tuple

    def __init__(self, lam, b):
        b = tuple(float(x) for x in np.atleast_1d(np.asarray(b, dtype=float)))
        nb = math.sqrt(sum(x * x for x in b))
        if not (0.0 < lam <= 1.0):
            raise ValueError(f"lambda must lie in (0, 1], got {lam}")
        if not (0.0 < nb <= 1.0 + 1e-12):
            raise ValueError(f"|b| must lie in (0, 1], got {nb}")
        object.__setattr__(self, "lam", float(lam))
        object.__setattr__(self, "b", b)

    @property
    def b_vec(self) -> np.ndarray:
        return np.asarray(self.b)

    @property
    def b_norm(self) -> float:
        return float(np.linalg.norm(self.b))

    @property
    def jump(self) -> np.ndarray:
        return self.lam * self.b_vec

    def rate(self, delta: float) -> float:
        return delta / self.b_norm ** 2


@dataclass
class MartingalePath:
    """A realisation of the controlled martingale on ``[t0, t1]``.

    ``pieces`` are ``(start, end, control)`` triples; the compensator on a
    piece grows linearly at ``lambda b * delta / |b|**2``.
    """

    t0: float
    t1: float
    delta: float
    pieces: list
    jump_times: np.ndarray
    jump_vectors: np.ndarray
    radii: list = field(default_factory=list)

    def compensator(self, t) -> np.ndarray:
        t = float(t)
        out = np.zeros(len(self.pieces[0][2].b))
        for start, end, a in self.pieces:
            if t <= start:
                break
            out = out + a.jump * a.rate(self.delta) * (min(t, end) - start)
        return out

    def value(self, t) -> np.ndarray:
        """``sum of jumps <= t`` minus the compensator at ``t``."""
        mask = self.jump_times <= t
        jumps = self.jump_vectors[mask].sum(axis=0) if mask.any() else 0.0
        return jumps - self.compensator(t)

    def count(self) -> int:
        return int(self.jump_times.size)


def _pieces(control, t0, t1):
    """Normalise a control specification into ``(start, end, ControlValue)`` pieces."""
    if isinstance(control, ControlValue):
        return [(t0, t1, control)]
    pts = sorted(control, key=lambda pc: pc[0])
    out = []
    for i, (start, a) in enumerate(pts):
        end = pts[i + 1][0] if i + 1 < len(pts) else t1
        start = max(start, t0)
        if end <= start:
            raise ValueError("control pieces must have positive length")
        out.append((start, min(end, t1), a))
    if out[0][0] > t0:
        raise ValueError("control path must start at t0")
    return out


def simulate_martingale(spec: LevyMeasureSpec, control, t0: float, t1: float,
                        seed: int, delta: float = 1.0, stream: int = 0) -> MartingalePath:
    """Exact compound-Poisson realisation of the controlled martingale.

    ``control`` is a :class:`ControlValue` or a list of ``(start, ControlValue)``
    pieces.  Exponential inter-arrival times are drawn piece by piece.
    """
    if t1 <= t0:
        raise ValueError("need t1 > t0")
    rng = rng_for(seed, stream)
    pieces = _pieces(control, t0, t1)
    times, vecs, radii = [], [], []
    for start, end, a in pieces:
        rate = a.rate(delta)
        radii.append(spec.inverse_tail(rate))
        t = start
        while True:
            t = t + rng.exponential(1.0 / rate)
            if t > end:
                break
            times.append(t)
            vecs.append(a.jump)
    dim = len(pieces[0][2].b)
    return MartingalePath(t0, t1, delta, pieces, np.asarray(times, dtype=float),
                          np.asarray(vecs, dtype=float).reshape(-1, dim), radii)


def martingale_batch(delta: float, lam: float, b: float, times, n: int, seed: int,
                     stream: int = 0, t0: float = 0.0):
    """Values of the 1-D martingale started at ``t0`` with constant control, for ``n`` paths.

    Returns ``(values, counts)`` with shapes ``(n, len(times))``; counts are
    the cumulative jump numbers since ``t0``.
    """
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0) or times[0] < t0:
        raise ValueError("times must be sorted and not before t0")
    rng = rng_for(seed, stream)
    rate = delta / (b * b)
    dt = np.diff(np.concatenate([[t0], times]))
    inc = rng.poisson(rate * dt[None, :], size=(n, times.size))
    counts = np.cumsum(inc, axis=1)
    elapsed = times - t0
    values = lam * b * (counts - rate * elapsed[None, :])
    return values, counts


# ---------------------------------------------------------------------------
# controlled trajectories


@dataclass
class Trajectory:
    """Controlled path on a time mesh.

    ``states[k]`` is the right-continuous value at ``times[k]``; the drift
    and jump controls are frozen on ``[times[k], times[k+1])``.
    """

    times: np.ndarray
    states: np.ndarray
    zeta: np.ndarray
    lam: np.ndarray
    b: np.ndarray
    martingale: np.ndarray
    drift_integral: np.ndarray
    running_cost: np.ndarray
    jump_times: np.ndarray

    def check_decomposition(self, x0) -> float:
        """Max deviation of ``Y - x0 - int zeta - M`` over the mesh."""
        resid = self.states - np.asarray(x0) - self.drift_integral - self.martingale
        return float(np.max(np.abs(resid)))


def _as_callable(c):
    if callable(c):
        return c
    return lambda y, t: c


def simulate_controlled(spec: LevyMeasureSpec, x0, t0: float, zeta, a, t1: float,
                        mesh, seed: int, delta: float = 1.0, p: float = 1.5,
                        stream: int = 0) -> Trajectory:
    """Single controlled path ``dY = zeta ds + dM^a``.

    ``zeta`` and ``a`` are constants or feedbacks ``f(y, t)``; ``zeta`` is
    evaluated at the step midpoint time with the state frozen at the step
    start, and ``a`` at the step start.  Jumps are exact.
    """
    mesh = np.asarray(mesh, dtype=float)
    if mesh.ndim == 0:
        mesh = np.linspace(t0, t1, int(mesh) + 1)
    if not (np.isclose(mesh[0], t0) and np.isclose(mesh[-1], t1)):
        raise ValueError("mesh must span [t0, t1]")
    zf, af = _as_callable(zeta), _as_callable(a)
    rng = rng_for(seed, stream)
    y = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    dim = y.size
    nsteps = mesh.size - 1
    states = np.empty((mesh.size, dim))
    mart = np.zeros((mesh.size, dim))
    drift = np.zeros((mesh.size, dim))
    cost = np.zeros(mesh.size)
    zs = np.zeros((nsteps, dim))
    lams = np.zeros(nsteps)
    bs = np.zeros((nsteps, dim))
    jt = []
    states[0] = y
    for k in range(nsteps):
        s0, s1 = mesh[k], mesh[k + 1]
        h = s1 - s0
        z = np.atleast_1d(np.asarray(zf(y.copy(), s0 + 0.5 * h), dtype=float))
        ak = af(y.copy(), s0)
        if not isinstance(ak, ControlValue):
            ak = ControlValue(*ak)
        if not np.all(np.isfinite(z)):
            raise FloatingPointError(f"non-finite drift at t={s0}, state={y}")
        rate = ak.rate(delta)
        njump = rng.poisson(rate * h)
        if njump:
            jt.extend(np.sort(rng.uniform(s0, s1, size=njump)).tolist())
        dm = ak.jump * (njump - rate * h)
        zs[k], lams[k], bs[k] = z, ak.lam, ak.b_vec
        drift[k + 1] = drift[k] + z * h
        mart[k + 1] = mart[k] + dm
        cost[k + 1] = cost[k] + float(np.linalg.norm(z)) ** p * h
        y = np.asarray(x0, dtype=float) + drift[k + 1] + mart[k + 1]
        states[k + 1] = y
    return Trajectory(mesh, states, zs, lams, bs, mart, drift, cost, np.asarray(jt))


# ---------------------------------------------------------------------------
# bridge process


def alpha_interval(p: float) -> tuple[float, float]:
    """Open interval ``(1 - 1/p, 1/2)``; nonempty exactly when ``p < 2``."""
    return 1.0 - 1.0 / p, 0.5


def default_alpha(p: float) -> float:
    lo, hi = alpha_interval(p)
    return 0.5 * (lo + hi)


def check_alpha(alpha: float, p: float) -> None:
    lo, hi = alpha_interval(p)
    if not lo < alpha < hi:
        raise ValueError(f"alpha={alpha} outside ({lo}, {hi})")


@dataclass
class BridgePath:
    """Bridge toward ``0`` at time ``t`` evaluated on ``taus``."""

    taus: np.ndarray
    states: np.ndarray
    z: np.ndarray
    jump_times: np.ndarray


def bridge_compensator_integral(rate, alpha, t, s, tau):
    """``rate * int_s^tau (t - sigma)**(-alpha) dsigma``."""
    tau = np.asarray(tau, dtype=float)
    return rate * ((t - s) ** (1.0 - alpha) - (t - tau) ** (1.0 - alpha)) / (1.0 - alpha)


def simulate_bridge(spec: LevyMeasureSpec, y, s: float, t: float, alpha: float,
                    a: ControlValue, seed: int, taus=None, delta: float = 1.0,
                    p: float = 1.5, stream: int = 0) -> BridgePath:
    """Closed-form bridge ``Y_tau`` driven by a constant jump control.

    The stochastic integral against the compound Poisson path is a finite
    sum over jump times minus its compensator.
    """
    check_alpha(alpha, p)
    if not s < t:
        raise ValueError("need s < t")
    if taus is None:
        taus = np.linspace(s, t, 201)[:-1]
    taus = np.asarray(taus, dtype=float)
    path = simulate_martingale(spec, a, s, t, seed, delta, stream)
    rate = a.rate(delta)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    jt = path.jump_times
    w = (t - jt) ** (-alpha)
    cum = np.concatenate([[0.0], np.cumsum(w)])
    idx = np.searchsorted(jt, taus, side="right")
    stoch = (cum[idx] - bridge_compensator_integral(rate, alpha, t, s, taus))[:, None] * a.jump[None, :]
    decay = ((t - taus) / (t - s)) ** alpha
    states = decay[:, None] * y[None, :] + ((t - taus) ** alpha)[:, None] * stoch
    z = -alpha * states / (t - taus)[:, None]
    return BridgePath(taus, states, z, jt)


class BridgeNoise:
    """Common random numbers for 1-D bridges with one constant control.

    Jumps are drawn once on ``[s_min, t]`` for ``n`` paths; restricting to
    ``[s, t]`` gives the noise for any later start, so estimates at
    different ``(y, s)`` share randomness.
    """

    def __init__(self, rate: float, s_min: float, t: float, n: int, seed: int, stream: int = 0):
        rng = rng_for(seed, stream)
        self.rate, self.s_min, self.t, self.n = rate, s_min, t, n
        counts = rng.poisson(rate * (t - s_min), size=n)
        total = int(counts.sum())
        times = rng.uniform(s_min, t, size=total)
        pid = np.repeat(np.arange(n), counts)
        order = np.lexsort((times, pid))
        self.times = times[order]
        self.pid = pid[order]
        self.span = (t - s_min) * 2.0 + 1.0
        self.keys = self.pid * self.span + (self.times - s_min)

    def integral(self, alpha: float, s: float, taus) -> np.ndarray:
        """``int_s^tau (t - sigma)**(-alpha) dN_sigma / jump`` minus compensator, shape ``(n, m)``."""
        taus = np.asarray(taus, dtype=float)
        w = (self.t - self.times) ** (-alpha)
        cum = np.concatenate([[0.0], np.cumsum(w)])
        base = np.arange(self.n)[:, None] * self.span
        lo = np.searchsorted(self.keys, base + (s - self.s_min), side="left")
        hi = np.searchsorted(self.keys, base + (taus[None, :] - self.s_min), side="right")
        sums = cum[hi] - cum[lo]
        return sums - bridge_compensator_integral(self.rate, alpha, self.t, s, taus)[None, :]
