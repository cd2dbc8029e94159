"""Hölder moduli of solution fields and an empirical reverse Hölder checker."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .bridge import loglog_slope
from .grid import ConfigurationError, GridFunction
from .params import StructureParams
from .solver import EquationSpec, SolverConfig, solve_terminal

logger = logging.getLogger(__name__)

EXPONENT_RANGE = (0.0, 1.5)


@dataclass
class HolderFit:
    """Power-law fits ``m(h) ~ C h^e`` of the space and time sup-moduli."""

    space_exponent: float
    time_exponent: float
    space_constant: float
    time_constant: float
    space_r2: float
    time_r2: float
    pairs: int
    space_scales: np.ndarray = field(default_factory=lambda: np.zeros(0))
    space_modulus: np.ndarray = field(default_factory=lambda: np.zeros(0))
    time_scales: np.ndarray = field(default_factory=lambda: np.zeros(0))
    time_modulus: np.ndarray = field(default_factory=lambda: np.zeros(0))
    degenerate: bool = False

    @property
    def constant(self) -> float:
        return max(self.space_constant, self.time_constant)


def _fit(h, m):
    if np.any(m <= 0.0):
        return math.nan, math.nan, math.nan
    slope, icpt = loglog_slope(h, m)
    pred = slope * np.log(h) + icpt
    lm = np.log(m)
    ss = float(np.sum((lm - lm.mean()) ** 2))
    r2 = 1.0 - float(np.sum((lm - pred) ** 2)) / ss if ss > 0 else 1.0
    e = float(np.clip(slope, *EXPONENT_RANGE))
    return e, math.exp(icpt), r2


def space_modulus(values: np.ndarray, shifts) -> np.ndarray:
    """``max |u(x + h) - u(x)|`` over all rows and nodes for each integer shift."""
    return np.array([float(np.max(np.abs(np.roll(values, -s, axis=-1) - values))) for s in shifts])


def time_modulus(values: np.ndarray, lags) -> np.ndarray:
    """``max |u(x, t + l) - u(x, t)|`` over nodes and admissible rows for each integer lag."""
    return np.array([float(np.max(np.abs(values[l:] - values[:-l]))) for l in lags])


def holder_fit(u: GridFunction, tail_time: float, space_shifts=(1, 2, 4, 8),
               time_lags=(1, 2, 4, 8)) -> HolderFit:
    """Fit sup-moduli of ``u`` on slices at least ``tail_time`` before the terminal time.

    Fields are stored in terminal-value orientation, so the slices kept are
    ``T - t >= tail_time``: the regularising effect is measured away from
    the (possibly rough) terminal data.  Space pairs are at distance ``shift * dx``, time pairs at lag
    ``lag * dt``; both sets of dyadic scales span close to a decade.
    """
    if not u.is_spacetime:
        raise ConfigurationError("holder_fit needs a space-time field")
    times = np.asarray(u.times)
    keep = times[-1] - times >= tail_time - 1e-12
    vals = u.values[keep]
    if vals.shape[0] <= max(time_lags):
        raise ConfigurationError("not enough time slices after tail_time")
    dt = float(np.diff(u.times).mean())
    pairs = vals.size * (len(space_shifts) + len(time_lags))
    sh = np.asarray(space_shifts, dtype=float) * u.dx
    lg = np.asarray(time_lags, dtype=float) * dt
    if float(np.ptp(vals)) < 1e-12:
        return HolderFit(math.nan, math.nan, 0.0, 0.0, math.nan, math.nan, pairs, sh, np.zeros(sh.size),
                         lg, np.zeros(lg.size), degenerate=True)
    ms = space_modulus(vals, space_shifts)
    mt = time_modulus(vals, time_lags)
    es, cs, rs = _fit(sh, ms)
    et, ct, rt = _fit(lg, mt)
    return HolderFit(es, et, cs, ct, rs, rt, pairs, sh, ms, lg, mt)


@dataclass
class UniformityReport:
    labels: list
    fits: list
    space_spread: float
    time_spread: float
    constant_ratio: float
    sandwich_ok: list

    def passed(self, spread_tol: float = 0.1, ratio_tol: float = 3.0) -> bool:
        return (self.space_spread <= spread_tol and self.time_spread <= spread_tol
                and self.constant_ratio <= ratio_tol)


def uniformity_report(family, terminal: GridFunction, config: SolverConfig | None = None,
                      tail_time: float | None = None, **fit_kw) -> UniformityReport:
    """Solve every member with the same data and grid and compare Hölder fits.

    All members must share one :class:`StructureParams`; each one has
    already passed its structure probe on construction.
    """
    family = list(family)
    if not family:
        raise ConfigurationError("empty family")
    pr = family[0].params
    for eq in family:
        if eq.params != pr:
            raise ConfigurationError(f"{eq.label}: structure parameters differ from the family")
        bad = eq.structure_probe()
        if bad:
            raise ConfigurationError(f"{eq.label}: {bad}")
    tail = pr.tail_time if tail_time is None else tail_time
    config = config or SolverConfig()
    fits, labels, sandwich = [], [], []
    lower = solve_terminal(EquationSpec("lower", pr), terminal, config)
    upper = solve_terminal(EquationSpec("upper", pr), terminal, config)
    slack = 10.0 * (float(lower.times[1] - lower.times[0]) + lower.dx)
    for eq in family:
        v = solve_terminal(eq, terminal, config)
        ok = bool(np.all(v.values >= lower.values - slack) and np.all(v.values <= upper.values + slack))
        fits.append(holder_fit(v, tail, **fit_kw))
        labels.append(eq.label)
        sandwich.append(ok)
    es = np.array([f.space_exponent for f in fits])
    et = np.array([f.time_exponent for f in fits])
    cs = np.array([f.constant for f in fits])
    ratio = float(cs.max() / cs.min()) if cs.min() > 0 else math.inf
    return UniformityReport(labels, fits, float(np.ptp(es)), float(np.ptp(et)), ratio, sandwich)


# ---------------------------------------------------------------------------
# reverse Hölder


@dataclass
class ReverseHolderReport:
    """Hypothesis margin, estimated improved exponent and its constant.

    ``theta_est`` is ``None`` when the hypothesis fails or no exponent
    above ``p`` passes.
    """

    A: float
    B: float
    p: float
    levels: np.ndarray  # t - a on the dyadic grid (decreasing)
    hypothesis_margin: float
    theta_est: float | None
    C_est: float | None
    lhs: np.ndarray
    rhs: np.ndarray
    moments: np.ndarray  # E[(int_a^t |xi|)^p] per level

    @property
    def hypothesis_holds(self) -> bool:
        return self.hypothesis_margin >= 0.0


@dataclass(frozen=True)
class _PathStats:
    spans: np.ndarray
    mean_p: np.ndarray  # E[(1/(t-a)) int |xi|^p]
    mean_int: np.ndarray  # E[((1/(t-a)) int |xi|)^p]
    moments: np.ndarray  # E[(int |xi|)^p]
    norm_p: float  # E int_a^b |xi|^p


def _path_stats(xi: np.ndarray, a: float, b: float, p: float, coarsest_cells: int) -> _PathStats:
    xi = np.atleast_2d(np.abs(np.asarray(xi, dtype=float)))
    n_cells = xi.shape[1]
    K = int(round(math.log2(n_cells / coarsest_cells)))
    if 2**K * coarsest_cells != n_cells or K < 2:
        raise ConfigurationError("cell count must be coarsest_cells * 2**K with K >= 2")
    h = (b - a) / n_cells
    c1 = np.cumsum(xi, axis=1) * h
    cp = np.cumsum(xi**p, axis=1) * h
    counts = n_cells // 2 ** np.arange(K + 1)
    spans = counts * h
    I1 = c1[:, counts - 1]
    Ip = cp[:, counts - 1]
    return _PathStats(spans, (Ip / spans).mean(axis=0), ((I1 / spans) ** p).mean(axis=0),
                      (I1**p).mean(axis=0), float(cp[:, -1].mean()))


def _conclusion_ratio(st: _PathStats, theta, p, B, total):
    lead = st.spans ** (p - p / theta)
    brace = total ** (p / theta - 1.0) * st.norm_p + B * total ** (p / theta - p / 2.0)
    return st.moments / (lead * brace)


def _theta_passes(st: _PathStats, theta: float, p: float) -> bool:
    """No growth of ``E[(int|xi|)^p] / (t-a)^(p - p/theta)`` on the finer half of the dyadic grid."""
    with np.errstate(divide="ignore"):
        g = np.log(st.moments) - (p - p / theta) * np.log(st.spans)
    half = (g.size + 1) // 2
    return bool(np.max(g[half:]) <= np.max(g[:half]))


def minimal_A(xi, a: float, b: float, B: float, p: float, coarsest_cells: int = 16) -> float:
    """Smallest ``A`` for which the hypothesis holds on the dyadic grid."""
    st = _path_stats(xi, a, b, p, coarsest_cells)
    if np.any(st.mean_int <= 0.0):
        return math.inf
    need = (st.mean_p - B * st.spans ** (-p / 2.0)) / st.mean_int
    # tiny cushion so that the hypothesis is not lost to round-off at the boundary
    return float(max(np.max(need), 0.0)) * (1.0 + 1e-9)


def reverse_holder(xi, A: float, B: float, p: float, a: float = 0.0, b: float = 1.0,
                   coarsest_cells: int = 16, tol: float = 1e-6) -> ReverseHolderReport:
    """Check the weak reverse Hölder hypothesis and estimate the improved exponent.

    ``xi`` holds samples of ``n`` paths on ``N`` uniform cells of
    ``[a, b]`` (shape ``(n, N)``, values are cell constants).  Dyadic
    levels are ``t - a = (b - a) 2^-k`` down to ``coarsest_cells`` cells.

    ``theta_est`` is the largest ``theta`` in ``(p, 2]`` such that
    ``E[(int_a^t |xi|)^p] / (t - a)^(p - p/theta)`` does not grow on the
    finer half of the levels, found by bisection (the pass set is an
    interval because the test is monotone in ``theta``).
    """
    if not (A > 0 and B > 0):
        raise ValueError("A and B must be positive")
    if not 1.0 < p < 2.0:
        raise ValueError("p must lie in (1, 2)")
    st = _path_stats(xi, a, b, p, coarsest_cells)
    lhs = st.mean_p
    rhs = A * st.mean_int + B * st.spans ** (-p / 2.0)
    margin = float(np.min(rhs - lhs))
    theta = None
    C = None
    if margin >= 0.0 and np.all(st.moments > 0):
        if _theta_passes(st, 2.0, p):
            theta = 2.0
        elif _theta_passes(st, p * (1.0 + 1e-9), p):
            lo, hi = p * (1.0 + 1e-9), 2.0
            while hi - lo > tol:
                mid = 0.5 * (lo + hi)
                if _theta_passes(st, mid, p):
                    lo = mid
                else:
                    hi = mid
            theta = lo
        if theta is not None:
            C = float(np.max(_conclusion_ratio(st, theta, p, B, b - a)))
    return ReverseHolderReport(A, B, p, st.spans, margin, theta, C, lhs, rhs, st.moments)


def near_critical_paths(eps: float, p: float, n_cells: int, a: float = 0.0, b: float = 1.0) -> np.ndarray:
    """Cell averages of ``(s - a)^(-1/p + eps)`` on ``n_cells`` uniform cells (one path)."""
    e = 1.0 - 1.0 / p + eps
    edges = np.linspace(0.0, b - a, n_cells + 1)
    avg = (edges[1:] ** e - edges[:-1] ** e) / (e * np.diff(edges))
    return avg[None, :]


def rollout_control_paths(v: GridFunction, params: StructureParams, x: float, t: float,
                          n: int, seed: int, n_cells: int = 256) -> np.ndarray:
    """``|zeta*|`` along value-feedback rollouts from ``(x, t)``, sampled at cell starts of ``[t, T]``."""
    from .verification import feedback_from_value, simulate_batch

    fb = feedback_from_value(v, params)
    T = params.horizon
    edges = np.linspace(t, T, n_cells + 1)
    batch = simulate_batch(params, x, t, edges[:-1], fb.zeta, fb.control, n, seed, v.dx,
                           speed_fn=fb.max_speed, breaks=fb.times)
    out = np.empty((n, n_cells))
    for k, s in enumerate(edges[:-1]):
        out[:, k] = np.abs(fb.zeta(batch.states[:, k], s))
    return out


def theoretical_exponents(theta: float, p: float) -> tuple[float, float]:
    """Space and time exponents ``(theta - p)/(theta - 1)`` and ``(theta - p)/theta``."""
    return (theta - p) / (theta - 1.0), (theta - p) / theta
