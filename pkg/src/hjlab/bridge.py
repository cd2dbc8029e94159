"""Bridge-process supersolution of the upper extremal equation.

For a target ``(x, t)`` and ``alpha`` in ``(1 - 1/p, 1/2)`` the bridge
started at ``(y, s)`` is

    Y_tau = ((t - tau)/(t - s))**alpha (y - x) + (t - tau)**alpha lambda b I(tau)

with ``I(tau) = int_s^tau (t - sigma)**(-alpha) dN~_sigma`` the compensated
jump integral, and its drift is ``Z = -alpha Y / (t - tau)``.  The cost

    J(y, s, a) = E int_s^t |Z_tau|**p dtau

is bounded above and below by ``|x - y|^p (t - s)^(1-p)`` plus a noise
term of order ``(t - s)^(1 - p/2)``; ``w = C_minus sup_a J + delta (t - s)``
is the candidate supersolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import GridFunction, periodic_distance, upwind_gradient_norm
from .jumps import BridgeNoise, ControlValue, check_alpha, default_alpha
from .operators import extremal_field
from .params import StructureParams
from .verification import McEstimate


def default_family(size: int = 4) -> list[ControlValue]:
    """``size`` constant controls with ``lambda = 1`` and ``|b|`` spread over ``[1/size, 1]``."""
    if size < 1:
        raise ValueError("control family must be nonempty")
    return [ControlValue(1.0, (i + 1) / size) for i in range(size)]


@dataclass
class BridgeParams:
    """Target ``(x, t)``, exponent ``alpha`` and the constant-control family."""

    params: StructureParams
    x: float = 0.0
    t: float = 1.0
    alpha: float | None = None
    controls: list = field(default_factory=default_family)
    mesh_points: int = 400
    eps_cut_rel: float = 1e-4

    def __post_init__(self):
        if self.alpha is None:
            self.alpha = default_alpha(self.params.p)
        check_alpha(self.alpha, self.params.p)
        if not self.controls:
            raise ValueError("control family must be nonempty")
        if self.mesh_points < 10:
            raise ValueError("mesh needs at least 10 points")


@dataclass(frozen=True)
class CostMesh:
    """Geometric mesh on ``[s, t - eps_cut]`` with exact weights for ``(t - tau)^(p(alpha-1))``."""

    taus: np.ndarray  # midpoints (geometric), shape (m,)
    weights: np.ndarray  # int_cell (t - tau)^(p(alpha-1)) dtau
    eps_cut: float
    tail_weight: float  # int_{t - eps_cut}^t (t - tau)^(p(alpha-1)) dtau


def cost_mesh(s: float, t: float, alpha: float, p: float, m: int, eps_cut_rel: float) -> CostMesh:
    if not s < t:
        raise ValueError("need s < t")
    e = p * (alpha - 1.0) + 1.0  # in (0, 1) for admissible alpha
    span = t - s
    eps_cut = eps_cut_rel * span
    r = span * eps_cut_rel ** (np.arange(m + 1) / m)  # t - tau at cell edges, decreasing
    if not (np.isclose(r[0], span) and np.isclose(r[-1], eps_cut)):
        raise ValueError("mesh does not cover [s, t - eps_cut]")
    weights = (r[:-1] ** e - r[1:] ** e) / e
    mids = np.sqrt(r[:-1] * r[1:])
    return CostMesh(t - mids, weights, eps_cut, eps_cut**e / e)


def _bracket(y_rel, s, t, alpha, jump, integral):
    """``y (t - s)^(-alpha) + lambda b I(tau)``; then ``Z = -alpha (t-tau)^(alpha-1) * bracket``."""
    return y_rel * (t - s) ** (-alpha) + jump * integral


def _cost_samples(bp: BridgeParams, ys, s, a: ControlValue, noise: BridgeNoise) -> np.ndarray:
    """Per-path costs, shape ``(n, len(ys))``; the jump integral is shared by all ``ys``."""
    p, alpha = bp.params.p, bp.alpha
    mesh = cost_mesh(s, bp.t, alpha, p, bp.mesh_points, bp.eps_cut_rel)
    I = noise.integral(alpha, s, np.append(mesh.taus, bp.t - mesh.eps_cut))
    jump = a.lam * a.b_vec[0]
    out = np.empty((noise.n, np.size(ys)))
    for j, y in enumerate(np.atleast_1d(ys)):
        B = np.abs(_bracket(float(y) - bp.x, s, bp.t, alpha, jump, I)) ** p
        out[:, j] = B[:, :-1] @ mesh.weights + B[:, -1] * mesh.tail_weight
    return alpha**p * out


def _noise_for(bp: BridgeParams, a: ControlValue, s_min: float, n: int, seed: int, index: int):
    return BridgeNoise(a.rate(bp.params.delta), s_min, bp.t, n, seed, stream=index)


def bridge_cost(bp: BridgeParams, y: float, s: float, a: ControlValue, n: int, seed: int,
                stream: int = 0) -> McEstimate:
    """Monte Carlo estimate of ``J(y, s, a)`` on the geometric mesh."""
    if n < 2:
        raise ValueError("need at least two samples")
    noise = BridgeNoise(a.rate(bp.params.delta), s, bp.t, n, seed, stream=stream)
    return McEstimate.from_samples(_cost_samples(bp, [y], s, a, noise)[:, 0], seed)


def deterministic_cost(bp: BridgeParams, y: float, s: float) -> float:
    """Closed form of ``J`` without jump noise: ``alpha^p |y-x|^p (t-s)^(1-p) / (1 + p(alpha-1))``."""
    p, a = bp.params.p, bp.alpha
    return a**p * abs(y - bp.x) ** p * (bp.t - s) ** (1.0 - p) / (1.0 + p * (a - 1.0))


def bridge_cost_table(bp: BridgeParams, ys, ss, n: int, seed: int):
    """Costs for every control on a ``(y, s)`` grid with common random numbers.

    Returns ``(means, stderrs)`` with shape ``(len(controls), len(ss), len(ys))``.
    """
    ys = np.asarray(ys, dtype=float)
    ss = np.asarray(ss, dtype=float)
    means = np.empty((len(bp.controls), ss.size, ys.size))
    ses = np.empty_like(means)
    for c, a in enumerate(bp.controls):
        noise = _noise_for(bp, a, float(ss.min()), n, seed, c)
        for i, s in enumerate(ss):
            x = _cost_samples(bp, ys, s, a, noise)
            means[c, i] = x.mean(axis=0)
            ses[c, i] = x.std(axis=0, ddof=1) / math.sqrt(n)
    return means, ses


def bridge_value_table(bp: BridgeParams, ys, ss, n: int, seed: int):
    """``w = C_minus max_a J + delta (t - s)`` on a grid, with the stderr of the maximising control."""
    means, ses = bridge_cost_table(bp, ys, ss, n, seed)
    best = np.argmax(means, axis=0)
    J = np.take_along_axis(means, best[None], axis=0)[0]
    se = np.take_along_axis(ses, best[None], axis=0)[0]
    cm = bp.params.c_minus
    w = cm * J + bp.params.delta * (bp.t - np.asarray(ss, dtype=float))[:, None]
    return w, cm * se


def bridge_value(bp: BridgeParams, y: float, s: float, n: int, seed: int) -> float:
    """``w(y, s) = C_minus max_a J(y, s, a) + delta (t - s)``."""
    w, _ = bridge_value_table(bp, [y], [s], n, seed)
    return float(w[0, 0])


# ---------------------------------------------------------------------------
# fits


def loglog_slope(h, m) -> tuple[float, float]:
    """Least-squares slope and intercept of ``log m`` against ``log h``."""
    h = np.asarray(h, dtype=float)
    m = np.asarray(m, dtype=float)
    if np.any(h <= 0) or np.any(m <= 0):
        raise ValueError("log-log fit needs positive data")
    slope, icpt = np.polyfit(np.log(h), np.log(m), 1)
    return float(slope), float(icpt)


@dataclass
class ScalingReport:
    variable: str
    grid: np.ndarray
    costs: np.ndarray
    stderrs: np.ndarray
    slope: float
    predicted: float

    @property
    def error(self) -> float:
        return abs(self.slope - self.predicted)


def scaling_in_time(bp: BridgeParams, a: ControlValue, spans, n: int, seed: int, y_rel: float = 0.0):
    """Slope of ``log J`` against ``log(t - s)`` at fixed ``y - x``.

    The prediction is ``1 - p/2`` at ``y = x`` (noise-dominated) and
    ``1 - p`` when ``|y - x|`` dominates.
    """
    spans = np.asarray(spans, dtype=float)
    ss = bp.t - spans
    noise = _noise_for(bp, a, float(ss.min()), n, seed, 0)
    costs, ses = [], []
    for s in ss:
        x = _cost_samples(bp, [bp.x + y_rel], s, a, noise)[:, 0]
        costs.append(x.mean())
        ses.append(x.std(ddof=1) / math.sqrt(n))
    slope, _ = loglog_slope(spans, costs)
    p = bp.params.p
    pred = 1.0 - p / 2.0 if y_rel == 0.0 else 1.0 - p
    return ScalingReport("t-s", spans, np.array(costs), np.array(ses), slope, pred)


def scaling_in_space(bp: BridgeParams, a: ControlValue, dists, span: float, n: int, seed: int):
    """Slope of ``log J`` against ``log |y - x|`` at fixed ``t - s``; prediction ``p``."""
    dists = np.asarray(dists, dtype=float)
    s = bp.t - span
    noise = _noise_for(bp, a, s, n, seed, 0)
    x = _cost_samples(bp, bp.x + dists, s, a, noise)
    costs = x.mean(axis=0)
    ses = x.std(axis=0, ddof=1) / math.sqrt(n)
    slope, _ = loglog_slope(dists, costs)
    return ScalingReport("|y-x|", dists, costs, ses, slope, bp.params.p)


@dataclass
class SandwichFit:
    """Smallest ``C`` with ``A/C - C B <= w <= C A + C B`` on the probe grid."""

    C: float
    C_upper: float
    C_lower: float
    ys: np.ndarray
    ss: np.ndarray
    w: np.ndarray

    @property
    def finite(self) -> bool:
        return math.isfinite(self.C)


def sandwich_constant(w, ys, ss, x: float, t: float, p: float) -> tuple[float, float]:
    """``(C_upper, C_lower)`` for ``A = (t-s)^(1-p)|x-y|^p``, ``B = (t-s)^(1-p/2)``."""
    ys = np.asarray(ys, dtype=float)[None, :]
    span = (t - np.asarray(ss, dtype=float))[:, None]
    A = span ** (1.0 - p) * np.abs(ys - x) ** p
    B = span ** (1.0 - p / 2.0) * np.ones_like(A)
    c_up = float(np.max(w / (A + B)))
    # A/C - C B <= w  <=>  B C^2 + w C - A >= 0
    c_lo = float(np.max((-w + np.sqrt(w * w + 4.0 * A * B)) / (2.0 * B)))
    return c_up, c_lo


def fit_sandwich(bp: BridgeParams, ys, ss, n: int, seed: int) -> SandwichFit:
    w, _ = bridge_value_table(bp, ys, ss, n, seed)
    c_up, c_lo = sandwich_constant(w, ys, ss, bp.x, bp.t, bp.params.p)
    return SandwichFit(max(c_up, c_lo, 1.0), c_up, c_lo, np.asarray(ys), np.asarray(ss), w)


@dataclass
class BridgeResidual:
    """Residual of ``w`` at probe nodes.

    ``switch`` marks nodes next to a change of the maximising control:
    there ``max_a J_a`` has a convex corner, which the restricted family
    creates and which no supersolution can have.  ``passed`` judges the
    remaining nodes; the corner nodes are reported, not hidden.
    """

    nodes: np.ndarray
    residual: np.ndarray
    slack: np.ndarray
    switch: np.ndarray

    @property
    def margins(self) -> np.ndarray:
        return self.residual + self.slack

    @property
    def worst(self) -> float:
        return float(np.min(self.margins[~self.switch]))

    @property
    def worst_at_switch(self) -> float:
        return float(np.min(self.margins[self.switch])) if self.switch.any() else math.inf

    @property
    def passed(self) -> bool:
        return self.worst >= 0.0


def bridge_residual(bp: BridgeParams, s: float, ds: float, nx: int, half_width: float,
                    probe_radius: float, n: int, seed: int, slack_coef: float = 10.0,
                    batches: int = 10) -> BridgeResidual:
    """Upper-equation residual of ``w`` at nodes within ``probe_radius`` of ``x``.

    ``w`` is evaluated at times ``s`` and ``s + ds`` on a window of width
    ``2 half_width`` (treated as periodic; jumps have length at most one,
    so the probe nodes never see the wrap when ``half_width >= probe_radius + 1``).
    Residual: ``-(w(s+ds) - w(s))/ds - delta M^+[w] + |Dw|^q/delta - delta``
    at time ``s``.  The Monte Carlo part of the slack is three batch-means
    standard errors of the residual itself (all nodes share their noise).
    """
    if half_width < probe_radius + 1.0:
        raise ValueError("window too narrow for unit jumps")
    if n % batches:
        raise ValueError("n must be a multiple of the batch count")
    pr = bp.params
    dx = 2.0 * half_width / nx
    ys = bp.x - half_width + dx * np.arange(nx)
    ss = [s, s + ds]
    # per-path costs: (controls, times, n, ny)
    samples = np.stack([np.stack([_cost_samples(bp, ys, si, a, noise) for si in ss])
                        for a, noise in ((a, _noise_for(bp, a, s, n, seed, c))
                                         for c, a in enumerate(bp.controls))])
    mask = np.abs(ys - bp.x) <= probe_radius

    def residual_from(J):
        w = pr.c_minus * J.max(axis=0) + pr.delta * (bp.t - np.asarray(ss))[:, None]
        Mp, *_ = extremal_field(GridFunction(w[0], dx), None, upper=True)
        G = upwind_gradient_norm(w[0], dx)
        res = -(w[1] - w[0]) / ds - pr.delta * Mp + G**pr.q / pr.delta - pr.delta
        return res[mask]

    J = samples.mean(axis=2)
    res = residual_from(J)
    parts = np.array([residual_from(chunk.mean(axis=2))
                      for chunk in np.split(samples, batches, axis=2)])
    se = parts.std(axis=0, ddof=1) / math.sqrt(batches)
    best = np.argmax(J[:, 0], axis=0)
    change = np.zeros(nx, dtype=bool)
    flips = best != np.roll(best, 1)
    for shift in (-1, 0, 1, 2):
        change |= np.roll(flips, shift)
    return BridgeResidual(ys[mask], res, 3.0 * se + slack_coef * (ds + dx), change[mask])


# ---------------------------------------------------------------------------
# subsolution estimates


def subsolution_bound_fit(u: GridFunction, params: StructureParams, x_stride: int = 1,
                          t_stride: int = 1) -> float:
    """Smallest ``C`` with ``u(y,s) <= u(x,t) + C(|y-x|^p (t-s)^(1-p) + (t-s)^(1-p/2))``.

    All pairs of probe nodes with ``s < t`` are used (every ``x_stride``-th
    node, every ``t_stride``-th slice).  Returns 0 for a constant field.
    """
    p = params.p
    vals = u.values[::t_stride, ::x_stride]
    times = np.asarray(u.times)[::t_stride]
    xs = u.x[::x_stride]
    D = periodic_distance(xs[:, None], xs[None, :], u.period) ** p  # (y, x)
    C = 0.0
    for i in range(times.size):
        for k in range(i + 1, times.size):
            span = times[k] - times[i]
            denom = D * span ** (1.0 - p) + span ** (1.0 - p / 2.0)
            diff = vals[i][:, None] - vals[k][None, :]
            C = max(C, float(np.max(diff / denom)))
    return max(C, 0.0)


@dataclass
class StationaryFit:
    """Critical exponent of power profiles ``|x|^beta`` for the stationary upper inequality."""

    betas: np.ndarray
    slopes: np.ndarray
    exponent: float
    predicted: float


def stationary_exponent_fit(params: StructureParams, nx: int = 2048, period: float = 2.0,
                            window=(0.02, 0.2), betas=None) -> StationaryFit:
    """Smallest ``beta`` for which ``|Du|^q / M^+[u]`` stays bounded as ``|x| -> 0``.

    For ``u = |x|^beta`` the two singular terms of the stationary
    inequality ``-delta M^+[u] + |Du|^q / delta <= delta`` scale as powers
    of ``|x|``; the log-log slope of their ratio over ``window`` changes
    sign at the critical exponent, which is where a subsolution can be
    rough.  The root is found by linear interpolation.
    """
    if betas is None:
        betas = np.linspace(0.3, 1.0, 15)
    betas = np.asarray(betas, dtype=float)
    dx = period / nx
    x = dx * np.arange(nx)
    d = periodic_distance(x, 0.0, period)
    sel = (d >= window[0]) & (d <= window[1]) & (x < 0.5 * period)
    slopes = []
    for beta in betas:
        u = d**beta
        with np.errstate(divide="ignore"):
            g = beta * d ** (beta - 1.0) * np.where(x < 0.5 * period, 1.0, -1.0)
        g[0] = 0.0
        Mp, *_ = extremal_field(GridFunction(u, dx), g, upper=True)
        ratio = np.abs(g[sel]) ** params.q / Mp[sel]
        slope, _ = loglog_slope(d[sel], ratio)
        slopes.append(slope)
    slopes = np.array(slopes)
    k = np.flatnonzero(np.diff(np.sign(slopes)) != 0)
    if k.size == 0:
        exponent = math.nan
    else:
        i = int(k[0])
        exponent = float(betas[i] - slopes[i] * (betas[i + 1] - betas[i]) / (slopes[i + 1] - slopes[i]))
    return StationaryFit(betas, slopes, exponent, 2.0 - params.p)
