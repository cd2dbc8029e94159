"""Monte Carlo checks of the control representation of the lower extremal equation.

For a solution ``v`` of the lower equation,

    v(x, t) = inf E[ g(Y_T) + C_plus int_t^T |zeta_s|^p ds ] - delta (T - t)

over drifts ``zeta`` and jump controls ``(lambda, b)`` driving
``dY = zeta ds + dM^a``.  Any fixed policy gives an upper estimate; the
feedback built from ``v`` itself should be near optimal.

Paths are simulated in vectorised batches.  Within a step the controls
are frozen at the step start, so the martingale increment only needs the
Poisson count of the step (exact in law); the drift carries the only
discretisation error.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .grid import ConfigurationError, GridFunction, central_gradient, periodic_interp, periodic_nearest
from .jumps import rng_for
from .operators import extremal_field
from .params import StructureParams, legendre_maximizer

logger = logging.getLogger(__name__)

MIN_SAMPLES = 100


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    count: int
    seed: int

    @classmethod
    def from_samples(cls, x, seed) -> "McEstimate":
        x = np.asarray(x, dtype=float)
        se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else math.inf
        return cls(float(x.mean()), se, int(x.size), int(seed))


class Feedback:
    """Feedback controls read off a solved space-time field.

    ``zeta`` is the Legendre maximizer at the central-difference gradient,
    linearly interpolated in space.  The jump control is the discrete
    minimiser of the lower extremal quotient at the nearest node.  Both are
    piecewise constant in time on ``[t_n, t_{n+1})``.
    """

    def __init__(self, v: GridFunction, params: StructureParams):
        if not v.is_spacetime:
            raise ConfigurationError("feedback needs a space-time field")
        self.v, self.params = v, params
        self.times = np.asarray(v.times, dtype=float)
        self.dx = v.dx
        grads = central_gradient(v.values, v.dx)
        self.zeta_field = legendre_maximizer(grads[..., None], params)[..., 0]  # 1-D vector per node
        lam = np.empty_like(v.values)
        b = np.empty_like(v.values)
        for n in range(v.values.shape[0]):
            _, j, k, sgn = extremal_field(v.slice_at(n), grads[n], upper=False)
            lam[n] = j / k
            b[n] = sgn * k * v.dx
        self.lam_field, self.b_field = lam, b

    def slice_index(self, t: float) -> int:
        t = float(t)
        if t < self.times[0] - 1e-12 or t > self.times[-1] + 1e-12:
            raise ConfigurationError(f"time {t} outside the solved window "
                                     f"[{self.times[0]}, {self.times[-1]}]")
        n = int(np.searchsorted(self.times, t + 1e-12, side="right")) - 1
        return min(max(n, 0), self.times.size - 2)

    def zeta(self, y, t):
        return periodic_interp(self.zeta_field[self.slice_index(t)], self.dx, y)

    def control(self, y, t):
        n = self.slice_index(t)
        idx = periodic_nearest(self.v.nx, self.dx, y)
        return self.lam_field[n][idx], self.b_field[n][idx]

    def max_speed(self, t) -> float:
        return float(np.max(np.abs(self.zeta_field[self.slice_index(t)])))


def feedback_from_value(v: GridFunction, params: StructureParams) -> Feedback:
    """Near-optimal feedback pair from a solution of the lower extremal equation."""
    return Feedback(v, params)


@dataclass
class PolicyClass:
    """A family of admissible policies.

    ``tag`` is ``"zero"`` (no drift, fixed jump control ``jump``),
    ``"value"`` (feedback from ``value``) or ``"constant"`` (every
    ``(zeta, lambda, b)`` in ``constants`` is tried; the smallest estimate is
    reported).
    """

    tag: str
    value: GridFunction | None = None
    constants: list = field(default_factory=list)
    jump: tuple = (1.0, 1.0)

    def __post_init__(self):
        if self.tag not in ("zero", "value", "constant"):
            raise ConfigurationError(f"unknown policy class {self.tag!r}")
        if self.tag == "value" and self.value is None:
            raise ConfigurationError("value feedback needs a solved field")
        if self.tag == "constant" and not self.constants:
            raise ConfigurationError("constant policy class needs at least one control")
        for _, lam, b in self.constants:
            _check_control(lam, b)
        _check_control(*self.jump)


def _check_control(lam, b):
    if not (0.0 < lam <= 1.0 and 0.0 < abs(b) <= 1.0):
        raise ConfigurationError(f"invalid jump control ({lam}, {b})")


@dataclass
class PathBatch:
    """Batch of controlled 1-D paths recorded at ``times``.

    ``states``, ``drift`` and ``cost`` have shape ``(n, len(times))``;
    ``cost`` is ``int |zeta|^p`` (without the ``C_plus`` factor).
    """

    times: np.ndarray
    x0: float
    states: np.ndarray
    drift: np.ndarray
    cost: np.ndarray
    max_drift: float

    @property
    def martingale(self) -> np.ndarray:
        return self.states - self.x0 - self.drift


def _constant_policy(zeta, lam, b):
    def zf(y, t):
        return np.full(y.shape, float(zeta))

    def af(y, t):
        return np.full(y.shape, float(lam)), np.full(y.shape, float(b))

    return zf, af, lambda t: abs(float(zeta)), None


def simulate_batch(params: StructureParams, x0: float, t0: float, record_times, zeta_fn, control_fn,
                   n: int, seed: int, dx: float, speed_fn=None, breaks=None, stream: int = 0,
                   max_substeps: int = 200_000) -> PathBatch:
    """March ``n`` paths from ``(x0, t0)`` through the sorted ``record_times``.

    Steps never cross a time in ``breaks`` (where feedbacks change) and are
    short enough that the fastest drift moves at most ``dx / 2`` per step.
    Jump counts per step are Poisson with the frozen rate ``delta / b**2``.
    """
    record_times = np.asarray(record_times, dtype=float)
    if np.any(np.diff(record_times) < 0) or record_times[0] < t0 - 1e-14:
        raise ValueError("record times must be sorted and not before t0")
    rng = rng_for(seed, stream)
    d, p = params.delta, params.p
    y = np.full(n, float(x0))
    drift = np.zeros(n)
    cost = np.zeros(n)
    m = record_times.size
    S, D, C = np.empty((n, m)), np.empty((n, m)), np.empty((n, m))
    t = float(t0)
    vmax = 0.0
    breaks = np.asarray([] if breaks is None else breaks, dtype=float)
    for r, tr in enumerate(record_times):
        while t < tr - 1e-14:
            speed = speed_fn(t) if speed_fn is not None else 0.0
            nb = breaks[breaks > t + 1e-14]
            stop = min(tr, float(nb[0])) if nb.size else tr
            h = stop - t
            if speed > 0.0:
                nsub = int(math.ceil(h * speed / (0.5 * dx)))
                if nsub > max_substeps:
                    raise FloatingPointError(f"drift {speed:.3g} needs {nsub} substeps at t={t}")
                h = h / max(nsub, 1)
            z = zeta_fn(y, t)
            lam, b = control_fn(y, t)
            if not np.all(np.isfinite(z)):
                bad = int(np.flatnonzero(~np.isfinite(z))[0])
                raise FloatingPointError(f"non-finite drift at t={t}, state={y[bad]}")
            rate = d / (b * b)
            counts = rng.poisson(rate * h)
            jump = lam * b
            y = y + z * h + jump * (counts - rate * h)
            drift = drift + z * h
            cost = cost + np.abs(z) ** p * h
            vmax = max(vmax, float(np.max(np.abs(z))))
            t = t + h if stop - (t + h) > 1e-14 else stop
        S[:, r], D[:, r], C[:, r] = y, drift, cost
    return PathBatch(record_times, float(x0), S, D, C, vmax)


def _policy_runs(policy: PolicyClass, params: StructureParams):
    """List of ``(zeta_fn, control_fn, speed_fn, breaks)`` for a policy class."""
    if policy.tag == "zero":
        return [_constant_policy(0.0, *policy.jump)]
    if policy.tag == "constant":
        return [_constant_policy(*c) for c in policy.constants]
    fb = feedback_from_value(policy.value, params)
    return [(fb.zeta, fb.control, fb.max_speed, fb.times)]


def _check_n(n):
    if n < MIN_SAMPLES:
        raise ValueError(f"refusing a Monte Carlo estimate with n={n} < {MIN_SAMPLES}")


def mc_value(params: StructureParams, terminal: GridFunction, x: float, t: float,
             policy: PolicyClass, n: int, seed: int) -> McEstimate:
    """Estimate ``E[g(Y_T) + C_plus int |zeta|^p] - delta (T - t)`` under ``policy``.

    For the constant class every control reuses the same random stream and
    the smallest mean is returned.
    """
    _check_n(n)
    if terminal.is_spacetime:
        raise ConfigurationError("terminal must be a spatial slice")
    if np.max(np.abs(terminal.values)) > params.sup_bound + 1e-12:
        raise ConfigurationError("terminal exceeds sup_bound")
    T = params.horizon
    best = None
    for zf, af, sf, br in _policy_runs(policy, params):
        batch = simulate_batch(params, x, t, [T], zf, af, n, seed, terminal.dx, speed_fn=sf, breaks=br)
        yT = batch.states[:, 0] % terminal.period
        samples = periodic_interp(terminal.values, terminal.dx, yT) + params.c_plus * batch.cost[:, 0]
        est = McEstimate.from_samples(samples - params.delta * (T - t), seed)
        if best is None or est.mean < best.mean:
            best = est
    return best


def spacetime_eval(u: GridFunction, x, t):
    """Linear interpolation of a space-time field in both variables."""
    times = u.times
    t = float(t)
    if t < times[0] - 1e-12 or t > times[-1] + 1e-12:
        raise ConfigurationError(f"time {t} outside the field")
    n = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0, times.size - 2))
    th = (t - times[n]) / (times[n + 1] - times[n])
    a = periodic_interp(u.values[n], u.dx, x)
    b = periodic_interp(u.values[n + 1], u.dx, x)
    return (1.0 - th) * a + th * b


@dataclass
class RolloutReport:
    """Margins ``u(x, t) - (E[u(Y_s, s) + C_plus int |zeta|^p] - delta (s - t))`` at checkpoints ``s``."""

    point: tuple
    times: np.ndarray
    margins: np.ndarray
    stderrs: np.ndarray
    slack: np.ndarray
    energy: float
    energy_bound: float
    max_drift: float

    @property
    def worst_margin(self) -> float:
        return float(np.min(self.margins + self.slack))

    @property
    def passed(self) -> bool:
        return self.worst_margin >= 0.0

    def rows(self):
        for s, m, se, sl in zip(self.times, self.margins, self.stderrs, self.slack):
            yield dict(time=float(s), margin=float(m), stderr=float(se), slack=float(sl))


def rollout_check(u: GridFunction, params: StructureParams, x: float, t: float, times,
                  policy: PolicyClass, n: int, seed: int, slack_coef: float = 10.0,
                  stream: int = 0) -> RolloutReport:
    """Monotonicity of ``u`` along controlled paths started at ``(x, t)``.

    Slack per checkpoint is ``3 stderr + slack_coef * (dt + dx)`` with the
    field's time and space steps.
    """
    _check_n(n)
    times = np.asarray(times, dtype=float)
    if np.any(times < t - 1e-14) or np.any(times > u.times[-1] + 1e-12):
        raise ConfigurationError("checkpoints must lie in [t, T]")
    runs = _policy_runs(policy, params)
    if len(runs) != 1:
        raise ConfigurationError("rollouts need a single policy")
    zf, af, sf, br = runs[0]
    batch = simulate_batch(params, x, t, times, zf, af, n, seed, u.dx, speed_fn=sf, breaks=br,
                           stream=stream)
    u0 = float(spacetime_eval(u, np.array([x]), t)[0])
    margins, ses = [], []
    for k, s in enumerate(times):
        samples = spacetime_eval(u, batch.states[:, k] % u.period, s) + params.c_plus * batch.cost[:, k]
        est = McEstimate.from_samples(samples - params.delta * (s - t), seed)
        margins.append(u0 - est.mean)
        ses.append(est.stderr if n > 1 else 0.0)
    ses = np.nan_to_num(np.array(ses))
    dt = float(u.times[1] - u.times[0])
    slack = 3.0 * ses + slack_coef * (dt + u.dx)
    energy = float(params.c_plus * batch.cost[:, -1].mean())
    bound = 2.0 * params.sup_bound + (params.delta + 1.0) * params.horizon
    return RolloutReport((float(x), float(t)), times, np.array(margins), ses, slack,
                         energy, bound, batch.max_drift)


@dataclass
class MomentReport:
    times: np.ndarray
    r: tuple
    moments: np.ndarray  # (len(r), len(times))
    stderrs: np.ndarray
    bounds: np.ndarray

    @property
    def margins(self) -> np.ndarray:
        return self.bounds + 3.0 * self.stderrs - self.moments

    @property
    def passed(self) -> bool:
        return bool(np.all(self.margins >= 0.0))


def moment_check(batch: PathBatch, params: StructureParams, r_list, t0: float) -> MomentReport:
    """``E|Y_s - x - int zeta|^r`` against ``delta^(r/2) (s - t0)^(r/2)``."""
    r_list = tuple(float(r) for r in r_list)
    if any(not 0.0 < r <= 2.0 for r in r_list):
        raise ValueError("moment exponents must lie in (0, 2]")
    dev = np.abs(batch.martingale)
    el = np.maximum(batch.times - t0, 0.0)
    mom, se, bd = [], [], []
    for r in r_list:
        x = dev**r
        mom.append(x.mean(axis=0))
        se.append(x.std(axis=0, ddof=1) / math.sqrt(x.shape[0]))
        bd.append((params.delta * el) ** (r / 2.0))
    return MomentReport(batch.times, r_list, np.array(mom), np.array(se), np.array(bd))
