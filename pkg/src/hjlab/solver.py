"""Monotone explicit solver for the terminal-value extremal equations.

Equations are written with ``v(., T)`` prescribed and marched backward:

* ``lower``:    -v_t - delta M^-[v] + delta |Dv|^q + delta = 0
* ``upper``:    -v_t - delta M^+[v] + |Dv|^q / delta - delta = 0
* ``local``:    -v_t - a(x,t) v_xx + h(x,t) |Dv|^q + g(x,t) = 0
* ``nonlocal``: -v_t - I[v] + h(x,t) |Dv|^q + g(x,t) = 0

The gradient norm is the upwind ``max(D^-v, -D^+v, 0)`` and the nonlocal
terms use one-sided gradients (see ``operators.monotone_extremal``), so
every update is nondecreasing in every stencil value once the step obeys
the CFL bound.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import (
    ConfigurationError,
    GridFunction,
    second_difference,
    upwind_gradient_norm,
)
from .operators import (
    LevyIntegralSpec,
    levy_quadrature,
    monotone_center_weight,
    monotone_extremal,
    monotone_levy,
)
from .params import StructureParams

logger = logging.getLogger(__name__)

VARIANTS = ("lower", "upper", "local", "nonlocal")


class SolverError(RuntimeError):
    """Raised when the explicit march cannot continue (CFL, non-finite values)."""


def _const(c):
    return lambda x, t: np.full(np.shape(x), float(c))


@dataclass
class EquationSpec:
    """Equation variant plus its coefficients.

    ``diffusion`` is ``a(x, t)`` for the local variant, ``levy`` the
    integral operator of the nonlocal variant.  ``ham_coef`` (``h``) and
    ``ham_shift`` (``g``) define the Hamiltonian ``h |xi|^q + g`` of the
    general variants.  Construction probes the structure condition.
    """

    variant: str
    params: StructureParams
    diffusion: Callable | None = None
    levy: LevyIntegralSpec | None = None
    ham_coef: Callable | None = None
    ham_shift: Callable | None = None
    label: str = ""

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}")
        d = self.params.delta
        if self.variant in ("local", "nonlocal"):
            if self.ham_coef is None:
                self.ham_coef = _const(1.0)
            if self.ham_shift is None:
                self.ham_shift = _const(0.0)
        if self.variant == "local" and self.diffusion is None:
            raise ConfigurationError("local variant needs a diffusion coefficient")
        if self.variant == "nonlocal" and self.levy is None:
            raise ConfigurationError("nonlocal variant needs a Lévy operator")
        if not self.label:
            self.label = self.variant
        bad = self.structure_probe()
        if bad:
            raise ConfigurationError(f"{self.label}: structure condition fails: {bad}")
        self.variant_delta = d

    def structure_probe(self, period: float = 4.0, n: int = 513) -> str:
        """Empty string if the sandwich between the extremal equations holds on a probe set."""
        if self.variant in ("lower", "upper"):
            return ""
        d = self.params.delta
        x = np.linspace(0.0, period, n)[None, :]
        t = np.linspace(0.0, self.params.horizon, 65)[:, None]
        h = np.broadcast_to(self.ham_coef(x, t), (t.size, x.size))
        g = np.broadcast_to(self.ham_shift(x, t), (t.size, x.size))
        if np.any(h < 1.0 / d - 1e-12) or np.any(h > d + 1e-12):
            return "Hamiltonian coefficient outside [1/delta, delta]"
        if np.any(np.abs(g) > d + 1e-12):
            return "Hamiltonian shift outside [-delta, delta]"
        if self.variant == "local":
            a = np.broadcast_to(self.diffusion(x, t), (t.size, x.size))
            # short jumps give M^+ >= v_xx/2 >= M^-, so a <= delta/2 keeps the sandwich
            if np.any(a < 0.0) or np.any(a > 0.5 * d + 1e-12):
                return "diffusion outside [0, delta/2]"
        else:
            if self.levy.measure.second_moment > d + 1e-12:
                return "Lévy second moment exceeds delta"
            if self.levy.max_growth > 1.0 + 1e-12:
                return "jump maps must satisfy |j(e)| <= |e|"
        return ""

    def hamiltonian_coef_bound(self) -> float:
        d = self.params.delta
        if self.variant == "lower":
            return d
        if self.variant == "upper":
            return 1.0 / d
        return d  # probe guarantees h <= delta


@dataclass
class SolverConfig:
    """Explicit-march settings.

    ``gradient_clamp`` caps the upwind gradient norm inside the
    Hamiltonian (default ``2 * osc(terminal) / dx``, never active for data
    of that range).  ``fixed_gradient_bound`` freezes the time step at the
    CFL value for that bound, so two runs share the same steps.
    """

    nt: int = 50
    cfl_safety: float = 0.9
    gradient_clamp: float | None = None
    fixed_gradient_bound: float | None = None
    max_steps: int = 2_000_000
    backend: str | None = None

    def __post_init__(self):
        if not 0.0 < self.cfl_safety < 1.0:
            raise ConfigurationError("cfl_safety must lie in (0, 1)")
        if self.nt < 1:
            raise ConfigurationError("nt must be positive")


class _Stepper:
    """Holds the spatial operator of one equation on one grid."""

    def __init__(self, eq: EquationSpec, nx: int, dx: float, config: SolverConfig):
        self.eq, self.nx, self.dx, self.config = eq, nx, dx, config
        self.x = np.arange(nx) * dx
        d, q = eq.params.delta, eq.params.q
        self.q = q
        if eq.variant in ("lower", "upper"):
            self.centre = d * monotone_center_weight(dx)
        elif eq.variant == "local":
            a = eq.diffusion(self.x[None, :], np.linspace(0, eq.params.horizon, 257)[:, None])
            self.centre = 2.0 * float(np.max(a)) / dx**2
        else:
            self.quad = levy_quadrature(eq.levy, nx, dx)
            self.centre = self.quad.center_weight
        self.ham_bound = eq.hamiltonian_coef_bound()

    def dt_for(self, G: float) -> float:
        slope = self.q * self.ham_bound * G ** (self.q - 1.0) / self.dx
        return self.config.cfl_safety / (self.centre + slope + 1e-300)

    def nonlocal_term(self, v, t):
        """The second-order part entering ``v_t = -(...)``, i.e. ``delta M[v]``, ``a v_xx`` or ``I[v]``."""
        eq = self.eq
        d = eq.params.delta
        if eq.variant == "lower":
            return d * monotone_extremal(v, self.dx, False, backend=self.config.backend)[0]
        if eq.variant == "upper":
            return d * monotone_extremal(v, self.dx, True, backend=self.config.backend)[0]
        if eq.variant == "local":
            return eq.diffusion(self.x, t) * second_difference(v, self.dx)
        return monotone_levy(eq.levy, v, self.dx, quad=self.quad, backend=self.config.backend)

    def hamiltonian(self, v, t, clamp):
        eq = self.eq
        d, q = eq.params.delta, eq.params.q
        G = upwind_gradient_norm(v, self.dx)
        clamped = int(np.count_nonzero(G > clamp))
        G = np.minimum(G, clamp)
        Gq = G**q
        if eq.variant == "lower":
            return d * Gq + d, clamped
        if eq.variant == "upper":
            return Gq / d - d, clamped
        return eq.ham_coef(self.x, t) * Gq + eq.ham_shift(self.x, t), clamped

    def rhs(self, v, t, clamp):
        """``-v_t`` residual part: the update is ``v(t - dt) = v(t) + dt * (N[v] - H)``."""
        H, clamped = self.hamiltonian(v, t, clamp)
        return self.nonlocal_term(v, t) - H, clamped


def solve_terminal(eq: EquationSpec, terminal: GridFunction, config: SolverConfig | None = None,
                   monitor: Callable | None = None) -> GridFunction:
    """March ``v(., T) = terminal`` back to ``t = 0``.

    Returns a space-time field with ``config.nt + 1`` slices at increasing
    times.  ``monitor(t, v)`` is called after every internal step.
    """
    config = config or SolverConfig()
    if terminal.is_spacetime:
        raise ConfigurationError("terminal data must be a spatial slice")
    pr = eq.params
    if np.max(np.abs(terminal.values)) > pr.sup_bound + 1e-12:
        raise ConfigurationError("terminal data exceeds sup_bound")
    nx, dx = terminal.nx, terminal.dx
    st = _Stepper(eq, nx, dx, config)
    osc = float(np.ptp(terminal.values))
    clamp = config.gradient_clamp if config.gradient_clamp is not None else 2.0 * max(osc, 1e-300) / dx
    fixed_dt = None
    if config.fixed_gradient_bound is not None:
        clamp = min(clamp, config.fixed_gradient_bound)
        fixed_dt = st.dt_for(clamp)
    T = pr.horizon
    times = np.linspace(0.0, T, config.nt + 1)
    out = np.empty((config.nt + 1, nx))
    v = terminal.values.astype(float).copy()
    out[-1] = v
    steps = 0
    clamp_events = 0
    dt_min = math.inf
    for n in range(config.nt, 0, -1):
        t_hi, t_lo = times[n], times[n - 1]
        t = t_hi
        if fixed_dt is not None:
            nsub = max(1, int(math.ceil((t_hi - t_lo) / fixed_dt - 1e-12)))
            subs = [(t_hi - t_lo) / nsub] * nsub
        else:
            subs = None
        k = 0
        while t > t_lo + 1e-14 * T:
            if subs is not None:
                dt = subs[k]
            else:
                G = float(np.max(np.minimum(upwind_gradient_norm(v, dx), clamp)))
                dt = min(st.dt_for(G), t - t_lo)
            r, c = st.rhs(v, t, clamp)
            clamp_events += c
            v = v + dt * r
            t = t - dt
            if subs is not None and k == len(subs) - 1:
                t = t_lo
            k += 1
            steps += 1
            dt_min = min(dt_min, dt)
            if not np.all(np.isfinite(v)):
                raise SolverError(f"non-finite value at t={t:.6g}")
            if steps > config.max_steps:
                raise SolverError("maximum number of steps exceeded")
            if monitor is not None:
                monitor(t, v)
        out[n - 1] = v
    if clamp_events:
        logger.info("gradient clamp active at %d node-steps", clamp_events)
    meta = dict(variant=eq.variant, label=eq.label, steps=steps, dt_min=dt_min,
                gradient_clamp=clamp, clamp_events=clamp_events)
    return GridFunction(out, dx, times=times, meta=meta)


def residual(v: GridFunction, eq: EquationSpec, backend=None) -> GridFunction:
    """Discrete residual between stored slices.

    Row ``n`` is ``-(v_{n+1} - v_n)/dt - N[v_{n+1}] + H(v_{n+1})`` with the
    scheme's own spatial operator; nonnegative rows mean a discrete
    supersolution, nonpositive rows a subsolution.
    """
    if not v.is_spacetime:
        raise ConfigurationError("residual needs a space-time field")
    config = SolverConfig(backend=backend)
    st = _Stepper(eq, v.nx, v.dx, config)
    rows = []
    for n in range(v.values.shape[0] - 1):
        dt = v.times[n + 1] - v.times[n]
        r, _ = st.rhs(v.values[n + 1], v.times[n + 1], np.inf)
        rows.append(-(v.values[n + 1] - v.values[n]) / dt - r)
    return GridFunction(np.array(rows), v.dx, times=v.times[:-1])


def _lipschitz(values, dx):
    return float(np.max(upwind_gradient_norm(values, dx)))


def comparison_test(terminal_lo: GridFunction, terminal_hi: GridFunction, eq: EquationSpec,
                    config: SolverConfig | None = None) -> bool:
    """True iff the march keeps ``lo <= hi`` after every internal step.

    Both runs share one frozen time step (CFL for the larger terminal
    gradient), which is what makes the discrete comparison exact.
    """
    config = config or SolverConfig()
    if np.any(terminal_lo.values > terminal_hi.values):
        raise ValueError("terminal data must be ordered")
    G = max(_lipschitz(terminal_lo.values, terminal_lo.dx),
            _lipschitz(terminal_hi.values, terminal_hi.dx), 1e-12)
    cfg = SolverConfig(nt=config.nt, cfl_safety=config.cfl_safety,
                       fixed_gradient_bound=G, max_steps=config.max_steps,
                       backend=config.backend)
    lo_steps, hi_steps = [], []
    solve_terminal(eq, terminal_lo, cfg, monitor=lambda t, v: lo_steps.append(v.copy()))
    solve_terminal(eq, terminal_hi, cfg, monitor=lambda t, v: hi_steps.append(v.copy()))
    if len(lo_steps) != len(hi_steps):
        return False
    return all(np.all(a <= b) for a, b in zip(lo_steps, hi_steps))


def scheme_slack(v: GridFunction, coef: float = 10.0) -> float:
    """``coef * (dt + dx)`` for the stored output grid."""
    return coef * (float(v.times[1] - v.times[0]) + v.dx)


@dataclass
class SandwichReport:
    v: GridFunction
    lower_env: GridFunction
    upper_env: GridFunction
    slack: float
    lower_gap: float = field(default=0.0)
    upper_gap: float = field(default=0.0)

    @property
    def holds(self) -> bool:
        return self.lower_gap >= -self.slack and self.upper_gap >= -self.slack


def sandwich_solutions(eq: EquationSpec, terminal: GridFunction,
                       config: SolverConfig | None = None) -> SandwichReport:
    """Solve ``eq`` and both extremal equations with the same data and grid.

    ``lower_gap = min(v - lower_env)`` and ``upper_gap = min(upper_env - v)``
    must be above ``-slack``.
    """
    config = config or SolverConfig()
    v = solve_terminal(eq, terminal, config)
    lo = solve_terminal(EquationSpec("lower", eq.params), terminal, config)
    hi = solve_terminal(EquationSpec("upper", eq.params), terminal, config)
    rep = SandwichReport(v, lo, hi, scheme_slack(v))
    rep.lower_gap = float(np.min(v.values - lo.values))
    rep.upper_gap = float(np.min(hi.values - v.values))
    if not rep.holds:
        logger.warning("%s: sandwich violated (gaps %.3g, %.3g, slack %.3g)",
                       eq.label, rep.lower_gap, rep.upper_gap, rep.slack)
    return rep


def checkerboard(scale_x: float, scale_t: float | None, low: float, high: float) -> Callable:
    """Checkerboard ``x, t -> low or high``, discontinuous at every cell edge.

    With ``scale_t=None`` the pattern is constant in time and alternates in
    space only; otherwise the cells are rectangles in space-time.
    """

    def f(x, t):
        cx = np.floor(np.asarray(x) / scale_x + 1e-9).astype(np.int64)
        if scale_t is None:
            ct = np.zeros_like(cx)
        else:
            ct = np.floor(np.asarray(t) / scale_t + 1e-9).astype(np.int64)
        return np.where((cx + ct) % 2 == 0, high, low).astype(float)

    return f
