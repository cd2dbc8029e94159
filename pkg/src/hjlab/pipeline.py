"""Pipeline stages behind the command line: each returns values, margins and tables."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bridge import (
    BridgeParams,
    bridge_cost,
    default_family,
    deterministic_cost,
    fit_sandwich,
    scaling_in_space,
    scaling_in_time,
    stationary_exponent_fit,
    subsolution_bound_fit,
)
from .config import ARTIFACT_VERSION, RunConfig, write_csv, write_json
from .grid import GridFunction
from .jumps import ControlValue, LevyMeasureSpec, simulate_bridge
from .kernels import BACKEND
from .regularity import (
    holder_fit,
    minimal_A,
    near_critical_paths,
    reverse_holder,
    rollout_control_paths,
    theoretical_exponents,
    uniformity_report,
)
from .solver import EquationSpec, SolverConfig, sandwich_solutions, solve_terminal
from .verification import (
    PolicyClass,
    feedback_from_value,
    mc_value,
    moment_check,
    rollout_check,
    simulate_batch,
    spacetime_eval,
)

logger = logging.getLogger(__name__)

STAGES = ("solve", "mc-value", "rollout", "bridge", "holder", "reverse-holder")
# fixed per-stage seed offsets keep stages independent of each other's sample counts
_SEED_OFFSET = {name: 1000 * k for k, name in enumerate(STAGES)}


@dataclass
class StageResult:
    values: dict = field(default_factory=dict)
    margins: dict = field(default_factory=dict)
    files: list = field(default_factory=list)

    @property
    def worst_margin(self) -> float:
        return min(self.margins.values()) if self.margins else math.inf

    def as_dict(self) -> dict:
        return dict(values=self.values, margins=self.margins, files=self.files,
                    worst_margin=self.worst_margin, passed=self.worst_margin >= 0.0)


class Context:
    """Shared state of one run: config, seed, output directory and cached solves."""

    def __init__(self, cfg: RunConfig, seed: int, out: Path, dump_paths: bool = False):
        self.cfg = cfg
        self.seed = int(seed)
        self.out = Path(out)
        self.dump_paths = dump_paths
        self._solves: dict = {}

    def stage_seed(self, stage: str) -> int:
        return self.seed + _SEED_OFFSET[stage]

    def solve(self, variant: str) -> GridFunction:
        if variant not in self._solves:
            eq = self.cfg.equation(variant)
            self._solves[variant] = solve_terminal(eq, self.cfg.terminal(), self.cfg.solver_config)
        return self._solves[variant]

    def csv(self, result: StageResult, name: str, header, rows) -> None:
        path = self.out / name
        write_csv(path, header, rows, self.cfg.hash)
        result.files.append(name)


def _field_rows(v: GridFunction):
    for k, t in enumerate(v.times):
        for x, val in zip(v.x, v.values[k]):
            yield t, x, val


# ---------------------------------------------------------------------------
# stages


def stage_solve(ctx: Context) -> StageResult:
    cfg = ctx.cfg
    eq = cfg.equation()
    rep = sandwich_solutions(eq, cfg.terminal(), cfg.solver_config)
    ctx._solves.setdefault(eq.variant, rep.v)
    ctx._solves.setdefault("lower", rep.lower_env)
    ctx._solves.setdefault("upper", rep.upper_env)
    v = rep.v
    res = StageResult()
    res.values.update(variant=eq.variant, label=eq.label, steps=v.meta.get("steps"),
                      sup=float(np.max(np.abs(v.values))), slack=rep.slack,
                      lower_gap=rep.lower_gap, upper_gap=rep.upper_gap)
    res.margins["sandwich_lower"] = rep.lower_gap + rep.slack
    res.margins["sandwich_upper"] = rep.upper_gap + rep.slack
    pr = cfg.params
    res.margins["sup_bound"] = pr.sup_bound + pr.delta * pr.horizon - res.values["sup"]
    ctx.csv(res, "solve_value.csv", ["t [time]", "x [space]", "v [value]"], _field_rows(v))
    return res


def stage_mc_value(ctx: Context) -> StageResult:
    cfg = ctx.cfg
    pr = cfg.params
    n = cfg["mc"]["samples"]
    seed = ctx.stage_seed("mc-value")
    term = cfg.terminal()
    v = ctx.solve("lower")
    osc = float(np.ptp(term.values))
    slack = 10.0 * (float(v.times[1] - v.times[0]) + v.dx)
    restricted = [PolicyClass("zero"),
                  PolicyClass("constant", constants=[(0.0, 1.0, 1.0), (0.5, 1.0, 0.5), (-0.5, 0.5, 0.25)])]
    res = StageResult()
    rows = []
    for i, (x, t) in enumerate(cfg.probes()):
        pde = float(spacetime_eval(v, np.array([x]), t)[0])
        est = mc_value(pr, term, x, t, PolicyClass("value", value=v), n, seed + i)
        res.margins[f"representation_{i}"] = 3 * est.stderr + 0.05 * osc - abs(est.mean - pde)
        rows.append((x, t, "value", est.mean, est.stderr, pde))
        for j, pol in enumerate(restricted):
            r = mc_value(pr, term, x, t, pol, max(100, n // 4), seed + 100 * (j + 1) + i)
            res.margins[f"restricted_{pol.tag}_{i}"] = r.mean - pde + 3 * r.stderr + slack
            rows.append((x, t, pol.tag, r.mean, r.stderr, pde))
    res.values.update(samples=n, probes=cfg.probes(), osc=osc, scheme_slack=slack)
    ctx.csv(res, "mc_value.csv", ["x [space]", "t [time]", "policy", "estimate [value]", "stderr [value]",
                                  "pde [value]"], rows)
    if ctx.dump_paths:
        x, t = cfg.probes()[0]
        fb = feedback_from_value(v, pr)
        times = np.linspace(t, pr.horizon, 21)
        b = simulate_batch(pr, x, t, times, fb.zeta, fb.control, 32, seed, v.dx,
                           speed_fn=fb.max_speed, breaks=fb.times)
        _dump(ctx, res, "mc_value_paths.csv", times, b.states)
    return res


def _dump(ctx, res, name, times, states):
    """One row per path: its states at ``times``."""
    header = ["path"] + [f"y(t={t:.6g}) [space]" for t in times]
    ctx.csv(res, name, header, ((k, *states[k]) for k in range(states.shape[0])))


def stage_rollout(ctx: Context) -> StageResult:
    cfg = ctx.cfg
    pr = cfg.params
    ro = cfg["rollout"]
    n = cfg["mc"]["samples"]
    seed = ctx.stage_seed("rollout")
    v = ctx.solve("lower")
    x, t0 = ro["x"], ro["t"]
    checkpoints = np.linspace(t0, pr.horizon, ro["checkpoints"] + 1)[1:]
    res = StageResult()
    rows = []
    for r in range(ro["repeats"]):
        rep = rollout_check(v, pr, x, t0, checkpoints, PolicyClass("value", value=v), n, seed + r, stream=r)
        res.margins[f"rollout_{r}"] = rep.worst_margin
        res.margins[f"energy_{r}"] = rep.energy_bound - rep.energy
        rows.extend((r, row["time"], row["margin"], row["stderr"], row["slack"]) for row in rep.rows())
    fb = feedback_from_value(v, pr)
    batch = simulate_batch(pr, x, t0, checkpoints, fb.zeta, fb.control, n, seed + 500, v.dx,
                           speed_fn=fb.max_speed, breaks=fb.times)
    mom = moment_check(batch, pr, [1.0, 2.0], t0=t0)
    res.margins["moment_r1"] = float(np.min(mom.margins[0]))
    res.margins["moment_r2"] = float(np.min(mom.margins[1]))
    res.values.update(point=(x, t0), samples=n, repeats=ro["repeats"], max_drift=batch.max_drift)
    ctx.csv(res, "rollout.csv", ["repeat", "s [time]", "margin [value]", "stderr [value]", "slack [value]"], rows)
    if ctx.dump_paths:
        _dump(ctx, res, "rollout_paths.csv", checkpoints, batch.states[:32])
    return res


def stage_bridge(ctx: Context) -> StageResult:
    cfg = ctx.cfg
    pr = cfg.params
    br = cfg["bridge"]
    n = br["samples"]
    seed = ctx.stage_seed("bridge")
    bp = BridgeParams(pr, controls=default_family(br["family_size"]), alpha=br["alpha"])
    res = StageResult()
    rows = []
    det = bridge_cost(BridgeParams(pr, alpha=bp.alpha, mesh_points=800), 0.5, 0.5,
                      ControlValue(1e-6, 1.0), n, seed)
    exact = deterministic_cost(bp, 0.5, 0.5)
    res.margins["deterministic_closed_form"] = 3 * det.stderr + 1e-3 * exact - abs(det.mean - exact)
    scalings = [scaling_in_time(bp, ControlValue(1.0, 0.02), np.geomspace(0.02, 0.2, 5), 2 * n, seed + 1),
                scaling_in_time(bp, ControlValue(1.0, 0.5), np.geomspace(0.01, 0.1, 5), 2 * n, seed + 2, y_rel=1.0),
                scaling_in_space(bp, ControlValue(1.0, 0.5), np.geomspace(1.0, 10.0, 5), 0.1, 2 * n, seed + 3)]
    for name, sc in zip(("slope_time_diagonal", "slope_time_offdiagonal", "slope_space"), scalings):
        res.values[name] = dict(slope=sc.slope, predicted=sc.predicted)
        res.margins[name] = 0.1 - sc.error
        rows.extend((name, h, c, se) for h, c, se in zip(sc.grid, sc.costs, sc.stderrs))
    ys = np.linspace(-1.0, 1.0, 20)
    ss = pr.horizon - pr.horizon * np.geomspace(0.01, 0.5, 10)
    bp_s = BridgeParams(pr, t=pr.horizon, controls=bp.controls, alpha=bp.alpha)
    fit = fit_sandwich(bp_s, ys, ss, max(100, n // 2), seed + 4)
    res.values["sandwich"] = dict(C=fit.C, C_upper=fit.C_upper, C_lower=fit.C_lower)
    res.margins["sandwich_finite"] = 0.0 if fit.finite else -1.0
    # subsolution estimate and its stability under one refinement
    nx = cfg["grid"]["nx"]
    Cs = []
    for m in (nx // 2, nx):
        u = _solve_at(cfg, "upper", m)
        Cs.append(subsolution_bound_fit(u, pr, x_stride=max(1, m // 32), t_stride=max(1, u.values.shape[0] // 40)))
    res.values["subsolution_constants"] = Cs
    res.margins["subsolution_stable"] = 0.2 - abs(Cs[1] / Cs[0] - 1.0) if Cs[0] > 0 else -1.0
    st = stationary_exponent_fit(pr)
    res.values["stationary_exponent"] = dict(fit=st.exponent, predicted=st.predicted)
    res.margins["stationary_exponent"] = 0.1 - abs(st.exponent - st.predicted) if math.isfinite(st.exponent) else -1.0
    ctx.csv(res, "bridge_scaling.csv", ["series", "scale [space or time]", "cost", "stderr"], rows)
    ctx.csv(res, "bridge_value.csv", ["s [time]", "y [space]", "w [value]"],
            ((s, y, fit.w[i, j]) for i, s in enumerate(ss) for j, y in enumerate(ys)))
    if ctx.dump_paths:
        taus = np.linspace(0.5, pr.horizon, 21)[:-1]
        path = simulate_bridge(LevyMeasureSpec(), np.full(32, 0.5), 0.5, pr.horizon, bp.alpha,
                               ControlValue(1.0, 0.5), seed + 5, taus=taus, delta=pr.delta, p=pr.p)
        _dump(ctx, res, "bridge_paths.csv", taus, np.asarray(path.states).T)
    return res


def _solve_at(cfg: RunConfig, variant: str, nx: int) -> GridFunction:
    g = cfg["grid"]
    e = cfg["equation"]
    from .config import TERMINALS

    f = TERMINALS[e["terminal"]]
    term = GridFunction.from_function(lambda x: e["amplitude"] * f(x, g["L"]), nx, g["L"])
    return solve_terminal(EquationSpec(variant, cfg.params), term, SolverConfig(nt=cfg.nt))


def stage_holder(ctx: Context) -> StageResult:
    cfg = ctx.cfg
    pr = cfg.params
    tail = cfg["holder"]["tail"] if cfg["holder"]["tail"] is not None else pr.tail_time
    v = ctx.solve(cfg["equation"]["variant"])
    fit = holder_fit(v, tail)
    res = StageResult()
    res.values["fit"] = dict(space_exponent=fit.space_exponent, time_exponent=fit.time_exponent,
                             space_constant=fit.space_constant, time_constant=fit.time_constant,
                             space_r2=fit.space_r2, time_r2=fit.time_r2, degenerate=fit.degenerate)
    res.margins["nondegenerate"] = -1.0 if fit.degenerate else 0.0
    rows = [("space", h, m) for h, m in zip(fit.space_scales, fit.space_modulus)]
    rows += [("time", h, m) for h, m in zip(fit.time_scales, fit.time_modulus)]
    if cfg["holder"]["family"]:
        rep = uniformity_report(cfg.rough_family(), cfg.terminal(), cfg.solver_config, tail_time=tail)
        res.values["uniformity"] = dict(
            labels=rep.labels, space_spread=rep.space_spread, time_spread=rep.time_spread,
            constant_ratio=rep.constant_ratio,
            exponents=[(f.space_exponent, f.time_exponent) for f in rep.fits],
            constants=[f.constant for f in rep.fits])
        res.margins["space_spread"] = 0.1 - rep.space_spread
        res.margins["time_spread"] = 0.1 - rep.time_spread
        res.margins["constant_ratio"] = 3.0 - rep.constant_ratio
        res.margins["family_sandwich"] = 0.0 if all(rep.sandwich_ok) else -1.0
        for label, f in zip(rep.labels, rep.fits):
            rows += [(f"{label}:space", h, m) for h, m in zip(f.space_scales, f.space_modulus)]
            rows += [(f"{label}:time", h, m) for h, m in zip(f.time_scales, f.time_modulus)]
    ctx.csv(res, "holder_moduli.csv", ["series", "scale [space or time]", "modulus [value]"], rows)
    return res


def stage_reverse_holder(ctx: Context) -> StageResult:
    cfg = ctx.cfg
    pr = cfg.params
    rh = cfg["reverse_holder"]
    seed = ctx.stage_seed("reverse-holder")
    v = ctx.solve("lower")
    a = rh["start"] * pr.horizon
    xi = rollout_control_paths(v, pr, cfg["rollout"]["x"], a, rh["samples"], seed, n_cells=rh["cells"])
    B = rh["B"]
    A = max(minimal_A(xi, a, pr.horizon, B, pr.p), 1.0)
    res = StageResult()
    if not math.isfinite(A):
        res.values["note"] = "controls vanish on the finest levels"
        res.margins["hypothesis"] = -1.0
        return res
    rep = reverse_holder(xi, A, B, pr.p, a=a, b=pr.horizon)
    res.values.update(A=A, B=B, theta_est=rep.theta_est, C_est=rep.C_est, hypothesis_margin=rep.hypothesis_margin)
    res.margins["hypothesis"] = rep.hypothesis_margin
    if rep.theta_est is None:
        res.margins["theta_above_p"] = -1.0
    else:
        res.margins["theta_above_p"] = rep.theta_est - pr.p
        es, et = theoretical_exponents(rep.theta_est, pr.p)
        fit = holder_fit(v, pr.tail_time)
        res.values["pipeline"] = dict(theoretical=(es, et), fitted=(fit.space_exponent, fit.time_exponent))
        res.margins["pipeline_space"] = fit.space_exponent - (es - 0.1)
        res.margins["pipeline_time"] = fit.time_exponent - (et - 0.1)
    thetas = []
    for eps in (0.2, 0.1, 0.05, 0.02):
        x = near_critical_paths(eps, pr.p, 2**12)
        r = reverse_holder(x, minimal_A(x, 0.0, 1.0, 1e-3, pr.p), 1e-3, pr.p)
        thetas.append(r.theta_est if r.theta_est is not None else math.nan)
    res.values["near_critical_theta"] = thetas
    res.margins["near_critical_monotone"] = float(np.nanmin(-np.diff(thetas))) if np.all(np.isfinite(thetas)) else -1.0
    ctx.csv(res, "reverse_holder.csv", ["t-a [time]", "lhs", "rhs", "moment"],
            zip(rep.levels, rep.lhs, rep.rhs, rep.moments))
    return res


STAGE_FUNCS = {
    "solve": stage_solve,
    "mc-value": stage_mc_value,
    "rollout": stage_rollout,
    "bridge": stage_bridge,
    "holder": stage_holder,
    "reverse-holder": stage_reverse_holder,
}


def run_stages(ctx: Context, stages, command: str) -> dict:
    """Run ``stages`` in order and write the manifest; a failing stage stops the run."""
    manifest = dict(command=command, config_hash=ctx.cfg.hash, seed=ctx.seed, version=__version__,
                    artifact_version=ARTIFACT_VERSION, backend=BACKEND, config=ctx.cfg.tables,
                    structure=dict(delta=ctx.cfg.params.delta, q=ctx.cfg.params.q, M=ctx.cfg.params.sup_bound,
                                   T=ctx.cfg.params.horizon, tau=ctx.cfg.params.tail_time),
                    results={}, failed_stage=None, timing={})
    for name in stages:
        t0 = time.perf_counter()
        try:
            result = STAGE_FUNCS[name](ctx)
        except Exception as exc:  # recorded in the manifest, then reported by the caller
            logger.exception("stage %s aborted", name)
            manifest["failed_stage"] = name
            manifest["error"] = f"{type(exc).__name__}: {exc}"
            manifest["timing"][name] = time.perf_counter() - t0
            break
        manifest["results"][name] = result.as_dict()
        manifest["timing"][name] = time.perf_counter() - t0
    margins = [r["worst_margin"] for r in manifest["results"].values()]
    manifest["worst_margin"] = min(margins) if margins else None
    manifest["passed"] = manifest["failed_stage"] is None and all(m >= 0.0 for m in margins)
    name = "manifest.json" if command == "suite" else f"{command}.json"
    write_json(ctx.out / name, manifest)
    return manifest
