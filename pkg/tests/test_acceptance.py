"""Acceptance criteria, each at its stated tolerance; one PASS/FAIL line per criterion."""

import json
import math

import numpy as np
import pytest
from scipy import stats

from hjlab import cli
from hjlab.bridge import (
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
from hjlab.grid import GridFunction
from hjlab.jumps import ControlValue, LevyMeasureSpec, martingale_batch
from hjlab.operators import LevyIntegralSpec, make_jump_map
from hjlab.params import StructureParams, legendre_gap, young_critical_partner, young_margin
from hjlab.regularity import minimal_A, near_critical_paths, reverse_holder, uniformity_report
from hjlab.solver import EquationSpec, SolverConfig, checkerboard, comparison_test, solve_terminal
from hjlab.verification import (
    PolicyClass,
    feedback_from_value,
    mc_value,
    moment_check,
    rollout_check,
    simulate_batch,
    spacetime_eval,
)

PR = StructureParams(delta=1.0, q=4.0)
NX = 64
NT = 2 * NX
TERMINALS = {
    "cos": lambda x: 0.5 * np.cos(2 * np.pi * x),
    "mix": lambda x: 0.4 * np.sin(2 * np.pi * x) + 0.2 * np.cos(6 * np.pi * x),
    "bump": lambda x: 0.8 * np.exp(-20 * (x - 0.5) ** 2) - 0.3,
}
PROBES = [(0.0, 0.0), (0.3, 0.5), (0.5, 0.8), (0.7, 0.9), (0.1, 0.96)]

pytestmark = pytest.mark.acceptance


@pytest.fixture(scope="module")
def lower_solutions():
    out = {}
    for name, f in TERMINALS.items():
        term = GridFunction.from_function(f, NX, 1.0)
        out[name] = (term, solve_terminal(EquationSpec("lower", PR), term, SolverConfig(nt=NT)))
    return out


# 1 -------------------------------------------------------------------------


def test_criterion_01_duality_constants(acceptance):
    rng = np.random.default_rng(1)
    worst_gap, worst_young, worst_witness = 0.0, math.inf, 0.0
    for delta in (1.0, 2.0):
        for q in (2.5, 3.0, 4.0):
            pr = StructureParams(delta=delta, q=q)
            xi = rng.normal(size=(10_000, 2)) * rng.uniform(0.01, 5.0, size=(10_000, 1))
            target = delta * np.linalg.norm(xi, axis=1) ** q
            worst_gap = max(worst_gap, float(np.max(np.abs(legendre_gap(xi, pr)) / np.maximum(1.0, target))))
            a = rng.normal(size=(100_000, 2)) * rng.uniform(0.01, 5.0, size=(100_000, 1))
            b = rng.normal(size=(100_000, 2)) * rng.uniform(0.01, 5.0, size=(100_000, 1))
            worst_young = min(worst_young, float(np.min(young_margin(a, b, pr))))
            crit = young_critical_partner(a[:1000], pr)
            worst_witness = max(worst_witness, float(np.max(np.abs(young_margin(a[:1000], crit, pr)))))
    ok = worst_gap <= 1e-10 and worst_young >= -1e-12 and worst_witness <= 1e-9
    assert acceptance(1, "duality constants", ok,
                      f"max rel legendre gap {worst_gap:.1e}, min young margin {worst_young:.1e}, "
                      f"max witness {worst_witness:.1e}")


# 2 -------------------------------------------------------------------------


def test_criterion_02_martingale_law(acceptance):
    n = 100_000
    times = np.array([0.25, 0.5, 1.0])
    worst = -math.inf
    for k, (lam, b, delta) in enumerate([(1.0, 0.5, 1.0), (0.5, 1.0, 2.0), (1.0, 0.25, 1.0), (0.3, 0.7, 1.5)]):
        vals, _ = martingale_batch(delta, lam, b, times, n, seed=100 + k)
        for j, t in enumerate(times):
            m = vals[:, j]
            z_mean = abs(m.mean()) / (m.std(ddof=1) / math.sqrt(n))
            sq = m * m
            z_sq = abs(sq.mean() - delta * lam**2 * t) / (sq.std(ddof=1) / math.sqrt(n))
            worst = max(worst, z_mean, z_sq)
    rate = 4.0
    _, counts = martingale_batch(1.0, 1.0, 0.5, [1.0], n, seed=2024)
    c = counts[:, 0]
    edges = np.arange(0, 12)
    obs = np.array([np.sum(c == k) for k in edges[:-1]] + [np.sum(c >= edges[-1])])
    pk = stats.poisson.pmf(edges[:-1], rate)
    pval = stats.chisquare(obs, n * np.append(pk, 1.0 - pk.sum())).pvalue
    ok = worst <= 3.0 and pval > 0.01
    assert acceptance(2, "martingale law", ok, f"worst |z| {worst:.2f} (<= 3), chi2 p-value {pval:.3f} (> 0.01)")


# 3 -------------------------------------------------------------------------


def _smooth_random(rng, nx, amp):
    x = np.arange(nx) / nx
    v = np.zeros(nx)
    for k in range(1, 4):
        v += rng.normal() * np.cos(2 * np.pi * k * x) / k**2 + rng.normal() * np.sin(2 * np.pi * k * x) / k**2
    return amp * v / max(np.max(np.abs(v)), 1e-12)


def test_criterion_03_exact_solutions(acceptance):
    worst = 0.0
    for variant, sign in (("lower", -1.0), ("upper", 1.0)):
        for delta in (1.0, 2.0):
            pr = StructureParams(delta=delta, q=4.0)
            v = solve_terminal(EquationSpec(variant, pr), GridFunction(np.full(NX, 0.3), 1 / NX), SolverConfig(nt=20))
            exact = 0.3 + sign * delta * (pr.horizon - v.times)
            worst = max(worst, float(np.max(np.abs(v.values - exact[:, None]))))
    rng = np.random.default_rng(3)
    held = 0
    for i in range(50):
        eq = EquationSpec("lower" if i % 2 == 0 else "upper", PR)
        lo = _smooth_random(rng, 32, 0.4)
        hi = np.minimum(lo + np.abs(_smooth_random(rng, 32, 0.3)), 1.0)
        held += comparison_test(GridFunction(lo, 1 / 32), GridFunction(hi, 1 / 32), eq, SolverConfig(nt=5))
    ok = worst <= 1e-13 and held == 50
    assert acceptance(3, "exact solutions and comparison", ok,
                      f"constant-data error {worst:.1e} (<= 1e-13), comparison held on {held}/50 pairs")


# 4 -------------------------------------------------------------------------


def test_criterion_04_representation(acceptance, lower_solutions):
    worst_rep, worst_restr = math.inf, math.inf
    policies = [PolicyClass("zero"), PolicyClass("zero", jump=(1.0, 0.1)),
                PolicyClass("constant", constants=[(0.0, 1.0, 1.0), (0.5, 1.0, 0.5), (-0.5, 0.5, 0.25)])]
    for name, (term, v) in lower_solutions.items():
        osc = float(np.ptp(term.values))
        slack = 10 * (float(v.times[1] - v.times[0]) + v.dx)
        for k, (x, t) in enumerate(PROBES):
            pde = float(spacetime_eval(v, np.array([x]), t)[0])
            est = mc_value(PR, term, x, t, PolicyClass("value", value=v), 4000, seed=10 + k)
            worst_rep = min(worst_rep, 3 * est.stderr + 0.05 * osc - abs(est.mean - pde))
            for j, pol in enumerate(policies):
                r = mc_value(PR, term, x, t, pol, 1000, seed=50 + 10 * j + k)
                worst_restr = min(worst_restr, r.mean - pde + 3 * r.stderr + slack)
    ok = worst_rep >= 0 and worst_restr >= 0
    assert acceptance(4, "representation formula", ok,
                      f"worst two-sided margin {worst_rep:.3g}, worst restricted margin {worst_restr:.3g}")


# 5 -------------------------------------------------------------------------


def test_criterion_05_supersolution_monotonicity(acceptance, lower_solutions):
    starts = [(0.0, 0.3), (0.3, 0.5), (0.5, 0.6), (0.7, 0.7), (0.9, 0.85)]
    worst, pairs = math.inf, 0
    for name, (term, v) in lower_solutions.items():
        for x, t in starts:
            for seed in (1, 2):
                times = np.linspace(t, PR.horizon, 11)[1:]
                rep = rollout_check(v, PR, x, t, times, PolicyClass("value", value=v), 1000, seed=seed)
                worst = min(worst, rep.worst_margin)
                pairs += 1
    # moment bound for r in {1, 2}: value feedback and two constant jump controls
    _, v = lower_solutions["mix"]
    fb = feedback_from_value(v, PR)
    times = np.linspace(0.5, 1.0, 6)
    batches = [simulate_batch(PR, 0.2, 0.5, times, fb.zeta, fb.control, 20_000, seed=7, dx=v.dx,
                              speed_fn=fb.max_speed, breaks=fb.times)]
    for lam, b in ((1.0, 0.3), (0.5, 1.0)):
        batches.append(simulate_batch(PR, 0.0, 0.5, times, lambda y, s: -2.0 * y,
                                      lambda y, s, lam=lam, b=b: (np.full(y.shape, lam), np.full(y.shape, b)),
                                      20_000, seed=8, dx=1 / 64, speed_fn=lambda s: 2.0))
    mom = min(float(np.min(moment_check(bt, PR, [1.0, 2.0], t0=0.5).margins)) for bt in batches)
    ok = worst >= 0 and mom >= 0 and pairs == 30
    assert acceptance(5, "supersolution monotonicity", ok,
                      f"worst rollout margin {worst:.3g} over {pairs} pairs x 10 checkpoints, "
                      f"worst moment margin {mom:.3g}")


# 6 -------------------------------------------------------------------------


def test_criterion_06_bridge_bounds(acceptance):
    bp = BridgeParams(PR, mesh_points=800)
    det_ok = True
    for y, s in [(0.5, 0.5), (-1.0, 0.0), (0.2, 0.9)]:
        est = bridge_cost(bp, y, s, ControlValue(1e-6, 1.0), 4000, seed=1)
        det_ok &= abs(est.mean - deterministic_cost(bp, y, s)) <= 3 * est.stderr
    bp = BridgeParams(PR)
    sc = [scaling_in_time(bp, ControlValue(1.0, 0.02), np.geomspace(0.02, 0.2, 5), 4000, seed=7),
          scaling_in_space(bp, ControlValue(1.0, 0.5), np.geomspace(1.0, 10.0, 5), 0.1, 4000, seed=9),
          scaling_in_time(bp, ControlValue(1.0, 0.5), np.geomspace(0.01, 0.1, 5), 4000, seed=8, y_rel=1.0)]
    errs = [r.error for r in sc]
    fit = fit_sandwich(BridgeParams(PR, controls=default_family(4)), np.linspace(-1.0, 1.0, 20),
                       1.0 - np.geomspace(0.01, 0.5, 10), 1000, seed=11)
    ok = det_ok and max(errs) <= 0.1 and fit.finite
    slopes = ", ".join(f"{r.slope:.3f} vs {r.predicted:.3f}" for r in sc)
    assert acceptance(6, "bridge bounds", ok,
                      f"closed form within 3 sigma: {bool(det_ok)}; slopes {slopes}; sandwich C {fit.C:.3g}")


# 7 -------------------------------------------------------------------------


def test_criterion_07_subsolution_estimates(acceptance):
    Cs = []
    for nx in (32, 64):
        term = GridFunction.from_function(TERMINALS["cos"], nx, 1.0)
        u = solve_terminal(EquationSpec("upper", PR), term, SolverConfig(nt=40))
        Cs.append(subsolution_bound_fit(u, PR, x_stride=nx // 32))
    stable = all(math.isfinite(c) and c > 0 for c in Cs) and abs(Cs[1] / Cs[0] - 1) <= 0.2
    st = stationary_exponent_fit(PR)
    ok = stable and abs(st.exponent - (2 - PR.p)) <= 0.1
    assert acceptance(7, "subsolution estimates", ok,
                      f"C = {Cs[0]:.4g} -> {Cs[1]:.4g} (change {abs(Cs[1] / Cs[0] - 1):.1%}), "
                      f"stationary exponent {st.exponent:.4f} (target {2 - PR.p:.4f})")


# 8 -------------------------------------------------------------------------


def _oracle(c1, c2, s_star, A, B, p, levels):
    lhs, rhs, mom, spans = [], [], [], []
    for k in range(levels + 1):
        t = 2.0**-k
        w1, w2 = min(t, s_star), max(t - s_star, 0.0)
        i1, ip = c1 * w1 + c2 * w2, c1**p * w1 + c2**p * w2
        lhs.append(ip / t)
        rhs.append(A * (i1 / t) ** p + B * t ** (-p / 2))
        mom.append(i1**p)
        spans.append(t)
    return np.array(lhs), np.array(rhs), mom, spans


def test_criterion_08_reverse_holder(acceptance):
    p = PR.p
    rng = np.random.default_rng(8)
    agree, theta_ok, passing = 0, True, 0
    for _ in range(50):
        c1, c2 = rng.uniform(0.05, 3.0, size=2)
        cut = int(rng.integers(1, 256))
        xi = np.where(np.arange(256) < cut, c1, c2)[None, :]
        A = float(np.exp(rng.uniform(np.log(0.3), np.log(3.0))))
        B = float(np.exp(rng.uniform(np.log(1e-3), np.log(1.0))))
        rep = reverse_holder(xi, A, B, p)
        lhs, rhs, mom, spans = _oracle(c1, c2, cut / 256, A, B, p, 4)
        verdict = bool(np.all(lhs <= rhs))
        agree += verdict == rep.hypothesis_holds
        if verdict:
            passing += 1
            theta_ok &= rep.theta_est is not None and rep.theta_est > p
    thetas = []
    for eps in (0.2, 0.1, 0.05, 0.02, 0.01):
        x = near_critical_paths(eps, p, 2**14)
        thetas.append(reverse_holder(x, minimal_A(x, 0.0, 1.0, 1e-3, p), 1e-3, p).theta_est)
    mono = all(t is not None for t in thetas) and all(a > b for a, b in zip(thetas, thetas[1:])) \
        and thetas[-1] - p < 0.05
    ok = agree == 50 and theta_ok and mono
    assert acceptance(8, "reverse Hoelder", ok,
                      f"oracle agreement {agree}/50, theta > p on {passing} passing samples: {bool(theta_ok)}, "
                      f"near-critical thetas {[round(t, 3) for t in thetas]} -> p = {p:.3f}")


# 9 -------------------------------------------------------------------------


def test_criterion_09_uniformity(acceptance):
    dx = 1.0 / NX
    fam = [EquationSpec("local", PR, diffusion=checkerboard(dx * m, None, 0.0, 0.5 * PR.delta), label=f"checker{m}")
           for m in (1, 2, 4, 8, 16)]
    lev = LevyIntegralSpec(LevyMeasureSpec(dim=1, index=1.0, intensity=0.5),
                           [[make_jump_map("linear", gamma=1.0), make_jump_map("sine", amp=0.5)],
                            [make_jump_map("asymmetric", gamma_pos=1.0, gamma_neg=0.3)]])
    fam.append(EquationSpec("nonlocal", PR, levy=lev, label="nonlocal"))
    term = GridFunction.from_function(TERMINALS["cos"], NX, 1.0)
    rep = uniformity_report(fam, term, SolverConfig(nt=NT), tail_time=PR.tail_time)
    ok = rep.passed(0.1, 3.0) and all(rep.sandwich_ok)
    assert acceptance(9, "uniformity over coefficient families", ok,
                      f"space spread {rep.space_spread:.3f}, time spread {rep.time_spread:.3f} (<= 0.1), "
                      f"constant ratio {rep.constant_ratio:.2f} (<= 3)")


# 10 ------------------------------------------------------------------------


def test_criterion_10_determinism(acceptance, tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[structure]\ndelta = 1.0\nq = 4.0\n\n[grid]\nnx = 64\n\n[mc]\nsamples = 10000\nseed = 5\n\n"
                   "[equation]\nvariant = lower\n")
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        code = cli.main(["suite", "--config", str(cfg), "--out", str(out), "--dump-paths"])
        man = json.loads((out / "manifest.json").read_text())
        man.pop("timing")
        runs.append((code, man, {f.name: f.read_bytes() for f in sorted(out.glob("*.csv"))}))
    (ca, ma, fa), (cb, mb, fb) = runs
    ok = ca == cb and ma == mb and fa == fb and len(fa) > 0
    assert acceptance(10, "determinism", ok,
                      f"manifests identical: {ma == mb}, {len(fa)} CSVs byte-identical: {fa == fb}, "
                      f"suite exit code {ca}")
