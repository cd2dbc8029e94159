import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hjlab.grid import ConfigurationError, GridFunction
from hjlab.jumps import LevyMeasureSpec
from hjlab.operators import LevyIntegralSpec, make_jump_map
from hjlab.params import StructureParams
from hjlab.solver import (
    EquationSpec,
    SolverConfig,
    SolverError,
    _Stepper,
    checkerboard,
    comparison_test,
    residual,
    sandwich_solutions,
    solve_terminal,
)

PR = StructureParams(delta=1.0, q=4.0)
SHORT = StructureParams(delta=1.5, q=3.0, horizon=0.25, tail_time=0.05)


def cos_data(nx, amp=0.5, period=1.0):
    return GridFunction.from_function(lambda x: amp * np.cos(2 * np.pi * x / period), nx, period)


def smooth_random(rng, nx, amp):
    x = np.arange(nx) / nx
    v = np.zeros(nx)
    for k in range(1, 4):
        v += rng.normal() * np.cos(2 * np.pi * k * x) / k**2 + rng.normal() * np.sin(2 * np.pi * k * x) / k**2
    return amp * v / max(np.max(np.abs(v)), 1e-12)


def catalog_levy():
    mu = LevyMeasureSpec(dim=1, index=1.0, intensity=0.5)
    return LevyIntegralSpec(mu, [[make_jump_map("linear", gamma=1.0), make_jump_map("sine", amp=0.5)],
                                 [make_jump_map("asymmetric", gamma_pos=1.0, gamma_neg=0.3)]])


@pytest.mark.parametrize("variant,sign", [("lower", -1.0), ("upper", 1.0)])
@pytest.mark.parametrize("delta", [1.0, 2.0])
def test_constant_solutions_exact(variant, sign, delta):
    pr = StructureParams(delta=delta, q=4.0)
    term = GridFunction(np.full(32, 0.3), 1.0 / 32)
    v = solve_terminal(EquationSpec(variant, pr), term, SolverConfig(nt=10))
    exact = 0.3 + sign * delta * (pr.horizon - v.times)
    assert np.max(np.abs(v.values - exact[:, None])) <= 1e-13
    res = residual(v, EquationSpec(variant, pr))
    assert np.max(np.abs(res.values)) <= 1e-11


def test_constant_in_space_stays_constant():
    v = solve_terminal(EquationSpec("lower", PR), GridFunction(np.full(16, -0.7), 1 / 16), SolverConfig(nt=4))
    assert np.all(np.ptp(v.values, axis=1) == 0.0)


def test_output_layout():
    term = cos_data(32)
    v = solve_terminal(EquationSpec("upper", PR), term, SolverConfig(nt=8))
    assert v.values.shape == (9, 32)
    assert np.all(np.diff(v.times) > 0)
    assert np.array_equal(v.values[-1], term.values)
    assert v.meta["clamp_events"] == 0


def test_rejects_oversized_terminal():
    with pytest.raises(ConfigurationError):
        solve_terminal(EquationSpec("lower", PR), cos_data(16, amp=2.0))


def test_step_limit_aborts():
    with pytest.raises(SolverError):
        solve_terminal(EquationSpec("lower", PR), cos_data(32), SolverConfig(nt=2, max_steps=3))


@pytest.mark.slow
def test_self_convergence():
    sols = {nx: solve_terminal(EquationSpec("lower", PR), cos_data(nx), SolverConfig(nt=20)).values
            for nx in (32, 64, 128, 256)}
    diffs = [np.max(np.abs(sols[n] - sols[2 * n][:, ::2])) for n in (32, 64, 128)]
    assert diffs[0] / diffs[1] >= 1.5
    assert diffs[1] / diffs[2] >= 1.5


@pytest.mark.parametrize("variant", ["lower", "upper"])
def test_residual_small_away_from_terminal_layer(variant):
    nx, nt = 64, 200
    eq = EquationSpec(variant, PR)
    v = solve_terminal(eq, cos_data(nx), SolverConfig(nt=nt))
    res = residual(v, eq)
    interior = res.times <= 0.8 * PR.horizon
    assert np.max(np.abs(res.values[interior])) <= 10 * (1.0 / nt + 1.0 / nx)


def test_residual_perturbation_spike():
    eq = EquationSpec("lower", PR)
    v = solve_terminal(eq, cos_data(32), SolverConfig(nt=10))
    base = residual(v, eq).values
    eps = 1e-3
    pert = v.values.copy()
    pert[3, 7] += eps
    bumped = residual(GridFunction(pert, v.dx, times=v.times), eq).values
    dt = v.times[1] - v.times[0]
    assert bumped[3, 7] - base[3, 7] == pytest.approx(eps / dt, rel=1e-8)


def test_comparison_identical_and_shift():
    eq = EquationSpec("lower", SHORT)
    hi = cos_data(32, amp=0.4)
    assert comparison_test(hi, hi, eq, SolverConfig(nt=5))
    lo = GridFunction(hi.values - 0.1, hi.dx)
    assert comparison_test(lo, hi, eq, SolverConfig(nt=5))


@pytest.mark.parametrize("variant", ["lower", "upper"])
def test_comparison_random_pairs(variant):
    rng = np.random.default_rng(7)
    eq = EquationSpec(variant, SHORT)
    for _ in range(25):
        lo = smooth_random(rng, 32, 0.4)
        hi = np.minimum(lo + np.abs(smooth_random(rng, 32, 0.3)), 1.0)
        assert comparison_test(GridFunction(lo, 1 / 32), GridFunction(hi, 1 / 32), eq, SolverConfig(nt=5))


def test_comparison_requires_order():
    a = cos_data(16)
    with pytest.raises(ValueError):
        comparison_test(GridFunction(a.values + 0.1, a.dx), a, EquationSpec("lower", SHORT))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["lower", "upper"]))
def test_update_map_monotone(seed, variant):
    """One explicit step at the CFL bound is nondecreasing in every stencil value."""
    rng = np.random.default_rng(seed)
    nx = 24
    dx = 1.0 / nx
    v = rng.uniform(-0.5, 0.5, nx)
    w = v + rng.uniform(0.0, 0.2, nx) * (rng.random(nx) < 0.5)
    stp = _Stepper(EquationSpec(variant, PR), nx, dx, SolverConfig())
    G = max(np.max(np.abs(np.diff(np.r_[v, v[0]]))), np.max(np.abs(np.diff(np.r_[w, w[0]])))) / dx
    dt = stp.dt_for(G)
    sv = v + dt * stp.rhs(v, 1.0, np.inf)[0]
    sw = w + dt * stp.rhs(w, 1.0, np.inf)[0]
    assert np.all(sv <= sw + 1e-12)


@pytest.mark.parametrize("variant,sign", [("lower", -1.0), ("upper", 1.0)])
def test_linfty_bound(variant, sign):
    M = PR.sup_bound
    v = solve_terminal(EquationSpec(variant, PR), cos_data(48, amp=M), SolverConfig(nt=20))
    bound = M + PR.delta * (PR.horizon - v.times)
    assert np.all(np.abs(v.values) <= bound[:, None] + 1e-12)


def test_structure_probe_rejects():
    with pytest.raises(ConfigurationError, match="diffusion"):
        EquationSpec("local", PR, diffusion=lambda x, t: np.full(np.shape(x), 0.9))
    with pytest.raises(ConfigurationError, match="Hamiltonian"):
        EquationSpec("local", PR, diffusion=lambda x, t: 0 * x, ham_coef=lambda x, t: 0 * x + 0.5)
    with pytest.raises(ConfigurationError, match="second moment"):
        mu = LevyMeasureSpec(dim=1, index=1.0, intensity=2.0)
        EquationSpec("nonlocal", PR, levy=LevyIntegralSpec(mu, [[make_jump_map("linear", gamma=1.0)]]))
    with pytest.raises(ConfigurationError):
        EquationSpec("cubic", PR)


def test_sandwich_trivial():
    rep = sandwich_solutions(EquationSpec("lower", PR), cos_data(32), SolverConfig(nt=10))
    assert np.array_equal(rep.v.values, rep.lower_env.values)
    assert rep.holds


def test_sandwich_checkerboard_local():
    eq = EquationSpec("local", PR, diffusion=checkerboard(1 / 16, 0.05, 0.0, 0.5 * PR.delta),
                      ham_shift=checkerboard(0.05, 0.2, -PR.delta, PR.delta))
    rep = sandwich_solutions(eq, cos_data(64), SolverConfig(nt=20))
    assert rep.holds
    assert rep.lower_gap >= 0.0 and rep.upper_gap >= 0.0


def test_sandwich_nonlocal():
    eq = EquationSpec("nonlocal", PR, levy=catalog_levy())
    rep = sandwich_solutions(eq, cos_data(64), SolverConfig(nt=20))
    assert rep.holds


def test_checkerboard_values():
    f = checkerboard(0.5, 1.0, 0.0, 2.0)
    assert f(np.array([0.1, 0.6]), 0.2).tolist() == [2.0, 0.0]
    assert f(np.array([0.1, 0.6]), 1.2).tolist() == [0.0, 2.0]


def test_checkerboard_space_only():
    f = checkerboard(0.25, None, -1.0, 1.0)
    x = np.array([0.1, 0.3, 0.6])
    assert np.array_equal(f(x, 0.0), f(x, 7.3))
    assert f(x, 0.0).tolist() == [1.0, -1.0, 1.0]
