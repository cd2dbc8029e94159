import numpy as np
import pytest

from hjlab.grid import ConfigurationError, GridFunction, central_gradient
from hjlab.params import StructureParams
from hjlab.solver import EquationSpec, SolverConfig, solve_terminal
from hjlab.verification import (
    McEstimate,
    PolicyClass,
    feedback_from_value,
    mc_value,
    moment_check,
    rollout_check,
    simulate_batch,
    spacetime_eval,
)

PR = StructureParams(delta=1.0, q=4.0)
TERMINALS = {
    "cos": lambda x: 0.5 * np.cos(2 * np.pi * x),
    "mix": lambda x: 0.4 * np.sin(2 * np.pi * x) + 0.2 * np.cos(6 * np.pi * x),
    "bump": lambda x: 0.8 * np.exp(-20 * (x - 0.5) ** 2) - 0.3,
}
PROBES = [(0.0, 0.0), (0.3, 0.5), (0.5, 0.8), (0.7, 0.9), (0.1, 0.96)]


@pytest.fixture(scope="module")
def solved():
    out = {}
    for name, f in TERMINALS.items():
        term = GridFunction.from_function(f, 64, 1.0)
        out[name] = (term, solve_terminal(EquationSpec("lower", PR), term, SolverConfig(nt=100)))
    return out


def test_mc_estimate_stderr():
    est = McEstimate.from_samples([1.0, 2.0, 3.0, 4.0], seed=0)
    assert est.mean == 2.5
    assert est.stderr == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)


def test_constant_terminal_zero_drift_exact():
    term = GridFunction(np.full(32, 0.25), 1 / 32)
    est = mc_value(PR, term, 0.3, 0.4, PolicyClass("zero"), 200, seed=3)
    assert est.mean == pytest.approx(0.25 - PR.delta * 0.6, abs=1e-14)
    assert est.stderr <= 1e-14


def test_refuses_small_samples():
    term = GridFunction(np.zeros(16), 1 / 16)
    with pytest.raises(ValueError, match="refusing"):
        mc_value(PR, term, 0.0, 0.0, PolicyClass("zero"), 99, seed=0)


def test_policy_validation():
    with pytest.raises(ConfigurationError):
        PolicyClass("value")
    with pytest.raises(ConfigurationError):
        PolicyClass("constant", constants=[(0.0, 1.0, 1.5)])
    with pytest.raises(ConfigurationError):
        PolicyClass("greedy")


def test_feedback_flat_field():
    v = solve_terminal(EquationSpec("lower", PR), GridFunction(np.full(16, 0.1), 1 / 16), SolverConfig(nt=4))
    fb = feedback_from_value(v, PR)
    assert np.all(fb.zeta_field == 0.0)
    with pytest.raises(ConfigurationError):
        fb.zeta(np.array([0.0]), 1.5)


def test_feedback_legendre_identity(solved):
    _, v = solved["mix"]
    fb = feedback_from_value(v, PR)
    g = central_gradient(v.values, v.dx)
    lhs = fb.zeta_field * g + PR.c_plus * np.abs(fb.zeta_field) ** PR.p
    assert np.max(np.abs(lhs + PR.delta * np.abs(g) ** PR.q)) <= 1e-10 * max(1.0, np.max(np.abs(g) ** PR.q))


@pytest.mark.slow
@pytest.mark.parametrize("name", list(TERMINALS))
def test_representation_two_sided(solved, name):
    term, v = solved[name]
    osc = float(np.ptp(term.values))
    for x, t in PROBES:
        est = mc_value(PR, term, x, t, PolicyClass("value", value=v), 4000, seed=1)
        pde = float(spacetime_eval(v, np.array([x]), t)[0])
        assert abs(est.mean - pde) <= 3 * est.stderr + 0.05 * osc


@pytest.mark.parametrize("name", list(TERMINALS))
def test_restricted_policies_never_undercut(solved, name):
    term, v = solved[name]
    slack = 10 * (float(v.times[1] - v.times[0]) + v.dx)
    policies = [PolicyClass("zero"), PolicyClass("zero", jump=(1.0, 0.1)),
                PolicyClass("constant", constants=[(0.0, 1.0, 1.0), (0.5, 1.0, 0.5), (-0.5, 0.5, 0.25)])]
    for x, t in PROBES:
        pde = float(spacetime_eval(v, np.array([x]), t)[0])
        for pol in policies:
            est = mc_value(PR, term, x, t, pol, 1000, seed=5)
            assert est.mean >= pde - 3 * est.stderr - slack


def test_rollout_exact_solution_zero_drift():
    T = PR.horizon
    times = np.linspace(0.0, T, 11)
    u = GridFunction(np.tile((0.3 - PR.delta * (T - times))[:, None], (1, 16)), 1 / 16, times=times)
    rep = rollout_check(u, PR, 0.2, 0.1, np.linspace(0.1, 1.0, 10), PolicyClass("zero"), 200, seed=0)
    assert np.max(np.abs(rep.margins)) <= 1e-13
    assert rep.passed


def test_rollout_solution_margins(solved):
    _, v = solved["cos"]
    rep = rollout_check(v, PR, 0.3, 0.2, np.linspace(0.28, 1.0, 10), PolicyClass("value", value=v), 2000, seed=4)
    assert rep.passed, list(rep.rows())
    assert rep.energy <= rep.energy_bound


def test_rollout_strict_supersolution(solved):
    _, v = solved["bump"]
    T = PR.horizon
    u = GridFunction(v.values + 0.2 * (T - v.times)[:, None], v.dx, times=v.times)
    times = np.linspace(0.3, 1.0, 10)
    rep = rollout_check(u, PR, 0.6, 0.2, times, PolicyClass("value", value=v), 2000, seed=9)
    assert np.all(rep.margins - 3 * rep.stderrs > 0.0)


def test_rollout_rejects_bad_checkpoints(solved):
    _, v = solved["cos"]
    with pytest.raises(ConfigurationError):
        rollout_check(v, PR, 0.0, 0.5, [0.4], PolicyClass("zero"), 200, seed=0)


@pytest.mark.parametrize("lam", [1.0, 0.5])
def test_moment_check(lam):
    times = np.linspace(0.2, 1.0, 5)
    batch = simulate_batch(PR, 0.0, 0.2, times, lambda y, t: -3.0 * y, lambda y, t: (np.full(y.shape, lam),
                           np.full(y.shape, 0.3)), 20_000, seed=2, dx=1 / 64, speed_fn=lambda t: 3.0)
    rep = moment_check(batch, PR, [1.0, 2.0], t0=0.2)
    assert rep.passed
    assert rep.moments[:, 0].tolist() == [0.0, 0.0]
    # r = 2 is the Itô equality: E|M|^2 = delta lam^2 (t - t0)
    target = PR.delta * lam**2 * (times - 0.2)
    assert np.all(np.abs(rep.moments[1] - target) <= 3 * rep.stderrs[1] + 1e-15)
    # r = 1 holds with a strict Jensen margin once t > t0
    assert np.all(rep.bounds[0, 1:] - rep.moments[0, 1:] > 3 * rep.stderrs[0, 1:])
    with pytest.raises(ValueError):
        moment_check(batch, PR, [2.5], t0=0.2)
