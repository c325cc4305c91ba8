import json

import numpy as np
import pytest

from vem.adjoint import control_gradient, gamma_backward
from vem.discrete import DiscreteAdjoint
from vem.errors import IndexOutOfRange
from vem.numerics import TimeGrid
from vem.oracles import CheckResult, djdtau_consistency, finite_difference_gradient, riccati_lqr
from vem.problems import EX1_A, EX1_B, EX1_F, EX1_Q, EX1_R, build_example1, build_example2, build_zero_cost, scale_problem
from vem.solver import COSTATE, EvolutionConfig, EvolutionTrace, evolve, initial_feasible, performance_index
from vem.trajectory import simulate, to_scaled


@pytest.fixture(scope="module")
def ex1():
    return build_example1()


@pytest.fixture(scope="module")
def lqr():
    return riccati_lqr(EX1_A, EX1_B, EX1_Q, EX1_R, EX1_F, TimeGrid(0.0, 3.0, 61), [1.0, 1.0])


# --- Riccati -----------------------------------------------------------------------------------


def test_riccati_terminal_and_symmetry(lqr):
    assert np.array_equal(lqr.S[-1], EX1_F)
    assert np.all(lqr.S == np.swapaxes(lqr.S, 1, 2))


def test_riccati_scalar_tanh():
    g = TimeGrid(0.0, 2.0, 201)
    sol = riccati_lqr([[0.0]], [[1.0]], [[1.0]], [[1.0]], [[0.0]], g, [1.0])
    assert np.max(np.abs(sol.S[:, 0, 0] - np.tanh(2.0 - g.nodes))) <= 1e-6


def test_riccati_cost_matches_simulated_cost(ex1, lqr):
    sim = simulate(ex1, lqr.u_star.values, lqr.grid)
    # node interpolation of u* versus the exact closed loop
    assert np.max(np.abs(sim.X - lqr.x_star.values)) <= 2e-2 * np.max(np.abs(lqr.x_star.values))
    assert performance_index(ex1, sim) == pytest.approx(lqr.J_star, rel=1e-2)


def test_riccati_cost_second_order_in_grid(ex1):
    errs = []
    for N in (31, 61):
        sol = riccati_lqr(EX1_A, EX1_B, EX1_Q, EX1_R, EX1_F, TimeGrid(0.0, 3.0, N), [1.0, 1.0])
        errs.append(abs(performance_index(ex1, simulate(ex1, sol.u_star.values, sol.grid)) - sol.J_star))
    assert 3.0 <= errs[0] / errs[1] <= 5.0


# --- finite differences --------------------------------------------------------------------------


def test_fd_zero_cost():
    z = build_zero_cost()
    traj = initial_feasible(z, u_guess=0.4, nodes=21)
    assert abs(finite_difference_gradient(z, traj, 10, 1e-3)[0]) <= 1e-10


def test_fd_mid_node_matches_adjoint(ex1):
    traj = initial_feasible(ex1, nodes=61)
    g = control_gradient(ex1, traj, gamma_backward(ex1, traj)).values
    fd = finite_difference_gradient(ex1, traj, 30, 1e-3)
    assert abs(fd[0] - g[30, 0]) <= 1e-2 * abs(g[30, 0])


def test_fd_on_quadratic_problem_is_exact_for_discrete_gradient(ex1):
    # J is quadratic in u on Example 1, so central differences carry no truncation error
    traj = initial_feasible(ex1, nodes=61)
    gd = DiscreteAdjoint(ex1, traj).gradient().values
    for i in (1, 17, 30, 59):
        fd = finite_difference_gradient(ex1, traj, i, 1e-1)
        assert fd[0] == pytest.approx(gd[i, 0], rel=1e-9)


def test_fd_second_order_in_bump_height():
    ocp = build_example2()
    sc = scale_problem(ocp)
    traj = to_scaled(initial_feasible(ocp, u_guess=30.0, tf_guess=25.0, nodes=51), ocp.scaling)
    exact = DiscreteAdjoint(sc, traj).gradient().values[25, 0]
    errs = [abs(finite_difference_gradient(sc, traj, 25, b)[0] - exact) for b in (0.4, 0.2, 0.1)]
    for a, b in zip(errs, errs[1:]):
        assert 3.5 <= a / b <= 4.5


@pytest.mark.parametrize("node", [0, 60, -1])
def test_fd_rejects_boundary_nodes(ex1, node):
    traj = initial_feasible(ex1, nodes=61)
    with pytest.raises(IndexOutOfRange):
        finite_difference_gradient(ex1, traj, node, 1e-3)


# --- descent-rate consistency ------------------------------------------------------------------------


def test_djdtau_at_equilibrium():
    z = build_zero_cost()
    cfg = EvolutionConfig(nodes=11)
    traj = initial_feasible(z, u_guess=0.5, nodes=11)
    tr = EvolutionTrace(tau=[0.0, 1.0, 2.0], J=[0.0] * 3, snapshots=[traj] * 3)
    rep = djdtau_consistency(z, tr, cfg)
    assert np.all(np.abs(rep.analytic) <= 1e-8)
    assert np.all(np.abs(rep.numeric[1:-1]) <= 1e-8)
    assert rep.passed


def test_djdtau_start_rate_costate_route(ex1):
    cfg = EvolutionConfig(gain=2e-2, nodes=61, tau_end=1.0, record_every=0.5, gradient=COSTATE)
    traj = initial_feasible(ex1, nodes=61)
    tr = evolve(ex1, traj, cfg)
    rep = djdtau_consistency(ex1, tr, cfg)
    g0 = control_gradient(ex1, traj, gamma_backward(ex1, traj)).values[:, 0]
    h = traj.grid.step
    expected = -2e-2 * h * (np.sum(g0**2) - 0.5 * (g0[0] ** 2 + g0[-1] ** 2))
    assert expected < 0
    assert rep.analytic[0] == pytest.approx(expected, rel=1e-12)


def test_djdtau_short_trace_matches(ex1):
    cfg = EvolutionConfig(gain=2e-2, nodes=31, tau_end=10.0, record_every=0.1)
    tr = evolve(ex1, initial_feasible(ex1, nodes=31), cfg)
    rep = djdtau_consistency(ex1, tr, cfg)
    assert rep.passed, rep.to_json()
    names = [c["name"] for c in json.loads(rep.to_json())]
    assert names == ["djdtau_nonpositive", "djdtau_slope_match"]


def test_djdtau_needs_three_samples(ex1):
    cfg = EvolutionConfig(gain=2e-2, nodes=31, tau_end=0.5, record_every=0.5)
    tr = evolve(ex1, initial_feasible(ex1, nodes=31), cfg)
    with pytest.raises(ValueError):
        djdtau_consistency(ex1, tr, cfg)


def test_check_result_json_types():
    d = CheckResult("x", np.float64(1.5), np.float32(2.0), np.bool_(True)).to_dict()
    assert json.loads(json.dumps(d)) == {"name": "x", "value": 1.5, "bound": 2.0, "passed": True, "detail": ""}
