import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vem.errors import IndexOutOfRange, NonFiniteState, OutOfDomain, StepSizeUnderflow
from vem.numerics import (
    GridFunction,
    TimeGrid,
    integrate_adaptive,
    integrate_fixed_rk4,
    linear_rk4_propagators,
    sample_linear,
    sweep_linear,
    trapezoid_integral,
    trapezoid_weights,
)


def exp_rhs(t, y):
    return y


# --- grid and grid functions -------------------------------------------------


def test_time_grid_nodes():
    g = TimeGrid(1.0, 3.0, 5)
    assert g.sigma[0] == 0.0 and g.sigma[-1] == 1.0
    np.testing.assert_allclose(g.nodes, [1.0, 1.5, 2.0, 2.5, 3.0])
    assert np.all(np.diff(g.nodes) > 0)


@pytest.mark.parametrize("args", [(0.0, 0.0, 5), (1.0, 0.0, 5), (0.0, 1.0, 1)])
def test_time_grid_rejects(args):
    with pytest.raises(ValueError):
        TimeGrid(*args)


def test_grid_function_rejects_nonfinite_and_bad_shape():
    g = TimeGrid(0.0, 1.0, 3)
    with pytest.raises(NonFiniteState):
        GridFunction(g, [[0.0], [np.nan], [1.0]])
    with pytest.raises(ValueError):
        GridFunction(g, np.zeros((4, 1)))


# --- fixed-step RK4 -------------------------------------------------------------


def test_rk4_single_step_value():
    sol = integrate_fixed_rk4(exp_rhs, [1.0], TimeGrid(0.0, 0.1, 2))
    # 1 + h + h^2/2 + h^3/6 + h^4/24 at h = 0.1
    assert sol.values[-1, 0] == pytest.approx(1.1051708333333333, abs=1e-15)


def test_rk4_constant_solution():
    sol = integrate_fixed_rk4(lambda t, y: np.zeros_like(y), [2.5, -1.0], TimeGrid(0.0, 4.0, 9), substeps=3)
    assert np.all(sol.values == np.array([2.5, -1.0]))


def test_rk4_backward_decay():
    g = TimeGrid(0.0, 1.0, 101)
    sol = integrate_fixed_rk4(lambda t, y: -y, [math.exp(-1.0)], g, substeps=4, backward=True)
    assert sol.values[-1, 0] == pytest.approx(math.exp(-1.0), abs=0)
    assert abs(sol.values[0, 0] - 1.0) <= 1e-8


def test_rk4_fourth_order():
    errs = []
    for n in (11, 21):
        y = integrate_fixed_rk4(exp_rhs, [1.0], TimeGrid(0.0, 1.0, n)).values[-1, 0]
        errs.append(abs(y - math.e))
    assert 14.0 <= errs[0] / errs[1] <= 18.0


def test_rk4_reports_nonfinite():
    with pytest.raises(NonFiniteState) as info:
        integrate_fixed_rk4(lambda t, y: y**2, [1.0], TimeGrid(0.0, 5.0, 6))
    assert info.value.component == 0


def test_rk4_rejects_zero_substeps():
    with pytest.raises(ValueError):
        integrate_fixed_rk4(exp_rhs, [1.0], TimeGrid(0.0, 1.0, 3), substeps=0)


# --- linear step maps ---------------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=1, max_value=40), st.integers(min_value=1, max_value=4), st.integers(0, 2**31 - 1))
def test_sweep_linear_matches_sequential(P, n, seed):
    rng = np.random.default_rng(seed)
    M = np.eye(n) + 0.3 * rng.normal(size=(P, n, n))
    d = rng.normal(size=(P, n))
    y = rng.normal(size=n)
    ref = [y]
    for k in range(P):
        y = M[k] @ y + d[k]
        ref.append(y)
    ref = np.array(ref)
    out = sweep_linear(M, d, ref[0])
    np.testing.assert_allclose(out, ref, rtol=1e-10, atol=1e-10 * np.abs(ref).max())


def test_linear_propagators_equal_rk4_on_lti_system():
    A = np.array([[0.0, 1.0], [-2.0, -0.3]])
    c = np.array([0.5, -1.0])
    g = TimeGrid(0.0, 2.0, 21)
    ref = integrate_fixed_rk4(lambda t, y: A @ y + c, [1.0, 0.0], g).values
    S = g.n_nodes - 1
    M, D = linear_rk4_propagators(np.broadcast_to(A, (S, 3, 2, 2)), np.broadcast_to(c, (S, 3, 2)), g.step)
    np.testing.assert_allclose(sweep_linear(M, D, [1.0, 0.0]), ref, atol=1e-13)


# --- adaptive Dormand-Prince ----------------------------------------------------------


def test_adaptive_exponential():
    res = integrate_adaptive(exp_rhs, [1.0], (0.0, 1.0), rtol=1e-6, atol=1e-9)
    assert abs(res.y[0] - math.e) <= 1e-5
    assert res.tau == 1.0


def test_adaptive_global_error_within_tolerance_model():
    rtol, atol = 1e-3, 1e-6
    res = integrate_adaptive(exp_rhs, [1.0], (0.0, 1.0), rtol=rtol, atol=atol)
    assert abs(res.y[0] - math.e) <= 10 * (atol + rtol * math.e)


def test_adaptive_zero_rhs_is_exact():
    res = integrate_adaptive(lambda t, y: np.zeros_like(y), [3.0, 4.0], (0.0, 10.0), rtol=1e-3, atol=1e-6)
    assert np.all(res.y == np.array([3.0, 4.0]))
    assert len(res.steps) <= 2


def test_adaptive_stiffish_decay():
    rtol, atol = 1e-6, 1e-9
    res = integrate_adaptive(lambda t, y: -50.0 * y, [1.0], (0.0, 1.0), rtol=rtol, atol=atol)
    assert len(res.steps) > 50
    assert abs(res.y[0] - math.exp(-50.0)) <= atol + rtol


def test_adaptive_observer_sees_every_step_and_can_replace_state():
    seen = []

    def observer(t, y):
        seen.append(t)
        return np.abs(y)  # projection hook

    res = integrate_adaptive(lambda t, y: -y, [1.0], (0.0, 2.0), rtol=1e-6, atol=1e-9, observer=observer)
    assert len(seen) == len(res.steps)
    assert np.all(np.diff(seen) > 0)


def test_adaptive_underflow():
    with pytest.raises(StepSizeUnderflow):
        integrate_adaptive(lambda t, y: 1.0 / (1.0 - t) ** 2 * np.ones_like(y), [0.0], (0.0, 2.0), rtol=1e-8, atol=1e-10)


def test_adaptive_rejects_bad_arguments():
    with pytest.raises(ValueError):
        integrate_adaptive(exp_rhs, [1.0], (1.0, 0.0))
    with pytest.raises(ValueError):
        integrate_adaptive(exp_rhs, [1.0], (0.0, 1.0), rtol=0.0)


# --- quadrature -------------------------------------------------------------------------


def _gf(fun, n, t0=0.0, tf=1.0):
    g = TimeGrid(t0, tf, n)
    return GridFunction(g, fun(g.nodes)[:, None])


def test_trapezoid_linear_exact():
    assert trapezoid_integral(_gf(lambda t: t, 3))[0] == pytest.approx(0.5, abs=1e-15)


def test_trapezoid_quadratic_value():
    assert trapezoid_integral(_gf(lambda t: t**2, 3))[0] == pytest.approx(0.375, abs=1e-15)


def test_trapezoid_zero_width():
    gf = _gf(np.exp, 7)
    for i in range(7):
        assert np.all(trapezoid_integral(gf, i, i) == 0.0)


def test_trapezoid_sub_range_additivity():
    gf = _gf(np.cos, 11)
    whole = trapezoid_integral(gf)
    parts = trapezoid_integral(gf, 0, 4) + trapezoid_integral(gf, 4, 10)
    np.testing.assert_allclose(whole, parts, rtol=1e-14)


@pytest.mark.parametrize("rng_", [(-1, 2), (3, 2), (0, 11)])
def test_trapezoid_index_errors(rng_):
    with pytest.raises(IndexOutOfRange):
        trapezoid_integral(_gf(np.sin, 11), *rng_)


def test_trapezoid_second_order():
    exact = 1.0 - math.cos(1.0)
    e1 = abs(trapezoid_integral(_gf(np.sin, 11))[0] - exact)
    e2 = abs(trapezoid_integral(_gf(np.sin, 21))[0] - exact)
    assert 3.6 <= e1 / e2 <= 4.4


def test_trapezoid_weights_sum_to_span():
    g = TimeGrid(0.5, 4.0, 8)
    assert trapezoid_weights(g).sum() == pytest.approx(3.5, rel=1e-15)


# --- interpolation -----------------------------------------------------------------------------


def test_sample_linear_midpoint():
    gf = GridFunction(TimeGrid(0.0, 1.0, 2), [[0.0], [2.0]])
    assert sample_linear(gf, 0.5)[0] == 1.0


def test_sample_linear_exact_at_nodes():
    g = TimeGrid(0.0, 3.0, 31)
    v = np.random.default_rng(1).normal(size=(31, 2))
    gf = GridFunction(g, v)
    for k, t in enumerate(g.nodes):
        assert np.all(sample_linear(gf, t) == v[k])


@settings(max_examples=50, deadline=None)
@given(
    st.floats(-5, 5),
    st.floats(-5, 5),
    st.integers(2, 40),
    st.lists(st.floats(0.0, 1.0), min_size=1, max_size=10),
)
def test_sample_linear_reproduces_linear_data(a, b, n, fracs):
    g = TimeGrid(-1.0, 2.0, n)
    gf = GridFunction(g, (a + b * g.nodes)[:, None])
    ts = -1.0 + 3.0 * np.asarray(fracs)
    np.testing.assert_allclose(sample_linear(gf, ts)[:, 0], a + b * ts, atol=1e-12)


def test_sample_linear_tolerance_band():
    gf = GridFunction(TimeGrid(0.0, 1.0, 3), [[0.0], [1.0], [2.0]])
    assert sample_linear(gf, 1.0 + 5e-10)[0] == 2.0
    with pytest.raises(OutOfDomain):
        sample_linear(gf, 1.0 + 1e-6)
    with pytest.raises(OutOfDomain):
        sample_linear(gf, -1e-6)
