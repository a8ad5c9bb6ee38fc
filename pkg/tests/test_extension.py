import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _cases import CASES

from hjblimits.errors import DomainError, NonInvertibleTimeError
from hjblimits.extension import (
    ExtendedControlPoint,
    TimedControl,
    extend,
    extended_to_ordinary,
    generalized_trajectory,
    ordinary_to_extended,
)
from hjblimits.hamiltonians import ControlMesh
from hjblimits.problem import builtin
from hjblimits.trajectories import integrate

CONE_PROBLEMS = ("example-3-3", "lqr-1d", "lqr-nd", "ergodic-torus-1d")


def test_example_3_3_extended_data():
    ext = extend(builtin("example-3-3"))
    x = np.array([0.5, -2.0])
    for w0, w in [(0.25, 0.75), (1.0, 0.0), (0.0, -1.0), (0.6, -0.4)]:
        np.testing.assert_allclose(ext.f_bar(x, w0, [w]), [w, 2.5 * w0], atol=1e-15)
        assert ext.l_bar(x, w0, [w]) == pytest.approx(4.25 * w0 + abs(w))


@pytest.mark.parametrize("name", CONE_PROBLEMS)
def test_north_pole_reduces_to_original(name, rng):
    prob = builtin(name)
    ext = extend(prob)
    x = rng.uniform(-2, 2, size=(20, prob.n))
    zero = np.zeros(prob.m)
    np.testing.assert_allclose(ext.f_bar(x, 1.0, zero), np.broadcast_to(prob.f(x, zero), (20, prob.n)))
    np.testing.assert_allclose(ext.l_bar(x, 1.0, zero), prob.l(x, zero))


@pytest.mark.parametrize("name", CONE_PROBLEMS)
def test_consistency_on_positive_w0(name, rng):
    prob = builtin(name)
    ext = extend(prob)
    q = prob.growth.q
    x = rng.uniform(-2, 2, size=(50, prob.n))
    w0 = rng.uniform(0.05, 1.0, size=50)
    w = rng.normal(size=(50, prob.m))
    np.testing.assert_allclose(ext.l_bar(x, w0, w), w0**q * prob.l(x, w / w0[:, None]), rtol=1e-12)
    f_ref = w0[:, None] ** q * np.broadcast_to(prob.f(x, w / w0[:, None]), (50, prob.n))
    np.testing.assert_allclose(ext.f_bar(x, w0, w), f_ref, rtol=1e-12, atol=1e-14)


@settings(max_examples=200)
@given(
    name=st.sampled_from(CONE_PROBLEMS),
    x=st.lists(st.floats(-3, 3), min_size=2, max_size=2),
    theta=st.floats(0, np.pi / 2),
    sign=st.sampled_from([-1.0, 1.0]),
    rho=st.floats(1e-3, 1e3),
)
def test_extended_data_homogeneous(name, x, theta, sign, rho):
    CASES["homogeneity"] += 1
    prob = builtin(name)
    ext = extend(prob)
    q = prob.growth.q
    xx = np.array(x[: prob.n])
    w0 = np.cos(theta) ** (2.0 / q)
    w = sign * np.sin(theta) ** (2.0 / q) * np.ones(prob.m) / np.sqrt(prob.m) ** (1.0 if q == 1 else 1.0)
    for phi in (ext.f_bar, ext.l_bar):
        base = np.asarray(phi(xx, w0, w))
        scaled = np.asarray(phi(xx, rho * w0, rho * w))
        assert np.all(np.abs(scaled - rho**q * base) <= 1e-8 * (1 + np.abs(rho**q * base)))


@pytest.mark.parametrize("name", CONE_PROBLEMS)
def test_extended_coercivity_on_mesh(name, rng):
    prob = builtin(name)
    ext = extend(prob)
    g = prob.growth
    mesh = ControlMesh.for_problem(prob, 64)
    x = rng.uniform(-2, 2, size=(30, prob.n))
    L = ext.l_bar(x[:, None, :], mesh.w0[None], mesh.w[None])
    bound = g.C2 * np.linalg.norm(mesh.w, axis=1) ** g.q - g.C1 * mesh.w0**g.q
    assert np.all(L >= bound[None] - 1e-12)


def test_extended_control_point_membership():
    assert ExtendedControlPoint(0.5, np.array([0.5])).check(1)
    assert ExtendedControlPoint(0.6, np.array([0.8])).check(2)
    with pytest.raises(DomainError):
        ExtendedControlPoint(0.5, np.array([0.6])).check(1)
    with pytest.raises(DomainError):
        ExtendedControlPoint(0.0, np.array([-1.0])).check(1, builtin("lqr-1d").control_set.__class__.conic(1, "nonnegative"))


# --- time reparametrisation -------------------------------------------------


def test_rest_control_maps_to_pole():
    prob = builtin("example-3-3")
    ext, ts = ordinary_to_extended(TimedControl([0.0, 2.0], [[0.0]]), prob)
    np.testing.assert_allclose(ext.values, [[1.0, 0.0]])
    np.testing.assert_allclose(ts, [[0.0, 0.0], [2.0, 2.0]])


@pytest.mark.parametrize("c", [-3.0, -0.5, 0.7, 4.0])
def test_constant_control_q1(c):
    prob = builtin("example-3-3")
    ext, ts = ordinary_to_extended(TimedControl([0.0, 1.5], [[c]]), prob)
    assert ts[-1, 1] == pytest.approx((1 + abs(c)) * 1.5)
    np.testing.assert_allclose(ext.values[0], [1 / (1 + abs(c)), c / (1 + abs(c))])


def test_inverse_examples():
    prob = builtin("example-3-3")
    alpha, st_ = extended_to_ordinary(TimedControl([0.0, 3.0], [[1.0, 0.0]]), prob)
    np.testing.assert_allclose(alpha.values, [[0.0]])
    np.testing.assert_allclose(st_, [[0.0, 0.0], [3.0, 3.0]])
    alpha, st_ = extended_to_ordinary(TimedControl([0.0, 2.0], [[0.5, 0.5]]), prob)
    np.testing.assert_allclose(alpha.values, [[1.0]])
    assert st_[-1, 1] == pytest.approx(1.0)


def test_round_trip_controls(rng):
    for name in CONE_PROBLEMS:
        prob = builtin(name)
        k = 7
        bps = np.concatenate([[0.0], np.cumsum(rng.uniform(0.1, 0.5, k))])
        vals = rng.normal(scale=3.0, size=(k, prob.m))
        alpha = TimedControl(bps, vals)
        ext, _ = ordinary_to_extended(alpha, prob)
        q = prob.growth.q
        assert np.all(np.abs(ext.values[:, 0] ** q + np.linalg.norm(ext.values[:, 1:], axis=1) ** q - 1) < 1e-12)
        back, _ = extended_to_ordinary(ext, prob)
        np.testing.assert_allclose(back.breakpoints, bps, atol=1e-12)
        np.testing.assert_allclose(back.values, vals, rtol=1e-12, atol=1e-12)


def test_non_invertible_time():
    prob = builtin("example-3-3")
    with pytest.raises(NonInvertibleTimeError):
        extended_to_ordinary(TimedControl([0.0, 1.0, 2.0], [[0.0, -1.0], [1.0, 0.0]]), prob)


def test_timed_control_validation_and_csv():
    with pytest.raises(DomainError):
        TimedControl([0.0, 1.0, 1.0], [[0.0], [1.0]])
    with pytest.raises(DomainError):
        TimedControl([0.0, 1.0], [[0.0], [1.0]])
    tc = TimedControl([0.0, 0.5, 2.0], [[1.0, -2.0], [0.25, 3.0]])
    back = TimedControl.from_csv(tc.to_csv())
    np.testing.assert_array_equal(back.breakpoints, tc.breakpoints)
    np.testing.assert_array_equal(back.values, tc.values)


# --- generalized trajectories -----------------------------------------------


def test_example_3_3_jump_reaches_origin_at_unit_cost():
    prob = builtin("example-3-3")
    wctrl = TimedControl([0.0, 1.0, 2.0], [[0.0, -1.0], [1.0, 0.0]])
    gt = generalized_trajectory([1.0, 0.0], wctrl, prob, ds=1e-3)
    i1 = np.argmin(np.abs(gt.s - 1.0))
    np.testing.assert_allclose(gt.xi[i1], [0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(gt.xi[-1], [0.0, 0.0], atol=1e-12)
    assert gt.cost[-1] == pytest.approx(1.0, abs=1e-12)
    assert len(gt.jumps) == 1 and gt.jumps[0].t == 0.0
    np.testing.assert_allclose(gt.jumps[0].before, [1.0, 0.0])
    # right inverse: at t = 0 the generalized state is already after the jump
    np.testing.assert_allclose(gt.y_gen(0.0), [0.0, 0.0], atol=1e-12)


def test_no_jumps_when_w0_is_one():
    prob = builtin("example-3-3")
    gt = generalized_trajectory([0.3, 0.2], TimedControl([0.0, 1.0], [[1.0, 0.0]]), prob, ds=1e-3)
    run = integrate(prob, [0.3, 0.2], TimedControl([0.0, 1.0], [[0.0]]), 1.0, dt=1e-3)
    assert gt.jumps == []
    np.testing.assert_allclose(gt.xi[-1], run.states[-1], atol=1e-10)
    np.testing.assert_allclose(gt.t_of_s, gt.s, atol=1e-12)


def test_superlinear_cost_gives_continuous_path():
    prob = builtin("lqr-1d")
    wctrl = TimedControl([0.0, 1.0, 2.0], [[0.0, 1.0], [1.0, 0.0]])
    gt = generalized_trajectory([0.5], wctrl, prob, ds=1e-3)
    assert gt.jumps == []
    np.testing.assert_allclose(gt.xi[:, 0], 0.5, atol=1e-14)


def test_payoff_and_path_equal_under_reparametrisation(rng):
    prob = builtin("example-3-3")
    k = 5
    bps = np.concatenate([[0.0], np.cumsum(rng.uniform(0.1, 0.3, k))])
    alpha = TimedControl(bps, rng.uniform(-2, 2, size=(k, 1)))
    x = np.array([0.4, -0.3])
    ext, pairs = ordinary_to_extended(alpha, prob)
    gt = generalized_trajectory(x, ext, prob, ds=1e-3)
    run = integrate(prob, x, alpha, bps[-1], dt=1e-3)
    for t, s in pairs:
        i = np.argmin(np.abs(gt.s - s))
        j = np.argmin(np.abs(run.times - t))
        assert abs(gt.s[i] - s) < 1e-12 and abs(run.times[j] - t) < 1e-12
        np.testing.assert_allclose(gt.xi[i], run.states[j], atol=1e-6)
        assert gt.cost[i] == pytest.approx(run.payoff[j], abs=1e-6)
        assert gt.t_of_s[i] == pytest.approx(t, abs=1e-12)
