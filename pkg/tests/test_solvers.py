import json
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _cases import CASES

from hjblimits.errors import ConfigurationError
from hjblimits.fields import Grid
from hjblimits.hamiltonians import ControlMesh
from hjblimits.oracles import riccati_value
from hjblimits.problem import ControlProblem, ControlSetDescriptor, GrowthData, TargetSet, builtin
from hjblimits.solvers import (
    SemiLagrangian,
    SolverConfig,
    limit_discounted,
    limit_finite_horizon,
    solve_discounted,
    solve_ergodic,
    solve_finite_horizon,
    solve_kruzkov,
)
from hjblimits.trajectories import brute_force_value


def _const_cost(c, bound=1.0, periods=None):
    def l(x, a):
        return np.full(np.broadcast_shapes(np.shape(x)[:-1], np.shape(a)[:-1]), float(c))

    return ControlProblem(1, lambda x, a: np.broadcast_to(a, np.broadcast_shapes(np.shape(x), np.shape(a))),
                          l, ControlSetDescriptor.box([[-bound, bound]]), GrowthData(), periods=periods)


def _toy():
    return ControlProblem(1, lambda x, a: np.broadcast_to(a, np.broadcast_shapes(np.shape(x), np.shape(a))),
                          lambda x, a: np.asarray(x)[..., 0] ** 2 + 0.5 * np.asarray(a)[..., 0] ** 2,
                          ControlSetDescriptor.finite([-1.0, 0.0, 1.0]), GrowthData())


LQR_GRID = Grid((-2.0,), (2.0,), (81,))


# --- configuration and reports ------------------------------------------------


def test_config_validation():
    for bad in ({"dt": 0}, {"tol": -1}, {"max_iter": 0}, {"infinity_threshold": 0}, {"mode": "t"}):
        with pytest.raises(ConfigurationError):
            SolverConfig(**bad)
    d = SolverConfig().to_dict()
    assert d["mesh_size"] == 65 and d["mesh"] is None


def test_report_json_schema():
    _, rep = solve_finite_horizon(_const_cost(1.0), LQR_GRID, SolverConfig(dt=0.05), 0.5)
    doc = json.loads(rep.to_json(timings=False))
    assert doc["verdict"] == "converged"
    assert set(doc["records"][0]) == {"param", "sup_change", "residual", "seconds"}
    assert all(r["seconds"] is None for r in doc["records"])
    params = [r["param"] for r in doc["records"]]
    assert params == sorted(params)


def test_cfl_and_boundary_warnings():
    op = SemiLagrangian(_const_cost(1.0, bound=5.0), LQR_GRID, SolverConfig(dt=0.1))
    assert op.cfl > 1
    text = " ".join(op.warnings())
    assert "CFL" in text and "left the grid" in text


# --- finite horizon ---------------------------------------------------------


def test_unit_cost_gives_elapsed_time():
    snaps, rep = solve_finite_horizon(_const_cost(1.0), LQR_GRID, SolverConfig(dt=0.05), 2.0,
                                      snapshot_times=[0.5, 1.0, 2.0])
    for s in snaps:
        np.testing.assert_allclose(s.values, s.meta["t"], rtol=1e-12)
    assert rep.verdict == "converged"


def test_toy_matches_brute_force_exactly():
    prob = _toy()
    grid = Grid((-1.0,), (1.0,), (21,))
    dt = grid.spacing[0]
    mesh = ControlMesh.finite([-1.0, 0.0, 1.0])
    snaps, _ = solve_finite_horizon(prob, grid, SolverConfig(dt=dt, mesh=mesh), 3 * dt)
    nodes = grid.nodes()
    for i in range(3, 18):
        ref = brute_force_value(prob, nodes[i], mesh, 3, dt)
        assert abs(snaps[-1].values[i] - ref) <= 1e-12


def test_horizon_monotone():
    snaps, _ = solve_finite_horizon(builtin("lqr-1d"), LQR_GRID, SolverConfig(dt=0.05), 4.0,
                                    snapshot_times=[0.5, 1.0, 2.0, 4.0])
    for a, b in zip(snaps, snaps[1:]):
        assert np.all(b.values >= a.values - 1e-9)


def test_example_4_1_origin_small():
    grid = Grid((-1.0, -1.0), (1.0, 1.0), (41, 41))
    snaps, _ = solve_finite_horizon(builtin("example-4-1"), grid, SolverConfig(dt=0.05), 2.0)
    from hjblimits.fields import interpolate
    assert interpolate(snaps[-1], [0.0, 0.0]) <= 1e-2


def test_budget_exhausted_when_max_iter_small():
    _, rep = solve_finite_horizon(_const_cost(1.0), LQR_GRID, SolverConfig(dt=0.05, max_iter=3), 1.0)
    assert rep.verdict == "budget-exhausted"


def test_zero_cost_limit_is_zero():
    prob = _const_cost(0.0)
    sigma, rep = limit_finite_horizon(prob, LQR_GRID, SolverConfig(dt=0.05), schedule=(1, 2, 4))
    assert rep.verdict == "converged" and np.all(sigma.values == 0)
    lim, rep2 = limit_discounted(prob, LQR_GRID, SolverConfig(dt=0.05), schedule=(0.5, 0.25, 0.125))
    assert rep2.verdict == "converged" and np.all(lim.values == 0)


def test_lqr_limit_close_to_riccati_and_modes_agree():
    cfg = SolverConfig(dt=0.05)
    sig, rep = limit_finite_horizon(builtin("lqr-1d"), LQR_GRID, cfg, schedule=(1, 2, 4, 8, 16))
    x = LQR_GRID.nodes()[:, 0]
    inner = np.abs(x) <= 1.0
    err = np.abs(sig.values - riccati_value(1, 1, 0, x)) / (1 + x**2)
    assert err[inner].max() < 0.05
    sig_s, _ = limit_finite_horizon(builtin("lqr-1d"), LQR_GRID, cfg, schedule=(1, 2, 4, 8, 16), mode="s")
    assert np.abs(sig_s.values - sig.values)[inner].max() < 0.02
    assert sig.provisional is not None


def test_growing_nodes_marked_infinite():
    # x' = 0, l = 1 + x^2: values grow linearly forever
    prob = ControlProblem(1, lambda x, a: 0.0 * np.broadcast_to(x, np.broadcast_shapes(np.shape(x), np.shape(a))),
                          lambda x, a: 1.0 + np.asarray(x)[..., 0] ** 2 + 0.0 * np.asarray(a)[..., 0],
                          ControlSetDescriptor.finite([0.0]), GrowthData())
    cfg = SolverConfig(dt=0.5, infinity_threshold=10.0, growth_slope=0.5)
    sig, rep = limit_finite_horizon(prob, Grid((-1.0,), (1.0,), (5,)), cfg, schedule=(4, 8, 16, 32, 64))
    assert np.all(sig.infinite)
    assert rep.meta["infinite_nodes"] == 5


# --- discounted -------------------------------------------------------------


@pytest.mark.parametrize("delta", [0.25, 1.0, 4.0])
def test_constant_cost_discounted(delta):
    dt = 0.01
    fld, rep = solve_discounted(_const_cost(2.0), LQR_GRID, SolverConfig(dt=dt, tol=1e-12), delta)
    exact_scheme = dt * 2.0 / (1 - np.exp(-delta * dt))
    np.testing.assert_allclose(fld.values, exact_scheme, rtol=1e-9)
    np.testing.assert_allclose(fld.values, 2.0 / delta, rtol=dt * delta)
    assert rep.verdict == "converged"


def test_discounted_monotone_in_delta_and_below_limit():
    cfg = SolverConfig(dt=0.05, tol=1e-9)
    prob = builtin("lqr-1d")
    vals = [solve_discounted(prob, LQR_GRID, cfg, d)[0].values for d in (4.0, 1.0, 0.25)]
    for big, small in zip(vals, vals[1:]):
        assert np.all(big <= small + 1e-6)
    sig, _ = limit_finite_horizon(prob, LQR_GRID, cfg, schedule=(1, 2, 4, 8, 16))
    assert np.all(vals[-1] <= sig.values + 2e-3)
    large = solve_discounted(prob, LQR_GRID, cfg, 200.0)[0].values
    # one step of running cost, dt * l(x, 0) <= 0.0125, is the floor of the scheme
    assert np.abs(large[np.abs(LQR_GRID.nodes()[:, 0]) <= 0.5]).max() <= 0.0126


def test_discounted_lqr_matches_riccati():
    grid = Grid((-2.0,), (2.0,), (161,))
    fld, _ = solve_discounted(builtin("lqr-1d"), grid, SolverConfig(dt=0.025, tol=1e-9), 1.0)
    x = grid.nodes()[:, 0]
    inner = np.abs(x) <= 1
    ref = riccati_value(1, 1, 1.0, x)
    assert np.abs(fld.values - ref)[inner].max() / ref[inner].max() < 0.05


def test_discounted_budget_and_divergence():
    _, rep = solve_discounted(builtin("lqr-1d"), LQR_GRID, SolverConfig(dt=0.05, max_iter=2), 0.5)
    assert rep.verdict == "budget-exhausted"
    fake = SimpleNamespace(warnings=lambda: [], dt=0.1, mesh=SimpleNamespace(provenance="fake", __len__=None),
                           boundary_hits=0, cfl=0.0, tw=np.ones(1),
                           step_discounted=lambda u, d: 2.0 * u + 1.0)
    fake.mesh = ControlMesh.finite([0.0])
    _, rep = solve_discounted(None, LQR_GRID, SolverConfig(), 0.5, operator=fake)
    assert rep.verdict == "diverged"
    assert rep.meta["iterations"] == 12
    with pytest.raises(ConfigurationError):
        solve_discounted(builtin("lqr-1d"), LQR_GRID, SolverConfig(), 0.0)


# --- Kruzkov ----------------------------------------------------------------


def test_kruzkov_clamp_range_and_recovery():
    seen = []

    def cb(k, U):
        seen.append((U.min(), U.max(), U.ravel()[40]))

    U, V, dom, rep = solve_kruzkov(builtin("lqr-1d"), LQR_GRID, SolverConfig(dt=0.05, tol=1e-10), callback=cb)
    assert rep.verdict == "converged"
    assert all(lo >= 0 and hi <= 1 and at_target == 0.0 for lo, hi, at_target in seen)
    assert U.check_invariants()
    x = LQR_GRID.nodes()[:, 0]
    inner = np.abs(x) <= 1
    assert np.abs(V.values - x**2)[inner].max() < 0.05
    assert dom.all()


def test_kruzkov_unreachable_marks_infinite():
    # no motion and unit cost: everything off the target is unreachable
    prob = ControlProblem(1, lambda x, a: 0.0 * np.broadcast_to(x, np.broadcast_shapes(np.shape(x), np.shape(a))),
                          lambda x, a: 1.0 + 0.0 * np.asarray(x)[..., 0] * np.asarray(a)[..., 0],
                          ControlSetDescriptor.finite([0.0]), GrowthData())
    cfg = SolverConfig(dt=0.5, tol=1e-14, infinity_threshold=20.0)
    U, V, dom, _ = solve_kruzkov(prob, Grid((-1.0,), (1.0,), (5,)), cfg, target=TargetSet.point([0.0]))
    assert dom.tolist() == [False, False, True, False, False]
    assert np.all(V.infinite == ~dom)


def test_kruzkov_partial_reach():
    # f = a in [-1, 1], l = 1: V = distance to the target
    cfg = SolverConfig(dt=0.05, tol=1e-12)
    U, V, dom, _ = solve_kruzkov(_const_cost(1.0), LQR_GRID, cfg, target=TargetSet.point([0.0]))
    x = LQR_GRID.nodes()[:, 0]
    np.testing.assert_allclose(V.values, np.abs(x), atol=1e-9)
    assert np.all(U.values < 1)


def test_kruzkov_needs_target_nodes():
    with pytest.raises(ConfigurationError):
        solve_kruzkov(builtin("lqr-1d"), LQR_GRID, SolverConfig(), target=TargetSet.point([0.0125]))


# --- ergodic ----------------------------------------------------------------


def test_ergodic_constant_cost():
    prob = _const_cost(3.0, periods=(2 * np.pi,))
    res = solve_ergodic(prob, Grid.torus(2 * np.pi, 32), SolverConfig(dt=0.1, tol=1e-9), schedule=(0.5, 0.25, 0.125))
    lam, W0, rep = res
    assert lam == pytest.approx(3.0, rel=1e-4)
    np.testing.assert_allclose(W0.values, 0.0, atol=1e-9)
    assert rep.verdict == "converged"


def test_ergodic_needs_periodic_grid():
    prob = builtin("ergodic-torus-1d")
    with pytest.raises(ConfigurationError):
        solve_ergodic(prob, Grid((0.0,), (2 * np.pi,), (32,)), SolverConfig())
    with pytest.raises(ConfigurationError):
        solve_ergodic(prob, Grid.torus(np.pi, 32), SolverConfig())
    with pytest.raises(ConfigurationError):
        solve_ergodic(builtin("lqr-1d"), Grid.torus(2 * np.pi, 32), SolverConfig())


def test_ergodic_flatness_failure_is_diverged():
    prob = builtin("ergodic-torus-1d", bound=1.0)
    res = solve_ergodic(prob, Grid.torus(2 * np.pi, 32),
                        SolverConfig(dt=0.2, tol=1e-6, flatness_tol=1e-6), schedule=(0.5, 0.25))
    assert res.report.verdict == "diverged"


# --- invariants ---------------------------------------------------------------

_OPS = {}


def _op(name):
    if name not in _OPS:
        if name == "lqr-1d":
            _OPS[name] = SemiLagrangian(builtin("lqr-1d"), Grid((-2.0,), (2.0,), (41,)), SolverConfig(dt=0.05))
        elif name == "example-3-3":
            _OPS[name] = SemiLagrangian(builtin("example-3-3"), Grid((-1.0, -1.0), (1.0, 1.0), (11, 11)),
                                        SolverConfig(dt=0.1, mesh_size=33))
        elif name == "example-4-1":
            _OPS[name] = SemiLagrangian(builtin("example-4-1"), Grid((-1.0, -1.0), (1.0, 1.0), (11, 11)),
                                        SolverConfig(dt=0.1))
        else:
            _OPS[name] = SemiLagrangian(builtin("ergodic-torus-1d"), Grid.torus(2 * np.pi, 32), SolverConfig(dt=0.1))
    return _OPS[name]


op_names = st.sampled_from(["lqr-1d", "example-3-3", "example-4-1", "ergodic-torus-1d"])


@settings(max_examples=200)
@given(name=op_names, seed=st.integers(0, 2**31), delta=st.floats(1e-3, 5.0))
def test_scheme_order_preserving(name, seed, delta):
    CASES["order_preservation"] += 1
    op = _op(name)
    r = np.random.default_rng(seed)
    N = op.grid.size
    u = r.uniform(0, 10, N)
    v = u + r.uniform(0, 5, N) * (r.uniform(size=N) < 0.5)
    assert np.all(op.step(u) <= op.step(v) + 1e-12)
    assert np.all(op.step_discounted(u, delta) <= op.step_discounted(v, delta) + 1e-12)
    assert np.all(op.step_physical(u, tol=1e-10)[0] <= op.step_physical(v, tol=1e-10)[0] + 1e-8)
    U = r.uniform(0, 1, N)
    W = np.minimum(U + r.uniform(0, 0.5, N), 1.0)
    on_target = np.zeros(N, dtype=bool)
    on_target[N // 2] = True
    assert np.all(op.step_kruzkov(U, on_target) <= op.step_kruzkov(W, on_target) + 1e-12)


@settings(max_examples=200)
@given(name=op_names, seed=st.integers(0, 2**31))
def test_kruzkov_step_stays_in_unit_interval(name, seed):
    CASES["kruzkov_range"] += 1
    op = _op(name)
    r = np.random.default_rng(seed)
    N = op.grid.size
    U = r.uniform(0, 1, N)
    U[r.uniform(size=N) < 0.2] = 1.0
    U[r.uniform(size=N) < 0.2] = 0.0
    on_target = r.uniform(size=N) < 0.1
    out = op.step_kruzkov(U, on_target)
    assert np.all((out >= 0) & (out <= 1))
    assert np.all(out[on_target] == 0)


@settings(max_examples=200)
@given(name=op_names, seed=st.integers(0, 2**31), delta=st.floats(1e-2, 5.0))
def test_discounted_step_contracts(name, seed, delta):
    op = _op(name)
    if not np.all(op.tw > 0):
        op_bound = 1.0
    else:
        op_bound = np.exp(-delta * op.dt * op.tw.min())
    r = np.random.default_rng(seed)
    u = r.uniform(0, 10, op.grid.size)
    v = r.uniform(0, 10, op.grid.size)
    lhs = np.max(np.abs(op.step_discounted(u, delta) - op.step_discounted(v, delta)))
    assert lhs <= (op_bound + 1e-6) * np.max(np.abs(u - v))


def test_converged_limit_is_near_fixed_point():
    op = SemiLagrangian(builtin("lqr-1d"), LQR_GRID, SolverConfig(dt=0.05))
    sig, _ = limit_finite_horizon(builtin("lqr-1d"), LQR_GRID, SolverConfig(dt=0.05), schedule=(1, 2, 4, 8, 16, 32),
                                  mode="s", operator=op)
    inner = np.abs(LQR_GRID.nodes()[:, 0]) <= 1
    assert np.abs(op.step(sig.values.ravel()) - sig.values.ravel())[inner].max() <= 1e-3
