import numpy as np
import pytest
from scipy.linalg import solve_continuous_are

from hjblimits.errors import DomainError
from hjblimits.oracles import example_truth, riccati_matrix, riccati_residual, riccati_value
from hjblimits.problem import BUILTIN_NAMES

# root of p^2 + 3p - 1 = 0, frozen from np.roots([1, 3, -1])
P_DELTA_3 = 0.30277563773199456


def test_frozen_root_matches_independent_polynomial_solve():
    roots = np.roots([1.0, 3.0, -1.0])
    assert np.max(roots) == pytest.approx(P_DELTA_3, abs=1e-14)


def test_undiscounted_value_at_two():
    assert riccati_value(1.0, 1.0, 0.0, 2.0) == pytest.approx(4.0, abs=1e-14)


def test_discounted_root_delta_three():
    P = riccati_matrix(1.0, 1.0, 3.0)
    assert P[0, 0] == pytest.approx(P_DELTA_3, abs=1e-14)
    assert riccati_value(1.0, 1.0, 3.0, 1.0) == pytest.approx(P_DELTA_3, abs=1e-14)


def test_zero_state_cost_gives_zero():
    assert riccati_value(0.0, 2.0, 0.0, 5.0) == 0.0
    assert riccati_value(np.zeros((2, 2)), np.eye(2), 0.5, [1.0, -3.0]) == pytest.approx(0.0)


@pytest.mark.parametrize("Q,R", [(1.0, 1.0), (4.0, 0.25), (2.0, 3.0), (0.1, 7.0)])
def test_undiscounted_is_sqrt_qr(Q, R):
    assert riccati_matrix(Q, R)[0, 0] == pytest.approx(np.sqrt(Q * R), rel=1e-14)


@pytest.mark.parametrize("delta", [0.0, 1e-3, 0.1, 0.5, 1.0, 3.0, 10.0])
@pytest.mark.parametrize("Q,R", [(1.0, 1.0), (2.0, 0.5), (0.3, 4.0)])
def test_residual_1d(Q, R, delta):
    assert riccati_residual(Q, R, delta) <= 1e-10


def test_nd_against_scipy_care(rng):
    for _ in range(10):
        A = rng.normal(size=(3, 3))
        B = rng.normal(size=(3, 3))
        Q = A @ A.T
        R = B @ B.T + 0.5 * np.eye(3)
        for delta in (0.0, 0.3, 2.0):
            # y' = a with discount delta is the CARE with drift -delta/2 I
            X = solve_continuous_are(-0.5 * delta * np.eye(3), np.eye(3), Q, R)
            np.testing.assert_allclose(riccati_matrix(Q, R, delta), X, rtol=1e-8, atol=1e-9)
            assert riccati_residual(Q, R, delta) <= 1e-8 * (1 + np.abs(Q).max())


def test_monotone_in_delta_and_continuous_at_zero():
    deltas = [2.0**-k for k in range(0, 30)][::-1] + [2.0, 4.0]
    deltas = sorted(deltas)
    P = [riccati_matrix(1.5, 0.7, d)[0, 0] for d in deltas]
    assert np.all(np.diff(P) <= 1e-15)
    assert P[0] == pytest.approx(np.sqrt(1.5 * 0.7), abs=1e-8)


def test_rejects_indefinite_r():
    with pytest.raises(DomainError):
        riccati_matrix(1.0, 0.0)
    with pytest.raises(DomainError):
        riccati_matrix(np.eye(2), np.diag([1.0, -1.0]))
    with pytest.raises(DomainError):
        riccati_matrix(1.0, 1.0, -0.1)


def test_vectorised_value():
    x = np.linspace(-2, 2, 9)
    np.testing.assert_allclose(riccati_value(1.0, 1.0, 0.0, x), x**2)
    pts = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
    P = riccati_matrix(np.diag([1.0, 4.0]), np.eye(2))
    np.testing.assert_allclose(P, np.diag([1.0, 2.0]), atol=1e-14)
    np.testing.assert_allclose(riccati_value(np.diag([1.0, 4.0]), np.eye(2), 0.0, pts), [1.0, 8.0, 3.0])


def test_example_truth_catalogue():
    for name in BUILTIN_NAMES:
        truths = example_truth(name)
        assert truths and all(t.relation in ("<=", ">", "==", "approx") for t in truths)
    e33 = {t.quantity: t for t in example_truth("example-3-3")}
    assert e33["extended_value"].holds(1.04) and not e33["extended_value"].holds(1.06)
    assert e33["ordinary_payoff"].holds(101.0) and not e33["ordinary_payoff"].holds(100.0)
    bounds = [t for t in example_truth("example-4-1") if t.quantity == "chattering_payoff"]
    assert len(bounds) == 8
    b = next(t for t in bounds if t.query["t"] == 2.0 and t.query["n"] == 4)
    assert b.expected == pytest.approx(8 * 5 / 16)
    sig = example_truth("lqr-1d")
    assert all(t.holds(t.query["x"] ** 2) for t in sig)


def test_example_truth_unknown():
    with pytest.raises(KeyError):
        example_truth("pendulum")
