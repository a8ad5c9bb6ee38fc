"""Closed-form ground truths used by the tests and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .problem import BUILTIN_NAMES


def _sym_sqrt(S):
    vals, vecs = np.linalg.eigh(S)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def riccati_matrix(Q, R, delta=0.0):
    """``P`` solving ``P R^-1 P + delta P - Q = 0`` for dynamics ``y' = a``.

    The equation diagonalises after the congruence ``S = R^-1/2 Q R^-1/2``:
    ``M^2 + delta M = S`` gives ``M = (-delta + sqrt(delta^2 + 4 S)) / 2`` and
    ``P = R^1/2 M R^1/2``.  The 1-D case is ``R (-delta + sqrt(delta^2 + 4Q/R)) / 2``.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if delta < 0:
        raise DomainError("delta must be nonnegative")
    if R.shape != Q.shape or R.shape[0] != R.shape[1]:
        raise DomainError("Q and R must be square and of equal size")
    R = (R + R.T) / 2
    Q = (Q + Q.T) / 2
    if np.min(np.linalg.eigvalsh(R)) <= 0:
        raise DomainError("R must be positive definite")
    if np.min(np.linalg.eigvalsh(Q)) < -1e-12 * max(1.0, np.abs(Q).max()):
        raise DomainError("Q must be positive semidefinite")
    if Q.shape == (1, 1):
        q, r = Q[0, 0], R[0, 0]
        return np.array([[r * (-delta + np.sqrt(delta**2 + 4 * q / r)) / 2]])
    Rh = _sym_sqrt(R)
    Rih = np.linalg.inv(Rh)
    S = Rih @ Q @ Rih
    vals, vecs = np.linalg.eigh((S + S.T) / 2)
    m = (-delta + np.sqrt(delta**2 + 4 * np.clip(vals, 0.0, None))) / 2
    M = (vecs * m) @ vecs.T
    return Rh @ M @ Rh


def riccati_value(Q, R, delta, x):
    """``x^T P_delta x`` for the LQR problem ``y' = a``, ``l = x^T Q x + a^T R a``."""
    P = riccati_matrix(Q, R, delta)
    x = np.asarray(x, dtype=float)
    if P.shape == (1, 1) and (x.ndim == 0 or x.shape[-1] != 1):
        return P[0, 0] * x**2
    return np.einsum("...i,ij,...j->...", x, P, x)


def riccati_residual(Q, R, delta):
    """Sup-norm of ``P R^-1 P + delta P - Q`` at the returned root."""
    P = riccati_matrix(Q, R, delta)
    R = np.atleast_2d(np.asarray(R, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    return float(np.abs(P @ np.linalg.solve(R, P) + delta * P - Q).max())


@dataclass(frozen=True)
class Assertion:
    """One machine-readable expectation.

    ``quantity`` names what to compute, ``query`` holds its inputs and
    ``relation`` is one of ``"<="``, ``">"``, ``"=="`` or ``"approx"``.
    """

    quantity: str
    query: dict
    relation: str
    expected: float
    tol: float = 0.0
    source: str = ""
    extra: dict = field(default_factory=dict)

    def holds(self, value) -> bool:
        if self.relation == "<=":
            return value <= self.expected + self.tol
        if self.relation == ">":
            return value > self.expected
        if self.relation == "==":
            return value == self.expected
        if self.relation == "approx":
            return abs(value - self.expected) <= self.tol
        raise ValueError(f"unknown relation {self.relation!r}")


def example_truth(name: str):
    """Known answers for a built-in problem, as a list of :class:`Assertion`."""
    if name == "example-3-3":
        return [
            Assertion("extended_value", {"x": [1.0, 0.0]}, "<=", 1.0, 0.05,
                      "jump w = -1 moves (1,0) to the origin at cost 1"),
            Assertion("ordinary_payoff", {"x": [1.0, 0.0], "T": 20.0, "controls": 20}, ">", 100.0,
                      source="y2 >= e^t along every ordinary trajectory"),
        ]
    if name == "example-4-1":
        out = [Assertion("finite_horizon_value", {"x": [0.0, 0.0], "t": 2.0}, "<=", 0.0, 1e-2,
                         "chattering drives the relaxed value to 0")]
        for t in (1.0, 2.0):
            for n in (4, 8, 16, 32):
                out.append(Assertion("chattering_payoff", {"x": [0.0, 0.0], "t": t, "n": n}, "<=",
                                     t**3 * (1 + t**2) / n**2, source="square-wave payoff bound"))
        return out
    if name == "lqr-1d":
        return [Assertion("sigma", {"x": float(x)}, "approx", float(x) ** 2, 0.02 * (1 + float(x) ** 2),
                          "undiscounted Riccati root sqrt(QR) = 1", {"relative_to": "1+x^2"})
                for x in np.linspace(-1.0, 1.0, 11)]
    if name == "lqr-nd":
        P = riccati_matrix(np.eye(2), np.eye(2))
        return [Assertion("sigma", {"x": [1.0, 0.0]}, "approx", float(P[0, 0]), 0.04)]
    if name == "ergodic-torus-1d":
        return [
            Assertion("ergodic_constant", {}, "approx", 1.0, 0.05,
                      "park where sin x = -1 with a = 0; l >= 1 everywhere"),
            Assertion("corrector_bound", {}, "<=", 3.0 * 2.0 * 2 * np.pi,
                      source="M C (sqrt(n) T)^gamma with M=3, C=2, gamma=1"),
        ]
    raise KeyError(f"unknown built-in problem {name!r}; choose from {BUILTIN_NAMES}")
