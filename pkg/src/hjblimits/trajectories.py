"""Forward simulation, chattering controls and the brute-force DPP oracle."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._ode import rk4_piecewise
from .errors import BudgetExceededError, ConfigurationError, DomainError
from .extension import TimedControl, extend
from .hamiltonians import ControlMesh, mesh_data
from .problem import ControlProblem

ENUMERATION_BUDGET = 10_000_000


@dataclass
class Integration:
    """Samples of a simulated trajectory.

    ``bound`` holds the a-priori growth bound
    ``(|x| + M t + M int |alpha|^p) exp(M (t + int |alpha|^p))`` at every sample
    and ``within_bound`` whether ``|y(t)|`` stayed below it.
    """

    times: np.ndarray
    states: np.ndarray
    payoff: np.ndarray
    bound: np.ndarray
    within_bound: bool
    blowup: bool
    truncated_at: float | None

    @property
    def final_payoff(self):
        return float(self.payoff[-1])


def _restrict(alpha: TimedControl, T):
    """Control pieces covering ``[alpha.start, alpha.start + T]``."""
    t0 = alpha.start
    if alpha.end < t0 + T - 1e-12:
        raise DomainError(f"control defined on [{t0}, {alpha.end}] but horizon is {T}")
    bps = alpha.breakpoints
    keep = bps < t0 + T - 1e-12
    new_bps = np.append(bps[keep], t0 + T)
    return new_bps, alpha.values[: len(new_bps) - 1]


def integrate(problem: ControlProblem, x, alpha: TimedControl, T, dt=1e-3):
    """RK4 on ``(y, J)`` with ``y' = f(y, alpha)``, ``J' = l(y, alpha)``.

    Steps never straddle control breakpoints.  Integration stops (``blowup``)
    once ``|y|`` exceeds 1e12.
    """
    if dt <= 0 or T <= 0:
        raise DomainError("need dt > 0 and T > 0")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (problem.n,):
        raise DomainError(f"state must have {problem.n} components")
    bps, vals = _restrict(alpha, T)
    if vals.shape[1] != problem.m or not np.all(problem.control_set.contains(vals)):
        raise DomainError("control values outside A")
    times, states, costs, trunc = rk4_piecewise(problem.f, x, bps, vals, dt, cost=problem.l)

    p, M = problem.growth.p, problem.growth.M
    mag = np.linalg.norm(vals, axis=1) ** p
    # int_0^t |alpha|^p, exact for piecewise-constant controls
    cum = np.concatenate([[0.0], np.cumsum(mag * np.diff(bps))])
    idx = np.clip(np.searchsorted(bps, times, side="right") - 1, 0, len(mag) - 1)
    acc = cum[idx] + mag[idx] * (times - bps[idx])
    rel = times - bps[0]
    with np.errstate(over="ignore"):
        bound = (np.linalg.norm(x) + M * rel + M * acc) * np.exp(M * (rel + acc))
    within = bool(np.all(np.linalg.norm(states, axis=1) <= bound * (1 + 1e-9) + 1e-12))
    return Integration(times, states, costs, bound, within, trunc is not None, trunc)


def chattering_control(n: int, t: float) -> TimedControl:
    """Square wave ``(-1)^i`` on ``[i h, (i+1) h)`` with ``h = t / n``."""
    if n < 1 or t <= 0:
        raise DomainError("need n >= 1 and t > 0")
    bps = np.linspace(0.0, t, n + 1)
    bps[-1] = t
    vals = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    return TimedControl(bps, vals[:, None])


def brute_force_value(problem: ControlProblem, x, mesh: ControlMesh, steps: int, dt: float,
                      budget=ENUMERATION_BUDGET):
    """Exact minimum of the Euler-discretised payoff over all mesh sequences.

    ``y_{k+1} = y_k + dt f(y_k, c_k)``, cost ``sum_k dt l(y_k, c_k)``; with an
    S(A) mesh the extended data are used, matching an unconstrained
    extended-time scheme step for step.  Refuses when ``len(mesh)**steps``
    exceeds ``budget``.
    """
    if steps < 0 or dt <= 0:
        raise DomainError("need steps >= 0 and dt > 0")
    required = len(mesh) ** steps
    if required > budget:
        raise BudgetExceededError(
            f"enumeration needs {required} control sequences, budget is {budget}", required)
    if mesh.extended and problem.control_set.kind != "cone":
        raise ConfigurationError("S(A) meshes are for cone problems")
    model = extend(problem) if mesh.extended else problem
    y = np.atleast_2d(np.asarray(x, dtype=float))
    if y.shape != (1, problem.n):
        raise DomainError(f"state must have {problem.n} components")
    J = np.zeros(1)
    for _ in range(steps):
        F, L, _ = mesh_data(model, mesh, y)
        J = (J[:, None] + dt * L).ravel()
        y = (y[:, None, :] + dt * F).reshape(-1, problem.n)
    return float(J.min())
