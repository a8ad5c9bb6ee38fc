"""Fixed-step RK4 over piecewise-constant controls.

Steps never straddle a control breakpoint: every piece is split into
``ceil(length / max_step)`` equal steps.
"""

import math

import numpy as np

BLOWUP = 1e12


def rk4_piecewise(rhs, x0, breakpoints, values, max_step, cost=None):
    """Integrate ``y' = rhs(y, u)`` (and optionally ``J' = cost(y, u)``).

    Returns ``(times, states, costs, truncated_at)`` where ``truncated_at`` is
    the time at which ``|y|`` first exceeded 1e12 (``None`` if it never did).
    """
    y = np.asarray(x0, dtype=float).copy()
    J = 0.0
    times = [float(breakpoints[0])]
    states = [y.copy()]
    costs = [0.0]

    def full(z, u):
        dy = np.asarray(rhs(z[:-1], u), dtype=float)
        dj = float(cost(z[:-1], u)) if cost is not None else 0.0
        return np.append(dy, dj)

    z = np.append(y, J)
    for k in range(len(values)):
        t0, t1 = float(breakpoints[k]), float(breakpoints[k + 1])
        length = t1 - t0
        if length <= 0:
            continue
        nsteps = max(1, math.ceil(length / max_step - 1e-9))
        h = length / nsteps
        u = values[k]
        for i in range(nsteps):
            k1 = full(z, u)
            k2 = full(z + 0.5 * h * k1, u)
            k3 = full(z + 0.5 * h * k2, u)
            k4 = full(z + h * k3, u)
            z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            t = t0 + (i + 1) * h if i + 1 < nsteps else t1
            times.append(t)
            states.append(z[:-1].copy())
            costs.append(z[-1])
            if not np.all(np.isfinite(z)) or np.max(np.abs(z[:-1])) > BLOWUP:
                return np.array(times), np.array(states), np.array(costs), t
    return np.array(times), np.array(states), np.array(costs), None
