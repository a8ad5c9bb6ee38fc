"""Value functions of deterministic optimal control problems with nonnegative
running cost, for compact and unbounded (conic) control sets.

The main entry points are re-exported here; see the submodules for details.
"""

from .problem import (
    ControlProblem,
    ControlSetDescriptor,
    GrowthData,
    TargetSet,
    builtin,
    check_coercivity,
    eval_dynamics,
    eval_lagrangian,
    recession,
)
from .extension import (
    ExtendedControlPoint,
    ExtendedProblem,
    TimedControl,
    extend,
    extended_to_ordinary,
    generalized_trajectory,
    ordinary_to_extended,
)
from .hamiltonians import ControlMesh, eval_H, eval_H_delta, eval_H_tilde, eval_K
from .fields import Grid, ValueField, interpolate, sup_diff
from .solvers import (
    ConvergenceReport,
    SolverConfig,
    limit_discounted,
    limit_finite_horizon,
    solve_discounted,
    solve_ergodic,
    solve_finite_horizon,
    solve_kruzkov,
)
from .trajectories import brute_force_value, chattering_control, integrate
from .oracles import example_truth, riccati_value

__version__ = "0.1.0"
