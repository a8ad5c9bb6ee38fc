"""Semi-Lagrangian solvers for the finite-horizon, discounted, Kruzkov and
ergodic problems, plus the t -> inf and delta -> 0 limit drivers.

All solvers share one precomputed operator.  Departure points
``x + dt f_bar(x, c)`` do not depend on the value field, so the interpolation
from departures to nodes is a fixed sparse matrix ``P`` of shape
``(nodes * controls, nodes)`` and each sweep is one sparse product followed by
a minimum over controls.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .extension import extend
from .fields import INFINITE, Grid, ValueField, interpolate, interpolation_matrix
from .hamiltonians import ControlMesh, eval_H_tilde, mesh_data
from .problem import ControlProblem, TargetSet

VERDICTS = ("converged", "budget-exhausted", "diverged")
_FULL_RECORDS = 100
_MAX_RECORDS = 2000


@dataclass
class SolverConfig:
    """Numerical parameters shared by every solver.

    ``limit_tol`` is the sup-change below which a t -> inf or delta -> 0
    schedule is declared converged; ``tol`` is the fixed-point residual
    tolerance.  ``mode`` selects physical-time (``"physical"``) or
    unconstrained extended-time (``"s"``) marching for finite horizons.
    """

    dt: float = 0.05
    mesh: ControlMesh | None = None
    mesh_size: int = 65
    tol: float = 1e-6
    max_iter: int = 200_000
    infinity_threshold: float = 1e4
    growth_slope: float = 0.0
    limit_tol: float = 1e-3
    inner_max_iter: int = 1000
    flatness_tol: float = 0.05
    threads: int = 1
    mode: str = "physical"

    def __post_init__(self):
        if self.dt <= 0 or self.tol <= 0 or self.limit_tol <= 0:
            raise ConfigurationError("dt, tol and limit_tol must be positive")
        if self.max_iter < 1 or self.inner_max_iter < 1:
            raise ConfigurationError("iteration budgets must be positive")
        if self.infinity_threshold <= 0:
            raise ConfigurationError("infinity_threshold must be positive")
        if self.mode not in ("physical", "s"):
            raise ConfigurationError("mode is 'physical' or 's'")

    def to_dict(self):
        d = {k: getattr(self, k) for k in ("dt", "mesh_size", "tol", "max_iter", "infinity_threshold",
                                           "growth_slope", "limit_tol", "inner_max_iter", "flatness_tol",
                                           "threads", "mode")}
        d["mesh"] = None if self.mesh is None else {"size": len(self.mesh), "provenance": self.mesh.provenance}
        return d


@dataclass
class Record:
    param: float
    sup_change: float
    residual: float
    seconds: float


@dataclass
class ConvergenceReport:
    """Per-parameter records and a verdict.

    Long fixed-point runs keep the first 100 iterations and then a thinned
    subset (always including the last one).
    """

    records: list = field(default_factory=list)
    verdict: str = "converged"
    warnings: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add(self, param, sup_change, residual, seconds):
        self.records.append(Record(float(param), float(sup_change), float(residual), float(seconds)))

    @property
    def last(self):
        return self.records[-1] if self.records else None

    def to_dict(self, timings=True):
        recs = [{"param": r.param, "sup_change": _json_num(r.sup_change), "residual": _json_num(r.residual),
                 "seconds": r.seconds if timings else None} for r in self.records]
        return {"records": recs, "verdict": self.verdict, "warnings": list(self.warnings),
                "meta": _jsonable(self.meta)}

    def to_json(self, timings=True):
        return json.dumps(self.to_dict(timings), indent=2, sort_keys=True)


def _json_num(v):
    if np.isposinf(v):
        return "inf"
    return float(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return _json_num(float(obj))
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _keep_record(k, stride):
    return k <= _FULL_RECORDS or k % stride == 0


def _sup_change(new, old):
    both = np.isfinite(new) & np.isfinite(old)
    return float(np.max(np.abs(new[both] - old[both]))) if np.any(both) else 0.0


# --- shared operator ----------------------------------------------------------


class SemiLagrangian:
    """One-step operator ``u -> min_c [dt l_bar + weight * u(x + dt f_bar)]``.

    Cone problems are extended and discretised over an S(A) mesh; compact
    problems over a mesh of A.  ``tw`` holds ``w0^q`` per control (1 for
    compact meshes).
    """

    def __init__(self, problem: ControlProblem, grid: Grid, config: SolverConfig):
        self.problem = problem
        self.grid = grid
        self.config = config
        self.dt = float(config.dt)
        self.model = extend(problem) if problem.control_set.kind == "cone" else problem
        self.mesh = config.mesh if config.mesh is not None else ControlMesh.for_problem(problem, config.mesh_size)
        self.nodes = grid.nodes()
        F, L, tw = mesh_data(self.model, self.mesh, self.nodes)
        N, C = L.shape
        dep = self.nodes[:, None, :] + self.dt * F
        self.P, outside = interpolation_matrix(grid, dep.reshape(-1, grid.dim), clamp=True)
        self.cost = self.dt * np.asarray(L, dtype=float)
        self.tw = np.asarray(tw, dtype=float)
        self.shape = (N, C)
        self.boundary_hits = int(np.count_nonzero(outside))
        h = np.asarray(grid.spacing)
        self.cfl = float(np.max(self.dt * np.abs(F) / h)) if F.size else 0.0
        self.explicit = bool(np.all(self.tw == 1.0))

    def warnings(self):
        out = []
        if self.cfl > 1.0:
            out.append(f"CFL ratio dt*max|f|/h = {self.cfl:.3g} exceeds 1")
        if self.boundary_hits:
            out.append(f"{self.boundary_hits} departure points left the grid (clamped to the outer layer)")
        return out

    def lookahead(self, u):
        """``u(x + dt f_bar(x, c))`` for every node and control, shape ``(N, C)``."""
        return (self.P @ np.asarray(u, dtype=float).ravel()).reshape(self.shape)

    def step(self, u):
        """Unconstrained extended-time (or compact) step: ``min_c [dt l + u(x + dt f)]``."""
        return np.min(self.cost + self.lookahead(u), axis=1)

    def step_physical(self, u, tol=None):
        """Physical-time step ``dt`` for extended controls.

        A control spends physical time ``dt w0^q`` per s-step, so with values
        ``u^k`` at ``t_k`` and ``u^{k+1}`` at ``t_k + dt`` the step is
        ``min_c [dt l_bar + w0^q P u^k + (1 - w0^q) P u^{k+1}]``, an implicit
        relation solved by monotone iteration from ``u^k``.  Returns the new
        field and the number of inner sweeps used.
        """
        if self.explicit:
            return self.step(u), 1
        tol = self.config.tol if tol is None else tol
        base = self.cost + self.tw * self.lookahead(u)
        rest = 1.0 - self.tw
        v = np.asarray(u, dtype=float).ravel()
        for j in range(1, self.config.inner_max_iter + 1):
            v_new = np.min(base + rest * self.lookahead(v), axis=1)
            change = np.max(np.abs(v_new - v))
            v = v_new
            if change <= tol:
                return v, j
        return v, -self.config.inner_max_iter

    def step_discounted(self, u, delta):
        disc = np.exp(-delta * self.dt * self.tw)
        return np.min(self.cost + disc * self.lookahead(u), axis=1)

    def step_kruzkov_complement(self, z, on_target):
        """Step for ``z = 1 - U``: ``z = max_c e^{-dt l_bar} z(x + dt f_bar)``, ``z = 1`` on target."""
        z_new = np.max(np.exp(-self.cost) * self.lookahead(z), axis=1)
        z_new[on_target] = 1.0
        return z_new

    def step_kruzkov(self, U, on_target):
        """Same step in the ``U`` variable (used by property tests)."""
        return 1.0 - self.step_kruzkov_complement(1.0 - np.asarray(U, dtype=float).ravel(), on_target)


def build_operator(problem, grid, config) -> SemiLagrangian:
    return SemiLagrangian(problem, grid, config)


def _field(grid, values, **meta):
    return ValueField(grid, np.asarray(values, dtype=float).reshape(grid.shape), meta=meta)


# --- finite horizon ---------------------------------------------------------


def solve_finite_horizon(problem, grid, config: SolverConfig, T, snapshot_times=None, mode=None,
                         operator=None):
    """March ``u_t + H(x, Du) = 0`` from ``u(0) = 0`` up to horizon ``T``.

    ``mode="physical"`` (default) reports values at physical time ``t``;
    ``mode="s"`` ignores the time constraint and reports ``W(s, x)``.
    Snapshot times are rounded to the step grid; each snapshot records the
    time actually reached in its ``meta``.
    """
    mode = config.mode if mode is None else mode
    if mode not in ("physical", "s"):
        raise ConfigurationError("mode is 'physical' or 's'")
    if T <= 0:
        raise ConfigurationError("horizon must be positive")
    op = operator or build_operator(problem, grid, config)
    nsteps = int(round(T / op.dt))
    if abs(nsteps * op.dt - T) > 1e-9 * max(1.0, T):
        nsteps = int(np.ceil(T / op.dt))
    times = [T] if snapshot_times is None else sorted(float(t) for t in snapshot_times)
    snap_steps = {}
    for t in times:
        snap_steps.setdefault(min(nsteps, max(0, int(round(t / op.dt)))), t)

    report = ConvergenceReport(warnings=op.warnings())
    report.meta.update(mode=mode, dt=op.dt, steps=nsteps, mesh=op.mesh.provenance, mesh_size=len(op.mesh),
                       boundary_hits=op.boundary_hits, cfl=op.cfl)
    u = np.zeros(grid.size)
    snapshots = []
    if 0 in snap_steps:
        snapshots.append(_field(grid, u, **{("t" if mode == "physical" else "s"): 0.0}))
    stride = max(1, nsteps // _MAX_RECORDS)
    start = time.perf_counter()
    inner_capped = 0
    budget = min(nsteps, config.max_iter)
    for k in range(1, budget + 1):
        if mode == "physical":
            u_new, used = op.step_physical(u)
            inner_capped += used < 0
        else:
            u_new = op.step(u)
        change = _sup_change(u_new, u)
        u = u_new
        if _keep_record(k, stride) or k == budget:
            report.add(k * op.dt, change, change / op.dt, time.perf_counter() - start)
        if k in snap_steps:
            key = "t" if mode == "physical" else "s"
            snapshots.append(_field(grid, u, **{key: k * op.dt}))
    if inner_capped:
        report.warnings.append(f"{inner_capped} steps hit the inner iteration cap")
    if budget < nsteps:
        report.verdict = "budget-exhausted"
        report.meta["reached"] = budget * op.dt
    return snapshots, report


def _growth_infinite(history, horizons, threshold, slope):
    """Nodes above ``threshold`` whose value grew at rate >= ``slope`` over each of the last 3 steps."""
    if len(history) < 4:
        return np.zeros(history[-1].shape, dtype=bool)
    mask = history[-1] > threshold
    for j in (-1, -2, -3):
        inc = history[j] - history[j - 1]
        rate = inc / (horizons[j] - horizons[j - 1])
        mask &= (inc > 0) & (rate >= slope)
    return mask


def _limit(grid, values, params, horizons, config, report, seconds, label):
    """Shared stopping / infinity logic for the two limit drivers."""
    history = []
    for k, (p, v) in enumerate(zip(params, values)):
        v = np.asarray(v, dtype=float).ravel()
        if history:
            change = _sup_change(v, history[-1])
            rate = change / (horizons[k] - horizons[k - 1])
        else:
            change, rate = float("inf"), float("inf")
        history.append(v)
        report.add(p, change, rate, seconds[k])
    inf_mask = _growth_infinite(history, horizons, config.infinity_threshold, config.growth_slope)
    final = history[-1].copy()
    final[inf_mask] = INFINITE
    if len(history) >= 2:
        last = np.abs(history[-1] - history[-2])
        still = (last >= config.limit_tol) & ~inf_mask
        final_change = float(np.max(last[~inf_mask])) if np.any(~inf_mask) else 0.0
    else:
        still = np.ones(grid.size, dtype=bool)
        final_change = float("inf")
    if report.verdict == "converged" and final_change >= config.limit_tol:
        report.verdict = "budget-exhausted"
    report.meta.update(infinite_nodes=int(inf_mask.sum()), provisional_nodes=int(still.sum()),
                       final_sup_change=final_change)
    meta = {label: params[-1], "provisional": report.verdict != "converged"}
    return ValueField(grid, final.reshape(grid.shape), meta=meta, provisional=still.reshape(grid.shape))


DEFAULT_HORIZONS = (1.0, 2.0, 4.0, 8.0, 16.0, 32.0)
DEFAULT_DELTAS = tuple(2.0**-k for k in range(1, 13))


def limit_finite_horizon(problem, grid, config: SolverConfig, schedule=DEFAULT_HORIZONS, mode=None,
                         operator=None):
    """Sigma = lim_{t -> inf} V(t, .) along an increasing horizon schedule.

    Nodes above ``config.infinity_threshold`` that grew at rate
    ``>= config.growth_slope`` over the last three schedule steps are INFINITE.
    The field's ``provisional`` mask flags nodes still changing by
    ``>= limit_tol`` at the end of the schedule.
    """
    schedule = [float(t) for t in schedule]
    if any(b <= a for a, b in zip(schedule, schedule[1:])) or schedule[0] <= 0:
        raise ConfigurationError("horizon schedule must be positive and increasing")
    start = time.perf_counter()
    snaps, inner = solve_finite_horizon(problem, grid, config, schedule[-1], snapshot_times=schedule,
                                        mode=mode, operator=operator)
    key = "t" if (mode or config.mode) == "physical" else "s"
    snaps = [s for s in snaps if s.meta[key] > 0]
    total = time.perf_counter() - start
    report = ConvergenceReport(verdict=inner.verdict, warnings=list(inner.warnings))
    report.meta.update(inner.meta)
    params = [s.meta[key] for s in snaps]
    seconds = [total * p / params[-1] for p in params]
    sigma = _limit(grid, [s.values for s in snaps], params, params, config, report, seconds, key)
    return sigma, report


# --- discounted -------------------------------------------------------------


def solve_discounted(problem, grid, config: SolverConfig, delta, initial=None, operator=None):
    """Fixed point of ``u = min_c [dt l_bar + exp(-delta dt w0^q) u(x + dt f_bar)]``.

    Starts from ``u = 0`` or from ``initial``, which must lie below the fixed
    point (e.g. the solution for a larger delta).  The verdict is
    ``diverged`` when the residual strictly increases for more than 10
    consecutive iterations.
    """
    if delta <= 0:
        raise ConfigurationError("delta must be positive")
    op = operator or build_operator(problem, grid, config)
    u = np.zeros(grid.size) if initial is None else np.asarray(initial, dtype=float).ravel().copy()
    report = ConvergenceReport(verdict="budget-exhausted", warnings=op.warnings())
    report.meta.update(delta=float(delta), dt=op.dt, mesh=op.mesh.provenance, mesh_size=len(op.mesh),
                       boundary_hits=op.boundary_hits, cfl=op.cfl,
                       contraction_bound=float(np.exp(-delta * op.dt * op.tw.min())))
    stride = max(1, config.max_iter // _MAX_RECORDS)
    start = time.perf_counter()
    prev_res = np.inf
    rising = 0
    for k in range(1, config.max_iter + 1):
        u_new = op.step_discounted(u, delta)
        res = float(np.max(np.abs(u_new - u)))
        u = u_new
        rising = rising + 1 if res > prev_res * (1 + 1e-12) + 1e-300 else 0
        prev_res = res
        done = res < config.tol
        if _keep_record(k, stride) or done or k == config.max_iter or rising > 10:
            report.add(k, res, res, time.perf_counter() - start)
        if done:
            report.verdict = "converged"
            break
        if rising > 10:
            report.verdict = "diverged"
            break
    report.meta["iterations"] = k
    return _field(grid, u, delta=float(delta)), report


def limit_discounted(problem, grid, config: SolverConfig, schedule=DEFAULT_DELTAS, operator=None):
    """V^r = lim_{delta -> 0} V_delta along a decreasing delta schedule.

    Each solve is warm-started from the previous (larger-delta) solution,
    which lies below the new fixed point.  Infinity detection measures growth
    per unit of effective horizon ``1/delta``.
    """
    schedule = [float(d) for d in schedule]
    if any(b >= a for a, b in zip(schedule, schedule[1:])) or schedule[-1] <= 0:
        raise ConfigurationError("delta schedule must be positive and decreasing")
    op = operator or build_operator(problem, grid, config)
    report = ConvergenceReport(warnings=op.warnings())
    report.meta.update(dt=op.dt, mesh=op.mesh.provenance, mesh_size=len(op.mesh))
    values, seconds, iters = [], [], []
    start = time.perf_counter()
    u = None
    for d in schedule:
        fld, sub = solve_discounted(problem, grid, config, d, initial=u, operator=op)
        u = fld.values
        values.append(u)
        seconds.append(time.perf_counter() - start)
        iters.append(sub.meta["iterations"])
        if sub.verdict != "converged":
            report.verdict = sub.verdict
            report.warnings.append(f"delta={d}: {sub.verdict} after {sub.meta['iterations']} iterations")
            break
    report.meta["iterations"] = iters
    params = schedule[: len(values)]
    horizons = [1.0 / d for d in params]
    limit = _limit(grid, values, params, horizons, config, report, seconds, "delta")
    return limit, report


# --- Kruzkov ----------------------------------------------------------------


def target_nodes(grid: Grid, target: TargetSet, atol=1e-9):
    d = np.asarray(target.distance(grid.nodes()), dtype=float)
    return d <= max(target.atol, atol)


def solve_kruzkov(problem, grid, config: SolverConfig, target: TargetSet | None = None, callback=None,
                  operator=None):
    """Kruzkov-transformed boundary problem ``K(x, U, DU) = 0``, ``U = 0`` on the target.

    Iterates on ``z = 1 - U`` (``z = max_c e^{-dt l_bar} z(x + dt f_bar)``,
    ``z = 1`` on target nodes) so values of ``V = -log z`` keep full relative
    precision.  Returns ``(U, V, domain_mask, report)``; ``V`` is INFINITE
    where ``z < exp(-infinity_threshold)`` and the domain mask is its
    complement.  ``callback(k, U)`` is called after every sweep.
    """
    target = target if target is not None else problem.target
    if target is None:
        raise ConfigurationError("no target set given")
    on_target = target_nodes(grid, target)
    if not np.any(on_target):
        raise ConfigurationError("the target contains no grid node")
    op = operator or build_operator(problem, grid, config)
    z = np.ones(grid.size)
    report = ConvergenceReport(verdict="budget-exhausted", warnings=op.warnings())
    report.meta.update(dt=op.dt, mesh=op.mesh.provenance, mesh_size=len(op.mesh),
                       target_nodes=int(on_target.sum()), boundary_hits=op.boundary_hits)
    stride = max(1, config.max_iter // _MAX_RECORDS)
    start = time.perf_counter()
    for k in range(1, config.max_iter + 1):
        z_new = op.step_kruzkov_complement(z, on_target.ravel())
        res = float(np.max(np.abs(z_new - z)))
        z = z_new
        if callback is not None:
            callback(k, (1.0 - z).reshape(grid.shape))
        done = res < config.tol
        if _keep_record(k, stride) or done or k == config.max_iter:
            report.add(k, res, res, time.perf_counter() - start)
        if done:
            report.verdict = "converged"
            break
    report.meta["iterations"] = k
    U = ValueField(grid, (1.0 - z).reshape(grid.shape), kruzkov=True)
    cutoff = np.exp(-config.infinity_threshold)
    inf_mask = z < cutoff
    with np.errstate(divide="ignore"):
        V = np.where(inf_mask, INFINITE, -np.log(np.maximum(z, np.finfo(float).tiny)))
    V = np.maximum(V, 0.0)
    domain = (~inf_mask).reshape(grid.shape)
    report.meta["infinite_nodes"] = int(inf_mask.sum())
    return U, ValueField(grid, V.reshape(grid.shape)), domain, report


# --- ergodic ----------------------------------------------------------------

ERGODIC_DELTAS = tuple(2.0**-k for k in range(1, 11))


@dataclass
class ErgodicResult:
    lam: float
    W0: ValueField
    report: ConvergenceReport
    scaled: ValueField  # delta * V_delta at the final delta
    corrector_sup: float
    residual: float

    def __iter__(self):
        return iter((self.lam, self.W0, self.report))


def _central_gradient(grid, W):
    grads = []
    for ax, h in enumerate(grid.spacing):
        grads.append(((np.roll(W, -1, axis=ax) - np.roll(W, 1, axis=ax)) / (2 * h)).ravel())
    return np.stack(grads, axis=-1)


def solve_ergodic(problem, grid, config: SolverConfig, schedule=ERGODIC_DELTAS, operator=None):
    """Ergodic constant ``lambda = lim delta V_delta`` and corrector ``W0``.

    ``lambda`` is the spatial mean of ``delta V_delta`` extrapolated with the
    last two schedule points (Richardson for an O(delta) error); ``W0`` is
    ``V_delta - V_delta(0)`` at the final delta.  The verdict is
    ``diverged`` if ``max - min`` of ``delta V_delta`` exceeds
    ``config.flatness_tol`` at the final delta.  Unpacks as
    ``(lam, W0, report)``.
    """
    if problem.periods is None:
        raise ConfigurationError("ergodic problems must declare periods in every coordinate")
    if len(grid.periodic) != grid.dim:
        raise ConfigurationError("ergodic solves need every grid axis periodic")
    for ax, period in enumerate(problem.periods):
        if abs((grid.hi[ax] - grid.lo[ax]) - period) > 1e-9 * period:
            raise ConfigurationError(f"grid axis {ax} does not span one period")
    schedule = [float(d) for d in schedule]
    if len(schedule) < 2 or any(b >= a for a, b in zip(schedule, schedule[1:])):
        raise ConfigurationError("need a decreasing delta schedule with at least two entries")
    op = operator or build_operator(problem, grid, config)
    report = ConvergenceReport()
    report.meta.update(dt=op.dt, mesh=op.mesh.provenance, mesh_size=len(op.mesh))
    start = time.perf_counter()
    means, u, fld = [], None, None
    origin = np.zeros(grid.dim)
    for d in schedule:
        fld, sub = solve_discounted(problem, grid, config, d, initial=u, operator=op)
        u = fld.values
        scaled = d * u
        means.append(float(scaled.mean()))
        flat = float(scaled.max() - scaled.min())
        change = abs(means[-1] - means[-2]) if len(means) > 1 else float("inf")
        report.add(d, change, flat, time.perf_counter() - start)
        if sub.verdict != "converged":
            report.verdict = sub.verdict
            report.warnings.append(f"delta={d}: {sub.verdict}")
            break
    used = schedule[: len(means)]
    if len(means) >= 2:
        ratio = used[-2] / used[-1]
        lam = (ratio * means[-1] - means[-2]) / (ratio - 1.0)
    else:
        lam = means[-1]
    W = u - interpolate(fld, origin)
    W0 = ValueField(grid, W, meta={"delta": used[-1]})
    grad = _central_gradient(grid, W0.values)
    resid = np.abs(eval_H_tilde(op.model, op.mesh, grid.nodes(), grad, lam))
    flat = float(used[-1] * (u.max() - u.min()))
    if report.verdict == "converged" and flat > config.flatness_tol:
        report.verdict = "diverged"
        report.warnings.append(f"delta V_delta oscillates by {flat:.3g} > {config.flatness_tol}")
    report.meta.update(lam=lam, means=means, flatness=flat, corrector_sup=float(np.abs(W).max()),
                       h_tilde_residual_max=float(resid.max()), h_tilde_residual_median=float(np.median(resid)))
    scaled_fld = ValueField(grid, used[-1] * u, meta={"delta": used[-1]})
    return ErgodicResult(float(lam), W0, report, scaled_fld, float(np.abs(W).max()), float(resid.max()))


def cfl_warning(op: SemiLagrangian):
    for w in op.warnings():
        warnings.warn(w, RuntimeWarning, stacklevel=2)
