"""Sampled checks of the sufficient conditions: MRF decrease, (SC1), (SC2)
and the liminf condition (H3).

Sampling proves nothing; these are falsification tools that report the
worst margin found and where it occurs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .errors import ConfigurationError, EvaluationError, PreconditionError
from .extension import ExtendedProblem, extend
from .fields import Grid, ValueField, interpolate
from .hamiltonians import ControlMesh, mesh_data
from .problem import ControlProblem, TargetSet


@dataclass
class MarginReport:
    """Worst margin over samples; ``passed`` follows the check's sign convention."""

    worst_margin: float
    argmin_point: list
    samples: int
    passed: bool
    check: str = ""
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {"worst_margin": float(self.worst_margin), "argmin_point": [float(v) for v in self.argmin_point],
                "samples": int(self.samples), "pass": bool(self.passed), "check": self.check,
                "details": self.details}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


@dataclass(frozen=True)
class Certificate:
    """A C^1 candidate ``U`` with its gradient, both vectorised over the last axis."""

    value: callable
    gradient: callable

    def __call__(self, x):
        return np.asarray(self.value(np.asarray(x, dtype=float)), dtype=float)

    def grad(self, x):
        g = np.asarray(self.gradient(np.asarray(x, dtype=float)), dtype=float)
        if not np.all(np.isfinite(g)):
            bad = np.argwhere(~np.isfinite(g.reshape(len(np.atleast_2d(x)), -1)))[0][0]
            raise EvaluationError(f"gradient not finite at {np.atleast_2d(x)[bad].tolist()}")
        return g


def sample_region(lo, hi, samples, seed=0):
    """Scrambled Sobol points in the box ``[lo, hi]`` (deterministic given ``seed``)."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    sampler = qmc.Sobol(d=len(lo), scramble=True, seed=seed)
    m = int(np.ceil(np.log2(max(samples, 1))))
    pts = sampler.random_base2(m)[:samples]
    return qmc.scale(pts, lo, hi)


def _off_target(pts, target, exclusion):
    d = np.asarray(target.distance(pts), dtype=float)
    keep = d > max(target.atol, exclusion)
    return pts[keep], d[keep]


def _positive_definite(U, pts, target):
    vals = U(pts)
    if np.any(vals <= 0):
        bad = pts[np.argmax(vals <= 0)]
        raise PreconditionError(f"U is not positive off the target (U <= 0 at {bad.tolist()})")
    if target.boundary_points is not None:
        bvals = U(np.atleast_2d(target.boundary_points))
        if np.any(np.abs(bvals) > 1e-8):
            raise PreconditionError("U does not vanish on the target boundary")


def _report(margins, pts, passed_fn, check, largest=True, **details):
    if len(margins) == 0:
        raise ConfigurationError("no samples off the target")
    j = int(np.argmax(margins)) if largest else int(np.argmin(margins))
    worst = float(margins[j])
    return MarginReport(worst, pts[j].tolist(), len(margins), bool(passed_fn(worst)), check, details)


def _control_mesh(problem, mesh):
    if mesh is not None:
        return mesh
    cs = problem.control_set
    if cs.kind == "cone":
        # a symmetric radial lattice of A; truncation happens per sample
        return None
    return ControlMesh.for_problem(problem, 64)


def _cone_controls(problem, radius, n_radii=64, n_dirs=16):
    sph = ControlMesh.sphere(problem.control_set, 1, n_radii=2, n_dirs=n_dirs)
    dirs = np.unique(np.round(sph.w[np.linalg.norm(sph.w, axis=1) > 0.5], 12), axis=0)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    # linear radii for large controls, geometric ones so small optimal controls near the target are resolved
    radii = radius * np.union1d(np.linspace(0.0, 1.0, n_radii + 1)[1:], np.geomspace(1e-6, 1.0, n_radii))
    return np.vstack([np.zeros((1, problem.m))] + [r * dirs for r in radii])


def check_mrf(problem: ControlProblem, U: Certificate, target: TargetSet, k, region, samples=10_000,
              radius_map=None, mesh: ControlMesh | None = None, seed=0, exclusion=1e-6, cone_radius=10.0):
    """Decrease condition ``min_a <grad U(x), f(x, a)> + k l(x, a) < 0`` on samples.

    ``region`` is ``(lo, hi)``.  For cone control sets the controls are a
    radial lattice of ``A ∩ B(0, R(U(x)))`` (``R = radius_map`` or the
    constant ``cone_radius``).  Passes iff the worst (largest) margin is
    negative.
    """
    if k < 0:
        raise ConfigurationError("k must be nonnegative")
    pts, _ = _off_target(sample_region(*region, samples, seed), target, exclusion)
    _positive_definite(U, pts, target)
    grad = U.grad(pts)
    if problem.control_set.kind == "cone":
        margins = np.empty(len(pts))
        radii = np.full(len(pts), float(cone_radius)) if radius_map is None else \
            np.asarray(radius_map(U(pts)), dtype=float) * np.ones(len(pts))
        unit = _cone_controls(problem, 1.0)
        for r in np.unique(radii):
            sel = radii == r
            A = unit * r
            F = np.asarray(problem.f(pts[sel][:, None, :], A[None]), dtype=float)
            L = np.asarray(problem.l(pts[sel][:, None, :], A[None]), dtype=float)
            margins[sel] = np.min(np.einsum("bcn,bn->bc", F, grad[sel]) + k * L, axis=1)
    else:
        mesh = _control_mesh(problem, mesh)
        F, L, _ = mesh_data(problem, mesh, pts)
        margins = np.min(np.einsum("bcn,bn->bc", F, grad) + k * L, axis=1)
    return _report(margins, pts, lambda w: w < 0, "mrf", k=float(k))


def check_sc1(ext: ExtendedProblem | ControlProblem, U: Certificate, target: TargetSet, m, region,
              samples=10_000, mesh: ControlMesh | None = None, seed=0, exclusion=1e-6):
    """``max_{S(A)} <grad U, f_bar> + m(d(x)) <= 0`` on samples (passes iff worst margin <= 0)."""
    if isinstance(ext, ControlProblem):
        ext = extend(ext)
    mesh = mesh or ControlMesh.for_problem(ext.base, 64)
    pts, d = _off_target(sample_region(*region, samples, seed), target, exclusion)
    _positive_definite(U, pts, target)
    grad = U.grad(pts)
    F, _, _ = mesh_data(ext, mesh, pts)
    margins = np.max(np.einsum("bcn,bn->bc", F, grad), axis=1) + np.asarray(m(d), dtype=float)
    return _report(margins, pts, lambda w: w <= 0, "sc1")


def check_sc2(problem: ControlProblem, target: TargetSet, c1, region, samples=10_000,
              mesh: ControlMesh | None = None, seed=0, exclusion=1e-6, cone_radius=10.0):
    """``min_a l(x, a) - c1(d(x)) >= 0`` on samples (passes iff worst margin >= 0)."""
    pts, d = _off_target(sample_region(*region, samples, seed), target, exclusion)
    if problem.control_set.kind == "cone":
        A = _cone_controls(problem, cone_radius)
        L = np.asarray(problem.l(pts[:, None, :], A[None]), dtype=float)
    else:
        _, L, _ = mesh_data(problem, _control_mesh(problem, mesh), pts)
    margins = np.min(L, axis=1) - np.asarray(c1(d), dtype=float)
    return _report(margins, pts, lambda w: w >= 0, "sc2", largest=False)


@dataclass
class H3Report:
    min_distance: float
    reached: bool
    s_final: float
    path: np.ndarray
    distances: np.ndarray
    value_at_start: float

    def to_dict(self):
        return {"min_distance": self.min_distance, "reached": self.reached, "s_final": self.s_final,
                "value_at_start": self.value_at_start if np.isfinite(self.value_at_start) else "inf"}


def probe_h3(ext: ExtendedProblem | ControlProblem, x, target: TargetSet, budget, field: ValueField | None = None,
             mesh: ControlMesh | None = None, ds=0.02, tol=0.05):
    """Simulate the greedy feedback ``argmin_c [ds l_bar + u(xi + ds f_bar)]`` over the solved field.

    Runs ``budget`` s-steps (Euler, matching the scheme) and reports the
    running minimum of ``d(xi(s))`` and whether it dropped below ``tol``.
    """
    if field is None:
        raise PreconditionError("probe_h3 needs a solved value field to synthesise a feedback")
    model = ext
    if isinstance(ext, ControlProblem):
        model = extend(ext) if ext.control_set.kind == "cone" else ext
    base = model.base if isinstance(model, ExtendedProblem) else model
    mesh = mesh or ControlMesh.for_problem(base, 65)
    grid: Grid = field.grid
    xi = np.atleast_1d(np.asarray(x, dtype=float)).copy()
    path = [xi.copy()]
    dist = [float(target.distance(xi))]
    lo, hi = np.asarray(grid.lo), np.asarray(grid.hi)
    for _ in range(int(budget)):
        if dist[-1] <= target.atol:
            break
        F, L, _ = mesh_data(model, mesh, xi[None])
        nxt = xi[None, :] + ds * F[0]
        inside = np.all((nxt >= lo) & (nxt <= hi), axis=1)
        vals = np.full(len(nxt), np.inf)
        if np.any(inside):
            vals[inside] = interpolate(field, nxt[inside])
        score = ds * L[0] + vals
        if not np.any(np.isfinite(score)):
            break
        xi = nxt[int(np.argmin(score))]
        path.append(xi.copy())
        dist.append(float(target.distance(xi)))
    d = np.array(dist)
    start_val = interpolate(field, np.atleast_1d(np.asarray(x, dtype=float)))
    return H3Report(float(d.min()), bool(d.min() <= tol), ds * (len(d) - 1), np.array(path), d, float(start_val))
