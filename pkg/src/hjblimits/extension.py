"""Compactification of unbounded-control problems.

For a cone A and growth exponent q, the extended data live on

    S(A) = {(w0, w) in R_+ x A : w0^q + |w|^q = 1}

and are defined by ``Phi_bar(x, w0, w) = w0^q Phi(x, w / w0)`` for ``w0 > 0``
and by the recession function ``Phi_inf(x, w)`` for ``w0 = 0``.  Extended
trajectories run in a pseudo-time s; physical time is ``t(s) = int w0^q ds``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from ._ode import rk4_piecewise
from .errors import DomainError, NonInvertibleTimeError
from .problem import ControlProblem, numerical_recession

SPHERE_TOL = 1e-10
# w0 below this counts as zero when detecting jumps
JUMP_W0_TOL = 1e-12


@dataclass(frozen=True)
class ExtendedControlPoint:
    """A point (w0, w) of S(A)."""

    w0: float
    w: np.ndarray

    def check(self, q, control_set=None):
        w = np.atleast_1d(np.asarray(self.w, dtype=float))
        if self.w0 < 0 or self.w0 > 1 + SPHERE_TOL:
            raise DomainError(f"w0={self.w0} outside [0, 1]")
        if abs(self.w0**q + np.linalg.norm(w) ** q - 1.0) > SPHERE_TOL:
            raise DomainError(f"({self.w0}, {w.tolist()}) is not on S(A) for q={q}")
        if control_set is not None and not control_set.contains(w):
            raise DomainError(f"w={w.tolist()} outside the control cone")
        return True


def _phi_bar(phi, rec, x, w0, w, q):
    x = np.asarray(x, dtype=float)
    w0 = np.asarray(w0, dtype=float)
    w = np.asarray(w, dtype=float)
    batch = np.broadcast_shapes(x.shape[:-1], w0.shape, w.shape[:-1])
    xb = np.broadcast_to(x, batch + x.shape[-1:])
    w0b = np.broadcast_to(w0, batch)
    wb = np.broadcast_to(w, batch + w.shape[-1:])
    pos = w0b > 0
    safe = np.where(pos, w0b, 1.0)
    with np.errstate(over="ignore", invalid="ignore"):
        val = np.asarray(phi(xb, wb / safe[..., None]), dtype=float)
    scale = safe**q
    if val.ndim > len(batch):
        val = val * scale[..., None]
        mask = pos[..., None]
    else:
        val = val * scale
        mask = pos
    out = np.array(np.broadcast_to(val, np.broadcast_shapes(val.shape, mask.shape)))
    if not np.all(pos):
        zero = ~pos
        out[zero] = rec(xb[zero], wb[zero])
    return out


@dataclass(frozen=True)
class ExtendedProblem:
    """Extended dynamics and running cost on S(A) for a cone problem."""

    base: ControlProblem
    _f_rec: object = field(repr=False, default=None)
    _l_rec: object = field(repr=False, default=None)

    @property
    def q(self):
        return self.base.growth.q

    @property
    def n(self):
        return self.base.n

    @property
    def m(self):
        return self.base.m

    def f_bar(self, x, w0, w):
        return _phi_bar(self.base.f, self._f_rec, x, w0, w, self.q)

    def l_bar(self, x, w0, w):
        return _phi_bar(self.base.l, self._l_rec, x, w0, w, self.q)


def extend(problem: ControlProblem) -> ExtendedProblem:
    """Build the compactified problem; recession limits are validated on samples."""
    if problem.control_set.kind != "cone":
        raise DomainError("only cone control sets are compactified")
    q, p = problem.growth.q, problem.growth.p

    if problem.f_recession is not None:
        f_rec = problem.f_recession
    elif q > p:
        def f_rec(x, a):
            return np.zeros(np.broadcast_shapes(np.shape(x)[:-1], np.shape(a)[:-1]) + (problem.n,))
    else:
        def f_rec(x, a):
            return numerical_recession(problem.f, x, a, q)

    if problem.l_recession is not None:
        l_rec = problem.l_recession
    else:
        def l_rec(x, a):
            return numerical_recession(problem.l, x, a, q)

    # surface RecessionUndefinedError at construction rather than mid-solve
    rng = np.random.default_rng(12345)
    xs = rng.uniform(-1, 1, size=(8, problem.n))
    ws = rng.normal(size=(8, problem.m))
    ws = ws[problem.control_set.contains(ws)]
    if len(ws):
        ws = ws / np.linalg.norm(ws, axis=-1, keepdims=True)
        f_rec(xs[: len(ws)], ws)
        l_rec(xs[: len(ws)], ws)
    return ExtendedProblem(problem, f_rec, l_rec)


@dataclass(frozen=True)
class TimedControl:
    """Piecewise-constant control: ``values[k]`` holds on ``[breakpoints[k], breakpoints[k+1])``.

    Extended controls store ``(w0, w...)`` per row.
    """

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.breakpoints, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if b.ndim != 1 or len(b) != len(v) + 1:
            raise DomainError("need len(breakpoints) == len(values) + 1")
        if np.any(np.diff(b) <= 0):
            raise DomainError("breakpoints must be strictly increasing")
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "values", v)

    @property
    def start(self):
        return float(self.breakpoints[0])

    @property
    def end(self):
        return float(self.breakpoints[-1])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self.breakpoints, t, side="right") - 1, 0, len(self.values) - 1)
        return self.values[idx]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["breakpoint"] + [f"value{i}" for i in range(self.values.shape[1])])
        for k, b in enumerate(self.breakpoints):
            row = [repr(float(b))]
            row += [repr(float(v)) for v in self.values[k]] if k < len(self.values) else [""] * self.values.shape[1]
            w.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TimedControl":
        rows = list(csv.reader(io.StringIO(text)))[1:]
        bps = [float(r[0]) for r in rows]
        vals = [[float(c) for c in r[1:]] for r in rows[:-1]]
        return cls(np.array(bps), np.array(vals))


def _check_ordinary(alpha: TimedControl, problem: ControlProblem):
    if alpha.values.shape[1] != problem.m:
        raise DomainError(f"control values must have {problem.m} components")
    if not np.all(problem.control_set.contains(alpha.values)):
        raise DomainError("control values outside A")


def ordinary_to_extended(alpha: TimedControl, problem: ControlProblem):
    """Map an ordinary control to its extended representative in Gamma^+.

    Uses ``s(t) = int_0^t (1 + |alpha|^q)`` (exact per piece),
    ``w = alpha / (1 + |alpha|^q)^(1/q)`` and ``w0 = (1 - |w|^q)^(1/q)``.
    Returns the extended control over s and the ``(t, s)`` breakpoint pairs.
    """
    _check_ordinary(alpha, problem)
    q = problem.growth.q
    mag = np.linalg.norm(alpha.values, axis=1) ** q
    speed = 1.0 + mag
    s_bp = alpha.start + np.concatenate([[0.0], np.cumsum(speed * np.diff(alpha.breakpoints))])
    w = alpha.values / speed[:, None] ** (1.0 / q)
    w0 = (1.0 / speed) ** (1.0 / q)
    ext = TimedControl(s_bp, np.column_stack([w0, w]))
    return ext, np.column_stack([alpha.breakpoints, s_bp])


def extended_to_ordinary(wctrl: TimedControl, problem: ControlProblem):
    """Inverse time change: ``t(s) = int w0^q``, ``alpha(t) = w(s(t)) / w0(s(t))``.

    Requires ``w0 > 0`` on every piece; pieces with ``w0 = 0`` are jumps and
    belong to :func:`generalized_trajectory`.  Returns the ordinary control and
    the ``(s, t)`` breakpoint pairs.
    """
    q = problem.growth.q
    w0 = wctrl.values[:, 0]
    w = wctrl.values[:, 1:]
    if w.shape[1] != problem.m:
        raise DomainError(f"extended control needs 1 + {problem.m} components")
    zero = w0 <= 0
    if np.any(zero):
        first = int(np.argmax(zero))
        raise NonInvertibleTimeError(
            f"w0 vanishes on [{wctrl.breakpoints[first]}, {wctrl.breakpoints[first + 1]}); "
            "time change t(s) is not invertible there"
        )
    ds = np.diff(wctrl.breakpoints)
    dt = w0**q * ds
    if dt.sum() <= 0:
        raise NonInvertibleTimeError("int w0^q ds vanishes on the horizon")
    t_bp = wctrl.start + np.concatenate([[0.0], np.cumsum(dt)])
    alpha = TimedControl(t_bp, w / w0[:, None])
    return alpha, np.column_stack([wctrl.breakpoints, t_bp])


@dataclass
class Jump:
    t: float
    s_start: float
    s_end: float
    before: np.ndarray
    after: np.ndarray


@dataclass
class GeneralizedTrajectory:
    """Extended trajectory ``xi(s)`` and the generalized ordinary-time path.

    ``t_samples``/``y_samples`` give ``y_gen(t) = xi(s(t))`` with ``s(.)`` the
    right inverse of ``t(s)``; ``jumps`` lists discontinuities of ``y_gen``.
    """

    s: np.ndarray
    xi: np.ndarray
    cost: np.ndarray
    t_of_s: np.ndarray
    t_samples: np.ndarray
    y_samples: np.ndarray
    jumps: list
    truncated: bool
    truncated_at: float | None = None

    def y_gen(self, t):
        """Generalized state at physical time ``t`` (right-inverse convention)."""
        idx = np.searchsorted(self.t_of_s, t, side="right") - 1
        idx = np.clip(idx, 0, len(self.s) - 1)
        return self.xi[idx]


def generalized_trajectory(x, wctrl: TimedControl, problem: ControlProblem, horizon_s=None,
                           ds=1e-3, jump_tol=1e-6, ext: ExtendedProblem | None = None):
    """Integrate the extended system and rebuild the (possibly jumping) ordinary path."""
    ext = ext or extend(problem)
    q = problem.growth.q
    horizon_s = wctrl.end if horizon_s is None else float(horizon_s)
    if horizon_s > wctrl.end + 1e-12 or horizon_s <= wctrl.start:
        raise DomainError("horizon outside the control's support")
    bps = wctrl.breakpoints
    keep = bps < horizon_s
    bps = np.append(bps[keep], horizon_s)
    vals = wctrl.values[: len(bps) - 1]

    def rhs(z, u):
        return ext.f_bar(z, u[0], u[1:])

    def cost(z, u):
        return ext.l_bar(z, u[0], u[1:])

    s, xi, J, trunc = rk4_piecewise(rhs, x, bps, vals, ds, cost)
    mid = 0.5 * (s[1:] + s[:-1])  # steps never straddle breakpoints
    piece = np.clip(np.searchsorted(bps, mid, side="right") - 1, 0, len(vals) - 1)
    w0_at = vals[piece, 0]
    t_of_s = np.concatenate([[0.0], np.cumsum(w0_at**q * np.diff(s))])

    jumps = []
    for k in range(len(vals)):
        if vals[k][0] >= JUMP_W0_TOL:
            continue
        i0 = np.searchsorted(s, bps[k])
        i1 = np.searchsorted(s, bps[k + 1])
        if i1 >= len(s):
            i1 = len(s) - 1
        disp = np.linalg.norm(xi[i1] - xi[i0])
        if disp > jump_tol:
            jumps.append(Jump(float(t_of_s[i0]), float(s[i0]), float(s[i1]), xi[i0].copy(), xi[i1].copy()))

    # right inverse: for a run of equal t keep the last s
    last = np.r_[np.diff(t_of_s) > 0, True]
    return GeneralizedTrajectory(
        s=s, xi=xi, cost=J, t_of_s=t_of_s, t_samples=t_of_s[last], y_samples=xi[last],
        jumps=jumps, truncated=trunc is not None, truncated_at=trunc,
    )
