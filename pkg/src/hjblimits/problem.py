"""Control problems: dynamics, running cost, control sets and growth data.

Evaluators are vectorised.  ``f(x, a)`` receives a state array of shape
``(..., n)`` and a control array of shape ``(..., m)`` (broadcastable against
each other) and returns velocities of shape ``(..., n)``; ``l(x, a)`` returns
shape ``(...)``.  Evaluators must be pure so the grid solvers can call them on
whole node-by-control blocks at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    DomainError,
    EvaluationError,
    ModelViolationError,
    RecessionUndefinedError,
)

Evaluator = Callable[[np.ndarray, np.ndarray], np.ndarray]

CONTROL_KINDS = ("compact-box", "compact-finite", "cone")
BUILTIN_NAMES = ("example-3-3", "example-4-1", "lqr-1d", "lqr-nd", "ergodic-torus-1d")

# geometric sequence rho_k = 2^-k, k = 4..20, used for numerical recession limits
_RHO_EXPONENTS = np.arange(4, 21)
_RECESSION_RTOL = 1e-6


@dataclass(frozen=True)
class ControlSetDescriptor:
    """Control set A: a compact box, a finite point set, or a closed convex cone.

    For cones, ``cone`` is either ``"full"`` (all of R^m), ``"nonnegative"``
    (the closed orthant) or a vectorised predicate ``a -> bool``.
    """

    kind: str
    dimension: int
    bounds: np.ndarray | None = None
    points: np.ndarray | None = None
    cone: str | Callable[[np.ndarray], np.ndarray] = "full"

    def __post_init__(self):
        if self.kind not in CONTROL_KINDS:
            raise DomainError(f"unknown control-set kind {self.kind!r}")
        if self.dimension < 1:
            raise DomainError("control dimension must be positive")
        if self.kind == "compact-box":
            b = np.asarray(self.bounds, dtype=float).reshape(self.dimension, 2)
            if np.any(b[:, 0] > b[:, 1]) or not np.all(np.isfinite(b)):
                raise DomainError("box bounds must be finite with lo <= hi")
            object.__setattr__(self, "bounds", b)
        elif self.kind == "compact-finite":
            pts = np.asarray(self.points, dtype=float).reshape(-1, self.dimension)
            if len(pts) == 0 or not np.all(np.isfinite(pts)):
                raise DomainError("finite control set must be nonempty and finite")
            object.__setattr__(self, "points", pts)
        elif isinstance(self.cone, str) and self.cone not in ("full", "nonnegative"):
            raise DomainError(f"unknown cone {self.cone!r}")

    @classmethod
    def box(cls, bounds):
        bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
        return cls("compact-box", bounds.shape[0], bounds=bounds)

    @classmethod
    def finite(cls, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        return cls("compact-finite", pts.shape[1], points=pts)

    @classmethod
    def conic(cls, dimension, cone="full"):
        return cls("cone", dimension, cone=cone)

    @property
    def is_compact(self) -> bool:
        return self.kind != "cone"

    def contains(self, a, atol=1e-12):
        """Vectorised membership test over the last axis of ``a``."""
        a = np.asarray(a, dtype=float)
        if a.shape[-1:] != (self.dimension,):
            raise DomainError(f"control must have trailing dimension {self.dimension}")
        if self.kind == "compact-box":
            lo, hi = self.bounds[:, 0], self.bounds[:, 1]
            return np.all((a >= lo - atol) & (a <= hi + atol), axis=-1)
        if self.kind == "compact-finite":
            d = np.abs(a[..., None, :] - self.points).max(axis=-1)
            return np.any(d <= atol, axis=-1)
        if callable(self.cone):
            return np.asarray(self.cone(a), dtype=bool)
        if self.cone == "nonnegative":
            return np.all(a >= -atol, axis=-1)
        return np.all(np.isfinite(a), axis=-1)


@dataclass(frozen=True)
class GrowthData:
    """Growth exponents and constants.

    ``q >= p >= 1``; ``C1``, ``C2`` are the coercivity constants
    (``l(x, a) >= C2 |a|^q - C1``) and only matter for cones.  All constants
    are declared metadata used by report-style checks, never enforced while
    evaluating.
    """

    p: int = 1
    q: int = 1
    M: float = 1.0
    C1: float = 0.0
    C2: float = 1.0
    modulus: str = "lipschitz"

    def __post_init__(self):
        if int(self.p) != self.p or int(self.q) != self.q:
            raise DomainError("growth exponents must be integers")
        if not (self.q >= self.p >= 1):
            raise DomainError(f"need q >= p >= 1, got p={self.p}, q={self.q}")
        if self.M <= 0 or self.C1 < 0 or self.C2 < 0:
            raise DomainError("need M > 0, C1 >= 0, C2 >= 0")


@dataclass(frozen=True)
class TargetSet:
    """Closed target set described by its distance function.

    ``distance`` is vectorised over the last axis; membership is
    ``distance <= atol``.  ``boundary_points`` optionally lists points of the
    boundary (used by positive-definiteness prechecks).
    """

    distance: Callable[[np.ndarray], np.ndarray]
    radius: float = 1.0
    boundary_points: np.ndarray | None = None
    atol: float = 1e-9
    description: str = ""

    def contains(self, x):
        return np.asarray(self.distance(np.asarray(x, dtype=float))) <= self.atol

    @classmethod
    def point(cls, center):
        c = np.atleast_1d(np.asarray(center, dtype=float))
        return cls(
            distance=lambda x: np.linalg.norm(np.asarray(x) - c, axis=-1),
            radius=float(np.linalg.norm(c)),
            boundary_points=c[None, :],
            description=f"point {c.tolist()}",
        )

    @classmethod
    def ball(cls, center, r):
        c = np.atleast_1d(np.asarray(center, dtype=float))

        def dist(x):
            return np.maximum(np.linalg.norm(np.asarray(x) - c, axis=-1) - r, 0.0)

        bp = None
        if c.size == 1:
            bp = np.array([[c[0] - r], [c[0] + r]])
        return cls(dist, float(np.linalg.norm(c) + r), bp, description=f"ball {c.tolist()} r={r}")

    @classmethod
    def box(cls, lo, hi):
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))

        def dist(x):
            x = np.asarray(x)
            gap = np.maximum(np.maximum(lo - x, x - hi), 0.0)
            return np.linalg.norm(gap, axis=-1)

        return cls(dist, float(np.linalg.norm(np.maximum(abs(lo), abs(hi)))),
                   description=f"box {lo.tolist()}..{hi.tolist()}")


@dataclass(frozen=True)
class ControlProblem:
    """Dynamics ``f``, running cost ``l >= 0`` and control set ``A``.

    ``periods`` marks problems periodic in every state coordinate (torus
    problems); ``controllability`` holds declared constants ``(C, gamma)`` with
    reach time ``S <= C |x - z|^gamma``.
    """

    n: int
    f: Evaluator
    l: Evaluator
    control_set: ControlSetDescriptor
    growth: GrowthData = field(default_factory=GrowthData)
    f_recession: Evaluator | None = None
    l_recession: Evaluator | None = None
    target: TargetSet | None = None
    periods: tuple | None = None
    controllability: tuple | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 1:
            raise DomainError("state dimension must be positive")
        if self.control_set.kind == "cone" and self.growth.C2 <= 0:
            raise DomainError("C2 must be positive for cone control sets")
        if self.periods is not None and len(self.periods) != self.n:
            raise DomainError("one period per state coordinate required")

    @property
    def m(self) -> int:
        return self.control_set.dimension

    @property
    def is_compact(self) -> bool:
        return self.control_set.is_compact

    def validate(self, n_samples=1000, seed=0, box=2.0, control_radius=10.0):
        """Sample (x, a) pairs and check l >= 0 and f-recession == 0 when q > p."""
        rng = np.random.default_rng(seed)
        x = rng.uniform(-box, box, size=(n_samples, self.n))
        a = sample_controls(self.control_set, n_samples, rng, control_radius)
        lv = np.asarray(self.l(x, a), dtype=float)
        if np.any(lv < 0):
            i = int(np.argmin(lv))
            raise ModelViolationError(f"l({x[i].tolist()}, {a[i].tolist()}) = {lv[i]} < 0")
        if (self.control_set.kind == "cone" and self.growth.q > self.growth.p
                and self.f_recession is not None):
            fr = np.asarray(self.f_recession(x, a), dtype=float)
            if np.max(np.abs(fr)) > 1e-8:
                raise ModelViolationError("f-recession must vanish when q > p")
        return True


def sample_controls(cs: ControlSetDescriptor, k, rng, radius=10.0):
    """Draw ``k`` controls from A (cones are sampled inside a ball of ``radius``)."""
    if cs.kind == "compact-box":
        return rng.uniform(cs.bounds[:, 0], cs.bounds[:, 1], size=(k, cs.dimension))
    if cs.kind == "compact-finite":
        return cs.points[rng.integers(0, len(cs.points), size=k)]
    out = np.empty((0, cs.dimension))
    while len(out) < k:
        cand = rng.uniform(-radius, radius, size=(2 * k, cs.dimension))
        out = np.vstack([out, cand[cs.contains(cand)]])
    return out[:k]


def _as_state(problem, x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x[None]
    if x.shape[-1] != problem.n:
        raise DomainError(f"state must have trailing dimension {problem.n}")
    return x


def _as_control(problem, a):
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        a = a[None]
    if not np.all(problem.control_set.contains(a)):
        raise DomainError(f"control {a.tolist()} outside the control set")
    return a


def eval_dynamics(problem: ControlProblem, x, a):
    """Velocity ``f(x, a)``; raises on controls outside A or non-finite output."""
    x = _as_state(problem, x)
    a = _as_control(problem, a)
    v = np.asarray(problem.f(x, a), dtype=float)
    if not np.all(np.isfinite(v)):
        raise EvaluationError(f"non-finite dynamics at x={x.tolist()}, a={a.tolist()}")
    return v


def eval_lagrangian(problem: ControlProblem, x, a):
    """Running cost ``l(x, a)``; negative values are a model violation."""
    x = _as_state(problem, x)
    a = _as_control(problem, a)
    v = np.asarray(problem.l(x, a), dtype=float)
    if not np.all(np.isfinite(v)):
        raise EvaluationError(f"non-finite cost at x={x.tolist()}, a={a.tolist()}")
    if np.any(v < 0):
        raise ModelViolationError(f"negative running cost {v} at x={x.tolist()}, a={a.tolist()}")
    return v if v.ndim else float(v)


def numerical_recession(phi: Evaluator, x, a, q):
    """Estimate ``lim_{rho->0+} rho^q phi(x, a/rho)``.

    Evaluates along rho = 2^-k, k = 4..20, applies one Richardson step
    (first-order error model) and requires the last three extrapolants to
    agree to 1e-6 relative.
    """
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    seq = []
    for k in _RHO_EXPONENTS:
        rho = 2.0 ** (-float(k))
        with np.errstate(over="ignore", invalid="ignore"):
            seq.append(rho**q * np.asarray(phi(x, a / rho), dtype=float))
    seq = np.stack(seq)
    rich = 2.0 * seq[1:] - seq[:-1]
    last = rich[-1]
    scale = 1.0 + np.abs(last)
    spread = np.max(np.abs(rich[-3:] - last), axis=0)
    bad = ~np.isfinite(last) | (spread > _RECESSION_RTOL * scale)
    if np.any(bad):
        raise RecessionUndefinedError(
            f"recession limit did not settle (max spread {np.nanmax(spread / scale):.3g})"
        )
    # snap extrapolation noise to exact zero
    return np.where(np.abs(last) <= 1e-12 * scale, 0.0, last)


def recession(problem: ControlProblem, which, x, a):
    """Recession function of the dynamics or the running cost at ``(x, a)``.

    User-supplied recessions take precedence.  When ``q > p`` the dynamics
    recession is identically zero.
    """
    if problem.control_set.kind != "cone":
        raise DomainError("recession functions are defined for cone control sets only")
    if which not in ("dynamics", "lagrangian"):
        raise DomainError(f"which must be 'dynamics' or 'lagrangian', got {which!r}")
    x = _as_state(problem, x)
    a = _as_control(problem, a)
    q = problem.growth.q
    if which == "dynamics":
        if problem.f_recession is not None:
            return np.asarray(problem.f_recession(x, a), dtype=float)
        if q > problem.growth.p:
            return np.zeros(np.broadcast_shapes(x.shape[:-1], a.shape[:-1]) + (problem.n,))
        return numerical_recession(problem.f, x, a, q)
    if problem.l_recession is not None:
        return np.asarray(problem.l_recession(x, a), dtype=float)
    return numerical_recession(problem.l, x, a, q)


@dataclass
class CoercivityReport:
    """Result of :func:`check_coercivity`; ``witness`` is the minimising (x, a)."""

    passed: bool
    margin: float
    witness: tuple | None
    samples: int


def _lattice(lo, hi, count):
    count = max(int(count) | 1, 3)  # odd, so the box centre is a node
    return np.linspace(lo, hi, count)


def check_coercivity(problem: ControlProblem, sample_budget=10_000, box=2.0, control_radius=5.0):
    """Sample ``l(x, a) - C2 |a|^q + C1`` on a lattice and report its minimum.

    The lattice is odd along every axis so that the origin is included.  A
    negative minimum fails the check and the minimising ``(x, a)`` is
    returned as witness.
    """
    if problem.control_set.kind != "cone":
        raise DomainError("coercivity is checked for cone control sets only")
    g = problem.growth
    dims = problem.n + problem.m
    per_axis = max(3, int(round(sample_budget ** (1.0 / dims))))
    xs = np.stack(np.meshgrid(*[_lattice(-box, box, per_axis)] * problem.n, indexing="ij"), -1)
    xs = xs.reshape(-1, problem.n)
    as_ = np.stack(np.meshgrid(*[_lattice(-control_radius, control_radius, per_axis)] * problem.m,
                               indexing="ij"), -1).reshape(-1, problem.m)
    as_ = as_[problem.control_set.contains(as_)]
    X = xs[:, None, :]
    Aa = as_[None, :, :]
    lv = np.asarray(problem.l(X, Aa), dtype=float)
    slack = lv - g.C2 * np.linalg.norm(Aa, axis=-1) ** g.q + g.C1
    i, j = np.unravel_index(np.argmin(slack), slack.shape)
    margin = float(slack[i, j])
    # the argmin is reported either way: a violation witness or where the margin is attained
    return CoercivityReport(margin >= -1e-12, margin, (xs[i].copy(), as_[j].copy()), int(slack.size))


# --- built-in catalogue -----------------------------------------------------


def _example_3_3():
    def f(x, a):
        x = np.asarray(x)
        a = np.asarray(a)[..., 0]
        speed = np.abs(x[..., 0]) + np.abs(x[..., 1])
        shape = np.broadcast_shapes(speed.shape, a.shape)
        return np.stack([np.broadcast_to(a, shape), np.broadcast_to(speed, shape)], axis=-1)

    def l(x, a):
        return np.sum(np.asarray(x) ** 2, axis=-1) + np.abs(np.asarray(a)[..., 0])

    def f_rec(x, a):
        a = np.asarray(a)[..., 0]
        shape = np.broadcast_shapes(np.shape(x)[:-1], a.shape)
        return np.stack([np.broadcast_to(a, shape), np.zeros(shape)], axis=-1)

    def l_rec(x, a):
        a = np.abs(np.asarray(a)[..., 0])
        return np.broadcast_to(a, np.broadcast_shapes(np.shape(x)[:-1], a.shape)).copy()

    return ControlProblem(
        n=2, f=f, l=l, control_set=ControlSetDescriptor.conic(1),
        growth=GrowthData(p=1, q=1, M=2.0, C1=0.0, C2=1.0),
        f_recession=f_rec, l_recession=l_rec, target=TargetSet.point([0.0, 0.0]),
        name="example-3-3",
    )


def _example_4_1(relaxed=False):
    def f(x, a):
        x = np.asarray(x)
        a = np.asarray(a)[..., 0]
        shape = np.broadcast_shapes(x.shape[:-1], a.shape)
        return np.stack([np.broadcast_to(a, shape),
                         np.broadcast_to(np.abs(x[..., 0]), shape)], axis=-1)

    def l(x, a):
        v = np.sum(np.asarray(x) ** 2, axis=-1)
        return np.broadcast_to(v, np.broadcast_shapes(v.shape, np.shape(a)[:-1])).copy()

    cs = ControlSetDescriptor.box([[-1.0, 1.0]]) if relaxed else ControlSetDescriptor.finite([1.0, -1.0])
    return ControlProblem(
        n=2, f=f, l=l, control_set=cs, growth=GrowthData(p=1, q=1, M=2.0),
        target=TargetSet.point([0.0, 0.0]), name="example-4-1",
        params={"relaxed": bool(relaxed)},
    )


def _lqr_1d(Q=1.0, R=1.0, bound=None):
    if R <= 0 or Q < 0:
        raise DomainError("lqr-1d needs Q >= 0 and R > 0")

    def f(x, a):
        return np.broadcast_to(np.asarray(a), np.broadcast_shapes(np.shape(x), np.shape(a))).copy()

    def l(x, a):
        return Q * np.asarray(x)[..., 0] ** 2 + R * np.asarray(a)[..., 0] ** 2

    def l_rec(x, a):
        v = R * np.asarray(a)[..., 0] ** 2
        return np.broadcast_to(v, np.broadcast_shapes(np.shape(x)[:-1], v.shape)).copy()

    cs = ControlSetDescriptor.conic(1) if bound is None else ControlSetDescriptor.box([[-bound, bound]])
    return ControlProblem(
        n=1, f=f, l=l, control_set=cs, growth=GrowthData(p=1, q=2, M=1.0, C1=0.0, C2=R),
        f_recession=None if bound is not None else (lambda x, a: np.zeros(
            np.broadcast_shapes(np.shape(x), np.shape(a)))),
        l_recession=None if bound is not None else l_rec,
        target=TargetSet.point([0.0]), name="lqr-1d",
        params={"Q": float(Q), "R": float(R), "bound": bound},
    )


def _lqr_nd(Q=None, R=None, n=2):
    Q = np.eye(n) if Q is None else np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.eye(Q.shape[0]) if R is None else np.atleast_2d(np.asarray(R, dtype=float))
    n = Q.shape[0]
    if R.shape != (n, n) or Q.shape != (n, n):
        raise DomainError("lqr-nd needs square Q, R of equal size (dynamics y' = a)")
    if np.min(np.linalg.eigvalsh((R + R.T) / 2)) <= 0:
        raise DomainError("R must be positive definite")

    def f(x, a):
        return np.broadcast_to(np.asarray(a), np.broadcast_shapes(np.shape(x), np.shape(a))).copy()

    def l(x, a):
        x = np.asarray(x)
        a = np.asarray(a)
        return np.einsum("...i,ij,...j->...", x, Q, x) + np.einsum("...i,ij,...j->...", a, R, a)

    def l_rec(x, a):
        a = np.asarray(a)
        v = np.einsum("...i,ij,...j->...", a, R, a)
        return np.broadcast_to(v, np.broadcast_shapes(np.shape(x)[:-1], v.shape)).copy()

    return ControlProblem(
        n=n, f=f, l=l, control_set=ControlSetDescriptor.conic(n),
        growth=GrowthData(p=1, q=2, M=1.0, C1=0.0, C2=float(np.min(np.linalg.eigvalsh(R)))),
        f_recession=lambda x, a: np.zeros(np.broadcast_shapes(np.shape(x), np.shape(a))),
        l_recession=l_rec, target=TargetSet.point(np.zeros(n)), name="lqr-nd",
        params={"Q": Q.tolist(), "R": R.tolist()},
    )


def _ergodic_torus_1d(bound=None):
    period = 2.0 * np.pi

    def f(x, a):
        return np.broadcast_to(np.asarray(a), np.broadcast_shapes(np.shape(x), np.shape(a))).copy()

    def l(x, a):
        return 2.0 + np.sin(np.asarray(x)[..., 0]) + np.asarray(a)[..., 0] ** 2

    def l_rec(x, a):
        v = np.asarray(a)[..., 0] ** 2
        return np.broadcast_to(v, np.broadcast_shapes(np.shape(x)[:-1], v.shape)).copy()

    cs = ControlSetDescriptor.conic(1) if bound is None else ControlSetDescriptor.box([[-bound, bound]])
    # extended speed |w0 w| <= 1/2, so any z is reached in s-time <= 2|x - z|
    return ControlProblem(
        n=1, f=f, l=l, control_set=cs, growth=GrowthData(p=1, q=2, M=3.0, C1=0.0, C2=1.0),
        f_recession=None if bound is not None else (lambda x, a: np.zeros(
            np.broadcast_shapes(np.shape(x), np.shape(a)))),
        l_recession=None if bound is not None else l_rec,
        periods=(period,), controllability=(2.0, 1.0), name="ergodic-torus-1d",
        params={"bound": bound},
    )


_BUILTINS = {
    "example-3-3": _example_3_3,
    "example-4-1": _example_4_1,
    "lqr-1d": _lqr_1d,
    "lqr-nd": _lqr_nd,
    "ergodic-torus-1d": _ergodic_torus_1d,
}


def builtin(name: str, **params) -> ControlProblem:
    """Return one of the catalogued example problems.

    ``lqr-1d`` takes ``Q``, ``R`` and an optional compact truncation
    ``bound``; ``lqr-nd`` takes matrices ``Q``, ``R``; ``example-4-1`` takes
    ``relaxed`` (use the convexified control set [-1, 1]);
    ``ergodic-torus-1d`` takes an optional ``bound``.
    """
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise KeyError(f"unknown built-in problem {name!r}; choose from {BUILTIN_NAMES}") from None
    return factory(**params)
