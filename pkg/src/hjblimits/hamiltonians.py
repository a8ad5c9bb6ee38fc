"""Hamiltonians as maxima over a finite control mesh.

Every Hamiltonian here is a maximum of affine functions of the costate taken
over mesh points: ``A`` itself for compact problems, ``S(A)`` for extended
ones.  For compact problems the time weight ``w0^q`` is identically 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError
from .extension import SPHERE_TOL, ExtendedProblem
from .problem import ControlProblem, ControlSetDescriptor


def _sphere_directions(cs: ControlSetDescriptor, n_dirs):
    m = cs.dimension
    if m == 1:
        dirs = np.array([[1.0], [-1.0]])
    elif m == 2:
        ang = 2 * np.pi * np.arange(n_dirs) / n_dirs
        dirs = np.column_stack([np.cos(ang), np.sin(ang)])
    else:
        # Fibonacci lattice on S^{m-1} for m = 3; generic Gaussian directions beyond
        if m == 3:
            i = np.arange(n_dirs) + 0.5
            phi = np.arccos(1 - 2 * i / n_dirs)
            th = np.pi * (1 + 5**0.5) * i
            dirs = np.column_stack([np.cos(th) * np.sin(phi), np.sin(th) * np.sin(phi), np.cos(phi)])
        else:
            rng = np.random.default_rng(0)
            dirs = rng.normal(size=(n_dirs, m))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        dirs = np.vstack([dirs, np.eye(m), -np.eye(m)])
    keep = cs.contains(dirs)
    dirs = dirs[keep]
    if len(dirs) == 0:
        raise ConfigurationError("no mesh direction lies in the control cone")
    return dirs


@dataclass(frozen=True)
class ControlMesh:
    """Finite set of controls.

    For extended meshes each row is ``(w0, w_1..w_m)`` on S(A); otherwise each
    row is a control in A.
    """

    points: np.ndarray
    extended: bool = False
    q: int = 1
    provenance: str = ""

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.size == 0 or len(pts) == 0:
            raise ConfigurationError("empty control mesh")
        object.__setattr__(self, "points", pts)
        if self.extended:
            w0, w = pts[:, 0], pts[:, 1:]
            if np.any(w0 < 0) or np.any(np.abs(w0**self.q + np.linalg.norm(w, axis=1) ** self.q - 1) > SPHERE_TOL):
                raise ConfigurationError("extended mesh points must lie on S(A)")

    def __len__(self):
        return len(self.points)

    @property
    def w0(self):
        return self.points[:, 0] if self.extended else np.ones(len(self.points))

    @property
    def w(self):
        return self.points[:, 1:] if self.extended else self.points

    @property
    def time_weight(self):
        """``w0^q`` per mesh point (1 for non-extended meshes)."""
        return self.w0**self.q if self.extended else np.ones(len(self.points))

    @classmethod
    def finite(cls, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        return cls(pts, provenance="finite set")

    @classmethod
    def box_lattice(cls, bounds, counts):
        bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
        counts = np.broadcast_to(np.atleast_1d(counts), (len(bounds),))
        axes = [np.linspace(lo, hi, int(c)) for (lo, hi), c in zip(bounds, counts)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(bounds))
        return cls(pts, provenance=f"box lattice {counts.tolist()}")

    @classmethod
    def sphere(cls, control_set: ControlSetDescriptor, q, n_radii=32, n_dirs=16):
        """S(A) mesh: directions of A on the unit sphere times radii r in [0, 1].

        Radii follow ``r_k = sin(theta_k)^(2/q)``, ``w0 = cos(theta_k)^(2/q)`` with
        ``theta_k`` uniform on [0, pi/2], so both poles ``(1, 0)`` and ``w0 = 0``
        are hit exactly.
        """
        if control_set.kind != "cone":
            raise ConfigurationError("S(A) meshes are built for cone control sets")
        dirs = _sphere_directions(control_set, n_dirs)
        theta = 0.5 * np.pi * np.arange(1, n_radii + 1) / n_radii
        r = np.sin(theta) ** (2.0 / q)
        w0 = np.cos(theta) ** (2.0 / q)
        r[-1], w0[-1] = 1.0, 0.0
        pts = [np.concatenate([[1.0], np.zeros(control_set.dimension)])]
        for d in dirs:
            for rk, w0k in zip(r, w0):
                pts.append(np.concatenate([[w0k], rk * d]))
        return cls(np.array(pts), extended=True, q=q,
                   provenance=f"sphere x radius ({len(dirs)} dirs, {n_radii} radii)")

    @classmethod
    def for_problem(cls, problem: ControlProblem, size=64):
        """Default mesh of roughly ``size`` points matching the problem's control set."""
        cs = problem.control_set
        if cs.kind == "compact-finite":
            return cls.finite(cs.points)
        if cs.kind == "compact-box":
            per_axis = max(2, int(round(size ** (1.0 / cs.dimension))))
            return cls.box_lattice(cs.bounds, per_axis)
        if cs.dimension == 1:
            n_dirs = 2 if cs.cone == "full" else 1
            n_radii = max(1, (size - 1 + n_dirs - 1) // n_dirs)
            return cls.sphere(cs, problem.growth.q, n_radii=n_radii)
        n_dirs = max(4, int(round(np.sqrt(size))))
        return cls.sphere(cs, problem.growth.q, n_radii=max(2, size // n_dirs), n_dirs=n_dirs)

    def refine(self):
        """Not every provenance can be refined; meshes are regenerated instead."""
        raise NotImplementedError


def mesh_data(model, mesh: ControlMesh, x):
    """Velocities ``(B, C, n)``, costs ``(B, C)`` and time weights ``(C,)`` at states ``x``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if isinstance(model, ExtendedProblem):
        if not mesh.extended:
            raise ConfigurationError("extended problems need an S(A) mesh")
        X = x[:, None, :]
        F = model.f_bar(X, mesh.w0[None, :], mesh.w[None, :, :])
        L = model.l_bar(X, mesh.w0[None, :], mesh.w[None, :, :])
        tw = mesh.time_weight
    elif isinstance(model, ControlProblem):
        if model.control_set.kind == "cone":
            raise ConfigurationError("cone problems must be extended before maximising over S(A)")
        if mesh.extended:
            raise ConfigurationError("compact problems need a mesh of A")
        X = x[:, None, :]
        U = mesh.points[None, :, :]
        F = np.asarray(model.f(X, U), dtype=float)
        L = np.asarray(model.l(X, U), dtype=float)
        tw = np.ones(len(mesh))
    else:
        raise TypeError(f"unsupported model {type(model).__name__}")
    B, C = len(x), len(mesh)
    F = np.broadcast_to(F, (B, C, x.shape[1]))
    L = np.broadcast_to(L, (B, C))
    return F, L, tw


def _maximise(terms, mesh, single):
    j = np.argmax(terms, axis=1)  # first index on ties
    val = terms[np.arange(len(terms)), j]
    if single:
        return float(val[0]), mesh.points[j[0]].copy()
    return val, mesh.points[j]


def _prep(model, mesh, x, p):
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    single = x.ndim <= 1
    n = model.n
    X = x.reshape(-1, n)
    P = np.broadcast_to(p.reshape(-1, n), X.shape)
    F, L, tw = mesh_data(model, mesh, X)
    return F, L, tw, P, single


def eval_H(model, mesh: ControlMesh, x, p):
    """``max_c { -<f(x, c), p> - l(x, c) }``; returns ``(value, maximiser)``."""
    F, L, _, P, single = _prep(model, mesh, x, p)
    return _maximise(-np.einsum("bcn,bn->bc", F, P) - L, mesh, single)


def eval_H_delta(model, mesh: ControlMesh, x, r, p, delta):
    """Discounted Hamiltonian ``max_c { delta r w0^q - <f_bar, p> - l_bar }``."""
    if delta < 0:
        raise DomainError("delta must be nonnegative")
    F, L, tw, P, single = _prep(model, mesh, x, p)
    r = np.broadcast_to(np.asarray(r, dtype=float).reshape(-1), (len(P),))
    terms = delta * r[:, None] * tw[None, :] - np.einsum("bcn,bn->bc", F, P) - L
    return _maximise(terms, mesh, single)[0]


def eval_K(model, mesh: ControlMesh, x, u, p):
    """Kruzkov-transformed Hamiltonian ``max_c { -<f_bar, p> - l_bar (1 - u) }``, u in [0, 1]."""
    u = np.asarray(u, dtype=float)
    if np.any(u < 0) or np.any(u > 1):
        raise DomainError("u must lie in [0, 1]")
    F, L, _, P, single = _prep(model, mesh, x, p)
    u = np.broadcast_to(u.reshape(-1), (len(P),))
    terms = -np.einsum("bcn,bn->bc", F, P) - L * (1.0 - u[:, None])
    return _maximise(terms, mesh, single)[0]


def eval_H_tilde(model, mesh: ControlMesh, x, p, lam):
    """Effective Hamiltonian ``max_c { -<f_bar, p> - l_bar + lam w0^q }``."""
    F, L, tw, P, single = _prep(model, mesh, x, p)
    terms = -np.einsum("bcn,bn->bc", F, P) - L + lam * tw[None, :]
    return _maximise(terms, mesh, single)[0]
