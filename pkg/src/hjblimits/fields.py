"""Rectangular grids and value fields with an explicit infinite state.

A node value of ``math.inf`` is the INFINITE marker: it is a tagged state, not a
large number, and arithmetic follows ``inf + c = inf``, ``min(inf, c) = c``.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, DomainError

INFINITE = np.inf


@dataclass(frozen=True)
class Grid:
    """Tensor grid.  Non-periodic axes carry ``count`` nodes from ``lo`` to ``hi``
    inclusive; periodic axes carry ``count`` nodes on ``[lo, hi)`` with ``hi``
    identified with ``lo``.
    """

    lo: tuple
    hi: tuple
    counts: tuple
    periodic: tuple = ()

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        counts = tuple(int(c) for c in np.atleast_1d(self.counts))
        if not (len(lo) == len(hi) == len(counts)):
            raise ConfigurationError("lo, hi and counts must have equal length")
        if any(c < 2 for c in counts):
            raise ConfigurationError("need at least 2 nodes per axis")
        if any(a >= b for a, b in zip(lo, hi)):
            raise ConfigurationError("need lo < hi on every axis")
        periodic = tuple(sorted(set(int(i) for i in self.periodic)))
        if any(i < 0 or i >= len(lo) for i in periodic):
            raise ConfigurationError("periodic axis index out of range")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "periodic", periodic)

    @classmethod
    def uniform(cls, lo, hi, count, dim=1):
        return cls((lo,) * dim, (hi,) * dim, (count,) * dim)

    @classmethod
    def torus(cls, periods, counts, lo=None):
        periods = tuple(float(p) for p in np.atleast_1d(periods))
        lo = (0.0,) * len(periods) if lo is None else tuple(np.atleast_1d(lo))
        hi = tuple(a + p for a, p in zip(lo, periods))
        return cls(lo, hi, tuple(np.atleast_1d(counts)), tuple(range(len(periods))))

    @property
    def dim(self):
        return len(self.lo)

    @property
    def shape(self):
        return self.counts

    @property
    def size(self):
        return int(np.prod(self.counts))

    @property
    def spacing(self):
        return tuple(
            (h - l) / (c if i in self.periodic else c - 1)
            for i, (l, h, c) in enumerate(zip(self.lo, self.hi, self.counts))
        )

    def axes(self):
        out = []
        for i, (l, h, c) in enumerate(zip(self.lo, self.hi, self.counts)):
            if i in self.periodic:
                out.append(l + (h - l) * np.arange(c) / c)
            else:
                out.append(np.linspace(l, h, c))
        return out

    def nodes(self):
        """Node coordinates, shape ``(size, dim)``, C order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def interior_mask(self, layers=1):
        """Nodes at least ``layers`` away from every non-periodic edge."""
        mask = np.ones(self.shape, dtype=bool)
        for ax in range(self.dim):
            if ax in self.periodic:
                continue
            idx = np.arange(self.counts[ax])
            keep = (idx >= layers) & (idx < self.counts[ax] - layers)
            shape = [1] * self.dim
            shape[ax] = -1
            mask &= keep.reshape(shape)
        return mask

    def to_dict(self):
        return {"lo": list(self.lo), "hi": list(self.hi), "counts": list(self.counts),
                "periodic": list(self.periodic)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["lo"]), tuple(d["hi"]), tuple(d["counts"]), tuple(d.get("periodic", ())))


def _snap(u, tol=1e-10):
    """Round index coordinates within ``tol`` of an integer so node queries are exact."""
    r = np.round(u)
    return np.where(np.abs(u - r) <= tol, r, u)


def interpolation_weights(grid: Grid, pts, clamp=True):
    """Multilinear stencils for query points.

    Returns ``(index, weight, outside)`` with ``index``/``weight`` of shape
    ``(K, 2**dim)`` (flat node indices) and ``outside`` flagging points beyond a
    non-periodic edge.  With ``clamp`` such points are projected onto the box
    (ghost values copied from the outermost layer); otherwise they raise.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if pts.shape[1] != grid.dim:
        raise DomainError(f"points must have {grid.dim} coordinates")
    K = len(pts)
    outside = np.zeros(K, dtype=bool)
    lower = np.empty((K, grid.dim), dtype=np.int64)
    frac = np.empty((K, grid.dim))
    for ax in range(grid.dim):
        lo, hi, c = grid.lo[ax], grid.hi[ax], grid.counts[ax]
        h = grid.spacing[ax]
        x = pts[:, ax]
        if ax in grid.periodic:
            u = np.mod(_snap((x - lo) / h), c)
            i = np.floor(u).astype(np.int64)
            fr = u - i
            i = np.mod(i, c)
        else:
            tol = 1e-12 * max(1.0, abs(lo), abs(hi))
            out = (x < lo - tol) | (x > hi + tol)
            outside |= out
            if np.any(out) and not clamp:
                bad = pts[np.argmax(out)]
                raise DomainError(f"point {bad.tolist()} outside the grid")
            u = _snap((np.clip(x, lo, hi) - lo) / h)
            i = np.clip(np.floor(u).astype(np.int64), 0, c - 2)
            fr = np.clip(u - i, 0.0, 1.0)
        lower[:, ax] = i
        frac[:, ax] = fr
    strides = np.array([int(np.prod(grid.counts[ax + 1:])) for ax in range(grid.dim)], dtype=np.int64)
    corners = list(itertools.product((0, 1), repeat=grid.dim))
    index = np.empty((K, len(corners)), dtype=np.int64)
    weight = np.empty((K, len(corners)))
    for j, corner in enumerate(corners):
        flat = np.zeros(K, dtype=np.int64)
        w = np.ones(K)
        for ax, bit in enumerate(corner):
            i = lower[:, ax] + bit
            if ax in grid.periodic:
                i = np.mod(i, grid.counts[ax])
            flat += i * strides[ax]
            w *= frac[:, ax] if bit else 1.0 - frac[:, ax]
        index[:, j] = flat
        weight[:, j] = w
    return index, weight, outside


def interpolation_matrix(grid: Grid, pts, clamp=True):
    """Sparse ``(K, grid.size)`` multilinear interpolation operator (zero weights dropped)."""
    index, weight, outside = interpolation_weights(grid, pts, clamp)
    K = len(index)
    rows = np.repeat(np.arange(K), index.shape[1])
    mat = sp.csr_matrix((weight.ravel(), (rows, index.ravel())), shape=(K, grid.size))
    mat.eliminate_zeros()
    return mat, outside


@dataclass
class ValueField:
    """Per-node values on a grid; ``inf`` marks INFINITE nodes.

    ``kruzkov`` fields live in [0, 1] instead of [0, inf].
    """

    grid: Grid
    values: np.ndarray
    kruzkov: bool = False
    meta: dict = field(default_factory=dict)
    provisional: np.ndarray | None = None  # nodes whose limit value is not settled

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(self.grid.shape)
        if np.any(np.isnan(v)):
            raise DomainError("NaN in value field")
        self.values = v

    @property
    def infinite(self):
        return np.isposinf(self.values)

    @property
    def finite(self):
        return ~self.infinite

    def check_invariants(self, atol=1e-12):
        fin = self.values[self.finite]
        if np.any(fin < -atol):
            raise DomainError("value fields are nonnegative")
        if self.kruzkov and (np.any(self.infinite) or np.any(fin > 1 + atol)):
            raise DomainError("Kruzkov fields lie in [0, 1]")
        return True

    def to_csv(self) -> str:
        """One row per node: coordinates then value (``inf`` for INFINITE).

        The first line is ``# `` followed by JSON metadata including the grid.
        """
        buf = io.StringIO()
        header = {"grid": self.grid.to_dict(), "kruzkov": self.kruzkov, **self.meta}
        buf.write("# " + json.dumps(header, sort_keys=True) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(self.grid.dim)] + ["value"])
        for node, val in zip(self.grid.nodes(), self.values.ravel()):
            w.writerow([repr(float(c)) for c in node] + ["inf" if np.isposinf(val) else repr(float(val))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ValueField":
        lines = text.splitlines()
        header = json.loads(lines[0][2:])
        grid = Grid.from_dict(header.pop("grid"))
        kruzkov = header.pop("kruzkov", False)
        rows = list(csv.reader(lines[2:]))
        vals = np.array([float(r[-1]) for r in rows])
        return cls(grid, vals, kruzkov, header)


def interpolate(fld: ValueField, x):
    """Multilinear interpolation at ``x`` (periodic axes wrap).

    Returns INFINITE when a stencil node carrying positive weight is INFINITE.
    Points beyond a non-periodic edge raise :class:`DomainError`.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    pts = x.reshape(-1, fld.grid.dim)
    index, weight, _ = interpolation_weights(fld.grid, pts, clamp=False)
    vals = fld.values.ravel()[index]
    hit_inf = np.any(np.isposinf(vals) & (weight > 0), axis=1)
    safe = np.where(np.isposinf(vals), 0.0, vals)
    out = np.where(hit_inf, INFINITE, np.sum(safe * weight, axis=1))
    return float(out[0]) if single else out


def sup_diff(a: ValueField, b: ValueField, mask=None):
    """``(max |a - b| over nodes finite in both, count of nodes where exactly one is INFINITE)``."""
    if a.grid != b.grid:
        raise ConfigurationError("fields live on different grids")
    m = np.ones(a.grid.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    both = a.finite & b.finite & m
    diff = float(np.max(np.abs(a.values[both] - b.values[both]))) if np.any(both) else 0.0
    disagree = int(np.count_nonzero((a.infinite ^ b.infinite) & m))
    return diff, disagree
