"""Uniform grids on the box [-L, L]^N and the discrete Helmholtz operator.

All ``n**N`` grid nodes are unknowns.  Dirichlet data lives on a ghost layer
one spacing outside the box and is supplied by a boundary rule.  The
5-point (7-point in 3D) operator ``-Delta_h + lam`` is then a strictly
diagonally dominant M-matrix, so nonnegative data give nonnegative
solutions.  The LU factors of an M-matrix keep its sign pattern, which makes
the triangular solves monotone even in floating point: ordered inputs give
nodewise ordered outputs exactly, not just up to rounding.
"""
from __future__ import annotations

import csv
import functools
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .analytic import Envelope, psi
from .errors import SolverError

__all__ = [
    "Grid", "Field", "Zero", "EnvelopeTrace", "sample", "laplacian",
    "helmholtz_solve", "monotone_check", "box_half_width",
    "write_field", "read_field", "write_field_csv", "read_field_csv",
]

RESIDUAL_TARGET = 1e-10


@dataclass(frozen=True)
class Grid:
    """``n`` nodes per axis on ``[-L, L]^N`` with spacing ``h = 2L/(n-1)``.

    ``n`` is odd so that the origin is a node.
    """

    N: int
    L: float
    n: int

    def __post_init__(self):
        if self.N not in (1, 2, 3):
            raise ValueError(f"N must be 1, 2 or 3, got {self.N}")
        if not self.L > 0:
            raise ValueError(f"L must be positive, got {self.L}")
        if self.n < 16 or self.n % 2 == 0:
            raise ValueError(f"n must be odd and at least 17, got {self.n}")

    @property
    def h(self) -> float:
        return 2.0 * self.L / (self.n - 1)

    @property
    def shape(self):
        return (self.n,) * self.N

    @property
    def size(self) -> int:
        return self.n ** self.N

    @property
    def center(self):
        c = (self.n - 1) // 2
        return (c,) * self.N

    def axis(self):
        return np.linspace(-self.L, self.L, self.n)

    def points(self):
        """Node coordinates, shape ``grid.shape + (N,)``."""
        ax = self.axis()
        mesh = np.meshgrid(*([ax] * self.N), indexing="ij")
        return np.stack(mesh, axis=-1)

    def radius(self):
        return np.sqrt(np.sum(self.points() ** 2, axis=-1))

    def refined(self) -> "Grid":
        """Same box, half the spacing."""
        return Grid(self.N, self.L, 2 * self.n - 1)

    def meta(self) -> dict:
        return {"N": self.N, "L": self.L, "n": self.n, "h": self.h}


# --------------------------------------------------------------------------
# boundary rules
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Zero:
    """Homogeneous Dirichlet data on the ghost layer."""

    def ghost(self, pts):
        return np.zeros(pts.shape[:-1])


@dataclass(frozen=True)
class EnvelopeTrace:
    """Ghost values ``scale * Psi_env`` at the ghost coordinates."""

    env: Envelope
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale >= 0:
            raise ValueError("trace scale must be nonnegative")

    def ghost(self, pts):
        return self.scale * psi(self.env, pts)


BoundaryRule = Zero | EnvelopeTrace


@dataclass(frozen=True, eq=False)
class Field:
    """Nodal values on a grid plus the rule for ghost values beyond the box."""

    grid: Grid
    values: np.ndarray
    boundary: BoundaryRule = field(default_factory=Zero)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float, copy=True)
        if vals.size == self.grid.size and vals.shape != self.grid.shape:
            vals = vals.reshape(self.grid.shape)
        if vals.shape != self.grid.shape:
            raise ValueError(f"values have shape {vals.shape}, grid expects {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def with_values(self, values, boundary=None) -> "Field":
        return Field(self.grid, values, self.boundary if boundary is None else boundary)

    def with_boundary(self, boundary) -> "Field":
        return Field(self.grid, self.values, boundary)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    @property
    def positive(self) -> bool:
        return bool(self.values.min() > 0)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))


def sample(grid: Grid, f: Callable, boundary=None) -> Field:
    """Evaluate ``f`` at every node.

    ``f`` receives the coordinate array of shape ``grid.shape + (N,)`` and
    returns values of shape ``grid.shape`` (a scalar is broadcast).
    """
    vals = np.broadcast_to(np.asarray(f(grid.points()), dtype=float), grid.shape)
    if not np.all(np.isfinite(vals)):
        raise ValueError("sampled function is not finite on the box")
    return Field(grid, vals, Zero() if boundary is None else boundary)


def box_half_width(env: Envelope, rel: float = 1e-8) -> float:
    """Smallest L with ``Psi(L)/Psi(0) <= rel`` for an envelope with ``b > 0``."""
    if env.b <= 0:
        raise ValueError("power envelopes never reach the truncation level; set L explicitly")
    target = math.log(rel)

    def g(ph):
        return -env.a * math.log(ph) - env.b * (ph - 1.0) - target

    lo, hi = 1.0, 2.0
    while g(hi) > 0:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if g(mid) > 0 else (lo, mid)
    return math.sqrt(hi * hi - 1.0)


# --------------------------------------------------------------------------
# operators
# --------------------------------------------------------------------------

def _ghost_layers(grid: Grid, rule):
    """Yield ``(axis, side, values)`` for each face of the ghost layer."""
    ax = grid.axis()
    g = grid.L + grid.h
    for d in range(grid.N):
        for side, coord in ((0, -g), (1, g)):
            axes = [ax] * grid.N
            axes[d] = np.array([coord])
            pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
            yield d, side, np.asarray(rule.ghost(pts), dtype=float)


def _padded(w: Field):
    grid = w.grid
    P = np.zeros(tuple(s + 2 for s in grid.shape))
    inner = (slice(1, -1),) * grid.N
    P[inner] = w.values
    for d, side, vals in _ghost_layers(grid, w.boundary):
        idx = [slice(1, -1)] * grid.N
        idx[d] = slice(0, 1) if side == 0 else slice(-1, None)
        P[tuple(idx)] = vals
    return P


def laplacian(w: Field) -> Field:
    """Central-difference ``Delta_h w``, ghost values from ``w.boundary``."""
    grid = w.grid
    P = _padded(w)
    c = (slice(1, -1),) * grid.N
    out = np.zeros(grid.shape)
    for d in range(grid.N):
        lo = list(c)
        hi = list(c)
        lo[d] = slice(0, -2)
        hi[d] = slice(2, None)
        out += P[tuple(hi)] + P[tuple(lo)] - 2.0 * w.values
    return Field(grid, out / grid.h ** 2)


def boundary_source(grid: Grid, rule) -> np.ndarray:
    """Ghost contributions ``g/h^2`` moved to the right-hand side."""
    return laplacian(Field(grid, np.zeros(grid.shape), rule)).values


def helmholtz_matrix(grid: Grid, lam: float):
    n, N = grid.n, grid.N
    T = sp.diags([-np.ones(n - 1), 2.0 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")
    I = sp.identity(n, format="csr")
    A = lam * sp.identity(grid.size, format="csr")
    for d in range(N):
        mats = [I] * N
        mats[d] = T
        K = mats[0]
        for M in mats[1:]:
            K = sp.kron(K, M, format="csr")
        A = A + K / grid.h ** 2
    return A.tocsc()


@functools.lru_cache(maxsize=32)
def _factor(grid: Grid, lam: float):
    A = helmholtz_matrix(grid, lam)
    # diagonal pivots keep the M-matrix sign pattern in L and U
    lu = splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
              options={"SymmetricMode": True})
    return A, lu


def helmholtz_solve(lam: float, rhs: Field, boundary=None) -> Field:
    """Solve ``(-Delta_h + lam) w = rhs`` with Dirichlet ghost data.

    ``boundary`` defaults to ``rhs.boundary``; the returned field carries it.
    Raises :class:`SolverError` if the relative residual exceeds 1e-10.
    """
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    grid = rhs.grid
    rule = rhs.boundary if boundary is None else boundary
    b = (rhs.values + boundary_source(grid, rule)).ravel()
    A, lu = _factor(grid, float(lam))
    x = lu.solve(b)
    bnorm = np.max(np.abs(b))
    if bnorm > 0:
        res = np.max(np.abs(A @ x - b)) / bnorm
        if not res <= RESIDUAL_TARGET:
            raise SolverError(f"Helmholtz solve residual {res:.3e} above {RESIDUAL_TARGET:g}")
    return Field(grid, x.reshape(grid.shape), rule)


def monotone_check(lam: float, rhs1: Field, rhs2: Field, b1, b2) -> bool:
    """Whether ordered data give ordered solutions, nodewise and exactly."""
    w1 = helmholtz_solve(lam, rhs1, b1)
    w2 = helmholtz_solve(lam, rhs2, b2)
    return bool(np.all(w1.values >= w2.values))


# --------------------------------------------------------------------------
# field I/O
# --------------------------------------------------------------------------

_HEADER = struct.Struct("<qqd")


def write_field(path, w: Field) -> None:
    """Binary format: little-endian int64 N, int64 n, float64 L, then
    ``n**N`` float64 values in row-major order."""
    g = w.grid
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(g.N, g.n, g.L))
        fh.write(np.ascontiguousarray(w.values, dtype="<f8").tobytes(order="C"))


def read_field(path) -> Field:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError("truncated field header")
    N, n, L = _HEADER.unpack_from(data)
    grid = Grid(int(N), float(L), int(n))
    vals = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if vals.size != grid.size:
        raise ValueError(f"expected {grid.size} values, found {vals.size}")
    return Field(grid, vals.reshape(grid.shape))


def write_field_csv(path, w: Field, header_lines=()) -> None:
    """Coordinates plus value, one node per row (1D and 2D only)."""
    g = w.grid
    if g.N > 2:
        raise ValueError("CSV export supports N <= 2")
    pts = g.points().reshape(-1, g.N)
    cols = ["x", "y"][: g.N] + ["value"]
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        wr = csv.writer(fh)
        wr.writerow(cols)
        for p, v in zip(pts, w.values.ravel()):
            wr.writerow([repr(float(c)) for c in p] + [repr(float(v))])


def read_field_csv(path) -> Field:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    head, body = rows[0], np.array(rows[1:], dtype=float)
    N = len(head) - 1
    n = round(len(body) ** (1.0 / N))
    L = float(body[:, 0].max())
    grid = Grid(N, L, n)
    return Field(grid, body[:, -1].reshape(grid.shape))
