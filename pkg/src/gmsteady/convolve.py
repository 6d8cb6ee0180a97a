"""Discrete convolution ``J*f`` on a grid.

The weight table holds ``J`` integrated against every relative-offset cell:
midpoint values ``J(kh) h^N`` away from the origin and an exact (Riesz) or
adaptive (bounded kernels) integral over the cell around the origin.  ``f``
is extended by zero outside the box; :func:`tail_correction` bounds the mass
that this drops.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft
from scipy import integrate, linalg

from .analytic import Envelope, Kernel, psi_radial, sphere_area
from .errors import DomainError
from .grid import Field, Grid

__all__ = [
    "KernelTable", "build_table", "conv", "conv_array", "tail_correction",
    "holder_diagnostic", "riesz_cell_integral",
]

# products of f and table sizes above this go through the FFT in "auto" mode
_DIRECT_LIMIT = 2.5e7


@dataclass(frozen=True, eq=False)
class KernelTable:
    kernel: Kernel
    grid: Grid
    weights: np.ndarray
    singular_cell_weight: float
    _spectra: dict = field(default_factory=dict, repr=False)

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())


def _unit_cube_riesz(theta: float, N: int) -> float:
    """``int_{[-1,1]^N} |z|^(theta-N) dz`` by summing cones over the 2N faces."""
    e = (theta - N) / 2.0
    if N == 1:
        return 2.0 / theta
    if N == 2:
        val = integrate.quad(lambda y: (1 + y * y) ** e, -1, 1, epsabs=0, epsrel=1e-13)[0]
    else:
        val = integrate.dblquad(lambda y, x: (1 + x * x + y * y) ** e, -1, 1, -1, 1,
                                epsabs=0, epsrel=1e-12)[0]
    return 2 * N / theta * val


def riesz_cell_integral(theta: float, N: int, h: float) -> float:
    """Integral of ``|z|^(theta-N)`` over the cell ``[-h/2, h/2]^N``."""
    return (h / 2.0) ** theta * _unit_cube_riesz(theta, N)


def _bounded_cell_integral(kernel: Kernel, h: float, order: int = 24) -> float:
    """Integral of a bounded radial kernel over ``[-h/2, h/2]^N``.

    The cube splits into 2N pyramids over its faces; writing
    ``z = t c (1, u)`` makes the integrand smooth in ``(t, u)``, so a tensor
    Gauss-Legendre rule converges fast despite the kink of ``J(|z|)`` at 0.
    """
    N, c = kernel.dim, h / 2.0
    x, w = np.polynomial.legendre.leggauss(order)
    t, wt = 0.5 * (x + 1.0), 0.5 * w
    us = np.meshgrid(*([x] * (N - 1)), indexing="ij")
    wu = np.ones(()) if N == 1 else functools.reduce(np.multiply.outer, [w] * (N - 1))
    stretch = np.sqrt(1.0 + sum(u ** 2 for u in us)) if N > 1 else np.ones(())
    r = c * np.multiply.outer(t, stretch)
    tw = wt * t ** (N - 1)
    inner = np.tensordot(tw, kernel.radial(r), axes=(0, 0))
    return float(2 * N * c ** N * np.sum(wu * inner))


def build_table(kernel: Kernel, grid: Grid) -> KernelTable:
    """Cell weights for offsets ``-(n-1) .. n-1`` along each axis."""
    if kernel.dim != grid.N:
        raise DomainError(f"kernel is {kernel.dim}-dimensional, grid is {grid.N}-dimensional")
    n, N, h = grid.n, grid.N, grid.h
    k = np.arange(-(n - 1), n) * h
    r2 = np.zeros((2 * n - 1,) * N)
    for d in range(N):
        shape = [1] * N
        shape[d] = 2 * n - 1
        r2 = r2 + (k ** 2).reshape(shape)
    origin = (n - 1,) * N
    r2[origin] = 1.0  # placeholder, overwritten below
    W = kernel.radial(np.sqrt(r2)) * h ** N
    if kernel.singular:
        w0 = riesz_cell_integral(kernel.theta, N, h)
    else:
        w0 = _bounded_cell_integral(kernel, h)
    W[origin] = w0
    W.setflags(write=False)
    return KernelTable(kernel, grid, W, float(w0))


def _spectrum(table: KernelTable, shape):
    S = table._spectra.get(shape)
    if S is None:
        S = sfft.rfftn(table.weights, s=shape)
        table._spectra[shape] = S
    return S


def _valid(full, n, N):
    return full[(slice(n - 1, 2 * n - 1),) * N]


def _direct_2d(f, W, n):
    # one Toeplitz matmul per row offset: still the plain sum over all pairs;
    # leading axes of f are batch axes
    out = np.zeros(f.shape)
    for k in range(-(n - 1), n):
        row = W[k + n - 1]
        T = linalg.toeplitz(row[n - 1:], row[n - 1::-1])
        lo, hi = max(0, k), min(n, n + k)
        out[..., lo:hi, :] += f[..., lo - k:hi - k, :] @ T.T
    return out


def _direct_3d(f, W, n):
    out = np.zeros(f.shape)
    for k in range(-(n - 1), n):
        lo, hi = max(0, k), min(n, n + k)
        out[lo:hi] += _direct_2d(f[lo - k:hi - k], W[k + n - 1], n)
    return out


def conv_array(table: KernelTable, f: np.ndarray, method: str = "auto") -> np.ndarray:
    """``(J*f)(x_i) = sum_j W[i-j] f_j`` on raw arrays."""
    grid = table.grid
    n, N = grid.n, grid.N
    f = np.asarray(f, dtype=float)
    if f.shape != grid.shape:
        raise ValueError(f"array has shape {f.shape}, grid expects {grid.shape}")
    if method == "auto":
        method = "direct" if f.size * table.weights.size <= _DIRECT_LIMIT else "fft"
    if method == "direct":
        if N == 1:
            return _valid(np.convolve(f, table.weights), n, N)
        if N == 2:
            return _direct_2d(f, table.weights, n)
        return _direct_3d(f, table.weights, n)
    if method == "fft":
        shape = tuple(sfft.next_fast_len(3 * n - 2, real=True) for _ in range(N))
        full = sfft.irfftn(sfft.rfftn(f, s=shape) * _spectrum(table, shape), s=shape)
        out = _valid(full, n, N)
        # roundoff can dip below zero where the exact sum is tiny and positive
        return np.maximum(out, 0.0) if np.all(f >= 0) else out
    raise ValueError(f"unknown convolution method {method!r}")


def conv(table: KernelTable, f: Field, method: str = "auto") -> Field:
    """Convolve a field with the kernel table; zero extension outside the box."""
    if f.grid != table.grid:
        raise ValueError("field and kernel table live on different grids")
    return Field(f.grid, conv_array(table, f.values, method))


def tail_correction(kernel: Kernel, env: Envelope, scale: float, x, L: float) -> float:
    """Upper bound on ``int_{|y|>L} J(x-y) scale Psi_env(y) dy``.

    The box ``[-L, L]^N`` contains the ball of radius ``L``, so the bound also
    covers what zero extension outside the box drops.  Returns ``inf`` when the
    tail integral diverges (Riesz kernel against a power envelope with
    ``a <= theta``) or when ``x`` lies outside the ball.
    """
    if scale == 0:
        return 0.0
    if scale < 0:
        raise ValueError("scale must be nonnegative")
    N = kernel.dim
    rx = float(np.sqrt(np.sum(np.square(np.atleast_1d(np.asarray(x, dtype=float))))))
    if kernel.integrable:
        # Psi is radially decreasing, so sup over the tail sits at |y| = L
        return scale * float(psi_radial(env, L)) * kernel.l1_norm()
    th = kernel.theta
    if env.b == 0 and env.a <= th:
        return math.inf
    if rx >= L:
        return math.inf
    # |x-y| >= (1 - |x|/L)|y| on |y| > L and phi >= |y|
    shrink = (1.0 - rx / L) ** (th - N)
    g = lambda r: r ** (th - 1) * float(psi_radial(env, r))
    val = integrate.quad(g, L, np.inf, epsabs=0, epsrel=1e-10, limit=400)[0]
    return scale * shrink * sphere_area(N) * val


def _r_norm(f, h, N, r):
    return h ** (N / r) * float(np.sum(np.abs(f) ** r) ** (1.0 / r))


def holder_diagnostic(table: KernelTable, f: Field, r: float, pair_count: int = 2000,
                      seed: int = 0, pairs=None) -> dict:
    """Sup of ``|Tf(x) - Tf(y)| / (|x-y|^(theta - N/r) ||f||_r)`` over node pairs.

    Pairs are drawn uniformly among node pairs with ``0 < |x-y| <= L/4``
    unless ``pairs`` (a sequence of index-tuple pairs) is given.
    """
    grid = table.grid
    N, h, th = grid.N, grid.h, table.kernel.theta
    if not (th - 1 < N / r < th):
        raise DomainError(f"need theta-1 < N/r < theta, got N/r={N / r:.6g}, theta={th:.6g}")
    nu = th - N / r
    norm = _r_norm(f.values, h, N, r)
    if norm == 0:
        return {"quotient_sup": 0.0, "pairs_used": 0, "exponent": nu}
    Tf = conv_array(table, f.values)
    if pairs is None:
        rng = np.random.default_rng(seed)
        kmax = max(1, int(math.floor(grid.L / 4 / h)))
        I = rng.integers(0, grid.n, size=(pair_count, N))
        K = rng.integers(-kmax, kmax + 1, size=(pair_count, N))
        J = I + K
        dist = np.sqrt(np.sum(K * K, axis=1)) * h
        keep = (dist > 0) & (dist <= grid.L / 4) & np.all((J >= 0) & (J < grid.n), axis=1)
        I, J, dist = I[keep], J[keep], dist[keep]
    else:
        I = np.array([p[0] for p in pairs], dtype=int).reshape(-1, N)
        J = np.array([p[1] for p in pairs], dtype=int).reshape(-1, N)
        dist = np.sqrt(np.sum((I - J) ** 2, axis=1)) * h
    if len(dist) == 0:
        return {"quotient_sup": 0.0, "pairs_used": 0, "exponent": nu}
    diff = np.abs(Tf[tuple(I.T)] - Tf[tuple(J.T)])
    quot = diff / (dist ** nu * norm)
    return {"quotient_sup": float(quot.max()), "pairs_used": int(len(dist)), "exponent": nu}
