"""Grids, increment quadrature, interpolation and the one-step nonlinear
conditional expectation on a rectangular grid."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy import sparse

from .errors import InvalidInputError
from .generators import Generator

MOMENT_TOL = 1e-12


@dataclass(frozen=True)
class Quadrature:
    """Discrete law for a standard d-dimensional normal increment.

    ``nodes`` has shape (q, d), ``weights`` shape (q,).
    """

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = np.atleast_2d(np.asarray(self.nodes, dtype=float))
        weights = np.asarray(self.weights, dtype=float).ravel()
        if nodes.shape[0] != weights.shape[0]:
            raise InvalidInputError("quadrature nodes and weights disagree in length")
        if np.any(weights <= 0):
            raise InvalidInputError("quadrature weights must be positive")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def d(self) -> int:
        return self.nodes.shape[1]

    def __len__(self):
        return self.weights.shape[0]

    def moment_errors(self) -> dict[str, float]:
        """Max deviation of moments 0-3 from those of N(0, I)."""
        w, x = self.weights, self.nodes
        d = self.d
        m0 = abs(w.sum() - 1.0)
        m1 = np.max(np.abs(w @ x))
        m2 = np.max(np.abs(np.einsum("q,qi,qj->ij", w, x, x) - np.eye(d)))
        m3 = np.max(np.abs(np.einsum("q,qi,qj,qk->ijk", w, x, x, x)))
        return {"m0": float(m0), "m1": float(m1), "m2": float(m2), "m3": float(m3)}

    def check_moments(self, tol: float = MOMENT_TOL) -> bool:
        return all(v <= tol for v in self.moment_errors().values())


def _tensor(points_1d, weights_1d, d: int) -> Quadrature:
    nodes = np.array(list(itertools.product(points_1d, repeat=d)), dtype=float)
    weights = np.array([math.prod(c) for c in itertools.product(weights_1d, repeat=d)])
    return Quadrature(nodes, weights)


def gauss_quadrature(d: int, points_per_axis: int) -> Quadrature:
    """Tensor-product Gauss-Hermite rule for N(0, I_d)."""
    if d < 1:
        raise InvalidInputError(f"dimension must be >= 1, got {d}")
    if points_per_axis < 2:
        raise InvalidInputError(f"need at least 2 points per axis, got {points_per_axis}")
    x, w = hermegauss(points_per_axis)
    w = w / w.sum()
    # exact symmetry so odd moments cancel to rounding
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    return _tensor(x, w, d)


def lattice_quadrature(d: int, scale: float) -> Quadrature:
    """Symmetric three-point rule ``{-a, 0, a}`` per axis.

    Weights ``1/(2a^2)`` on the outer nodes make the variance one for any
    ``a >= 1``; ``a = sqrt(3)`` is the three-point Gauss rule.  Choosing ``a``
    so that the stencil lands on grid nodes removes interpolation error.
    """
    if d < 1:
        raise InvalidInputError(f"dimension must be >= 1, got {d}")
    a = float(scale)
    if not (np.isfinite(a) and a >= 1.0):
        raise InvalidInputError(f"lattice scale must be >= 1, got {scale}")
    p = 0.5 / (a * a)
    if a == 1.0:
        return _tensor([-1.0, 1.0], [0.5, 0.5], d)
    return _tensor([-a, 0.0, a], [p, 1.0 - 2.0 * p, p], d)


def aligned_lattice_scale(delta: float, h: float, amplitude: float) -> float:
    """Smallest lattice scale ``a >= 1`` with ``a * amplitude * sqrt(delta)`` a
    whole number of grid cells.

    ``amplitude`` is the largest standard deviation per unit time of the
    state increment along an axis (e.g. ``|sigma| * sqrt(max variance)``).
    """
    if delta <= 0 or h <= 0 or amplitude <= 0:
        raise InvalidInputError("delta, h and amplitude must be positive")
    reach = math.sqrt(delta) * amplitude
    cells = max(1, math.ceil(reach / h - 1e-9))
    return cells * h / reach


@dataclass(frozen=True)
class LocalLattice:
    """Three-point rule per Brownian axis, rescaled state by state.

    For the noise column ``c`` of one Brownian axis at a state, the scale
    ``a >= 1`` is the smallest making ``a sqrt(delta) |c_k| / h_k`` a whole
    number for the dominant component ``k``.  Nodes ``{-a, 0, a}`` carry
    weights ``1/(2a^2), 1 - 1/a^2, 1/(2a^2)``, so moments 0-3 match N(0, 1)
    at every state while the stencil lands on grid nodes (exactly so when
    each column has a single nonzero component).
    """

    d: int
    h: tuple

    def __post_init__(self):
        if self.d < 1:
            raise InvalidInputError(f"dimension must be >= 1, got {self.d}")
        h = tuple(float(v) for v in np.atleast_1d(self.h))
        if not all(v > 0 and math.isfinite(v) for v in h):
            raise InvalidInputError("grid spacings must be positive")
        object.__setattr__(self, "h", h)

    @property
    def pattern(self) -> np.ndarray:
        return np.array(list(itertools.product((-1.0, 0.0, 1.0), repeat=self.d)))

    def __len__(self):
        return 3 ** self.d

    def scales(self, cols: np.ndarray, delta: float) -> np.ndarray:
        """Per-state scales, shape (N, d), for noise columns ``cols`` (N, n, d)."""
        reach = np.abs(cols) * math.sqrt(delta) / np.asarray(self.h)[None, :, None]
        r = np.max(reach, axis=1)
        cells = np.maximum(1.0, np.ceil(r - 1e-9))
        with np.errstate(divide="ignore", invalid="ignore"):
            a = np.where(r > 0, cells / np.where(r > 0, r, 1.0), 1.0)
        return np.maximum(a, 1.0)

    def rule(self, a: np.ndarray):
        """Nodes (q, N, d) and weights (q, N) for per-state scales ``a`` (N, d)."""
        pat = self.pattern
        nodes = pat[:, None, :] * a[None, :, :]
        outer = 0.5 / (a * a)
        w = np.where(pat[:, None, :] == 0.0, 1.0 - 2.0 * outer[None], outer[None])
        return nodes, np.prod(w, axis=2)

    def at(self, scale) -> Quadrature:
        """The plain rule for one scale vector (moment checks)."""
        a = np.broadcast_to(np.asarray(scale, dtype=float), (self.d,))[None, :]
        nodes, w = self.rule(a)
        keep = w[:, 0] > 0
        return Quadrature(nodes[keep, 0, :], w[keep, 0])


def increment_rule(quad, cols: np.ndarray, delta: float):
    """Scaled increments ``sqrt(delta) cols xi_q`` (q, N, n) and weights (q, N).

    ``quad`` is a :class:`Quadrature` or a :class:`LocalLattice`.
    """
    root = math.sqrt(delta)
    if isinstance(quad, LocalLattice):
        nodes, w = quad.rule(quad.scales(cols, delta))
        return root * np.einsum("Nnd,qNd->qNn", cols, nodes), w
    shifts = root * np.einsum("Nnd,qd->qNn", cols, quad.nodes)
    return shifts, np.broadcast_to(quad.weights[:, None], (len(quad), cols.shape[0]))


@dataclass(frozen=True)
class SpaceGrid:
    lower: tuple
    upper: tuple
    points: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        pts = tuple(int(v) for v in np.atleast_1d(self.points))
        if not (len(lo) == len(hi) == len(pts)) or not lo:
            raise InvalidInputError("grid bounds and point counts must have one entry per axis")
        for a, b, k in zip(lo, hi, pts):
            if not (math.isfinite(a) and math.isfinite(b)) or a >= b:
                raise InvalidInputError(f"grid axis needs finite lower < upper, got [{a}, {b}]")
            if k < 3:
                raise InvalidInputError(f"grid axis needs at least 3 points, got {k}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "points", pts)

    @property
    def ndim(self) -> int:
        return len(self.points)

    @property
    def shape(self) -> tuple:
        return self.points

    @property
    def size(self) -> int:
        return math.prod(self.points)

    @cached_property
    def h(self) -> np.ndarray:
        return np.array([(b - a) / (k - 1) for a, b, k in zip(self.lower, self.upper, self.points)])

    @cached_property
    def axes(self) -> tuple:
        return tuple(np.linspace(a, b, k) for a, b, k in zip(self.lower, self.upper, self.points))

    @cached_property
    def coords(self) -> np.ndarray:
        """All grid points, shape (size, ndim), C order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def interior_mask(self, fraction: float = 1.0 / 3.0) -> np.ndarray:
        """Points in the central box whose side is ``fraction`` of each axis."""
        mask = np.ones(self.size, dtype=bool)
        for k in range(self.ndim):
            mid = 0.5 * (self.lower[k] + self.upper[k])
            half = 0.5 * fraction * (self.upper[k] - self.lower[k])
            c = self.coords[:, k]
            mask &= (c >= mid - half - 1e-12) & (c <= mid + half + 1e-12)
        return mask

    def nearest_index(self, x) -> int:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        idx = [int(np.clip(round((x[k] - self.lower[k]) / self.h[k]), 0, self.points[k] - 1))
               for k in range(self.ndim)]
        return int(np.ravel_multi_index(idx, self.shape))


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    steps: int

    def __post_init__(self):
        if not (0.0 <= self.t0 < self.T) or not math.isfinite(self.T):
            raise InvalidInputError(f"need 0 <= t0 < T, got t0={self.t0}, T={self.T}")
        if int(self.steps) < 1:
            raise InvalidInputError(f"need at least one time step, got {self.steps}")
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def delta(self) -> float:
        return (self.T - self.t0) / self.steps

    @cached_property
    def times(self) -> np.ndarray:
        return self.t0 + self.delta * np.arange(self.steps + 1)

    def refined(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.t0, self.T, self.steps * int(factor))


@dataclass
class GridFunction:
    grid: SpaceGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.shape[0] != self.grid.size:
            raise InvalidInputError(
                f"grid function has {v.shape[0]} values for a grid of size {self.grid.size}"
            )
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("grid function has non-finite values")
        self.values = v

    @classmethod
    def from_callable(cls, grid: SpaceGrid, fn) -> "GridFunction":
        return cls(grid, fn(grid.coords))

    def __call__(self, X) -> np.ndarray:
        return interpolate_points(self.grid, self.values, X)


def interpolate_points(grid: SpaceGrid, values: np.ndarray, X) -> np.ndarray:
    """Multilinear interpolation at the rows of ``X`` with per-axis clamping."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if grid.ndim == 1 else X[None, :]
    V = values.reshape(grid.shape)
    idx0, frac = [], []
    for k in range(grid.ndim):
        s = (np.clip(X[:, k], grid.lower[k], grid.upper[k]) - grid.lower[k]) / grid.h[k]
        i0 = np.clip(np.floor(s).astype(np.int64), 0, grid.points[k] - 2)
        idx0.append(i0)
        frac.append(np.clip(s - i0, 0.0, 1.0))
    out = np.zeros(X.shape[0])
    for corner in itertools.product((0, 1), repeat=grid.ndim):
        w = np.ones(X.shape[0])
        for k, c in enumerate(corner):
            w = w * (frac[k] if c else 1.0 - frac[k])
        out += w * V[tuple(i + c for i, c in zip(idx0, corner))]
    return out


def interpolate(phi: GridFunction, x) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("interpolation point must be finite")
    if x.shape != (phi.grid.ndim,):
        raise InvalidInputError(f"point must have {phi.grid.ndim} coordinates")
    return float(interpolate_points(phi.grid, phi.values, x[None, :])[0])


def one_step_expectation(phi: GridFunction, delta: float, gen: Generator,
                         quad) -> GridFunction:
    """``max_i { sum_q w_q phi(x + sqrt(delta) L_i xi_q) - delta c_i }`` on the grid."""
    if not (np.isfinite(delta) and delta > 0):
        raise InvalidInputError(f"time step must be positive, got {delta}")
    if gen.d != quad.d or gen.d != phi.grid.ndim:
        raise InvalidInputError("generator, quadrature and grid dimensions must agree")
    if not np.all(np.isfinite(phi.values)):
        raise InvalidInputError("grid function has non-finite values")
    X = phi.grid.coords
    best = None
    for i in range(len(gen)):
        cols = np.broadcast_to(gen.factors[i], (X.shape[0], gen.d, gen.d))
        shifts, w = increment_rule(quad, cols, delta)
        acc = np.zeros(X.shape[0])
        for q in range(shifts.shape[0]):
            acc += w[q] * interpolate_points(phi.grid, phi.values, X + shifts[q])
        acc -= delta * gen.penalties[i]
        best = acc if best is None else np.maximum(best, acc)
    return GridFunction(phi.grid, best)


def quadratic_variation_estimate(gen: Generator, A, delta: float, quad: Quadrature,
                                 grid: SpaceGrid) -> float:
    """Lattice estimate of the nonlinear expectation of ``<A B_1, B_1>``.

    Composes ``round(1/delta)`` one-step expectations starting from
    ``x -> <A x, x>`` and reads the result at the origin.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    k = round(1.0 / delta)
    if k < 1 or abs(k * delta - 1.0) > 1e-12:
        raise InvalidInputError("delta must divide the unit horizon")
    X = grid.coords
    phi = GridFunction(grid, np.einsum("ni,ij,nj->n", X, A, X))
    for _ in range(k):
        phi = one_step_expectation(phi, delta, gen, quad)
    return interpolate(phi, np.zeros(grid.ndim))


def interpolation_matrix(grid: SpaceGrid, X) -> "sparse.csr_matrix":
    """Sparse matrix ``M`` with ``M @ values == interpolate_points(grid, values, X)``."""
    X = np.asarray(X, dtype=float)
    idx0, frac = [], []
    for k in range(grid.ndim):
        s = (np.clip(X[:, k], grid.lower[k], grid.upper[k]) - grid.lower[k]) / grid.h[k]
        i0 = np.clip(np.floor(s).astype(np.int64), 0, grid.points[k] - 2)
        idx0.append(i0)
        frac.append(np.clip(s - i0, 0.0, 1.0))
    rows, cols, data = [], [], []
    row_ids = np.arange(X.shape[0])
    for corner in itertools.product((0, 1), repeat=grid.ndim):
        w = np.ones(X.shape[0])
        for k, c in enumerate(corner):
            w = w * (frac[k] if c else 1.0 - frac[k])
        flat = np.ravel_multi_index(tuple(i + c for i, c in zip(idx0, corner)), grid.shape)
        rows.append(row_ids)
        cols.append(flat)
        data.append(w)
    M = sparse.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(X.shape[0], grid.size),
    )
    M.sum_duplicates()
    return M
