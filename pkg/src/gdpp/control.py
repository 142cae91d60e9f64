"""Backward semigroup, value iteration and structural checks.

One backward step of length ``delta`` for a fixed control ``u`` reads, at a
grid point ``x``,

    y = max_i { sum_q w_q V(x'_iq) + delta [f(t,x,y,u) + sum_jk g_jk(t,x,y,u) S_i^jk]
                - delta c_i }

where ``x'_iq`` is the Euler successor of ``x`` under atom ``i`` and node
``q``.  The ``y`` argument of ``f`` and ``g`` starts at ``V(x)`` and is
refined by a few fixed-point sweeps.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import ConfigurationError, InvalidInputError
from .generators import Generator
from .lattice import (
    GridFunction,
    LocalLattice,
    Quadrature,
    SpaceGrid,
    TimeGrid,
    increment_rule,
    interpolation_matrix,
)
from .problem import ControlProblem

logger = logging.getLogger(__name__)


@dataclass
class ValueSurface:
    """Value function samples ``values[l, p]`` at time ``times[l]`` and grid
    point ``p``; ``argmin_controls`` holds control-grid indices (-1 at the
    terminal level)."""

    tgrid: TimeGrid
    sgrid: SpaceGrid
    values: np.ndarray
    argmin_controls: np.ndarray
    method: str = ""

    @property
    def times(self) -> np.ndarray:
        return self.tgrid.times

    def at(self, level: int) -> GridFunction:
        return GridFunction(self.sgrid, self.values[level])

    def value(self, level: int, x) -> float:
        return float(self.at(level)(np.atleast_1d(np.asarray(x, dtype=float))[None, :])[0])

    def restrict(self, tgrid: TimeGrid) -> "ValueSurface":
        """Sub-sample onto a coarser time grid whose steps divide this one."""
        ratio = self.tgrid.steps // tgrid.steps
        if ratio * tgrid.steps != self.tgrid.steps or tgrid.t0 != self.tgrid.t0 or tgrid.T != self.tgrid.T:
            raise InvalidInputError("target time grid is not a sub-grid")
        return ValueSurface(tgrid, self.sgrid, self.values[::ratio].copy(),
                            self.argmin_controls[::ratio].copy(), self.method)


# ----------------------------------------------------------------- forward


def _successors(prob: ControlProblem, t, X, u, delta, gen: Generator, quad, i: int):
    """Euler successors of all rows of ``X`` for atom ``i`` (q, N, n) and their
    weights (q, N)."""
    drift = prob.effective_drift(t, X, u, gen.sigmas[i])
    cols = np.einsum("Nnd,de->Nne", prob.diffusion(t, X, u), gen.factors[i])
    noise, w = increment_rule(quad, cols, delta)
    return (X + drift * delta)[None, :, :] + noise, w


def step_state(prob: ControlProblem, t, x, u, atom_index, node_index, delta,
               gen: Generator, quad: Quadrature | LocalLattice) -> np.ndarray:
    """One Euler step from ``x`` under atom ``atom_index`` and node ``node_index``."""
    if not delta > 0:
        raise InvalidInputError(f"time step must be positive, got {delta}")
    if not (0 <= atom_index < len(gen)) or not (0 <= node_index < len(quad)):
        raise InvalidInputError("atom or node index out of range")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (prob.n,):
        raise InvalidInputError(f"state must have {prob.n} components")
    u = np.atleast_1d(np.asarray(u, dtype=float))
    succ, _ = _successors(prob, t, x[None, :], u, delta, gen, quad, atom_index)
    return succ[node_index, 0]


# ---------------------------------------------------------------- backward


def _check_contraction(prob: ControlProblem, delta: float):
    if delta * prob.lipschitz_L >= 1.0:
        raise ConfigurationError(
            f"time step {delta:.6g} times L = {prob.lipschitz_L:.6g} is "
            f"{delta * prob.lipschitz_L:.6g} >= 1; the backward step is not a contraction",
            code="CFG201",
        )


def _transitions(prob, sgrid, t, u, delta, gen, quad):
    """Per-atom sparse expectation operators for one step."""
    X = sgrid.coords
    ops = []
    for i in range(len(gen)):
        succ, w = _successors(prob, t, X, u, delta, gen, quad, i)
        P = None
        for q in range(succ.shape[0]):
            M = sparse.diags(w[q]) @ interpolation_matrix(sgrid, succ[q])
            P = M if P is None else P + M
        ops.append(P.tocsr())
    return ops


def _backward(prob, X, V_next, ops, t, delta, u, gen, picard_iters):
    expect = [P @ V_next for P in ops]
    y = V_next
    for _ in range(picard_iters + 1):
        drv = prob.driver(t, X, y, u)
        qv = prob.qv_driver(t, X, y, u)
        best = None
        for i in range(len(gen)):
            cand = expect[i] + delta * (drv + np.einsum("jkN,jk->N", qv, gen.sigmas[i])) \
                - delta * gen.penalties[i]
            best = cand if best is None else np.maximum(best, cand)
        y = best
    return y


def semigroup_step(prob: ControlProblem, V_next: GridFunction, t: float, delta: float, u,
                   gen: Generator, quad: Quadrature | LocalLattice, picard_iters: int = 1) -> GridFunction:
    """Backward semigroup over ``[t, t + delta]`` for the constant control ``u``.

    The driver is first evaluated at ``y = V_next(x)`` (explicit predictor);
    ``picard_iters`` further sweeps re-evaluate it at the latest iterate.
    """
    if not delta > 0:
        raise InvalidInputError(f"time step must be positive, got {delta}")
    if picard_iters < 0:
        raise InvalidInputError("picard_iters must be >= 0")
    _check_contraction(prob, delta)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    sgrid = V_next.grid
    ops = _transitions(prob, sgrid, t, u, delta, gen, quad)
    y = _backward(prob, sgrid.coords, V_next.values, ops, t, delta, u, gen, picard_iters)
    return GridFunction(sgrid, y)


class _TransitionCache:
    def __init__(self, prob, sgrid, delta, gen, quad):
        self.prob, self.sgrid, self.delta, self.gen, self.quad = prob, sgrid, delta, gen, quad
        self._store = {}

    def get(self, t, k):
        key = (t if self.prob.time_dependent else None, k)
        ops = self._store.get(key)
        if ops is None:
            if self.prob.time_dependent:
                self._store = {}
            ops = _transitions(self.prob, self.sgrid, t, self.prob.control_grid[k],
                               self.delta, self.gen, self.quad)
            self._store[key] = ops
        return ops


def solve_value(prob: ControlProblem, gen: Generator, quad: Quadrature | LocalLattice, tgrid: TimeGrid,
                sgrid: SpaceGrid, picard_iters: int = 1) -> ValueSurface:
    """Value iteration: ``V_l = min_u semigroup_step(V_{l+1}; u)``, ``V_k = Phi``."""
    if sgrid.ndim != prob.n or gen.d != prob.d or quad.d != prob.d:
        raise InvalidInputError("grid, generator and quadrature dimensions must match the problem")
    delta = tgrid.delta
    _check_contraction(prob, delta)
    X = sgrid.coords
    k = tgrid.steps
    values = np.empty((k + 1, sgrid.size))
    argmin = np.full((k + 1, sgrid.size), -1, dtype=np.int64)
    values[k] = prob.terminal(X)
    cache = _TransitionCache(prob, sgrid, delta, gen, quad)
    controls = prob.control_grid
    for level in range(k - 1, -1, -1):
        t = tgrid.times[level]
        cands = np.empty((len(controls), sgrid.size))
        for c in range(len(controls)):
            cands[c] = _backward(prob, X, values[level + 1], cache.get(t, c), t, delta,
                                 controls[c], gen, picard_iters)
        argmin[level] = np.argmin(cands, axis=0)
        values[level] = cands[argmin[level], np.arange(sgrid.size)]
    logger.debug("value iteration finished: %d levels, %d points", k, sgrid.size)
    return ValueSurface(tgrid, sgrid, values, argmin, method="semigroup")


# ------------------------------------------------------------------ checks


def dpp_residual(prob: ControlProblem, gen: Generator, quad: Quadrature | LocalLattice, V: ValueSurface,
                 level: int, steps: int, picard_iters: int = 1,
                 interior: float = 1.0 / 3.0) -> float:
    """``sup_x |V_l(x) - min_u G^{j}_u[V_{l+j}](x)|`` over the interior box.

    The j-step operator applies :func:`semigroup_step` ``j`` times with the
    same control before minimising.
    """
    if steps < 1 or level < 0 or level + steps > V.tgrid.steps:
        raise InvalidInputError(f"window [{level}, {level + steps}] is outside the time grid")
    delta = V.tgrid.delta
    X = V.sgrid.coords
    cache = _TransitionCache(prob, V.sgrid, delta, gen, quad)
    best = None
    for c, u in enumerate(prob.control_grid):
        W = V.values[level + steps]
        for s in range(steps - 1, -1, -1):
            t = V.tgrid.times[level + s]
            W = _backward(prob, X, W, cache.get(t, c), t, delta, u, gen, picard_iters)
        best = W if best is None else np.minimum(best, W)
    mask = V.sgrid.interior_mask(interior)
    return float(np.max(np.abs(V.values[level][mask] - best[mask])))


@dataclass
class ComparisonResult:
    violations: int
    min_gap: float
    trials: int
    checked_points: int = field(default=0)


def comparison_check(prob: ControlProblem, gen: Generator, quad: Quadrature | LocalLattice, sgrid: SpaceGrid,
                     delta: float, trials: int, t: float = 0.0, seed: int = 0,
                     picard_iters: int = 1, tol: float = 1e-10,
                     shift: float | None = None) -> ComparisonResult:
    """Count pointwise order violations ``G[eta1] < G[eta2] - tol`` over random
    ordered pairs ``eta1 >= eta2`` and every control.

    With ``shift`` set, ``eta1 = eta2 + shift`` instead of a random gap.
    """
    if trials < 1:
        raise InvalidInputError("need at least one trial")
    rng = np.random.default_rng(seed)
    X = sgrid.coords
    base = prob.terminal(X)
    scale = 1.0 + float(np.max(np.abs(base)))
    ops = [_transitions(prob, sgrid, t, u, delta, gen, quad) for u in prob.control_grid]
    violations = 0
    min_gap = math.inf
    checked = 0
    for _ in range(trials):
        eta2 = base + scale * rng.standard_normal(sgrid.size)
        if shift is None:
            gap = np.abs(rng.standard_normal(sgrid.size)) * (rng.random(sgrid.size) < 0.5)
        else:
            gap = np.full(sgrid.size, float(shift))
        eta1 = eta2 + scale * gap if shift is None else eta2 + gap
        for c, u in enumerate(prob.control_grid):
            y1 = _backward(prob, X, eta1, ops[c], t, delta, u, gen, picard_iters)
            y2 = _backward(prob, X, eta2, ops[c], t, delta, u, gen, picard_iters)
            diff = y1 - y2
            violations += int(np.sum(diff < -tol))
            min_gap = min(min_gap, float(np.min(diff)))
            checked += sgrid.size
    return ComparisonResult(violations, min_gap, trials, checked)


# ------------------------------------------------------------- regularity


def lipschitz_quotient(V: ValueSurface) -> float:
    """Largest ``|V(t,x) - V(t,x')| / |x - x'|`` over axis-adjacent nodes and levels."""
    vals = V.values.reshape((V.values.shape[0],) + V.sgrid.shape)
    best = 0.0
    for k in range(V.sgrid.ndim):
        diff = np.abs(np.diff(vals, axis=k + 1)) / V.sgrid.h[k]
        best = max(best, float(np.max(diff)))
    return best


def holder_quotient(V: ValueSurface) -> float:
    """Largest ``|V(t,x) - V(t+delta,x)| / ((1+|x|) sqrt(delta))`` over dyadic
    ``delta = T/2, T/4, ...`` down to the time step."""
    k = V.tgrid.steps
    weight = 1.0 + np.linalg.norm(V.sgrid.coords, axis=1)
    best = 0.0
    span = V.tgrid.T - V.tgrid.t0
    j = k // 2
    while j >= 1:
        dt = j * V.tgrid.delta
        if abs(dt - span / (k // j)) < 1e-12 * span:
            diff = np.abs(V.values[:-j] - V.values[j:]) / (weight * math.sqrt(dt))
            best = max(best, float(np.max(diff)))
        j //= 2
    return best


def is_even(V: ValueSurface, tol: float = 1e-10) -> bool:
    """True when every time slice is symmetric under ``x -> -x``.

    Requires a grid symmetric about the origin.
    """
    vals = V.values.reshape((V.values.shape[0],) + V.sgrid.shape)
    flipped = np.flip(vals, axis=tuple(range(1, vals.ndim)))
    return bool(np.max(np.abs(vals - flipped)) <= tol)


# -------------------------------------------------------------- simulation


@dataclass
class StateMomentReport:
    delta: float
    paths: int
    x0: np.ndarray
    moments: dict
    constants: dict


def simulate_state_paths(prob: ControlProblem, gen: Generator, u, atom_index: int, x0,
                         delta: float, paths: int = 10_000, seed: int = 0, substeps: int = 32,
                         t0: float = 0.0, powers=(2, 4)) -> StateMomentReport:
    """Monte Carlo moments of ``sup_s |X_s - x0|^p`` over ``[t0, t0 + delta]``
    under the single prior ``atom_index`` and constant control ``u``.

    ``constants[p]`` is the implied ``moment / ((1 + |x0|^p) delta^(p/2))``.
    Reproducible for a given seed (Philox counter-based generator).
    """
    if paths < 1:
        raise InvalidInputError("need at least one path")
    if not (0 <= atom_index < len(gen)):
        raise InvalidInputError("atom index out of range")
    rng = np.random.Generator(np.random.Philox(seed))
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    dt = delta / substeps
    X = np.tile(x0, (paths, 1))
    sup = np.zeros(paths)
    L = gen.factors[atom_index]
    for s in range(substeps):
        t = t0 + s * dt
        drift = prob.effective_drift(t, X, u, gen.sigmas[atom_index])
        sig = prob.diffusion(t, X, u)
        Z = rng.standard_normal((paths, prob.d))
        X = X + drift * dt + math.sqrt(dt) * np.einsum("Nnd,de,Ne->Nn", sig, L, Z)
        sup = np.maximum(sup, np.linalg.norm(X - x0, axis=1))
    norm_x0 = float(np.linalg.norm(x0))
    moments = {p: float(np.mean(sup ** p)) for p in powers}
    constants = {p: moments[p] / ((1.0 + norm_x0 ** p) * delta ** (p / 2)) for p in powers}
    return StateMomentReport(delta, paths, x0, moments, constants)
