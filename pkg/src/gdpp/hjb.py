"""Hamiltonian algebra and the explicit monotone finite-difference solver for

    d_t V + inf_u H(t, x, V, D V, D^2 V, u) = 0,   V(T) = Phi,
    H = Gtilde(F) + <p, b> + f,
    F_ij = (sigma^T A sigma)_ij + 2 <p, h_ij> + 2 g_ij.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .control import ValueSurface, _backward, _transitions
from .errors import ConfigurationError, InvalidInputError
from .expressions import Expression, parse_expression
from .generators import Generator, eval_Gtilde
from .lattice import SpaceGrid, TimeGrid, lattice_quadrature
from .problem import ControlProblem

CFL_LIMIT = 0.9


@dataclass
class HamiltonianContext:
    prob: ControlProblem
    gen: Generator

    def __post_init__(self):
        if self.gen.d != self.prob.d:
            raise InvalidInputError("generator dimension must equal the Brownian dimension d")


def _point(x, n):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (n,):
        raise InvalidInputError(f"point must have {n} components")
    return x[None, :]


def F_matrix(ctx: HamiltonianContext, t, x, v, p, A, u) -> np.ndarray:
    """``sigma^T A sigma + 2 <p, h_ij> + 2 g_ij`` as a d x d matrix."""
    prob = ctx.prob
    X = _point(x, prob.n)
    p = np.atleast_1d(np.asarray(p, dtype=float))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if p.shape != (prob.n,) or A.shape != (prob.n, prob.n):
        raise InvalidInputError("p must have n entries and A must be n x n")
    sig = prob.diffusion(t, X, u)[0]
    h = prob.qv_drift(t, X, u)[:, :, 0, :]
    g = prob.qv_driver(t, X, np.array([float(v)]), u)[:, :, 0]
    return sig.T @ A @ sig + 2.0 * h @ p + 2.0 * g


def hamiltonian(ctx: HamiltonianContext, t, x, v, p, A, u) -> float:
    prob = ctx.prob
    X = _point(x, prob.n)
    F = F_matrix(ctx, t, x, v, p, A, u)
    F = 0.5 * (F + F.T)
    b = prob.drift(t, X, u)[0]
    f = prob.driver(t, X, np.array([float(v)]), u)[0]
    return eval_Gtilde(ctx.gen, F) + float(np.dot(p, b)) + float(f)


# --------------------------------------------------------- test functions


class SmoothTestFunction:
    """A smooth ``phi(s, x)`` with its time derivative, gradient and Hessian."""

    def __init__(self, phi: Expression, dt: Expression, grad: list, hess: list, n: int):
        self.phi, self.dt, self.grad, self.hess, self.n = phi, dt, grad, hess, n

    @classmethod
    def from_text(cls, text: str, n: int) -> "SmoothTestFunction":
        """Parse ``text`` and derive the needed derivatives symbolically."""
        xs = [f"x{k + 1}" for k in range(n)]
        phi = parse_expression(text, ["s", *xs], name="phi")
        grad = [phi.derivative(x) for x in xs]
        hess = [[g.derivative(x) for x in xs] for g in grad]
        return cls(phi, phi.derivative("s"), grad, hess, n)

    def _env(self, s, X):
        X = np.atleast_2d(X)
        env = {"s": s}
        for k in range(self.n):
            env[f"x{k + 1}"] = X[:, k]
        return env

    def value(self, s, x) -> float:
        return float(np.asarray(self.phi(self._env(s, _point(x, self.n)))).ravel()[0])

    def time_derivative(self, s, x) -> float:
        return float(np.asarray(self.dt(self._env(s, _point(x, self.n)))).ravel()[0])

    def gradient(self, s, x) -> np.ndarray:
        env = self._env(s, _point(x, self.n))
        return np.array([float(np.asarray(g(env)).ravel()[0]) for g in self.grad])

    def hessian(self, s, x) -> np.ndarray:
        env = self._env(s, _point(x, self.n))
        return np.array([[float(np.asarray(e(env)).ravel()[0]) for e in row] for row in self.hess])

    def values_on(self, s, X) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.broadcast_to(np.asarray(self.phi(self._env(s, X)), dtype=float), (X.shape[0],))

    def derivative_error(self, points: int = 50, box=(-2.0, 2.0), seed: int = 0) -> float:
        """Worst gap between the derivative expressions and central differences."""
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(points):
            s = float(rng.uniform(0.0, 1.0))
            x = rng.uniform(box[0], box[1], size=self.n)
            e1, e2 = 1e-5, 2e-4
            fd_t = (self.value(s + e1, x) - self.value(s - e1, x)) / (2 * e1)
            worst = max(worst, abs(fd_t - self.time_derivative(s, x)))
            grad, hess = self.gradient(s, x), self.hessian(s, x)
            for k in range(self.n):
                ek = np.zeros(self.n)
                ek[k] = 1.0
                fd = (self.value(s, x + e1 * ek) - self.value(s, x - e1 * ek)) / (2 * e1)
                worst = max(worst, abs(fd - grad[k]))
                for j in range(self.n):
                    ej = np.zeros(self.n)
                    ej[j] = 1.0
                    fd2 = (self.value(s, x + e2 * ek + e2 * ej) - self.value(s, x + e2 * ek - e2 * ej)
                           - self.value(s, x - e2 * ek + e2 * ej)
                           + self.value(s, x - e2 * ek - e2 * ej)) / (4 * e2 * e2)
                    worst = max(worst, abs(fd2 - hess[k, j]))
        return worst


def F1(ctx: HamiltonianContext, phi: SmoothTestFunction, s, x, y, u) -> float:
    X = _point(x, ctx.prob.n)
    b = ctx.prob.drift(s, X, u)[0]
    yy = np.array([float(y) + phi.value(s, x)])
    return phi.time_derivative(s, x) + float(b @ phi.gradient(s, x)) + float(
        ctx.prob.driver(s, X, yy, u)[0])


def F2(ctx: HamiltonianContext, phi: SmoothTestFunction, s, x, y, u) -> np.ndarray:
    F = F_matrix(ctx, s, x, float(y) + phi.value(s, x), phi.gradient(s, x), phi.hessian(s, x), u)
    return 0.5 * F


def F0(ctx: HamiltonianContext, phi: SmoothTestFunction, r, x) -> float:
    best = math.inf
    for v in ctx.prob.control_grid:
        M = 2.0 * F2(ctx, phi, r, x, 0.0, v)
        best = min(best, F1(ctx, phi, r, x, 0.0, v) + eval_Gtilde(ctx.gen, 0.5 * (M + M.T)))
    return best


# --------------------------------------------------------- discrete scheme


def _shift(V: np.ndarray, axis: int, step: int) -> np.ndarray:
    """``V`` at the neighbour ``step`` cells along ``axis`` with edge clamping."""
    n = V.shape[axis]
    idx = np.clip(np.arange(n) + step, 0, n - 1)
    return np.take(V, idx, axis=axis)


class _Stencil:
    """Clamped finite differences of a grid function."""

    def __init__(self, sgrid: SpaceGrid, values: np.ndarray):
        self.g = sgrid
        V = values.reshape(sgrid.shape)
        self.V = V
        n = sgrid.ndim
        self.fwd = [(_shift(V, k, 1) - V).ravel() / sgrid.h[k] for k in range(n)]
        self.bwd = [(V - _shift(V, k, -1)).ravel() / sgrid.h[k] for k in range(n)]
        self.dkk = [((_shift(V, k, 1) - 2 * V + _shift(V, k, -1)) / sgrid.h[k] ** 2).ravel()
                    for k in range(n)]
        self.cross_pos = {}
        self.cross_neg = {}
        for k in range(n):
            for l in range(k + 1, n):
                hk, hl = sgrid.h[k], sgrid.h[l]
                pk, mk = _shift(V, k, 1), _shift(V, k, -1)
                pl, ml = _shift(V, l, 1), _shift(V, l, -1)
                pp = _shift(_shift(V, k, 1), l, 1)
                mm = _shift(_shift(V, k, -1), l, -1)
                pm = _shift(_shift(V, k, 1), l, -1)
                mp = _shift(_shift(V, k, -1), l, 1)
                base = 2 * V - pk - mk - pl - ml
                self.cross_pos[k, l] = ((base + pp + mm) / (2 * hk * hl)).ravel()
                self.cross_neg[k, l] = (-(base + pm + mp) / (2 * hk * hl)).ravel()

    def gradient(self, beta: np.ndarray) -> np.ndarray:
        """Upwinded gradient for the transport coefficient ``beta`` (N, n)."""
        return np.stack([np.where(beta[:, k] > 0, self.fwd[k], self.bwd[k])
                         for k in range(self.g.ndim)], axis=1)

    def central_gradient(self) -> np.ndarray:
        return np.stack([0.5 * (f + b) for f, b in zip(self.fwd, self.bwd)], axis=1)

    def diffusion(self, a: np.ndarray) -> np.ndarray:
        """``1/2 sum_kl a_kl D_kl V`` with a monotone cross-derivative split."""
        n = self.g.ndim
        out = np.zeros(a.shape[0])
        for k in range(n):
            out += 0.5 * a[:, k, k] * self.dkk[k]
        for k in range(n):
            for l in range(k + 1, n):
                akl = a[:, k, l]
                out += np.where(akl >= 0, akl * self.cross_pos[k, l], -akl * self.cross_neg[k, l])
        return out


def _discrete_hamiltonian(ctx: HamiltonianContext, sgrid: SpaceGrid, t: float,
                          values: np.ndarray, coeffs) -> tuple[np.ndarray, np.ndarray]:
    """``min_u max_i`` of the upwinded per-atom Hamiltonian; returns (value, argmin)."""
    prob, gen = ctx.prob, ctx.gen
    X = sgrid.coords
    st = _Stencil(sgrid, values)
    cands = np.empty((len(prob.control_grid), sgrid.size))
    for c, u in enumerate(prob.control_grid):
        diff, betas = coeffs(t, c)
        drv = prob.driver(t, X, values, u)
        qv = prob.qv_driver(t, X, values, u)
        best = None
        for i in range(len(gen)):
            Hi = (st.diffusion(diff[i]) + np.einsum("Nn,Nn->N", st.gradient(betas[i]), betas[i])
                  + drv + np.einsum("jkN,jk->N", qv, gen.sigmas[i]) - gen.penalties[i])
            best = Hi if best is None else np.maximum(best, Hi)
        cands[c] = best
    arg = np.argmin(cands, axis=0)
    return cands[arg, np.arange(sgrid.size)], arg


class _CoefficientCache:
    def __init__(self, ctx: HamiltonianContext, sgrid: SpaceGrid):
        self.ctx, self.sgrid = ctx, sgrid
        self._store = {}

    def __call__(self, t, c):
        prob, gen = self.ctx.prob, self.ctx.gen
        key = (t if prob.time_dependent else None, c)
        hit = self._store.get(key)
        if hit is None:
            if prob.time_dependent:
                self._store = {}
            X = self.sgrid.coords
            u = prob.control_grid[c]
            sig = prob.diffusion(t, X, u)
            diff = [np.einsum("Nnd,de,Nme->Nnm", sig, S, sig) for S in gen.sigmas]
            betas = [prob.effective_drift(t, X, u, S) for S in gen.sigmas]
            hit = (diff, betas)
            self._store[key] = hit
        return hit


def cfl_number(ctx: HamiltonianContext, delta: float, sgrid: SpaceGrid,
               times=(0.0,)) -> float:
    """``delta (max tr(S) |sigma|^2 / h^2 + |b|_inf n / h + L)`` over grid samples.

    ``|b|`` includes the quadratic-variation drift ``h_jk S^jk`` of every atom.
    """
    prob, gen = ctx.prob, ctx.gen
    X = sgrid.coords
    h = float(np.min(sgrid.h))
    sig_max, b_max = 0.0, 0.0
    for t in times:
        for u in prob.control_grid:
            s = prob.diffusion(t, X, u)
            sig_max = max(sig_max, float(np.max(np.linalg.norm(s, ord=2, axis=(1, 2)))))
            for S in gen.sigmas:
                beta = prob.effective_drift(t, X, u, S)
                b_max = max(b_max, float(np.max(np.abs(beta))))
    return delta * (gen.max_trace * sig_max ** 2 / h ** 2 + b_max * prob.n / h + prob.lipschitz_L)


def min_stencil_weight(ctx: HamiltonianContext, delta: float, sgrid: SpaceGrid,
                       times=(0.0,)) -> float:
    """Smallest weight of the explicit update on ``V_{l+1}`` over atoms, controls
    and grid points (centre weight includes the ``delta L`` zeroth-order term)."""
    prob = ctx.prob
    cache = _CoefficientCache(ctx, sgrid)
    hs = sgrid.h
    n = sgrid.ndim
    worst = math.inf
    for t in times:
        for c in range(len(prob.control_grid)):
            diff, betas = cache(t, c)
            for a, beta in zip(diff, betas):
                centre = np.ones(sgrid.size) - delta * prob.lipschitz_L
                for k in range(n):
                    off = sum(np.abs(a[:, k, l]) / (2 * hs[k] * hs[l]) for l in range(n) if l != k)
                    side = 0.5 * a[:, k, k] / hs[k] ** 2 - off
                    worst = min(worst, float(np.min(delta * (side + np.maximum(beta[:, k], 0) / hs[k]))),
                                float(np.min(delta * (side + np.maximum(-beta[:, k], 0) / hs[k]))))
                    centre -= delta * (a[:, k, k] / hs[k] ** 2 + np.abs(beta[:, k]) / hs[k])
                    for l in range(k + 1, n):
                        centre += delta * np.abs(a[:, k, l]) / (hs[k] * hs[l])
                worst = min(worst, float(np.min(centre)))
    return worst


def auto_substeps(ctx: HamiltonianContext, tgrid: TimeGrid, sgrid: SpaceGrid,
                  limit: float = CFL_LIMIT) -> int:
    """Smallest number of sub-steps per level that satisfies the CFL bound."""
    times = _sample_times(ctx, tgrid)
    base = cfl_number(ctx, tgrid.delta, sgrid, times)
    return max(1, math.ceil(base / limit - 1e-12))


def _sample_times(ctx, tgrid):
    if ctx.prob.time_dependent:
        return tuple(np.linspace(tgrid.t0, tgrid.T, 5))
    return (tgrid.t0,)


def hjb_solve(ctx: HamiltonianContext, tgrid: TimeGrid, sgrid: SpaceGrid,
              substeps: int | str = 1) -> ValueSurface:
    """Explicit monotone scheme ``V_l = V_{l+1} + delta min_u H_h(V_{l+1})``.

    Each level of ``tgrid`` is split into ``substeps`` explicit steps
    (``"auto"`` picks the smallest count meeting the CFL bound); the returned
    surface lives on the refined time grid.
    """
    prob = ctx.prob
    if sgrid.ndim != prob.n:
        raise InvalidInputError("space grid dimension must equal n")
    if substeps == "auto":
        substeps = auto_substeps(ctx, tgrid, sgrid)
    substeps = int(substeps)
    if substeps < 1:
        raise InvalidInputError("substeps must be >= 1")
    fine = tgrid.refined(substeps)
    delta = fine.delta
    times = _sample_times(ctx, fine)
    cfl = cfl_number(ctx, delta, sgrid, times)
    if cfl > CFL_LIMIT:
        raise ConfigurationError(
            f"CFL bound violated: delta*(tr*|sigma|^2/h^2 + |b|*n/h + L) = {cfl:.6g} > {CFL_LIMIT} "
            f"(time step {delta:.6g}, h = {float(np.min(sgrid.h)):.6g}); "
            f"use at least {auto_substeps(ctx, tgrid, sgrid)} sub-steps", code="CFG101")
    w = min_stencil_weight(ctx, delta, sgrid, times)
    if w < -1e-12:
        raise ConfigurationError(
            f"scheme is not monotone: smallest stencil weight {w:.6g} < 0 "
            "(cross-diffusion too strong for this grid)", code="CFG102")
    X = sgrid.coords
    k = fine.steps
    values = np.empty((k + 1, sgrid.size))
    argmin = np.full((k + 1, sgrid.size), -1, dtype=np.int64)
    values[k] = prob.terminal(X)
    coeffs = _CoefficientCache(ctx, sgrid)
    for level in range(k - 1, -1, -1):
        t = fine.times[level + 1]
        mh, arg = _discrete_hamiltonian(ctx, sgrid, t, values[level + 1], coeffs)
        values[level] = values[level + 1] + delta * mh
        argmin[level] = arg
    return ValueSurface(fine, sgrid, values, argmin, method="hjb")


def hjb_residual(ctx: HamiltonianContext, V: ValueSurface, interior: float = 1.0 / 3.0) -> float:
    """``sup |(V_{l+1} - V_l)/delta + min_u H_h(V_{l+1})|`` over interior points and levels."""
    sgrid = V.sgrid
    mask = sgrid.interior_mask(interior)
    coeffs = _CoefficientCache(ctx, sgrid)
    delta = V.tgrid.delta
    worst = 0.0
    for level in range(V.tgrid.steps):
        t = V.tgrid.times[level + 1]
        mh, _ = _discrete_hamiltonian(ctx, sgrid, t, V.values[level + 1], coeffs)
        r = (V.values[level + 1] - V.values[level]) / delta + mh
        worst = max(worst, float(np.max(np.abs(r[mask]))))
    return worst


def scheme_update(ctx: HamiltonianContext, sgrid: SpaceGrid, t: float, delta: float,
                  values: np.ndarray) -> np.ndarray:
    """One explicit step applied to ``values`` (exposed for monotonicity tests)."""
    mh, _ = _discrete_hamiltonian(ctx, sgrid, t, values, _CoefficientCache(ctx, sgrid))
    return values + delta * mh


# ------------------------------------------------------- freezing estimate


@dataclass
class FreezingRow:
    delta: float
    error: float
    order: float | None
    constant: float


@dataclass
class FreezingTable:
    rows: list = field(default_factory=list)
    floor: float = 0.0

    @property
    def orders(self) -> list:
        return [r.order for r in self.rows if r.order is not None]

    @property
    def errors(self) -> list:
        return [r.error for r in self.rows]


def _inner_grid(ctx, phi, t, x, delta, inner_steps, scale, cells):
    """Grid centred at ``x`` whose spacing puts the lattice stencil of the
    widest atom exactly ``cells`` cells away."""
    prob, gen = ctx.prob, ctx.gen
    X = _point(x, prob.n)
    amp = 0.0
    for u in prob.control_grid:
        sig = prob.diffusion(t, X, u)[0]
        for S in gen.sigmas:
            amp = max(amp, float(np.sqrt(np.max(np.diag(sig @ S @ sig.T)))))
    dt = delta / inner_steps
    if amp == 0.0:
        amp = 1.0
    h = scale * amp * math.sqrt(dt) / cells
    bmax = 0.0
    for u in prob.control_grid:
        for S in gen.sigmas:
            bmax = max(bmax, float(np.max(np.abs(prob.effective_drift(t, X, u, S)))))
    radius = 8.0 * amp * math.sqrt(delta) + 2.0 * bmax * delta + 4 * h
    half = math.ceil(radius / h)
    xs = X[0]
    return SpaceGrid(tuple(xs - half * h), tuple(xs + half * h), (2 * half + 1,) * prob.n)


def frozen_integral(ctx: HamiltonianContext, phi: SmoothTestFunction, t, x, delta,
                    order: int = 8) -> float:
    """Gauss-Legendre value of ``int_t^{t+delta} F0(r, x) dr``."""
    nodes, weights = np.polynomial.legendre.leggauss(order)
    rs = t + 0.5 * delta * (nodes + 1.0)
    return 0.5 * delta * float(sum(w * F0(ctx, phi, r, x) for r, w in zip(rs, weights)))


def freezing_error(ctx: HamiltonianContext, phi: SmoothTestFunction, t, x, delta,
                   inner_steps: int = 8, scale: float = math.sqrt(2.0), cells: int = 4,
                   picard_iters: int = 1) -> float:
    """``|min_u G_{t,t+delta}[phi(t+delta, .)](x) - phi(t,x) - int F0|``.

    The semigroup is the lattice one with ``inner_steps`` steps of constant
    control on a grid aligned with the three-point stencil.
    """
    prob, gen = ctx.prob, ctx.gen
    quad = lattice_quadrature(prob.d, scale)
    sgrid = _inner_grid(ctx, phi, t, x, delta, inner_steps, scale, cells)
    dt = delta / inner_steps
    X = sgrid.coords
    centre = sgrid.nearest_index(x)
    terminal = phi.values_on(t + delta, X)
    best = math.inf
    for u in prob.control_grid:
        W = terminal
        for s in range(inner_steps - 1, -1, -1):
            ts = t + s * dt
            ops = _transitions(prob, sgrid, ts, u, dt, gen, quad)
            W = _backward(prob, X, W, ops, ts, dt, u, gen, picard_iters)
        best = min(best, float(W[centre]))
    return abs(best - phi.value(t, x) - frozen_integral(ctx, phi, t, x, delta))


def freezing_check(ctx: HamiltonianContext, phi: SmoothTestFunction, t, x, deltas,
                   inner_steps: int = 8, floor: float = 1e-13, **kwargs) -> FreezingTable:
    """Table of ``(delta, e(delta), order)`` with ``order = log2(e(delta)/e(delta/2))``.

    Orders are left as ``None`` when both errors sit below ``floor`` (no signal).
    """
    deltas = sorted((float(d) for d in deltas), reverse=True)
    table = FreezingTable(floor=floor)
    prev = None
    for d in deltas:
        e = freezing_error(ctx, phi, t, x, d, inner_steps=inner_steps, **kwargs)
        order = None
        if prev is not None and not (prev[1] <= floor and e <= floor):
            order = math.log(max(prev[1], floor) / max(e, floor)) / math.log(prev[0] / d)
        table.rows.append(FreezingRow(d, e, order, e / d ** 1.5))
        prev = (d, e)
    return table


# ---------------------------------------------------------------- (G')


def admissible_pair(rng: np.random.Generator, n: int, alpha: float):
    """Random ``(A, B)`` with ``diag(A, B) <= 3 alpha [[I, -I], [-I, I]]``.

    ``A = -3a R`` with eigenvalues of ``R`` in ``[-1/2, 1]``; ``B`` is drawn between the
    Schur-complement bound ``3a (I - (I + R)^-1)`` and ``-3a I``.
    """
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    r = rng.uniform(-0.5, 1.0, size=n)
    A = -3 * alpha * (Q @ np.diag(r) @ Q.T)
    top = 3 * alpha * (Q @ np.diag(1.0 - 1.0 / (1.0 + r)) @ Q.T)
    theta = rng.uniform(0.0, 1.0)
    B = top - theta * (top + 3 * alpha * np.eye(n))
    return 0.5 * (A + A.T), 0.5 * (B + B.T)


def block_constraint_gap(A, B, alpha: float) -> float:
    """Smallest eigenvalue of ``3 alpha [[I, -I], [-I, I]] - diag(A, B)`` (>= 0 when admissible)."""
    n = A.shape[0]
    Z = np.zeros((n, n))
    I = np.eye(n)
    J = 3 * alpha * np.block([[I, -I], [-I, I]])
    return float(np.linalg.eigvalsh(J - np.block([[A, Z], [Z, B]]))[0])


def gprime_lhs(ctx: HamiltonianContext, t, x, y, v, alpha, A, B) -> float:
    """``min_u H(t,x,v,p,A,u) - min_u H(t,y,v,p,-B,u)`` with ``p = alpha (x - y)``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    p = alpha * (x - y)
    negB = -np.asarray(B, dtype=float)
    hx = min(hamiltonian(ctx, t, x, v, p, A, u) for u in ctx.prob.control_grid)
    hy = min(hamiltonian(ctx, t, y, v, p, negB, u) for u in ctx.prob.control_grid)
    return hx - hy


def gprime_constant(ctx: HamiltonianContext) -> float:
    """Structural constant ``C`` in ``lhs <= C (|x-y| + alpha |x-y|^2)`` implied
    by the declared Lipschitz constant and the covariance atoms."""
    L = ctx.prob.lipschitz_L
    per_atom = [1.5 * float(np.linalg.eigvalsh(S)[-1]) * L * L + float(np.sum(np.abs(S))) * L
                for S in ctx.gen.sigmas]
    return max(per_atom) + L


@dataclass
class GPrimeResult:
    violations: int
    constant: float
    worst_ratio: float
    trials: int


def gprime_check(ctx: HamiltonianContext, trials: int, box, seed: int = 0,
                 constant: float | None = None, tol: float = 1e-12) -> GPrimeResult:
    """Count tuples where the comparison structure inequality fails.

    Pairs ``(A, B)`` come from :func:`admissible_pair`; ``x`` is uniform in
    ``box`` and ``y`` a nearby point.  ``constant`` defaults to
    :func:`gprime_constant`; the report also carries the largest observed
    ratio ``lhs / (|x-y| + alpha |x-y|^2)``.
    """
    if trials < 1:
        raise InvalidInputError("need at least one trial")
    prob = ctx.prob
    C = gprime_constant(ctx) if constant is None else float(constant)
    rng = np.random.default_rng(seed)
    lo, hi = (np.asarray(v, dtype=float) for v in box)
    violations = 0
    worst = 0.0
    for _ in range(trials):
        x = rng.uniform(lo, hi, size=prob.n)
        y = x + rng.normal(scale=0.3, size=prob.n) * rng.uniform(0, 1)
        y = np.clip(y, lo, hi)
        alpha = float(np.exp(rng.uniform(np.log(0.1), np.log(10.0))))
        v = float(rng.uniform(-2.0, 2.0))
        t = float(rng.uniform(0.0, 1.0))
        A, B = admissible_pair(rng, prob.n, alpha)
        lhs = gprime_lhs(ctx, t, x, y, v, alpha, A, B)
        dist = float(np.linalg.norm(x - y))
        rhs_unit = dist + alpha * dist * dist
        if rhs_unit > 0:
            worst = max(worst, lhs / rhs_unit)
        if lhs > C * rhs_unit + tol:
            violations += 1
    return GPrimeResult(violations, C, worst, trials)
