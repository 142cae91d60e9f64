"""Controlled forward-backward system: coefficient container and checks."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, EvaluationError, InvalidInputError
from .expressions import Expression, parse_expression


def control_grid_from_box(lower, upper, points) -> np.ndarray:
    """Tensor grid of controls, shape (K, m), lexicographic order."""
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    points = np.atleast_1d(np.asarray(points, dtype=int))
    if not (lower.shape == upper.shape == points.shape):
        raise InvalidInputError("control box bounds and point counts must have length m")
    if np.any(upper < lower) or np.any(points < 1):
        raise InvalidInputError("control box needs lower <= upper and >= 1 point per axis")
    axes = [np.linspace(a, b, k) if k > 1 else np.array([a]) for a, b, k in zip(lower, upper, points)]
    return np.array(list(itertools.product(*axes)), dtype=float)


def _broadcast(val, n: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(val, dtype=float), (n,))


@dataclass
class ControlProblem:
    """Coefficients ``b, h_ij, sigma, f, g_ij, Phi`` plus the control set.

    Shapes: ``b`` has n entries, ``h[i][j]`` n entries for i, j < d,
    ``sigma`` is n x d, ``g`` is d x d.  Expressions see the variables
    ``s``, ``x1..xn``, ``y`` (f and g only) and ``u1..um``.
    """

    n: int
    d: int
    m: int
    b: list
    h: list
    sigma: list
    f: Expression
    g: list
    Phi: Expression
    control_grid: np.ndarray
    lipschitz_L: float
    control_lower: np.ndarray | None = None
    control_upper: np.ndarray | None = None
    name: str = ""
    time_dependent: bool = field(init=False)

    def __post_init__(self):
        self.control_grid = np.atleast_2d(np.asarray(self.control_grid, dtype=float))
        if self.control_grid.shape[0] == 0 or self.control_grid.shape[1] != self.m:
            raise InvalidInputError(f"control grid must be a nonempty (K, {self.m}) array")
        if not (np.isfinite(self.lipschitz_L) and self.lipschitz_L > 0):
            raise InvalidInputError("lipschitz_L must be positive")
        if len(self.b) != self.n or len(self.sigma) != self.n:
            raise InvalidInputError("b and sigma need n rows")
        if any(len(row) != self.d for row in self.sigma):
            raise InvalidInputError("sigma rows need d entries")
        if len(self.h) != self.d or any(len(r) != self.d for r in self.h):
            raise InvalidInputError("h must be d x d")
        if any(len(self.h[i][j]) != self.n for i in range(self.d) for j in range(self.d)):
            raise InvalidInputError("every h_ij must have n components")
        if len(self.g) != self.d or any(len(r) != self.d for r in self.g):
            raise InvalidInputError("g must be d x d")
        if self.control_lower is None:
            self.control_lower = self.control_grid.min(axis=0)
        if self.control_upper is None:
            self.control_upper = self.control_grid.max(axis=0)
        self.control_lower = np.atleast_1d(np.asarray(self.control_lower, dtype=float))
        self.control_upper = np.atleast_1d(np.asarray(self.control_upper, dtype=float))
        if np.any(self.control_grid < self.control_lower - 1e-12) or np.any(
            self.control_grid > self.control_upper + 1e-12
        ):
            raise InvalidInputError("control grid leaves the declared control box")
        self.time_dependent = any("s" in e.variables for e in self._all_coefficients())
        self._sigma_const = all(e.is_constant for row in self.sigma for e in row)

    # ------------------------------------------------------------ building

    @classmethod
    def from_strings(cls, n, d, m, *, b=None, h=None, sigma=None, f="0", g=None, Phi="0",
                     control_grid, lipschitz_L, control_lower=None, control_upper=None,
                     name="") -> "ControlProblem":
        """Build from formula strings; omitted coefficients are zero."""
        xs = [f"x{k + 1}" for k in range(n)]
        us = [f"u{k + 1}" for k in range(m)]
        forward = ["s", *xs, *us]
        backward = ["s", *xs, "y", *us]

        def p(text, variables, label):
            return parse_expression(str(text), variables, name=label)

        b = b if b is not None else ["0"] * n
        sigma = sigma if sigma is not None else [["0"] * d for _ in range(n)]
        h = h if h is not None else [[["0"] * n for _ in range(d)] for _ in range(d)]
        g = g if g is not None else [["0"] * d for _ in range(d)]
        return cls(
            n=n, d=d, m=m,
            b=[p(e, forward, f"b[{i}]") for i, e in enumerate(b)],
            h=[[[p(e, forward, f"h[{i}][{j}][{k}]") for k, e in enumerate(h[i][j])]
                for j in range(d)] for i in range(d)],
            sigma=[[p(e, forward, f"sigma[{i}][{j}]") for j, e in enumerate(row)]
                   for i, row in enumerate(sigma)],
            f=p(f, backward, "f"),
            g=[[p(g[i][j], backward, f"g[{i}][{j}]") for j in range(d)] for i in range(d)],
            Phi=p(Phi, xs, "Phi"),
            control_grid=control_grid,
            lipschitz_L=float(lipschitz_L),
            control_lower=control_lower,
            control_upper=control_upper,
            name=name,
        )

    def _all_coefficients(self):
        yield from self.b
        for row in self.h:
            for vec in row:
                yield from vec
        for row in self.sigma:
            yield from row
        yield self.f
        for row in self.g:
            yield from row

    # ---------------------------------------------------------- evaluation

    def env(self, t, X, u, y=None) -> dict:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        u = np.atleast_1d(np.asarray(u, dtype=float))
        scope = {"s": t}
        for k in range(self.n):
            scope[f"x{k + 1}"] = X[:, k]
        for k in range(self.m):
            scope[f"u{k + 1}"] = u[k] if u.ndim == 1 else u[:, k]
        if y is not None:
            scope["y"] = y
        return scope

    def drift(self, t, X, u) -> np.ndarray:
        X = np.atleast_2d(X)
        env = self.env(t, X, u)
        return np.stack([_broadcast(e(env), X.shape[0]) for e in self.b], axis=1)

    def qv_drift(self, t, X, u) -> np.ndarray:
        """``h_ij`` values, shape (d, d, N, n)."""
        X = np.atleast_2d(X)
        env = self.env(t, X, u)
        N = X.shape[0]
        return np.array([[np.stack([_broadcast(e(env), N) for e in self.h[i][j]], axis=1)
                          for j in range(self.d)] for i in range(self.d)])

    def diffusion(self, t, X, u) -> np.ndarray:
        """``sigma`` values, shape (N, n, d)."""
        X = np.atleast_2d(X)
        env = self.env(t, X, u)
        N = X.shape[0]
        return np.stack([np.stack([_broadcast(e(env), N) for e in row], axis=1)
                         for row in self.sigma], axis=1)

    def driver(self, t, X, y, u) -> np.ndarray:
        X = np.atleast_2d(X)
        return _broadcast(self.f(self.env(t, X, u, y)), X.shape[0])

    def qv_driver(self, t, X, y, u) -> np.ndarray:
        """``g_ij`` values, shape (d, d, N)."""
        X = np.atleast_2d(X)
        env = self.env(t, X, u, y)
        N = X.shape[0]
        return np.array([[_broadcast(self.g[i][j](env), N) for j in range(self.d)]
                         for i in range(self.d)])

    def terminal(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        env = {f"x{k + 1}": X[:, k] for k in range(self.n)}
        return _broadcast(self.Phi(env), X.shape[0])

    def effective_drift(self, t, X, u, sigma_atom) -> np.ndarray:
        """``b + sum_jk h_jk sigma_atom^{jk}``, shape (N, n)."""
        return self.drift(t, X, u) + np.einsum("jkNn,jk->Nn", self.qv_drift(t, X, u), sigma_atom)

    def sigma_bound(self, samples) -> float:
        """Largest spectral norm of ``sigma`` over sample points and all controls."""
        X = np.atleast_2d(samples)
        best = 0.0
        for u in self.control_grid:
            s = self.diffusion(0.0, X, u)
            best = max(best, float(np.max(np.linalg.norm(s, ord=2, axis=(1, 2)))))
        return best

    # -------------------------------------------------------------- checks

    def check_symmetry(self, box, samples: int = 100, seed: int = 0, tol: float = 1e-12):
        """Raise unless ``h_ij = h_ji`` and ``g_ij = g_ji`` on random samples."""
        rng = np.random.default_rng(seed)
        s, X, y, U = self._sample_args(rng, box, samples)
        env_y = self.env(s, X, U, y)
        for i in range(self.d):
            for j in range(i + 1, self.d):
                for k in range(self.n):
                    gap = np.max(np.abs(np.asarray(self.h[i][j][k](env_y)) - self.h[j][i][k](env_y)))
                    if gap > tol:
                        raise ConfigurationError(f"h[{i}][{j}] != h[{j}][{i}] (gap {gap:.3g})",
                                                 code="CFG301")
                gap = np.max(np.abs(np.asarray(self.g[i][j](env_y)) - self.g[j][i](env_y)))
                if gap > tol:
                    raise ConfigurationError(f"g[{i}][{j}] != g[{j}][{i}] (gap {gap:.3g})",
                                             code="CFG302")

    def check_lipschitz(self, box, samples: int = 200, seed: int = 1, y_range: float = 10.0):
        """Sampled check of the declared Lipschitz constant.

        Each coefficient increment must stay below
        ``L (|x - x'| + |y - y'| + |u - v|) (1 + 1e-9)`` on random pairs.
        Returns the worst observed ratio.
        """
        rng = np.random.default_rng(seed)
        s, X1, y1, U1 = self._sample_args(rng, box, samples, y_range)
        _, X2, y2, U2 = self._sample_args(rng, box, samples, y_range)
        e1, e2 = self.env(s, X1, U1, y1), self.env(s, X2, U2, y2)
        dist = (np.linalg.norm(X1 - X2, axis=1) + np.abs(y1 - y2)
                + np.linalg.norm(U1 - U2, axis=1))
        worst = 0.0
        groups = [("b", [[e] for e in self.b]),
                  ("sigma", [[e for row in self.sigma for e in row]]),
                  ("f", [[self.f]])]
        for i in range(self.d):
            for j in range(self.d):
                groups.append((f"h[{i}][{j}]", [self.h[i][j]]))
                groups.append((f"g[{i}][{j}]", [[self.g[i][j]]]))
        for label, blocks in groups:
            for block in blocks:
                v1 = np.stack([_broadcast(e(e1), samples) for e in block], axis=1)
                v2 = np.stack([_broadcast(e(e2), samples) for e in block], axis=1)
                inc = np.linalg.norm(v1 - v2, axis=1)
                ratio = float(np.max(inc / np.maximum(dist, 1e-300)))
                worst = max(worst, ratio)
                if np.any(inc > self.lipschitz_L * dist * (1 + 1e-9)):
                    raise ConfigurationError(
                        f"{label} breaks the declared Lipschitz bound "
                        f"(observed {ratio:.6g} > L = {self.lipschitz_L:.6g})", code="CFG303")
        return worst

    def _sample_args(self, rng, box, samples, y_range=10.0):
        lo, hi = (np.asarray(v, dtype=float) for v in box)
        X = rng.uniform(lo, hi, size=(samples, self.n))
        U = rng.uniform(self.control_lower, self.control_upper, size=(samples, self.m))
        y = rng.uniform(-y_range, y_range, size=samples)
        s = float(rng.uniform(0.0, 1.0))
        return s, X, y, U


def check_coefficients_finite(prob: ControlProblem, X: np.ndarray, t: float = 0.0):
    """Evaluate every coefficient once on ``X`` so failures surface early."""
    for u in prob.control_grid:
        try:
            prob.drift(t, X, u)
            prob.qv_drift(t, X, u)
            prob.diffusion(t, X, u)
            prob.driver(t, X, np.zeros(len(X)), u)
            prob.qv_driver(t, X, np.zeros(len(X)), u)
        except EvaluationError as exc:
            raise ConfigurationError(f"coefficient evaluation failed: {exc}", code="CFG304") from exc
    try:
        prob.terminal(X)
    except EvaluationError as exc:
        raise ConfigurationError(f"terminal payoff evaluation failed: {exc}", code="CFG305") from exc

