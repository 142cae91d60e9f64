"""Property suites run by the CLI: structure, lattice, comparison, DPP,
(G') structure, freezing rate, solver agreement and regularity."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import ProblemConfig
from .control import (
    comparison_check,
    dpp_residual,
    holder_quotient,
    lipschitz_quotient,
    solve_value,
)
from .errors import InvalidInputError
from .generators import domination_margin, ellipticity_check, eval_G, eval_Gtilde
from .hjb import (
    F1,
    F2,
    F_matrix,
    SmoothTestFunction,
    freezing_check,
    gprime_check,
    hamiltonian,
    hjb_residual,
    hjb_solve,
    scheme_update,
)
from .lattice import (
    GridFunction,
    LocalLattice,
    SpaceGrid,
    TimeGrid,
    gauss_quadrature,
    increment_rule,
    interpolate_points,
    one_step_expectation,
)

ROUNDOFF = 1e-12


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float | None = None
    threshold: float | None = None
    detail: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        val = "" if self.value is None else f" value={self.value:.6g}"
        thr = "" if self.threshold is None else f" threshold={self.threshold:.6g}"
        return f"{status} {self.name}{val}{thr}"

    def as_dict(self) -> dict:
        return _clean(asdict(self))


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


# ------------------------------------------------------------ random inputs


def random_symmetric(rng, d, scale=2.0):
    M = rng.normal(scale=scale, size=(d, d))
    return 0.5 * (M + M.T)


def random_ordered_pair(rng, d, scale=2.0):
    """``(A, B)`` with ``A - B`` positive semidefinite."""
    B = random_symmetric(rng, d, scale)
    P = rng.normal(size=(d, d))
    return B + P @ P.T * rng.uniform(0.0, 1.0), B


def _sample_point(rng, cfg: ProblemConfig):
    lo, hi = cfg.box
    x = rng.uniform(lo, hi)
    t = rng.uniform(cfg.tgrid.t0, cfg.tgrid.T)
    u = cfg.prob.control_grid[rng.integers(len(cfg.prob.control_grid))]
    return float(t), x, u


# --------------------------------------------------------------- generator


def generator_checks(cfg: ProblemConfig, seed: int | None = None) -> list[CheckResult]:
    gen, trials = cfg.gen, int(cfg.checks["structure_trials"])
    rng = np.random.default_rng(cfg.rng_seed if seed is None else seed)
    d = gen.d
    dom = min(domination_margin(gen, random_symmetric(rng, d), random_symmetric(rng, d))
              for _ in range(trials))
    mono = math.inf
    ell = math.inf
    for _ in range(trials):
        A, B = random_ordered_pair(rng, d)
        mono = min(mono, eval_Gtilde(gen, A) - eval_Gtilde(gen, B))
        ell = min(ell, ellipticity_check(gen, A, B))
    sub = 0.0
    for _ in range(trials):
        A, B = random_symmetric(rng, d), random_symmetric(rng, d)
        for lam in (0.0, 0.5, 2.0):
            sub = max(sub, abs(eval_G(gen, lam * A) - lam * eval_G(gen, A)))
        sub = max(sub, eval_G(gen, A + B) - eval_G(gen, A) - eval_G(gen, B))
    free = gen.sublinear()
    same = max(abs(eval_Gtilde(free, A) - eval_G(free, A))
               for A in (random_symmetric(rng, d) for _ in range(trials)))
    return [
        CheckResult("generator.domination", dom >= -ROUNDOFF, dom, -ROUNDOFF, {"trials": trials}),
        CheckResult("generator.monotonicity", mono >= -ROUNDOFF, mono, -ROUNDOFF, {"trials": trials}),
        CheckResult("generator.sublinearity", sub <= ROUNDOFF, sub, ROUNDOFF, {"trials": trials}),
        CheckResult("generator.penalty_free_reduction", same == 0.0, same, 0.0),
        CheckResult("generator.ellipticity", ell >= -ROUNDOFF, ell, -ROUNDOFF, {"trials": trials}),
    ]


# ----------------------------------------------------------------- lattice


def _lattice_grid(d: int, h: float, radius: float) -> SpaceGrid:
    pts = 2 * int(math.ceil(radius / h)) + 1
    half = (pts - 1) // 2 * h
    return SpaceGrid((-half,) * d, (half,) * d, (pts,) * d)


def _rule_for(quad, grid: SpaceGrid):
    return LocalLattice(quad.d, tuple(grid.h)) if isinstance(quad, LocalLattice) else quad


def generator_consistency_error(gen, A, delta: float, quad=None) -> tuple[float, float]:
    """``|[E(phi)(0) - phi(0)] / delta - Gtilde(A)|`` for ``phi = x^T A x / 2``
    on a grid of spacing ``delta``; returns (error, interpolation bound)."""
    d = gen.d
    A = np.atleast_2d(np.asarray(A, dtype=float))
    reach = 2.0 * math.sqrt(delta * gen.max_trace) + 4 * delta
    grid = _lattice_grid(d, delta, reach)
    rule = LocalLattice(d, tuple(grid.h)) if quad is None else _rule_for(quad, grid)
    X = grid.coords
    values = 0.5 * np.einsum("ni,ij,nj->n", X, A, X)
    origin = np.zeros((1, d))
    best = -math.inf
    for i in range(len(gen)):
        cols = gen.factors[i][None, :, :]
        shifts, w = increment_rule(rule, cols, delta)
        acc = sum(w[q, 0] * interpolate_points(grid, values, origin + shifts[q])[0]
                  for q in range(shifts.shape[0]))
        best = max(best, acc - delta * gen.penalties[i])
    err = abs(best / delta - eval_Gtilde(gen, A))
    bound = float(np.sum(np.abs(np.diag(A)))) * delta / 8.0
    return err, bound


def quadratic_variation_estimate(gen, a: float, steps: int, offset_cells: float) -> float:
    """Lattice value of ``E[a B_1^2]`` for a scalar generator: ``steps`` compositions
    of the two-point one-step expectation on a grid of spacing
    ``sqrt(delta) / offset_cells``.

    With a half-integer ``offset_cells`` growing like ``steps^(1/2)`` the spacing
    scales with ``delta`` and the interpolation bias is ``O(delta)``.
    """
    if gen.d != 1:
        raise InvalidInputError("quadratic variation estimate needs a scalar generator")
    delta = 1.0 / steps
    h = math.sqrt(delta) / offset_cells
    half = math.ceil((math.sqrt(gen.max_trace * steps) + 1.0) / h)
    grid = SpaceGrid((-half * h,), (half * h,), (2 * half + 1,))
    V = GridFunction.from_callable(grid, lambda X: a * X[:, 0] ** 2)
    quad = gauss_quadrature(1, 2)
    for _ in range(steps):
        V = one_step_expectation(V, delta, gen, quad)
    return float(V.values[half])


def lattice_checks(cfg: ProblemConfig, seed: int | None = None) -> list[CheckResult]:
    gen, quad = cfg.gen, cfg.quad
    rng = np.random.default_rng((cfg.rng_seed if seed is None else seed) + 1)
    d = gen.d
    out = []
    if isinstance(quad, LocalLattice):
        moments = max(max(quad.at(a).moment_errors().values()) for a in (1.0, 1.3, math.sqrt(3), 2.5))
    else:
        moments = max(quad.moment_errors().values())
    out.append(CheckResult("lattice.moments", moments <= ROUNDOFF, moments, ROUNDOFF))

    per_axis = {1: 81, 2: 31}.get(d, 9)
    grid = SpaceGrid((-2.0,) * d, (2.0,) * d, (per_axis,) * d)
    rule = _rule_for(quad, grid)
    delta = cfg.tgrid.delta
    worst = math.inf
    for _ in range(50):
        v2 = rng.normal(size=grid.size)
        v1 = v2 + np.abs(rng.normal(size=grid.size)) * (rng.random(grid.size) < 0.5)
        e1 = one_step_expectation(GridFunction(grid, v1), delta, gen, rule).values
        e2 = one_step_expectation(GridFunction(grid, v2), delta, gen, rule).values
        worst = min(worst, float(np.min(e1 - e2)))
    out.append(CheckResult("lattice.monotonicity", worst >= -ROUNDOFF, worst, -ROUNDOFF, {"pairs": 50}))

    c = float(rng.normal())
    res = one_step_expectation(GridFunction(grid, np.full(grid.size, c)), delta, gen, rule).values
    gap = float(np.max(np.abs(res - c)))
    out.append(CheckResult("lattice.constants", gap <= ROUNDOFF, gap, ROUNDOFF))

    if d <= 2:
        worst_ratio = 0.0
        detail = []
        for _ in range(5):
            A = random_symmetric(rng, d, 1.0)
            errs = [generator_consistency_error(gen, A, dt) for dt in (1e-2, 5e-3)]
            for (e, b), dt in zip(errs, (1e-2, 5e-3)):
                worst_ratio = max(worst_ratio, e / (b + ROUNDOFF))
                detail.append({"delta": dt, "error": e, "bound": b})
        out.append(CheckResult("lattice.generator_consistency", worst_ratio <= 1.0, worst_ratio, 1.0,
                               {"samples": detail}))

    vals = rng.normal(size=grid.size).reshape(grid.shape)
    shifted = np.roll(vals, 1, axis=0)
    r0 = one_step_expectation(GridFunction(grid, vals.ravel()), delta, gen, rule).values.reshape(grid.shape)
    r1 = one_step_expectation(GridFunction(grid, shifted.ravel()), delta, gen, rule).values.reshape(grid.shape)
    mask = grid.interior_mask().reshape(grid.shape)
    eq = float(np.max(np.abs(np.roll(r0, 1, axis=0) - r1)[mask]))
    out.append(CheckResult("lattice.translation", eq <= ROUNDOFF, eq, ROUNDOFF))
    return out


# ----------------------------------------------------------------- control


def comparison_checks(cfg: ProblemConfig) -> list[CheckResult]:
    trials = int(cfg.checks["comparison_trials"])
    res = comparison_check(cfg.prob, cfg.gen, cfg.quad, cfg.sgrid, cfg.tgrid.delta, trials,
                           t=cfg.tgrid.t0, seed=cfg.rng_seed, picard_iters=cfg.picard_iters)
    shifted = comparison_check(cfg.prob, cfg.gen, cfg.quad, cfg.sgrid, cfg.tgrid.delta, 1,
                               t=cfg.tgrid.t0, seed=cfg.rng_seed, picard_iters=cfg.picard_iters,
                               shift=1.0)
    floor = 1.0 - cfg.tgrid.delta * cfg.prob.lipschitz_L - 1e-10
    return [
        CheckResult("control.comparison", res.violations == 0, res.violations, 0,
                    {"trials": trials, "min_gap": res.min_gap, "points": res.checked_points}),
        CheckResult("control.comparison_shift", shifted.min_gap >= floor, shifted.min_gap, floor),
    ]


def dpp_checks(cfg: ProblemConfig, V=None) -> list[CheckResult]:
    if V is None:
        V = solve_value(cfg.prob, cfg.gen, cfg.quad, cfg.tgrid, cfg.sgrid, cfg.picard_iters)
    k = cfg.tgrid.steps
    levels = sorted({0, k // 2, k - 1})
    worst = max(dpp_residual(cfg.prob, cfg.gen, cfg.quad, V, lv, 1, cfg.picard_iters) for lv in levels)
    term = float(np.max(np.abs(V.values[-1] - cfg.prob.terminal(cfg.sgrid.coords))))
    return [
        CheckResult("control.dpp_one_step", worst <= ROUNDOFF, worst, ROUNDOFF, {"levels": levels}),
        CheckResult("control.terminal", term <= ROUNDOFF, term, ROUNDOFF),
    ]


# --------------------------------------------------------------------- hjb


def freezing_function(cfg: ProblemConfig) -> SmoothTestFunction:
    text = cfg.checks["freezing"].get("phi") or cfg.raw.get("coefficients", {}).get("Phi", "0")
    return SmoothTestFunction.from_text(str(text), cfg.prob.n)


def hamiltonian_checks(cfg: ProblemConfig, seed: int | None = None) -> list[CheckResult]:
    ctx = cfg.context
    n = cfg.prob.n
    trials = int(cfg.checks["structure_trials"])
    rng = np.random.default_rng((cfg.rng_seed if seed is None else seed) + 2)
    ell, sym = math.inf, 0.0
    for _ in range(trials):
        t, x, u = _sample_point(rng, cfg)
        v = float(rng.normal())
        p = rng.normal(size=n)
        A, B = random_ordered_pair(rng, n)
        ell = min(ell, hamiltonian(ctx, t, x, v, p, A, u) - hamiltonian(ctx, t, x, v, p, B, u))
        F = F_matrix(ctx, t, x, v, p, random_symmetric(rng, n), u)
        sym = max(sym, float(np.max(np.abs(F - F.T))))
    phi = freezing_function(cfg)
    ident = 0.0
    for _ in range(50):
        t, x, u = _sample_point(rng, cfg)
        lhs = F1(ctx, phi, t, x, 0.0, u) + eval_Gtilde(cfg.gen, 2.0 * F2(ctx, phi, t, x, 0.0, u))
        rhs = hamiltonian(ctx, t, x, phi.value(t, x), phi.gradient(t, x), phi.hessian(t, x), u) \
            + phi.time_derivative(t, x)
        ident = max(ident, abs(lhs - rhs))
    deriv = phi.derivative_error(50, box=cfg.box, seed=cfg.rng_seed)
    return [
        CheckResult("hjb.degenerate_ellipticity", ell >= -ROUNDOFF, ell, -ROUNDOFF, {"trials": trials}),
        CheckResult("hjb.F_symmetry", sym <= ROUNDOFF, sym, ROUNDOFF, {"trials": trials}),
        CheckResult("hjb.freezing_identity", ident <= ROUNDOFF, ident, ROUNDOFF),
        CheckResult("hjb.test_function_derivatives", deriv <= 1e-6, deriv, 1e-6),
    ]


def scheme_monotonicity(cfg: ProblemConfig, seed: int | None = None) -> CheckResult:
    """Bump ``V_{l+1}`` at single nodes; the explicit update must not decrease anywhere."""
    ctx = cfg.context
    rng = np.random.default_rng((cfg.rng_seed if seed is None else seed) + 3)
    delta = cfg.tgrid.delta / cfg.hjb_substeps
    V = cfg.prob.terminal(cfg.sgrid.coords)
    t = cfg.tgrid.T
    base = scheme_update(ctx, cfg.sgrid, t, delta, V)
    worst = math.inf
    nodes = int(cfg.checks["monotone_nodes"])
    for node in rng.choice(cfg.sgrid.size, size=min(nodes, cfg.sgrid.size), replace=False):
        W = V.copy()
        W[node] += 1e-3 * (1.0 + abs(W[node]))
        worst = min(worst, float(np.min(scheme_update(ctx, cfg.sgrid, t, delta, W) - base)))
    return CheckResult("hjb.scheme_monotonicity", worst >= -ROUNDOFF, worst, -ROUNDOFF, {"nodes": nodes})


def gprime_result(cfg: ProblemConfig) -> CheckResult:
    res = gprime_check(cfg.context, int(cfg.checks["gprime_trials"]), cfg.box, seed=cfg.rng_seed)
    return CheckResult("hjb.gprime", res.violations == 0, res.violations, 0,
                       {"trials": res.trials, "constant": res.constant,
                        "largest_observed_ratio": res.worst_ratio})


def freezing_result(cfg: ProblemConfig) -> CheckResult:
    opts = cfg.checks["freezing"]
    x = opts.get("x")
    x = np.zeros(cfg.prob.n) if x is None else np.asarray(x, dtype=float)
    table = freezing_check(cfg.context, freezing_function(cfg), float(opts.get("t", 0.0)), x,
                           opts["deltas"])
    orders = table.orders
    minimum = float(opts["min_order"])
    passed = all(o >= minimum for o in orders)
    worst = min(orders) if orders else None
    return CheckResult("hjb.freezing_order", passed, worst, minimum,
                       {"rows": [asdict(r) for r in table.rows], "floor": table.floor,
                        "exact_pairs": len(table.rows) - 1 - len(orders)})


def run_validate(cfg: ProblemConfig) -> list[CheckResult]:
    """Full property suite for one config."""
    out = generator_checks(cfg)
    out += lattice_checks(cfg)
    out += comparison_checks(cfg)
    out += dpp_checks(cfg)
    out += hamiltonian_checks(cfg)
    out.append(scheme_monotonicity(cfg))
    out.append(gprime_result(cfg))
    out.append(freezing_result(cfg))
    return out


# ------------------------------------------------------ multi-window DPP


def dpp_ratio(cfg: ProblemConfig, steps=None, window=None, level: int = 0) -> CheckResult:
    """``j``-window residual at the finer of two time steps over the coarser.

    Pairs whose residuals both sit at rounding level count as exact.
    """
    steps = cfg.checks["dpp_ratio_steps"] if steps is None else steps
    window = int(cfg.checks["dpp_ratio_window"] if window is None else window)
    limit = float(cfg.checks["dpp_ratio_max"])
    res = []
    for k in steps:
        tg = TimeGrid(cfg.tgrid.t0, cfg.tgrid.T, int(k))
        quad = cfg.quadrature_for(tg, cfg.sgrid)
        V = solve_value(cfg.prob, cfg.gen, quad, tg, cfg.sgrid, cfg.picard_iters)
        res.append(dpp_residual(cfg.prob, cfg.gen, quad, V, level, window, cfg.picard_iters))
    coarse, fine = res[0], res[-1]
    exact = coarse <= ROUNDOFF and fine <= ROUNDOFF
    ratio = None if exact else (fine / coarse if coarse > 0 else math.inf)
    passed = exact or ratio <= limit
    return CheckResult("control.dpp_refinement", passed, ratio, limit,
                       {"steps": list(steps), "window": window, "residuals": res, "exact": exact})


def run_dpp(cfg: ProblemConfig) -> list[CheckResult]:
    V = solve_value(cfg.prob, cfg.gen, cfg.quad, cfg.tgrid, cfg.sgrid, cfg.picard_iters)
    out = []
    k = cfg.tgrid.steps
    for j in cfg.checks["dpp_windows"]:
        table = {}
        for lv in cfg.checks["dpp_levels"]:
            if lv + j <= k:
                table[int(lv)] = dpp_residual(cfg.prob, cfg.gen, cfg.quad, V, int(lv), int(j),
                                              cfg.picard_iters)
        worst = max(table.values()) if table else 0.0
        if int(j) == 1:
            out.append(CheckResult("control.dpp_window_1", worst <= ROUNDOFF, worst, ROUNDOFF,
                                   {"levels": table}))
        else:
            out.append(CheckResult(f"control.dpp_window_{int(j)}", True, worst, None,
                                   {"levels": table}))
    out.append(dpp_ratio(cfg))
    return out


# ------------------------------------------------------- solver agreement


@dataclass
class SolverPair:
    tgrid: TimeGrid
    sgrid: SpaceGrid
    semigroup: object
    hjb: object
    gap: float
    residual: float


def solve_both(cfg: ProblemConfig, level: int = 0) -> SolverPair:
    tg, sg = cfg.refined(level)
    quad = cfg.quadrature_for(tg, sg)
    V = solve_value(cfg.prob, cfg.gen, quad, tg, sg, cfg.picard_iters)
    W_fine = hjb_solve(cfg.context, tg, sg, "auto" if level else cfg.hjb_substeps)
    residual = hjb_residual(cfg.context, W_fine)
    W = W_fine.restrict(tg)
    mask = sg.interior_mask()
    gap = float(np.max(np.abs(V.values[:, mask] - W.values[:, mask])))
    return SolverPair(tg, sg, V, W, gap, residual)


def origin_value(surface, t_level: int = 0) -> float:
    return surface.value(t_level, np.zeros(surface.sgrid.ndim))


def run_compare(cfg: ProblemConfig) -> list[CheckResult]:
    pair = solve_both(cfg, 0)
    tol = float(cfg.checks["cross_solver_tol"])
    return [
        CheckResult("compare.interior_gap", pair.gap <= tol, pair.gap, tol,
                    {"semigroup_origin": origin_value(pair.semigroup),
                     "hjb_origin": origin_value(pair.hjb),
                     "hjb_substeps": cfg.hjb_substeps}),
        CheckResult("compare.hjb_scheme_residual", pair.residual <= ROUNDOFF, pair.residual, ROUNDOFF),
    ]


def _within(a: float, b: float, rel: float) -> bool:
    return abs(b - a) <= rel * max(abs(a), ROUNDOFF)


def run_sweep(cfg: ProblemConfig) -> tuple[list[CheckResult], list[dict]]:
    """Refinement ladder ``(delta / 2^l, h / sqrt(2)^l)``: solver gap must shrink
    geometrically and regularity quotients stay within the configured band."""
    levels = int(cfg.checks["sweep_levels"])
    tol = float(cfg.checks["cross_solver_tol"])
    rel = float(cfg.checks["regularity_tol"])
    rows = []
    for lv in range(levels):
        pair = solve_both(cfg, lv)
        rows.append({
            "level": lv, "steps": pair.tgrid.steps, "points": list(pair.sgrid.points),
            "semigroup_origin": origin_value(pair.semigroup), "hjb_origin": origin_value(pair.hjb),
            "gap": pair.gap,
            "lipschitz_semigroup": lipschitz_quotient(pair.semigroup),
            "lipschitz_hjb": lipschitz_quotient(pair.hjb),
            "holder_semigroup": holder_quotient(pair.semigroup),
            "holder_hjb": holder_quotient(pair.hjb),
        })
    out = []
    for lv, row in enumerate(rows):
        limit = tol / 2 ** lv
        out.append(CheckResult(f"sweep.gap_level_{lv}", row["gap"] <= limit, row["gap"], limit))
    for key in ("lipschitz_semigroup", "lipschitz_hjb", "holder_semigroup", "holder_hjb"):
        vals = [r[key] for r in rows]
        ok = all(_within(a, b, rel) for a, b in zip(vals, vals[1:]))
        change = max((abs(b - a) / max(abs(a), ROUNDOFF) for a, b in zip(vals, vals[1:])), default=0.0)
        out.append(CheckResult(f"sweep.{key}", ok, change, rel, {"values": vals}))
    return out, rows
