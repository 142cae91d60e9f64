"""Acceptance criteria, each at its stated tolerance.  Every test records one
PASS/FAIL line that is printed in the terminal summary."""

import copy
import math
import time

import numpy as np
import pytest

from gdpp.config import parse_config
from gdpp.control import comparison_check
from gdpp.generators import Generator, eval_Gtilde
from gdpp.hjb import SmoothTestFunction, freezing_check
from gdpp.validation import (
    dpp_checks,
    dpp_ratio,
    freezing_function,
    generator_checks,
    gprime_result,
    hamiltonian_checks,
    origin_value,
    quadratic_variation_estimate,
    run_sweep,
    solve_both,
)

ORACLE_CONFIGS = ("gheat_convex", "gheat_concave", "drift_control")


@pytest.fixture(scope="module")
def sweeps(configs):
    """Two-level refinement ladder for every shipped config (shared by 8 and 9)."""
    return {name: run_sweep(cfg) for name, cfg in configs.items()}


def test_criterion_1_gheat_convex(configs, criterion):
    start = time.perf_counter()
    pair = solve_both(configs["gheat_convex"])
    elapsed = time.perf_counter() - start
    vs, vh = origin_value(pair.semigroup), origin_value(pair.hjb)
    ok = abs(vs - 1.0) <= 2e-2 and abs(vh - 1.0) <= 2e-2 and elapsed < 10
    criterion(1, ok, f"V(0,0) semigroup={vs:.6f} hjb={vh:.6f} (oracle 1, tol 2e-2), {elapsed:.2f}s < 10s")
    assert ok


def test_criterion_2_gheat_concave(configs, criterion):
    pair = solve_both(configs["gheat_concave"])
    vs, vh = origin_value(pair.semigroup), origin_value(pair.hjb)
    ok = abs(vs + 0.25) <= 2e-2 and abs(vh + 0.25) <= 2e-2
    criterion(2, ok, f"V(0,0) semigroup={vs:.6f} hjb={vh:.6f} (oracle -0.25, tol 2e-2)")
    assert ok


def test_criterion_3_quadratic_variation(criterion):
    gen = Generator.scalar([0.25, 1.0], penalties=[0.3, 0.0])
    # spacing h = sqrt(delta) / (j + 1/2) with (j + 1/2)^2 roughly doubling per
    # halving of delta, i.e. h proportional to delta
    ladder = ((32, 7.5), (64, 10.5))
    lines, ok = [], True
    for a, target in ((1.0, 1.0), (-1.0, -0.55)):
        assert eval_Gtilde(gen, [[2 * a]]) == pytest.approx(target)
        errs = [quadratic_variation_estimate(gen, a, k, c) - target for k, c in ladder]
        ratio = abs(errs[1]) / abs(errs[0])
        ok &= all(abs(e) <= 2e-2 for e in errs) and 0.4 <= ratio <= 0.6
        lines.append(f"A={a:+.0f}: errors {errs[0]:.2e}, {errs[1]:.2e}, ratio {ratio:.3f}")
    criterion(3, ok, "; ".join(lines) + " (tol 2e-2, ratio in [0.4, 0.6])")
    assert ok


def test_criterion_4_drift_control(configs, criterion):
    cfg = configs["drift_control"]
    pair = solve_both(cfg)
    vs, vh = origin_value(pair.semigroup), origin_value(pair.hjb)
    mask = cfg.sgrid.interior_mask()
    grid = cfg.prob.control_grid[:, 0]
    controls = [grid[S.argmin_controls[:-1][:, mask]] for S in (pair.semigroup, pair.hjb)]
    argmin_ok = all(np.all(c == -1.0) for c in controls)
    ok = len(grid) >= 5 and abs(vs + 1) <= 2e-2 and abs(vh + 1) <= 2e-2 and argmin_ok
    criterion(4, ok, f"V(0,0) semigroup={vs:.6f} hjb={vh:.6f} (oracle -1, tol 2e-2), "
                     f"{len(grid)} controls, interior argmin all -1: {argmin_ok}")
    assert ok


def test_criterion_5_comparison(configs, criterion):
    start = time.perf_counter()
    total = 0
    for cfg in configs.values():
        res = comparison_check(cfg.prob, cfg.gen, cfg.quad, cfg.sgrid, cfg.tgrid.delta, 100,
                               t=cfg.tgrid.t0, seed=cfg.rng_seed, tol=1e-10,
                               picard_iters=cfg.picard_iters)
        total += res.violations
    elapsed = time.perf_counter() - start
    ok = total == 0 and elapsed < 30
    criterion(5, ok, f"{total} violations over 100 pairs x controls x {len(configs)} problems, "
                     f"{elapsed:.2f}s < 30s")
    assert ok


def test_criterion_6_dpp(configs, criterion):
    start = time.perf_counter()
    one_step = max(dpp_checks(cfg)[0].value for cfg in configs.values())
    drift = configs["drift_control"]
    res = dpp_ratio(drift, steps=(64, 128), window=4)
    elapsed = time.perf_counter() - start
    r64, r128 = res.detail["residuals"]
    exact = r64 <= 1e-12 and r128 <= 1e-12
    ok = one_step <= 1e-12 and (exact or r128 <= 0.7 * r64) and elapsed < 60
    criterion(6, ok, f"max j=1 residual {one_step:.2e} (tol 1e-12); j=4 residuals "
                     f"{r64:.2e} (1/64), {r128:.2e} (1/128)"
                     f"{' both at rounding level' if exact else f', ratio {r128 / r64:.3f}'}; "
                     f"{elapsed:.2f}s < 60s")
    assert ok


def test_criterion_6_companion_curved_payoff(configs):
    # linear payoffs make every window residual vanish; a curved payoff shows the decay
    raw = copy.deepcopy(configs["drift_control"].raw)
    raw["coefficients"]["Phi"] = "sqrt(1 + x1^2)"
    res = dpp_ratio(parse_config(raw), steps=(64, 128), window=4)
    r64, r128 = res.detail["residuals"]
    assert r64 > 1e-8
    assert r128 <= 0.7 * r64


def test_criterion_7_freezing(configs, criterion):
    start = time.perf_counter()
    cfg = configs["gheat_convex"]
    phi = SmoothTestFunction.from_text("x1^2", 1)
    table = freezing_check(cfg.context, phi, 0.0, [0.3], [0.1, 0.05, 0.025])
    elapsed = time.perf_counter() - start
    errors = table.errors
    orders = table.orders
    exact = max(errors) <= table.floor
    ok = (exact or (len(orders) == 2 and min(orders) >= 1.4)) and elapsed < 60
    desc = "errors " + ", ".join(f"{e:.2e}" for e in errors)
    desc += " (identity exact at rounding level, no order to fit)" if exact else \
        " orders " + ", ".join(f"{o:.3f}" for o in orders)
    criterion(7, ok, f"{desc}; {elapsed:.2f}s < 60s")
    assert ok


def test_criterion_7_companion_nonpolynomial(configs):
    cfg = configs["gheat_convex"]
    table = freezing_check(cfg.context, SmoothTestFunction.from_text("sin(x1)", 1), 0.0, [0.3],
                           [0.1, 0.05, 0.025])
    assert len(table.orders) == 2
    assert min(table.orders) >= 1.4


def test_criterion_8_cross_solver(sweeps, criterion):
    lines, ok = [], True
    for name in ORACLE_CONFIGS:
        rows = sweeps[name][1]
        g0, g1 = rows[0]["gap"], rows[1]["gap"]
        ok &= g0 <= 5e-2 and g1 <= 2.5e-2
        lines.append(f"{name} {g0:.2e} -> {g1:.2e}")
    criterion(8, ok, "interior gaps " + "; ".join(lines) + " (tol 5e-2 -> 2.5e-2)")
    assert ok


def test_criterion_9_regularity(sweeps, criterion):
    worst, ok = 0.0, True
    for name, (checks, _) in sweeps.items():
        for c in checks:
            if c.name.startswith(("sweep.lipschitz", "sweep.holder")):
                worst = max(worst, c.value)
                ok &= c.passed
    criterion(9, ok, f"largest relative change of any quotient {worst:.2%} over "
                     f"{len(sweeps)} problems x 2 solvers (tol 10%)")
    assert ok


def test_criterion_10_structure(configs, criterion):
    start = time.perf_counter()
    failed = []
    for name, cfg in configs.items():
        checks = generator_checks(cfg)
        checks += [c for c in hamiltonian_checks(cfg)
                   if c.name in ("hjb.degenerate_ellipticity", "hjb.F_symmetry")]
        checks.append(gprime_result(cfg))
        failed += [f"{name}:{c.name}" for c in checks if not c.passed]
    elapsed = time.perf_counter() - start
    ok = not failed and elapsed < 10
    criterion(10, ok, f"{len(failed)} failing checks across {len(configs)} problems "
                      f"(domination, monotonicity, ellipticity, F symmetry, gprime), {elapsed:.2f}s < 10s")
    assert ok, failed


def test_shipped_freezing_functions_are_smooth(configs):
    for cfg in configs.values():
        assert freezing_function(cfg).derivative_error() <= 1e-6
        assert math.isfinite(cfg.gen.max_trace)
