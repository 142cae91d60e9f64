import math

import numpy as np
import pytest

from gdpp.control import (
    comparison_check,
    dpp_residual,
    holder_quotient,
    is_even,
    lipschitz_quotient,
    semigroup_step,
    simulate_state_paths,
    solve_value,
    step_state,
)
from gdpp.errors import ConfigurationError, InvalidInputError
from gdpp.generators import Generator
from gdpp.lattice import (
    GridFunction,
    LocalLattice,
    SpaceGrid,
    TimeGrid,
    gauss_quadrature,
    interpolate,
    one_step_expectation,
)
from gdpp.problem import ControlProblem, control_grid_from_box

Q2 = gauss_quadrature(1, 2)


def prob1(**kw):
    base = dict(sigma=[["1"]], Phi="x1^2", control_grid=[[0.0]], lipschitz_L=1.0)
    base.update(kw)
    return ControlProblem.from_strings(1, 1, 1, **base)


def heat_grids(points=161, steps=200, radius=4.0):
    return TimeGrid(0.0, 1.0, steps), SpaceGrid((-radius,), (radius,), (points,))


def test_step_state_examples():
    one = Generator.scalar([1.0])
    plus = int(np.argmax(Q2.nodes[:, 0]))
    assert step_state(prob1(), 0, [0.0], [0.0], 0, plus, 0.04, one, Q2)[0] == pytest.approx(0.2)
    p = prob1(b=["u1"], sigma=[["0"]], control_grid=[[-1.0]])
    assert step_state(p, 0, [0.5], [-1.0], 0, 0, 0.1, one, Q2)[0] == pytest.approx(0.4)
    p = prob1(h=[[["1"]]], sigma=[["0"]])
    quarter = Generator.scalar([0.25])
    assert step_state(p, 0, [0.0], [0.0], 0, 0, 0.1, quarter, Q2)[0] == pytest.approx(0.025)
    with pytest.raises(InvalidInputError):
        step_state(p, 0, [0.0], [0.0], 3, 0, 0.1, quarter, Q2)


def test_semigroup_reduces_to_one_step(gheat_gen, rng):
    grid = SpaceGrid((-2.0,), (2.0,), (81,))
    V = GridFunction(grid, rng.normal(size=grid.size))
    quad = gauss_quadrature(1, 3)
    a = semigroup_step(prob1(), V, 0.0, 0.01, [0.0], gheat_gen, quad)
    b = one_step_expectation(V, 0.01, gheat_gen, quad)
    np.testing.assert_allclose(a.values, b.values, atol=1e-14)


def test_semigroup_examples(gheat_gen):
    grid = SpaceGrid((-1.0,), (1.0,), (401,))
    zero = GridFunction(grid, np.zeros(grid.size))
    out = semigroup_step(prob1(f="1", sigma=[["0"]]), zero, 0.0, 0.01, [0.0], gheat_gen, Q2)
    np.testing.assert_allclose(out.values, 0.01, atol=1e-15)
    sq = GridFunction.from_callable(grid, lambda X: X[:, 0] ** 2)
    out = semigroup_step(prob1(), sq, 0.0, 0.01, [0.0], gheat_gen, Q2)
    assert interpolate(out, [0.0]) == pytest.approx(0.01, abs=1e-15)


def test_picard_iterations_follow_fixed_point(gheat_gen):
    # y = 1 + delta * (-y): explicit 1 - delta, one correction 1 - delta + delta^2,
    # converged 1 / (1 + delta)
    grid = SpaceGrid((-1.0,), (1.0,), (21,))
    ones = GridFunction(grid, np.ones(grid.size))
    p = prob1(f="-y")
    dt = 0.1
    got = [semigroup_step(p, ones, 0.0, dt, [0.0], gheat_gen, Q2, k).values[10] for k in (0, 1, 60)]
    assert got[0] == pytest.approx(1 - dt, abs=1e-14)
    assert got[1] == pytest.approx(1 - dt + dt * dt, abs=1e-14)
    assert got[2] == pytest.approx(1 / (1 + dt), abs=1e-12)


def test_contraction_guard(gheat_gen):
    grid = SpaceGrid((-1.0,), (1.0,), (5,))
    with pytest.raises(ConfigurationError) as info:
        semigroup_step(prob1(lipschitz_L=20.0), GridFunction(grid, np.zeros(5)), 0.0, 0.05,
                       [0.0], gheat_gen, Q2)
    assert info.value.code == "CFG201"


@pytest.mark.parametrize("phi,expected", [("x1^2", 1.0), ("-x1^2", -0.25)])
def test_gheat_oracles(gheat_gen, phi, expected):
    tg, sg = heat_grids()
    V = solve_value(prob1(Phi=phi), gheat_gen, LocalLattice(1, tuple(sg.h)), tg, sg)
    assert V.value(0, [0.0]) == pytest.approx(expected, abs=2e-2)
    # closed form x^2 + S (T - t) on the interior third, S = 1 or 1/4
    X = sg.coords[:, 0]
    S = 1.0 if expected > 0 else 0.25
    sign = 1.0 if expected > 0 else -1.0
    m = sg.interior_mask()
    for lv in (0, 100):
        exact = sign * (X ** 2 + S * (1 - tg.times[lv]))
        assert np.max(np.abs(V.values[lv][m] - exact[m])) <= 2e-2
    np.testing.assert_allclose(V.values[-1], sign * X ** 2, atol=1e-12)


def test_drift_control_oracle(gheat_gen, drift_problem):
    tg, sg = heat_grids(241, 200, 6.0)
    V = solve_value(drift_problem, gheat_gen, LocalLattice(1, tuple(sg.h)), tg, sg)
    assert V.value(0, [0.0]) == pytest.approx(-1.0, abs=2e-2)
    m = sg.interior_mask()
    assert np.all(drift_problem.control_grid[V.argmin_controls[:-1][:, m], 0] == -1.0)
    assert np.all(V.argmin_controls[-1] == -1)


def test_dpp_residuals(gheat_gen, drift_problem):
    tg, sg = heat_grids(81, 40, 4.0)
    q = LocalLattice(1, tuple(sg.h))
    V = solve_value(drift_problem, gheat_gen, q, tg, sg)
    for lv in (0, 17, 39):
        assert dpp_residual(drift_problem, gheat_gen, q, V, lv, 1) <= 1e-12
    H = solve_value(prob1(), gheat_gen, q, tg, sg)
    for j in (1, 3, 8):
        assert dpp_residual(prob1(), gheat_gen, q, H, 0, j) <= 1e-12
    with pytest.raises(InvalidInputError):
        dpp_residual(prob1(), gheat_gen, q, H, 38, 3)


def test_comparison(gheat_gen, drift_problem):
    sg = SpaceGrid((-4.0,), (4.0,), (161,))
    q = LocalLattice(1, tuple(sg.h))
    res = comparison_check(drift_problem, gheat_gen, q, sg, 1 / 200, 100)
    assert res.violations == 0
    p = prob1(f="-0.5*y + cos(x1)", g=[["0.3*y"]])
    res = comparison_check(p, gheat_gen, q, sg, 1 / 200, 1, shift=0.0)
    assert res.violations == 0 and res.min_gap == 0.0
    res = comparison_check(p, gheat_gen, q, sg, 1 / 200, 1, shift=1.0)
    assert res.min_gap >= (1 - 1 / 200 * p.lipschitz_L) * 1 - 1e-10


def test_regularity_quotients(gheat_gen):
    p = prob1(Phi="sqrt(1 + x1^2)", b=["-0.2*x1"], sigma=[["1 + 0.2*tanh(x1)"]])
    lips, hold = [], []
    for points, steps in ((161, 100), (321, 400)):
        tg, sg = heat_grids(points, steps)
        V = solve_value(p, gheat_gen, LocalLattice(1, tuple(sg.h)), tg, sg)
        lips.append(lipschitz_quotient(V))
        hold.append(holder_quotient(V))
    assert lips[1] <= 1.1 * lips[0]
    assert hold[1] <= 1.1 * hold[0]


def test_even_solution(gheat_gen):
    p = prob1(b=["u1"], sigma=[["1 + 0.1*cos(x1)"]], f="0.2*cos(x1) - 0.1*y", Phi="x1^2",
              control_grid=control_grid_from_box([-1], [1], [3]))
    tg, sg = heat_grids(81, 40)
    V = solve_value(p, gheat_gen, LocalLattice(1, tuple(sg.h)), tg, sg)
    assert is_even(V, 1e-10)


def linear_reference(values, X, steps, delta):
    # classical expectation with the two-point rule and np.interp (clamped)
    for _ in range(steps):
        values = 0.5 * (np.interp(X + math.sqrt(delta), X, values)
                        + np.interp(X - math.sqrt(delta), X, values))
    return values


def test_linear_case_reduction():
    one = Generator.scalar([1.0])
    tg = TimeGrid(0.0, 1.0, 100)
    sg = SpaceGrid((-4.0,), (4.0,), (401,))
    V = solve_value(prob1(Phi="cos(x1)"), one, Q2, tg, sg)
    X = sg.coords[:, 0]
    ref = linear_reference(np.cos(X), X, 100, tg.delta)
    np.testing.assert_allclose(V.values[0], ref, atol=1e-12)
    m = sg.interior_mask()
    np.testing.assert_allclose(V.values[0][m], np.cos(X[m]) * math.exp(-0.5), atol=2e-3)


def test_state_paths(gheat_gen):
    frozen = prob1(sigma=[["0"]])
    rep = simulate_state_paths(frozen, gheat_gen, [0.0], 1, [0.3], 0.25, paths=100)
    assert rep.moments[2] == 0.0 and rep.moments[4] == 0.0
    moving = prob1(b=["1"], sigma=[["0"]])
    rep = simulate_state_paths(moving, gheat_gen, [0.0], 1, [0.0], 0.1, paths=10)
    assert rep.moments[2] == pytest.approx(0.01, abs=1e-14)
    consts = [simulate_state_paths(prob1(), gheat_gen, [0.0], 1, [0.0], d, paths=10_000).constants[2]
              for d in (0.25, 0.0625)]
    assert consts[0] == pytest.approx(consts[1], rel=0.1)
    a = simulate_state_paths(prob1(), gheat_gen, [0.0], 1, [0.0], 0.25, paths=100, seed=3)
    b = simulate_state_paths(prob1(), gheat_gen, [0.0], 1, [0.0], 0.25, paths=100, seed=3)
    assert a.moments == b.moments
