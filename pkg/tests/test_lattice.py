import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gdpp.errors import InvalidInputError
from gdpp.generators import Generator, eval_Gtilde
from gdpp.lattice import (
    GridFunction,
    LocalLattice,
    SpaceGrid,
    TimeGrid,
    aligned_lattice_scale,
    gauss_quadrature,
    interpolate,
    interpolation_matrix,
    lattice_quadrature,
    one_step_expectation,
    quadratic_variation_estimate,
)
from gdpp.validation import generator_consistency_error


def test_gauss_rules():
    q2 = gauss_quadrature(1, 2)
    np.testing.assert_allclose(sorted(q2.nodes.ravel()), [-1.0, 1.0], atol=1e-15)
    np.testing.assert_allclose(q2.weights, [0.5, 0.5], atol=1e-15)
    q3 = gauss_quadrature(1, 3)
    order = np.argsort(q3.nodes.ravel())
    np.testing.assert_allclose(q3.nodes.ravel()[order], [-math.sqrt(3), 0, math.sqrt(3)], atol=1e-14)
    np.testing.assert_allclose(q3.weights[order], [1 / 6, 2 / 3, 1 / 6], atol=1e-14)
    q22 = gauss_quadrature(2, 2)
    assert len(q22) == 4
    np.testing.assert_allclose(np.abs(q22.nodes), 1.0, atol=1e-15)
    np.testing.assert_allclose(q22.weights, 0.25, atol=1e-15)
    with pytest.raises(InvalidInputError):
        gauss_quadrature(1, 1)


@pytest.mark.parametrize("d,p", [(1, 2), (1, 3), (1, 5), (2, 3), (3, 2)])
def test_gauss_moments(d, p):
    assert gauss_quadrature(d, p).check_moments()


@pytest.mark.parametrize("a", [1.0, 1.2, math.sqrt(3), 3.0])
def test_lattice_rule_moments(a):
    assert lattice_quadrature(2, a).check_moments()
    assert LocalLattice(2, (0.1, 0.1)).at(a).check_moments()


def test_aligned_scale_lands_on_cells():
    a = aligned_lattice_scale(1 / 200, 0.05, 1.0)
    reach = a * math.sqrt(1 / 200)
    assert reach / 0.05 == pytest.approx(round(reach / 0.05), abs=1e-12)
    assert a >= 1.0


def test_local_lattice_scales_align_every_state():
    rule = LocalLattice(1, (0.05,))
    cols = np.linspace(0.3, 1.7, 11)[:, None, None]
    a = rule.scales(cols, 1 / 200)
    cells = a[:, 0] * cols[:, 0, 0] * math.sqrt(1 / 200) / 0.05
    np.testing.assert_allclose(cells, np.round(cells), atol=1e-12)
    assert np.all(a >= 1.0)


def test_grid_validation():
    with pytest.raises(InvalidInputError):
        SpaceGrid((0.0,), (1.0,), (2,))
    with pytest.raises(InvalidInputError):
        SpaceGrid((1.0,), (0.0,), (5,))
    with pytest.raises(InvalidInputError):
        TimeGrid(1.0, 1.0, 4)
    with pytest.raises(InvalidInputError):
        TimeGrid(0.0, 1.0, 0)
    grid = SpaceGrid((0.0,), (1.0,), (5,))
    with pytest.raises(InvalidInputError):
        GridFunction(grid, [0.0, 1.0, np.nan, 0.0, 0.0])


def test_interpolation_examples():
    grid = SpaceGrid((0.0,), (1.0,), (3,))
    phi = GridFunction(grid, [0.0, 1.0, 4.0])
    assert interpolate(phi, [0.5]) == 1.0
    assert interpolate(phi, [0.25]) == 0.5
    assert interpolate(phi, [7.0]) == 4.0
    assert interpolate(phi, [-7.0]) == 0.0


def test_interpolation_matrix_agrees(rng):
    grid = SpaceGrid((-1.0, 0.0), (1.0, 2.0), (5, 7))
    vals = rng.normal(size=grid.size)
    X = rng.uniform(-2, 3, size=(40, 2))
    M = interpolation_matrix(grid, X)
    np.testing.assert_allclose(M @ vals, GridFunction(grid, vals)(X), atol=1e-14)


def fine_grid():
    return SpaceGrid((-1.0,), (1.0,), (401,))


def test_one_step_examples(gheat_gen):
    grid = fine_grid()
    q = gauss_quadrature(1, 2)
    c = one_step_expectation(GridFunction(grid, np.full(grid.size, 3.5)), 0.01, gheat_gen, q)
    np.testing.assert_allclose(c.values, 3.5, atol=1e-12)
    lin = one_step_expectation(GridFunction.from_callable(grid, lambda X: X[:, 0]), 0.01, gheat_gen, q)
    assert interpolate(lin, [0.0]) == pytest.approx(0.0, abs=1e-15)
    sq = one_step_expectation(GridFunction.from_callable(grid, lambda X: X[:, 0] ** 2), 0.01, gheat_gen, q)
    # sqrt(0.01) * sqrt(S) * 1 lands on the 0.005 grid for both atoms
    assert interpolate(sq, [0.0]) == pytest.approx(max(0.25 * 0.01, 1.0 * 0.01), abs=1e-15)


def test_one_step_rejects_bad_input(gheat_gen):
    grid = fine_grid()
    phi = GridFunction(grid, np.zeros(grid.size))
    with pytest.raises(InvalidInputError):
        one_step_expectation(phi, 0.0, gheat_gen, gauss_quadrature(1, 2))
    with pytest.raises(InvalidInputError):
        one_step_expectation(phi, 0.01, gheat_gen, gauss_quadrature(2, 2))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_one_step_monotone(seed):
    rng = np.random.default_rng(seed)
    gen = Generator.scalar([0.25, 1.0], penalties=[0.3, 0.0])
    grid = SpaceGrid((-2.0,), (2.0,), (41,))
    v2 = rng.normal(size=grid.size)
    v1 = v2 + np.abs(rng.normal(size=grid.size))
    for quad in (gauss_quadrature(1, 3), LocalLattice(1, tuple(grid.h))):
        e1 = one_step_expectation(GridFunction(grid, v1), 0.02, gen, quad).values
        e2 = one_step_expectation(GridFunction(grid, v2), 0.02, gen, quad).values
        assert np.all(e1 >= e2 - 1e-12)


def test_translation_equivariance(rng, gheat_gen):
    grid = SpaceGrid((-3.0,), (3.0,), (121,))
    vals = rng.normal(size=grid.size)
    q = gauss_quadrature(1, 3)
    r0 = one_step_expectation(GridFunction(grid, vals), 0.01, gheat_gen, q).values
    r1 = one_step_expectation(GridFunction(grid, np.roll(vals, 3)), 0.01, gheat_gen, q).values
    mask = grid.interior_mask()
    np.testing.assert_allclose(np.roll(r0, 3)[mask], r1[mask], atol=1e-12)


@pytest.mark.parametrize("d", [1, 2])
def test_generator_consistency(rng, d):
    atoms = []
    for c in (0.0, 0.2):
        M = rng.normal(size=(d, d))
        atoms.append((M @ M.T + 0.3 * np.eye(d), c))
    gen = Generator(atoms, 0.3)
    for _ in range(5):
        M = rng.normal(size=(d, d))
        A = 0.5 * (M + M.T)
        errs = []
        for delta in (1e-2, 5e-3):
            err, bound = generator_consistency_error(gen, A, delta)
            assert err <= bound + 1e-12
            errs.append(err)
        # with the Gauss rule the error is interpolation-driven; the bound is O(delta)
        g = [generator_consistency_error(gen, A, dt, gauss_quadrature(d, 3)) for dt in (1e-2, 5e-3)]
        for err, bound in g:
            assert err <= bound + 1e-12


def test_quadratic_variation_penalized(penalized_gen):
    grid = SpaceGrid((-6.0,), (6.0,), (241,))
    q = LocalLattice(1, tuple(grid.h))
    for A, expected in ((1.0, 1.0), (-1.0, -0.55)):
        est = quadratic_variation_estimate(penalized_gen, [[A]], 1 / 50, q, grid)
        assert est == pytest.approx(expected, abs=2e-2)
        assert expected == pytest.approx(eval_Gtilde(penalized_gen, [[2 * A]]))
