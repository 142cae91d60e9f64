import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gdpp.errors import InvalidInputError, PreconditionError
from gdpp.generators import (
    CovarianceAtom,
    Generator,
    domination_margin,
    ellipticity_check,
    eval_G,
    eval_Gtilde,
)


def enumerate_Gtilde(atoms, A):
    # oracle: explicit double loop for 1/2 tr(S A) - c
    best = -np.inf
    for S, c in atoms:
        S = np.atleast_2d(S)
        half_trace = 0.5 * sum(S[i, j] * A[j, i] for i in range(len(S)) for j in range(len(S)))
        best = max(best, half_trace - c)
    return best


def test_G_examples(gheat_gen):
    assert eval_G(gheat_gen, [[0.0]]) == 0.0
    assert eval_G(gheat_gen, [[2.0]]) == pytest.approx(max(0.5 * 0.25 * 2, 0.5 * 1.0 * 2))
    assert eval_G(gheat_gen, [[-2.0]]) == pytest.approx(max(-0.25, -1.0))


def test_Gtilde_examples(penalized_gen):
    assert eval_Gtilde(penalized_gen, [[0.0]]) == 0.0
    assert eval_Gtilde(penalized_gen, [[2.0]]) == pytest.approx(max(0.25 - 0.3, 1.0))
    assert eval_Gtilde(penalized_gen, [[-2.0]]) == pytest.approx(max(-0.25 - 0.3, -1.0))


def test_domination_margin_examples(penalized_gen):
    A = np.array([[1.7]])
    assert domination_margin(penalized_gen, A, A) == 0.0
    # G(4) - (Gt(2) - Gt(-2)) = 2 - (1 - (-0.55))
    assert domination_margin(penalized_gen, [[2.0]], [[-2.0]]) == pytest.approx(0.45)


def test_ellipticity_examples(gheat_gen):
    assert ellipticity_check(gheat_gen, [[1.0]], [[1.0]]) == 0.0
    assert ellipticity_check(gheat_gen, [[1.0]], [[0.0]]) == pytest.approx(0.5 - 0.0 - 0.125)
    with pytest.raises(PreconditionError):
        ellipticity_check(gheat_gen, [[0.0]], [[1.0]])


def test_factor_reproduces_sigma(rng):
    M = rng.normal(size=(3, 3))
    S = M @ M.T + 0.1 * np.eye(3)
    atom = CovarianceAtom(S, 0.0)
    assert np.max(np.abs(atom.factor @ atom.factor.T - S)) <= 1e-12


@pytest.mark.parametrize("atoms,sigma_min", [
    ([], 0.1),
    ([([[1.0]], 0.5)], 0.1),                           # no zero penalty
    ([([[1.0]], -0.1)], 0.1),                          # negative penalty
    ([([[0.05]], 0.0)], 0.1),                          # below the floor
    ([([[1.0, 0.2], [0.0, 1.0]], 0.0)], 0.1),          # asymmetric
    ([([[1.0]], 0.0), ([[1.0, 0], [0, 1.0]], 0.0)], 0.1),
    ([([[1.0]], 0.0)], 0.0),
])
def test_invalid_generators(atoms, sigma_min):
    with pytest.raises(InvalidInputError):
        Generator(atoms, sigma_min)


def test_dimension_and_symmetry_errors(gheat_gen):
    with pytest.raises(InvalidInputError):
        eval_G(gheat_gen, np.eye(2))
    gen2 = Generator([(np.eye(2), 0.0)], 0.5)
    with pytest.raises(InvalidInputError):
        eval_G(gen2, [[0.0, 1.0], [0.0, 0.0]])


def _gen2(rng, penalties):
    atoms = []
    for c in penalties:
        M = rng.normal(size=(2, 2))
        atoms.append((M @ M.T + 0.3 * np.eye(2), c))
    return Generator(atoms, 0.3), atoms


sym2 = arrays(np.float64, (2, 2), elements=st.floats(-10, 10)).map(lambda M: 0.5 * (M + M.T))


@settings(max_examples=200, deadline=None)
@given(sym2, sym2)
def test_domination_property(A1, A2):
    gen, _ = _gen2(np.random.default_rng(7), [0.0, 0.4, 1.3])
    assert domination_margin(gen, A1, A2) >= -1e-12


@settings(max_examples=200, deadline=None)
@given(sym2, arrays(np.float64, (2, 2), elements=st.floats(-3, 3)))
def test_monotonicity_and_ellipticity(B, P):
    gen, _ = _gen2(np.random.default_rng(8), [0.0, 0.2])
    A = B + P @ P.T
    assert eval_Gtilde(gen, A) >= eval_Gtilde(gen, B) - 1e-12
    assert ellipticity_check(gen, A, B) >= -1e-12


@settings(max_examples=200, deadline=None)
@given(sym2, sym2)
def test_sublinearity(A, B):
    gen, _ = _gen2(np.random.default_rng(9), [0.0, 0.0, 0.0])
    for lam in (0.0, 0.5, 2.0):
        assert eval_G(gen, lam * A) == pytest.approx(lam * eval_G(gen, A), abs=1e-12)
    assert eval_G(gen, A + B) <= eval_G(gen, A) + eval_G(gen, B) + 1e-12


@settings(max_examples=100, deadline=None)
@given(sym2)
def test_matches_enumeration_oracle(A):
    gen, atoms = _gen2(np.random.default_rng(10), [0.0, 0.7])
    assert eval_Gtilde(gen, A) == pytest.approx(enumerate_Gtilde(atoms, A), abs=1e-12)
    free = gen.sublinear()
    assert eval_Gtilde(free, A) == eval_G(free, A)
