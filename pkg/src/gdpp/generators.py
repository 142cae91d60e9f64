"""Finite penalized covariance families.

A :class:`Generator` stores atoms ``(sigma_i, c_i)`` and evaluates

    G(A)      = max_i  1/2 tr(sigma_i A)
    Gtilde(A) = max_i {1/2 tr(sigma_i A) - c_i}

``G`` is sublinear and monotone; ``Gtilde`` is monotone, vanishes at zero
(some atom carries no penalty) and is dominated by ``G``:
``Gtilde(A1) - Gtilde(A2) <= G(A1 - A2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidInputError, PreconditionError

SYMMETRY_TOL = 1e-10
PSD_TOL = 1e-10


def _sym_factor(sigma: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(sigma)
    w = np.clip(w, 0.0, None)
    return v @ np.diag(np.sqrt(w)) @ v.T


def as_symmetric(A, d: int, what: str = "matrix") -> np.ndarray:
    """Return ``A`` as a float (d, d) array after checking symmetry."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape != (d, d):
        raise InvalidInputError(f"{what} must be {d}x{d}, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidInputError(f"{what} has non-finite entries")
    if np.max(np.abs(A - A.T), initial=0.0) > SYMMETRY_TOL:
        raise InvalidInputError(f"{what} is not symmetric")
    return A


@dataclass(frozen=True)
class CovarianceAtom:
    sigma: np.ndarray
    penalty: float = 0.0
    factor: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise InvalidInputError(f"atom covariance must be square, got shape {sigma.shape}")
        if np.max(np.abs(sigma - sigma.T), initial=0.0) > SYMMETRY_TOL:
            raise InvalidInputError("atom covariance is not symmetric")
        sigma = 0.5 * (sigma + sigma.T)
        if not np.isfinite(self.penalty) or self.penalty < 0:
            raise InvalidInputError(f"atom penalty must be finite and >= 0, got {self.penalty}")
        sigma.setflags(write=False)
        factor = _sym_factor(sigma)
        factor.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "penalty", float(self.penalty))
        object.__setattr__(self, "factor", factor)


class Generator:
    """Finite family of covariance atoms with an ellipticity floor.

    Parameters
    ----------
    atoms : sequence of CovarianceAtom or (sigma, penalty) pairs
    sigma_min : float
        Every atom must dominate ``sigma_min * I``.
    """

    def __init__(self, atoms: Sequence, sigma_min: float):
        built = []
        for a in atoms:
            if not isinstance(a, CovarianceAtom):
                sigma, penalty = a
                a = CovarianceAtom(np.asarray(sigma, dtype=float), float(penalty))
            built.append(a)
        if not built:
            raise InvalidInputError("generator needs at least one atom")
        d = built[0].sigma.shape[0]
        if any(a.sigma.shape != (d, d) for a in built):
            raise InvalidInputError("all atoms must share the same dimension")
        if not (np.isfinite(sigma_min) and sigma_min > 0):
            raise InvalidInputError(f"sigma_min must be positive, got {sigma_min}")
        for k, a in enumerate(built):
            lam = np.linalg.eigvalsh(a.sigma)[0]
            if lam < sigma_min - PSD_TOL:
                raise InvalidInputError(
                    f"atom {k} violates the ellipticity floor: "
                    f"smallest eigenvalue {lam:.6g} < sigma_min {sigma_min:.6g}"
                )
        if min(a.penalty for a in built) != 0.0:
            raise InvalidInputError("at least one atom must carry zero penalty")
        self.atoms = tuple(built)
        self.d = d
        self.sigma_min = float(sigma_min)
        self.sigmas = np.stack([a.sigma for a in built])
        self.factors = np.stack([a.factor for a in built])
        self.penalties = np.array([a.penalty for a in built])

    def __repr__(self):
        return f"Generator(d={self.d}, atoms={len(self.atoms)}, sigma_min={self.sigma_min})"

    def __len__(self):
        return len(self.atoms)

    @classmethod
    def scalar(cls, variances, penalties=None, sigma_min=None) -> "Generator":
        """One-dimensional family from a list of variances."""
        variances = [float(v) for v in variances]
        if penalties is None:
            penalties = [0.0] * len(variances)
        if sigma_min is None:
            sigma_min = min(variances)
        return cls([([[v]], c) for v, c in zip(variances, penalties)], sigma_min)

    def sublinear(self) -> "Generator":
        """The penalty-free family, i.e. the dominating ``G``."""
        return Generator([(a.sigma, 0.0) for a in self.atoms], self.sigma_min)

    @property
    def max_trace(self) -> float:
        return float(np.max(np.trace(self.sigmas, axis1=1, axis2=2)))

    def half_traces(self, A) -> np.ndarray:
        """Vector of ``1/2 tr(sigma_i A)`` over atoms."""
        A = as_symmetric(A, self.d)
        return 0.5 * np.einsum("ijk,kj->i", self.sigmas, A)


def eval_G(gen: Generator, A) -> float:
    return float(np.max(gen.half_traces(A)))


def eval_Gtilde(gen: Generator, A) -> float:
    return float(np.max(gen.half_traces(A) - gen.penalties))


def domination_margin(gen: Generator, A1, A2) -> float:
    """``G(A1 - A2) - (Gtilde(A1) - Gtilde(A2))``; nonnegative by construction."""
    A1 = as_symmetric(A1, gen.d, "A1")
    A2 = as_symmetric(A2, gen.d, "A2")
    return eval_G(gen, A1 - A2) - (eval_Gtilde(gen, A1) - eval_Gtilde(gen, A2))


def ellipticity_check(gen: Generator, A, B) -> float:
    """``G(A) - G(B) - 1/2 sigma_min tr(A - B)`` for ``A >= B``."""
    A = as_symmetric(A, gen.d, "A")
    B = as_symmetric(B, gen.d, "B")
    if np.linalg.eigvalsh(A - B)[0] < -PSD_TOL:
        raise PreconditionError("A - B is not positive semidefinite")
    return eval_G(gen, A) - eval_G(gen, B) - 0.5 * gen.sigma_min * float(np.trace(A - B))
