"""Dirichlet Poisson solver and the solenoidal/potential split of 1-forms.

Both use the 4th-order ``divergence @ gradient`` Laplacian of
:mod:`schrodn.calculus`, so ``coderivative(exterior_d(phi))`` is exactly the
matrix that is inverted.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from . import calculus as tc
from .errors import ConditioningError

DIRECT_LIMIT = 128 * 128
_FACTOR_CACHE = {}


def _interior_system(grid):
    key = id(grid)
    hit = _FACTOR_CACHE.get(key)
    if hit is not None and hit[0] is grid:
        return hit[1], hit[2]
    L = grid.laplacian_matrix
    I, B = grid.interior, grid.boundary
    LII = L[I][:, I].tocsc().astype(complex)
    LIB = L[I][:, B].tocsr()
    lu = None
    if len(I) <= DIRECT_LIMIT:
        try:
            lu = spla.splu(LII, permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:
            raise ConditioningError(f"Poisson factorization failed: {exc}") from exc
    if len(_FACTOR_CACHE) > 8:
        _FACTOR_CACHE.clear()
    _FACTOR_CACHE[key] = (grid, (LII, LIB), lu)
    return (LII, LIB), lu


def poisson_dirichlet(f, boundary_values=None, tol=1e-10):
    """Solve ``Delta phi = f`` inside with ``phi = boundary_values`` on the boundary ring.

    Direct sparse LU up to ``128**2`` unknowns, otherwise GMRES with an
    incomplete-LU preconditioner (the discrete operator is not symmetric).
    """
    grid = f.grid
    I, B = grid.interior, grid.boundary
    (LII, LIB), lu = _interior_system(grid)
    bv = np.zeros(grid.n_theta, dtype=complex) if boundary_values is None else \
        np.asarray(boundary_values, dtype=complex).reshape(grid.n_theta)
    rhs = f.flat_values[I] - LIB @ bv
    if not np.any(rhs):
        u = np.zeros(grid.size, dtype=complex)
        u[B] = bv
        return tc.ScalarField(grid, u)
    if lu is not None:
        x = lu.solve(rhs)
        for _ in range(3):
            r = rhs - LII @ x
            if np.linalg.norm(r) <= 1e-13 * np.linalg.norm(rhs):
                break
            x = x + lu.solve(r)
    else:
        ilu = spla.spilu(LII, drop_tol=1e-5, fill_factor=20)
        M = spla.LinearOperator(LII.shape, matvec=ilu.solve, dtype=complex)
        x, info = spla.gmres(LII, rhs, rtol=tol * 1e-2, restart=100, maxiter=200, M=M)
        if info != 0:
            raise ConditioningError("GMRES did not converge for the Poisson problem",
                                    residual=float(np.linalg.norm(LII @ x - rhs)
                                                   / np.linalg.norm(rhs)))
    # normwise backward error; stays meaningful when rhs is at roundoff level
    scale = spla.norm(LII, np.inf) * np.linalg.norm(x) + np.linalg.norm(rhs)
    res = np.linalg.norm(LII @ x - rhs) / scale
    if not np.isfinite(res) or res > 1e-8:
        raise ConditioningError("Poisson solve residual too large", residual=float(res))
    u = np.zeros(grid.size, dtype=complex)
    u[I] = x
    u[B] = bv
    return tc.ScalarField(grid, u)


@dataclass
class Decomposition:
    """``A = solenoidal + d(potential)`` with ``potential = 0`` on the boundary."""

    solenoidal: tc.CovectorField
    potential: tc.ScalarField
    residuals: dict


def solenoidal_decompose(A):
    """Split ``A`` by solving ``Delta phi = delta A``, ``phi = 0`` on the boundary."""
    phi = poisson_dirichlet(tc.coderivative(A))
    dphi = tc.exterior_d(phi)
    As = A - dphi
    split = A - As - dphi
    res = {
        "divergence_l2": tc.coderivative(As).l2_norm(),
        "divergence_interior_l2": _interior_l2(tc.coderivative(As)),
        "split": float(np.max(np.abs(split.components))),
        "boundary_potential": float(np.max(np.abs(phi.boundary_values))),
    }
    return Decomposition(As, phi, res)


def _interior_l2(u):
    w = u.grid.weights.copy()
    w[-1] = 0
    return float(np.sqrt(np.sum(w * np.abs(u.values) ** 2)))
