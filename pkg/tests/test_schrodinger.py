import numpy as np
import pytest
from scipy.special import j0

from schrodn.calculus import CovectorField, PolarGrid, ScalarField, VectorField
from schrodn.schrodinger import (BoundaryData, SpaceTimeBasis, dn_advection, dn_magnetic,
                                 dn_operator_norm, evolve, gauge_reduce, magnetic_hamiltonian,
                                 operator_residual, solve_adjoint_advection, solve_advection,
                                 solve_magnetic, verify_gauge_equivalence)


@pytest.fixture(scope="module")
def g(flat):
    return PolarGrid(12, 32, flat)


@pytest.fixture(scope="module")
def basis():
    return SpaceTimeBasis(3, 6, 3.5)


def _bump_field(p, a=0.3):
    w = (1 - np.sum(p ** 2, -1)) ** 2
    return a * np.stack([-p[..., 1] * w, (p[..., 0] + 0.5) * w], -1)


def test_zero_data_gives_zero(g):
    X = VectorField.zeros(g)
    ev = solve_advection(X, lambda th, t: 0 * th, 1.0, 0.01)
    assert np.all(ev.final == 0)
    ev = solve_adjoint_advection(X, lambda th, t: 0 * th, 1.0, 0.01)
    assert np.all(ev.final == 0)


def test_free_advection_equals_magnetic(g):
    f = lambda th, t: np.cos(th) * np.sin(t) ** 2  # noqa: E731
    a = solve_advection(VectorField.zeros(g), f, 1.0, 0.01)
    b = solve_magnetic(CovectorField.zeros(g), ScalarField.zeros(g), f, 1.0, 0.01)
    assert np.max(np.abs(a.final - b.final)) <= 1e-10
    assert np.max(np.abs(a.trace - b.trace)) <= 1e-10


def test_manufactured_eigenfunction(flat):
    # (i d_t - Delta) u = 0 with Delta J0(sqrt2 r) = -2 J0(sqrt2 r)
    grid = PolarGrid(32, 64, flat)
    k = np.sqrt(2.0)
    u0 = ScalarField.from_function(grid, lambda p: j0(k * np.hypot(p[..., 0], p[..., 1])) + 0j)
    ham = magnetic_hamiltonian(CovectorField.zeros(grid), ScalarField.zeros(grid))
    ev = evolve(ham, lambda t: np.full(grid.n_theta, j0(k) * np.exp(2j * t)), 1.0, 256,
                u0=u0.flat_values)
    exact = u0.flat_values * np.exp(2j)
    assert np.linalg.norm(ev.final - exact) / np.linalg.norm(exact) <= 1e-3


def test_norm_conserved_real_potentials(g):
    A = CovectorField.from_function(g, lambda p: 0.5 * np.stack([-p[..., 1], p[..., 0]], -1))
    q = ScalarField.from_function(g, lambda p: np.cos(p[..., 0]))
    u0 = ScalarField.from_function(g, lambda p: (1 - np.sum(p ** 2, -1)) + 0j).flat_values
    ev = evolve(magnetic_hamiltonian(A, q), lambda t: np.zeros(g.n_theta), 0.5, 256, u0=u0,
                track_norm=True)
    assert np.max(np.abs(ev.norms / ev.norms[0] - 1)) <= 1e-3


def test_basis_compatibility(basis):
    c = np.random.default_rng(0).standard_normal((len(basis.modes), basis.M))
    f = BoundaryData(basis, c)
    assert f.is_compatible()


def test_dn_linearity_and_free_equality(g, basis):
    L = dn_advection(VectorField.zeros(g), basis)
    N = dn_magnetic(CovectorField.zeros(g), ScalarField.zeros(g), basis)
    assert np.max(np.abs(L.matrix - N.matrix)) <= 1e-10
    rng = np.random.default_rng(2)
    f1 = rng.standard_normal(basis.size)
    f2 = rng.standard_normal(basis.size)
    lhs = L.apply(0.3 * f1 + f2)
    assert np.max(np.abs(lhs - 0.3 * L.apply(f1) - L.apply(f2))) <= 1e-12 * np.max(np.abs(lhs))


def test_dn_norm_zero_and_positive(g, basis):
    L = dn_advection(VectorField.zeros(g), basis)
    assert dn_operator_norm(L - L)[0] == 0
    assert dn_operator_norm(L)[0] > 0


def test_gauge_reduce_examples(g):
    A, q = gauge_reduce(VectorField.zeros(g))
    assert A.l2_norm() == 0 and q.l2_norm() == 0
    X = VectorField.from_function(g, lambda p: np.stack([0.4 + 0 * p[..., 0], 0 * p[..., 0]], -1))
    A, q = gauge_reduce(X)
    assert np.allclose(A.components[0], 0.2j) and np.allclose(A.components[1], 0)
    assert np.allclose(q.values, 0.04)
    R = VectorField.from_function(g, lambda p: np.stack([-p[..., 1], p[..., 0]], -1))
    _, q = gauge_reduce(R)
    assert np.max(np.abs(q.values - 0.25 * np.sum(g.points ** 2, -1))) <= 1e-8


def test_operator_residual(flat):
    grid = PolarGrid(32, 64, flat)
    X = VectorField.from_function(grid, lambda p: np.stack([0.3 + 0.2 * p[..., 1], -0.4 * p[..., 0] ** 2], -1))
    u = ScalarField.from_function(grid, lambda p: np.sin(2 * p[..., 0]) * np.cos(p[..., 1]))
    assert np.max(np.abs(operator_residual(X, u)[:-1])) <= 1e-3


def test_gauge_equivalence_identical_fields(g, basis):
    X = VectorField.from_function(g, _bump_field)
    rep = verify_gauge_equivalence(X, X, basis)
    assert rep["diff_lambda"] == 0 and rep["diff_magnetic"] == 0
