import numpy as np
import pytest

from schrodn import calculus as tc
from schrodn.calculus import CovectorField, PolarGrid, ScalarField, VectorField


def _interior_max(f, cut=0.9):
    r = np.hypot(*np.moveaxis(f.grid.points, -1, 0))
    return np.max(np.abs(f.values[r < cut]))


def test_flat_sharp_identity_flat(grid32):
    X = VectorField.from_function(grid32, lambda p: np.stack([p[..., 1], p[..., 0] ** 2], -1))
    assert np.allclose(tc.flat(X).components, X.components)


def test_flat_sharp_roundtrip_and_norm(bent):
    g = PolarGrid(16, 32, bent)
    A = CovectorField.from_function(g, lambda p: np.stack([np.cos(p[..., 1]), p[..., 0]], -1))
    assert np.max(np.abs(tc.flat(tc.sharp(A)).components - A.components)) < 1e-14
    X = tc.sharp(A)
    assert np.max(np.abs(tc.inner(A, A).values - tc.inner(X, X).values)) <= 1e-12


def test_gradient_examples(grid32, bent):
    c = ScalarField.from_function(grid32, lambda p: 3.0 + 0 * p[..., 0])
    assert np.max(np.abs(tc.gradient(c).components)) < 1e-10
    fine = PolarGrid(16, 256, grid32.metric)  # angular stencil error ~ n_theta^-4
    u = ScalarField.from_function(fine, lambda p: p[..., 0])
    assert np.allclose(tc.gradient(u).components[0], 1, atol=1e-8)
    assert np.allclose(tc.gradient(u).components[1], 0, atol=1e-8)
    g = PolarGrid(64, 64, bent)
    u = ScalarField.from_function(g, lambda p: np.sum(p ** 2, -1))
    lam = 0.5 * np.log(bent.g(g.points)[..., 0, 0])
    ref = np.exp(-2 * lam) * 2 * np.moveaxis(g.points, -1, 0)
    assert np.max(np.abs(tc.gradient(u).components - ref)) < 1e-5


def test_divergence_examples(grid32):
    X = VectorField.from_function(grid32, lambda p: np.stack([0.4 + 0 * p[..., 0], -0.2 + 0 * p[..., 0]], -1))
    assert np.max(np.abs(tc.divergence(X).values)) < 1e-8
    R = VectorField.from_function(grid32, lambda p: np.stack([-p[..., 1], p[..., 0]], -1))
    assert np.max(np.abs(tc.divergence(R).values)) < 1e-8


def test_coderivative_adjoint(bent):
    g = PolarGrid(48, 64, bent)
    A = CovectorField.from_function(g, lambda p: np.stack([np.sin(p[..., 1]), p[..., 0] ** 2], -1))
    v = ScalarField.from_function(g, lambda p: (1 - np.sum(p ** 2, -1)) * np.cos(p[..., 0]))
    lhs = tc.l2_inner(tc.coderivative(A), v)
    rhs = tc.l2_inner_oneform(A, tc.exterior_d(v))
    assert abs(lhs + rhs) <= 1e-4 * A.l2_norm() * v.l2_norm()


def test_exterior_d(grid32):
    u = ScalarField.from_function(PolarGrid(16, 256, grid32.metric), lambda p: p[..., 0])
    d = tc.exterior_d(u).components
    assert np.allclose(d[0], 1, atol=1e-8) and np.allclose(d[1], 0, atol=1e-8)
    w = ScalarField.from_function(grid32, lambda p: np.sin(p[..., 0] * p[..., 1]))
    assert np.max(np.abs(tc.sharp(tc.exterior_d(w)).components
                         - tc.gradient(w).components)) <= 1e-12


def test_laplacian_polynomial(grid32, flat):
    g = PolarGrid(32, 128, flat)
    u = ScalarField.from_function(g, lambda p: np.sum(p ** 2, -1))
    assert np.max(np.abs(tc.laplace_beltrami(u).values - 4)) < 1e-6
    c = ScalarField.from_function(grid32, lambda p: 2.0 + 0 * p[..., 0])
    assert np.max(np.abs(tc.laplace_beltrami(c).values)) < 1e-8


def test_green_identity(bent):
    g = PolarGrid(64, 128, bent)
    u = ScalarField.from_function(g, lambda p: np.cos(p[..., 0]) + p[..., 1])
    w = ScalarField.from_function(g, lambda p: np.exp(0.3 * p[..., 0]) * p[..., 1])
    lhs = g.integrate(tc.laplace_beltrami(w).values * u.values)
    rhs = (-g.integrate(tc.inner(tc.gradient(w), tc.gradient(u)).values)
           + g.boundary_integrate(tc.normal_derivative(w) * u.boundary_values))
    assert abs(lhs - rhs) <= 1e-3 * max(1.0, abs(lhs))


def test_magnetic_laplacian_zero_field(grid32):
    u = ScalarField.from_function(grid32, lambda p: np.sin(p[..., 0]) * p[..., 1])
    Z = CovectorField.zeros(grid32)
    assert np.allclose(tc.magnetic_laplacian(Z, u).values, tc.laplace_beltrami(u).values)


def test_magnetic_gauge_covariance(flat):
    # d_A = d + iA, so A + d(phi) pairs with exp(-i phi) u
    g = PolarGrid(64, 128, flat)
    A = CovectorField.from_function(g, lambda p: 0.3 * np.stack([p[..., 1], -p[..., 0]], -1))
    phi_f = lambda p: 0.5 * (1 - np.sum(p ** 2, -1)) * np.cos(p[..., 0])  # noqa: E731
    phi = ScalarField.from_function(g, phi_f)
    u = ScalarField.from_function(g, lambda p: np.exp(p[..., 0]) + 1j * p[..., 1])
    lhs = tc.magnetic_laplacian(A + tc.exterior_d(phi), ScalarField(g, np.exp(-1j * phi.values) * u.values))
    rhs = np.exp(-1j * phi.values) * tc.magnetic_laplacian(A, u).values
    assert _interior_max(ScalarField(g, lhs.values - rhs)) < 1e-3


def test_boundary_normal(grid32, bent):
    nu = tc.boundary_normal(grid32)
    bpts = grid32.points[-1]
    assert np.allclose(nu, bpts, atol=1e-12)
    u = ScalarField.from_function(grid32, lambda p: np.sum(p ** 2, -1))
    assert np.max(np.abs(tc.normal_derivative(u) - 2)) < 1e-5
    g = PolarGrid(16, 32, bent)
    n = tc.boundary_normal(g)
    norms = np.einsum("...i,...ij,...j->...", n, bent.g(g.points[-1]), n)
    assert np.max(np.abs(norms - 1)) <= 1e-10


def test_field_algebra(grid32):
    u = ScalarField.from_function(grid32, lambda p: p[..., 0])
    assert np.allclose((u + u - u * 2).values, 0)
    assert (-u).l2_norm() == pytest.approx(u.l2_norm())
