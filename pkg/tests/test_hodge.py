import numpy as np

from schrodn import calculus as tc
from schrodn.calculus import CovectorField, PolarGrid, ScalarField
from schrodn.hodge import poisson_dirichlet, solenoidal_decompose


def test_poisson_trivial_and_analytic(flat):
    g = PolarGrid(32, 64, flat)
    assert poisson_dirichlet(ScalarField.zeros(g)).l2_norm() == 0
    u = poisson_dirichlet(ScalarField.from_function(g, lambda p: 4 + 0 * p[..., 0]))
    ref = np.sum(g.points ** 2, -1) - 1
    assert np.max(np.abs(u.values - ref)) <= 1e-5


def test_poisson_boundary_values(flat):
    g = PolarGrid(32, 64, flat)
    bv = np.cos(g.theta)
    u = poisson_dirichlet(ScalarField.zeros(g), bv)
    assert np.max(np.abs(u.values - g.points[..., 0])) <= 1e-5


def test_pure_potential_field(bent):
    g = PolarGrid(48, 96, bent)
    phi = ScalarField.from_function(
        g, lambda p: (1 - np.sum(p ** 2, -1)) * np.exp(p[..., 0]))
    A = tc.exterior_d(phi)
    dec = solenoidal_decompose(A)
    assert dec.solenoidal.l2_norm() <= 1e-4 * A.l2_norm()
    assert (dec.potential - phi).l2_norm() <= 1e-4 * phi.l2_norm()


def test_rotation_is_solenoidal(flat):
    g = PolarGrid(32, 64, flat)
    A = CovectorField.from_function(g, lambda p: np.stack([-p[..., 1], p[..., 0]], -1))
    dec = solenoidal_decompose(A)
    assert (dec.solenoidal - A).l2_norm() <= 1e-8 * A.l2_norm()
    assert dec.potential.l2_norm() <= 1e-8


def test_divergence_converges_and_idempotent(flat):
    def Af(p):
        return np.stack([np.sin(2 * p[..., 1]) + p[..., 0], np.cos(p[..., 0])], -1)
    errs = []
    for n in (16, 32):
        g = PolarGrid(n, 2 * n, flat)
        A = CovectorField.from_function(g, Af)
        dec = solenoidal_decompose(A)
        errs.append(dec.residuals["divergence_l2"] / A.l2_norm())
        again = solenoidal_decompose(dec.solenoidal).solenoidal
        assert (again - dec.solenoidal).l2_norm() <= 1e-6 * dec.solenoidal.l2_norm()
        assert dec.residuals["split"] <= 1e-12
        assert dec.residuals["boundary_potential"] == 0
    assert errs[1] <= errs[0]
