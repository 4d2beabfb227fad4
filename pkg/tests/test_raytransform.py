import numpy as np
import pytest

from schrodn.calculus import CovectorField, PolarGrid, ScalarField
from schrodn.geometry import orthonormal_frame, sample_inflow_bundle
from schrodn.hodge import solenoidal_decompose
from schrodn.raytransform import (RayData, forward_matrix, h1_inflow_norm, invert_xray_function,
                                  invert_xray_oneform, kinetic_equation_check, kinetic_solution,
                                  sphere_bundle_identity_check, xray_function, xray_oneform)


def _ones(p):
    return np.ones(p.shape[:-1])


def _gauss(p):
    return np.exp(-4 * ((p[..., 0] - 0.2) ** 2 + p[..., 1] ** 2))


def _phantom(p):
    return _gauss(p) + 0.5 * np.exp(-8 * ((p[..., 0] + 0.3) ** 2 + (p[..., 1] - 0.3) ** 2))


def _dphi(p):
    # d of phi = (1 - |x|^2) cos(x^2), which vanishes on the boundary
    x, y = p[..., 0], p[..., 1]
    b = 1 - x * x - y * y
    return np.stack([-2 * x * np.cos(y), -2 * y * np.cos(y) - b * np.sin(y)], -1)


@pytest.fixture(scope="module")
def rays(flat):
    return sample_inflow_bundle(flat, 16, 16)


def test_chord_length(flat, rays):
    d = xray_function(_ones, rays, flat)
    exact = 2 * np.cos(rays.alpha[np.arange(len(rays)) % rays.shape[1]])
    assert np.max(np.abs(d.values.real - exact) / exact) <= 1e-4
    assert np.all(xray_function(lambda p: 0 * p[..., 0], rays, flat).values == 0)


def test_gaussian_line_integrals(flat, rays):
    d = xray_function(_gauss, rays, flat)
    ref = []
    tq, wq = np.polynomial.legendre.leggauss(64)
    for r in rays:
        L = 2 * np.cos(r.alpha)
        t = 0.5 * L * (tq + 1)
        ref.append(0.5 * L * np.sum(wq * _gauss(r.y + t[:, None] * r.xi)))
    ref = np.array(ref)
    assert np.linalg.norm(d.values - ref) / np.linalg.norm(ref) <= 1e-4


def test_oneform_gauge_and_constant(flat, rays):
    d = xray_oneform(_dphi, rays, flat)
    assert np.max(np.abs(d.values)) <= 1e-6 * 2 * 2
    c = xray_oneform(lambda p: np.stack([0.7 + 0 * p[..., 0], 0 * p[..., 0]], -1), rays, flat)
    L = 2 * np.cos(rays.alpha[np.arange(len(rays)) % rays.shape[1]])
    assert np.max(np.abs(c.values - 0.7 * L * rays.xi[:, 0])) <= 1e-6


def test_sphere_identity(flat, bent):
    g = PolarGrid(16, 32, flat)
    assert sphere_bundle_identity_check(CovectorField.zeros(g)) == (0, 0, 0)
    A = CovectorField.from_function(g, lambda p: np.stack([0.3 + 0 * p[..., 0], -0.5 + 0 * p[..., 0]], -1))
    lhs, rhs, err = sphere_bundle_identity_check(A)
    assert lhs == pytest.approx(0.34 * np.pi * 2 * np.pi, rel=1e-6)
    assert err <= 1e-6
    g2 = PolarGrid(16, 32, bent)
    B = CovectorField.from_function(g2, lambda p: np.stack([np.sin(3 * p[..., 1]), p[..., 0] ** 3], -1))
    assert sphere_bundle_identity_check(B)[2] <= 1e-3


def _smooth_A(p):
    return np.stack([np.sin(p[..., 1]), 0.5 + p[..., 0] ** 2], -1)


def test_kinetic_equation(flat):
    x = np.array([[0.1, 0.2], [-0.3, 0.0], [0.4, -0.4]])
    e1, e2 = orthonormal_frame(flat, x)
    xi = 0.6 * e1 + 0.8 * e2
    assert kinetic_equation_check(_smooth_A, x, xi, flat) <= 1e-3
    assert kinetic_equation_check(lambda p: 0 * p, x, xi, flat) == 0
    u1 = kinetic_solution(_smooth_A, x, xi, flat)
    u2 = kinetic_solution(_smooth_A, x, 3 * xi, flat)
    assert np.max(np.abs(u1 - u2)) <= 1e-10


def test_h1_norm(flat, rays):
    assert h1_inflow_norm(RayData(rays, np.zeros(len(rays)))) == 0
    c = h1_inflow_norm(RayData(rays, np.full(len(rays), 2.0)))
    assert c == pytest.approx(np.sqrt(rays.measure()) * 2, rel=1e-6)


@pytest.fixture(scope="module")
def inversion_setup(flat):
    g = PolarGrid(24, 48, flat)
    rays = sample_inflow_bundle(flat, 64, 64)
    return g, rays, forward_matrix(g, rays, flat, 5e-3)


def test_invert_function_round_trip(flat, inversion_setup):
    g, rays, Mf = inversion_setup
    fs = ScalarField.from_function(g, _phantom)
    d = xray_function(fs, rays, flat)
    r = invert_xray_function(d, g, matrix=Mf)
    assert (r.field - fs).l2_norm() / fs.l2_norm() <= 0.05
    noise = RayData(rays, np.random.default_rng(1).standard_normal(len(rays)))
    noise = noise * (0.01 * d.l2_norm() / noise.l2_norm())
    rn = invert_xray_function(d + noise, g, matrix=Mf)
    assert (rn.field - fs).l2_norm() / fs.l2_norm() <= 0.15
    z = invert_xray_function(d * 0, g, matrix=Mf)
    assert z.field.l2_norm() == 0


def test_invert_oneform_recovers_solenoidal_part(flat):
    g = PolarGrid(16, 32, flat)
    rays = sample_inflow_bundle(flat, 48, 48)
    Mf = forward_matrix(g, rays, flat, 5e-3, kind="oneform")

    def Af(p):
        w = (1 - np.sum(p ** 2, -1)) ** 2
        return np.stack([-p[..., 1] * w, p[..., 0] * w], -1) + _dphi(p)
    A = CovectorField.from_function(g, Af)
    As = solenoidal_decompose(A).solenoidal
    d = xray_oneform(Af, rays, flat)
    r = invert_xray_oneform(d, g, matrix=Mf)
    assert (r.field - As).l2_norm() / As.l2_norm() <= 0.10
