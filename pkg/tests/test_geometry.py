import numpy as np
import pytest

from schrodn.errors import DomainError
from schrodn.geometry import (christoffel, conformal, exit_time, flow, gaussian_curvature,
                              geodesic_distance, k_plus, metric_from_preset,
                              sample_inflow_bundle, shoot_geodesic)


def test_metric_spd_and_christoffel_symmetry(bent):
    r = np.sqrt(np.linspace(0, 1, 21))
    t = np.linspace(0, 2 * np.pi, 40)
    x = np.stack([np.outer(r, np.cos(t)), np.outer(r, np.sin(t))], -1).reshape(-1, 2)
    assert np.min(np.linalg.eigvalsh(bent.g(x))) > 0
    G = christoffel(bent, x)
    assert np.allclose(G, np.swapaxes(G, -1, -2))


def test_christoffel_flat_is_zero(flat):
    assert np.all(christoffel(flat, np.array([0.2, -0.4])) == 0)


def test_christoffel_conformal_linear():
    G = christoffel(conformal("linear", b=(1.0, 0.0)), np.array([0.1, 0.3]))
    assert G[0, 0, 0] == pytest.approx(1, abs=1e-12)
    assert G[0, 1, 1] == pytest.approx(-1, abs=1e-12)
    assert G[1, 0, 1] == pytest.approx(1, abs=1e-12)
    assert G[1, 1, 1] == pytest.approx(0, abs=1e-12)


def test_christoffel_matches_finite_differences(bent):
    x = np.array([0.2, -0.3])
    h = 1e-5
    dg = np.stack([(bent.g(x + h * e) - bent.g(x - h * e)) / (2 * h) for e in np.eye(2)])
    ginv = np.linalg.inv(bent.g(x))
    G = christoffel(bent, x)
    # Gamma^i_jk = 1/2 g^il (d_j g_lk + d_k g_lj - d_l g_jk), dg[m] = d_m g
    ref = 0.5 * (np.einsum("il,jlk->ijk", ginv, dg) + np.einsum("il,klj->ijk", ginv, dg)
                 - np.einsum("il,ljk->ijk", ginv, dg))
    assert np.max(np.abs(G - ref)) < 1e-6


def test_domain_error_outside_chart(flat):
    with pytest.raises(DomainError):
        christoffel(flat, np.array([2.0, 0.0]))


def test_diameter_chord(flat):
    geo = shoot_geodesic(flat, np.array([1.0, 0.0]), np.array([-1.0, 0.0]))
    assert geo.exit_time == pytest.approx(2, abs=1e-8)
    assert np.allclose(geo.x[-1], [-1, 0], atol=1e-8)


def test_chord_length_at_aperture(flat):
    a = np.pi / 3
    xi = np.array([-np.cos(a), np.sin(a)])
    assert exit_time(flat, np.array([1.0, 0.0]), xi) == pytest.approx(1, abs=1e-8)


def test_outward_ray_has_zero_exit_time(flat):
    assert exit_time(flat, np.array([1.0, 0.0]), np.array([1.0, 0.0])) == 0


def test_unit_speed_conformal(bent):
    x = np.array([0.1, 0.2])
    xi = np.array([1.0, 0.5])
    xi = xi / bent.norm(x, xi)
    geo = shoot_geodesic(bent, x, xi)
    assert geo.speed_defect(bent) < 1e-6


def test_exit_time_semigroup(bent):
    x = np.array([-0.2, 0.1])
    xi = np.array([0.3, 1.0])
    xi = xi / bent.norm(x, xi)
    tau = exit_time(bent, x, xi)
    for t in np.linspace(0.1, 0.8, 5) * tau:
        xt, vt = flow(bent, x, xi, t)
        assert abs(exit_time(bent, xt, vt) - (tau - t)) < 1e-4


def test_geodesic_distance_flat_and_identity(flat, rng):
    x = rng.uniform(-0.6, 0.6, 2)
    y = rng.uniform(-0.6, 0.6, 2)
    assert geodesic_distance(flat, x, y) == pytest.approx(np.linalg.norm(x - y), abs=1e-8)
    assert geodesic_distance(flat, x, x) == pytest.approx(0, abs=1e-10)


def test_triangle_inequality(bent, rng):
    pts = rng.uniform(-0.5, 0.5, (20, 3, 2))
    for a, b, c in pts:
        dab = geodesic_distance(bent, a, b)
        dbc = geodesic_distance(bent, b, c)
        dac = geodesic_distance(bent, a, c)
        assert dac <= dab + dbc + 1e-6


def test_gaussian_curvature(flat):
    assert gaussian_curvature(flat, np.array([0.3, 0.1])) == pytest.approx(0, abs=1e-12)
    m = conformal("radial", c=0.2)
    x = np.array([0.3, -0.2])
    h = 1e-3
    lam = lambda p: 0.5 * np.log(m.g(p)[..., 0, 0])  # noqa: E731
    lap = sum((lam(x + h * e) - 2 * lam(x) + lam(x - h * e)) / h ** 2 for e in np.eye(2))
    assert gaussian_curvature(m, x) == pytest.approx(-np.exp(-2 * lam(x)) * lap, abs=1e-4)


def test_sphere_cap_constant_curvature():
    m = conformal("sphere")
    x = np.array([[0.0, 0.0], [0.5, 0.3], [-0.7, 0.1]])
    K = gaussian_curvature(m, x)
    assert np.max(np.abs(K - K[0])) < 1e-3


def test_k_plus_nonpositive_curvature(flat):
    assert k_plus(flat, 8, 8)[0] == 0
    assert k_plus(conformal("radial", c=0.2), 8, 8)[0] == 0


def test_k_plus_refinement():
    m = conformal("radial", c=-0.1)
    with pytest.warns(UserWarning, match="k_plus"):
        k1 = k_plus(m, 16, 16)[0]
        k2 = k_plus(m, 32, 32)[0]
    assert k1 > 0
    assert abs(k1 - k2) <= 0.05 * k2


def test_inflow_bundle_measure(flat):
    b = sample_inflow_bundle(flat, 64, 64)
    assert b.measure() == pytest.approx(4 * np.pi, abs=1e-3)
    assert np.all(np.einsum("ij,ij->i", b.xi, b.nu) < 0)
    assert abs(sample_inflow_bundle(flat, 64, 128).measure() - b.measure()) <= 1e-4


def test_preset_lookup():
    assert metric_from_preset("euclidean").flat
    with pytest.raises(ValueError):
        metric_from_preset("nope")
