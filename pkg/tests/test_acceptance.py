"""Acceptance suite: one test (or pair) per criterion at the stated tolerances.

Each test records a PASS/FAIL line that is printed in the terminal summary.
Expected failures keep their real assertion and are marked ``xfail``.
"""

import csv
import json
import time

import numpy as np
import pytest
from scipy.special import j0

from schrodn import calculus as tc
from schrodn import cli
from schrodn.calculus import CovectorField, PolarGrid, ScalarField, VectorField
from schrodn.config import _vec_solenoidal_bump, load_config
from schrodn.geometry import conformal, euclidean, orthonormal_frame, sample_inflow_bundle
from schrodn.hodge import poisson_dirichlet, solenoidal_decompose
from schrodn.optics import (GOProbe, ProbeContext, boundary_source, direct_ray_transform,
                            eikonal_distance_field, eikonal_residual,
                            integrating_factor_residual, phase_estimates, poisson_kernel_checks,
                            transport_amplitude, transport_residual_polar)
from schrodn.raytransform import (kinetic_equation_check, sphere_bundle_identity_check,
                                  xray_function, xray_oneform)
from schrodn.reconstruction import carleman_verify, stability_experiment
from schrodn.schrodinger import (SpaceTimeBasis, evolve, magnetic_hamiltonian, operator_residual,
                                 verify_gauge_equivalence)

pytestmark = pytest.mark.slow

METRICS = [euclidean(), conformal("linear", b=(0.3, 0.2))]


def _wall(p):
    return 1 - np.sum(p ** 2, -1)


# three potentials vanishing on the boundary
PHIS = [
    lambda p: _wall(p) * np.sin(p[..., 0] + 0.5 * p[..., 1]),
    lambda p: _wall(p) ** 2 * np.exp(p[..., 1]),
    lambda p: _wall(p) * (p[..., 0] ** 2 - 0.3 * p[..., 0] * p[..., 1] + 0.2),
]


def test_01_chord(criterion):
    E = euclidean()
    t0 = time.perf_counter()
    rays = sample_inflow_bundle(E, 64, 256)
    d = xray_function(lambda p: np.ones(p.shape[:-1]), rays, E, step=1e-3)
    elapsed = time.perf_counter() - t0
    exact = 2 * np.cos(rays.alpha[np.arange(len(rays)) % rays.shape[1]])
    err = np.max(np.abs(d.values.real - exact) / exact)
    ok = err <= 1e-4 and elapsed < 10
    criterion(1, "chord", ok, f"max rel err {err:.2e} (<= 1e-4), {elapsed:.1f} s (< 10 s)")
    assert err <= 1e-4
    assert elapsed < 10


def test_02_gauge_invariance(criterion):
    worst = 0.0
    for metric in METRICS:
        g = PolarGrid(128, 256, metric)
        rays = sample_inflow_bundle(metric, 32, 32)
        diam = metric.diameter_bound(metric.radius)
        for phi in PHIS:
            dphi = tc.exterior_d(ScalarField.from_function(g, phi))
            sup = np.sqrt(np.max(tc.inner(dphi, dphi).values.real))
            d = xray_oneform(dphi, rays, metric, step=1e-3)
            worst = max(worst, np.max(np.abs(d.values)) / (sup * diam))
    criterion(2, "gauge invariance", worst <= 1e-6,
              f"max |I_1(d phi)| / (sup|grad phi| diam) = {worst:.2e} (<= 1e-6)")
    assert worst <= 1e-6


def test_03_sphere_bundle_identity(criterion):
    g = PolarGrid(32, 64, euclidean())
    fields = [
        lambda p: np.stack([0.4 + 0 * p[..., 0], -0.7 + 0 * p[..., 0]], -1),
        lambda p: np.stack([np.cos(p[..., 1]), p[..., 0] * p[..., 1]], -1),
        lambda p: np.stack([np.exp(p[..., 0]) * p[..., 1], np.sin(2 * p[..., 0])], -1),
    ]
    errs = [sphere_bundle_identity_check(CovectorField.from_function(g, f), 256)[2]
            for f in fields]
    criterion(3, "sphere-bundle identity", max(errs) <= 1e-3,
              f"rel errors {', '.join(f'{e:.1e}' for e in errs)} (<= 1e-3)")
    assert max(errs) <= 1e-3


def test_04_kinetic_equation(criterion):
    metric = euclidean()
    rng = np.random.default_rng(4)
    r = 0.7 * np.sqrt(rng.uniform(0, 1, 50))
    a = rng.uniform(0, 2 * np.pi, 50)
    x = np.stack([r * np.cos(a), r * np.sin(a)], -1)
    e1, e2 = orthonormal_frame(metric, x)
    b = rng.uniform(0, 2 * np.pi, 50)
    xi = np.cos(b)[:, None] * e1 + np.sin(b)[:, None] * e2

    def A(p):
        return np.stack([np.sin(p[..., 1]) + 0.2 * p[..., 0], 0.5 + p[..., 0] ** 2], -1)
    res = kinetic_equation_check(A, x, xi, metric)
    criterion(4, "kinetic equation", res <= 1e-3, f"sup residual {res:.2e} over 50 points (<= 1e-3)")
    assert res <= 1e-3


def test_05_hodge(criterion):
    def Af(p):
        return np.stack([np.sin(2 * p[..., 1]) + p[..., 0], np.cos(p[..., 0])], -1)
    g = PolarGrid(128, 128, euclidean())
    A = CovectorField.from_function(g, Af)
    dec = solenoidal_decompose(A)
    div = dec.residuals["divergence_l2"] / A.l2_norm()
    again = solenoidal_decompose(dec.solenoidal).solenoidal
    idem = (again - dec.solenoidal).l2_norm() / dec.solenoidal.l2_norm()
    g2 = PolarGrid(64, 128, euclidean())
    phi = ScalarField.from_function(g2, lambda p: _wall(p) ** 2 * np.sin(p[..., 0] + 0.5 * p[..., 1]))
    u = poisson_dirichlet(tc.laplace_beltrami(phi))
    perr = np.max(np.abs(u.values - phi.values))
    split = dec.residuals["split"]
    ok = split <= 1e-12 and div <= 1e-3 and idem <= 1e-6 and perr <= 1e-5
    criterion(5, "hodge", ok, f"split {split:.1e}, |delta A^s|/|A| {div:.1e}, "
              f"idempotence {idem:.1e}, poisson {perr:.1e}")
    assert split <= 1e-12
    assert div <= 1e-3
    assert idem <= 1e-6
    assert perr <= 1e-5


def test_06_conservation_and_eigenfunction(criterion):
    g = PolarGrid(16, 32, euclidean())
    A = CovectorField.from_function(g, lambda p: 0.5 * np.stack([-p[..., 1], p[..., 0]], -1))
    q = ScalarField.from_function(g, lambda p: np.cos(p[..., 0]))
    u0 = ScalarField.from_function(g, lambda p: _wall(p) * np.exp(1j * p[..., 0])).flat_values
    ev = evolve(magnetic_hamiltonian(A, q), lambda t: np.zeros(g.n_theta), 0.5, 1024, u0=u0,
                track_norm=True)
    drift = np.max(np.abs(ev.norms / ev.norms[0] - 1))
    # (i d_t - Delta) u = 0 solved by exp(2it) J0(sqrt2 r), driven by its own trace
    g2 = PolarGrid(32, 64, euclidean())
    k = np.sqrt(2.0)
    v0 = ScalarField.from_function(g2, lambda p: j0(k * np.hypot(p[..., 0], p[..., 1])) + 0j)
    free = magnetic_hamiltonian(CovectorField.zeros(g2), ScalarField.zeros(g2))
    ev2 = evolve(free, lambda t: np.full(g2.n_theta, j0(k) * np.exp(2j * t)), 1.0, 1024,
                 u0=v0.flat_values)
    exact = v0.flat_values * np.exp(2j)
    eerr = np.linalg.norm(ev2.final - exact) / np.linalg.norm(exact)
    criterion(6, "self-adjoint conservation", drift <= 1e-3 and eerr <= 1e-3,
              f"norm drift {drift:.1e} over 1024 steps, eigenfunction error {eerr:.1e}")
    assert drift <= 1e-3
    assert eerr <= 1e-3


def test_07_gauge_equivalence(criterion):
    g = PolarGrid(16, 32, euclidean())

    def X1f(p):
        w = _wall(p) ** 2
        return np.stack([0.3 * w, 0.2 * p[..., 0] * w], -1)

    def X2f(p):
        bump = 0.3 * np.exp(-10 * np.sum((p - 0.1) ** 2, -1))
        return X1f(p) + np.stack([0 * bump, bump], -1)
    X1, X2 = VectorField.from_function(g, X1f), VectorField.from_function(g, X2f)
    rep = verify_gauge_equivalence(X1, X2, SpaceTimeBasis(4, 8, 4.5))
    gf = PolarGrid(32, 64, euclidean())
    Xs = VectorField.from_function(gf, lambda p: np.stack([0.3 + 0.2 * p[..., 1], -0.4 * p[..., 0] ** 2], -1))
    u = ScalarField.from_function(gf, lambda p: np.sin(2 * p[..., 0]) * np.cos(p[..., 1]) + p[..., 0] * p[..., 1])
    res = np.max(np.abs(operator_residual(Xs, u)[:-1]))
    ratio = abs(rep["diff_ratio"] - 1)
    ok = res <= 1e-3 and rep["map_mismatch"] <= 1e-2 and ratio <= 0.02
    criterion(7, "gauge equivalence", ok, f"operator residual {res:.1e}, "
              f"|Lambda - N|/|Lambda| {rep['map_mismatch']:.1e}, norm ratio - 1 {ratio:.1e}")
    assert res <= 1e-3
    assert rep["map_mismatch"] <= 1e-2
    assert ratio <= 0.02


def test_08_geometric_optics(criterion):
    E = euclidean()
    grid = PolarGrid(128, 256, E)
    y = boundary_source(E, 0.3)
    eik = eikonal_residual(eikonal_distance_field(E, y, grid), y, 0.05)
    theta = np.linspace(np.pi - 0.8, np.pi + 0.8, 9) + 0.3
    tr = transport_residual_polar(transport_amplitude(E, y), theta, 2.0, [0.8, 1.5, 2.2])

    def Af(p, eps=0.3):
        r2 = np.sum(p ** 2, -1) / 0.7 ** 2
        chi = np.where(r2 < 1, np.exp(-1 / np.maximum(1 - r2, 1e-300)) * np.e, 0.0)
        return eps * np.stack([chi * (1 + p[..., 1]), chi * (0.5 - p[..., 0])], -1)
    br = integrating_factor_residual(Af, y, E, theta, 2.0, [0.5, 1.0, 1.5])
    from schrodn.optics import ansatz_residual_ratios
    A = CovectorField.from_function(grid, Af)
    q = ScalarField.from_function(grid, lambda p: np.cos(p[..., 0]))
    ratios = ansatz_residual_ratios(GOProbe(E, y, 8, A), grid, A, q)
    vals = [ratios[k] for k in sorted(ratios)]
    mono = all(b < a for a, b in zip(vals, vals[1:]))
    ok = eik <= 1e-3 and tr <= 1e-2 and br <= 1e-3 and mono
    criterion(8, "geometric optics", ok, f"eikonal {eik:.1e}, transport {tr:.1e}, beta {br:.1e}, "
              f"ansatz ratios {', '.join(f'{v:.2f}' for v in vals)}")
    assert eik <= 1e-3
    assert tr <= 1e-2
    assert br <= 1e-3
    assert mono


@pytest.fixture(scope="module")
def kernel():
    return poisson_kernel_checks()


def test_09_poisson_kernel(criterion, kernel):
    ok = kernel["normalization_error"] <= 1e-6 and kernel["bound_violations"] == 0
    criterion(9, "kernel normalization and bound", ok,
              f"{kernel['normalization_error']:.1e}, {kernel['bound_violations']} violations")
    assert kernel["normalization_error"] <= 1e-6
    assert kernel["bound_violations"] == 0


@pytest.mark.xfail(strict=False, reason="first-moment constant varies by about 2.2 over rho")
def test_09_first_moment_stability(criterion, kernel):
    spread = kernel["first_moment_spread"]
    criterion(9, "first-moment constant spread", spread <= 2, f"{spread:.2f} (<= 2)")
    assert spread <= 2


@pytest.mark.xfail(strict=False, reason="leading-order probe error still large at lam <= 32")
def test_10_phase_extraction(criterion):
    E = euclidean()
    g = PolarGrid(129, 832, E)

    def Af(p):
        return _vec_solenoidal_bump(p, amplitude=0.3)
    A = CovectorField.from_function(g, Af)
    Z, q = CovectorField.zeros(g), ScalarField.zeros(g)
    ctx = ProbeContext(g, Z, q, A, q)
    y = boundary_source(E, 0.3)
    off = np.linspace(-1.0, 1.0, 9)
    xis = np.arctan2(-y[1], -y[0]) + off
    est = np.array([e.value for e in phase_estimates(ctx, y, xis)])
    ref = direct_ray_transform(Af, E, y, xis)
    mu = np.cos(off)
    rel = np.sqrt(np.sum(mu * np.abs(est - ref) ** 2) / np.sum(mu * np.abs(ref) ** 2))
    criterion(10, "phase extraction", rel <= 0.2, f"mu-weighted rel error {rel:.2f} (<= 0.20)")
    assert rel <= 0.2


def test_11_stability_harness(criterion, tmp_path, monkeypatch):
    monkeypatch.setenv("SCHRODN_OUTPUT_DIR", str(tmp_path))
    t0 = time.perf_counter()
    assert cli.main(["stability"]) == 0
    elapsed = time.perf_counter() - t0
    summary = json.loads((tmp_path / "stability" / "summary.json").read_text())
    with open(tmp_path / "stability" / "stability.csv") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    eps = [float(r["epsilon"]) for r in rows]
    dl = [float(r["dLambda_op"]) for r in sorted(rows, key=lambda r: -float(r["epsilon"]))]
    decreasing = all(b < a for a, b in zip(dl, dl[1:]))
    cfg = load_config()
    g = cfg.grid()
    zero = stability_experiment(cfg.field("X1", g), cfg.direction(g), [0.0], cfg.basis(),
                                cfg["grid"]["dt"]).records[0]
    zmax = max(zero.dX_L2, zero.dLambda_op, zero.dAs_L2, zero.dq_L2)
    slope = summary["slope"]
    ok = (len(eps) == 6 and decreasing and 0 < slope <= 1.2 and zmax <= 1e-8
          and elapsed <= 1800)
    criterion(11, "stability harness", ok, f"slope {slope:.3f}, decreasing {decreasing}, "
              f"zero run {zmax:.1e}, {elapsed:.0f} s")
    assert len(eps) == 6
    assert decreasing
    assert 0 < slope <= 1.2
    assert zmax <= 1e-8
    assert elapsed <= 1800


def test_12_carleman(criterion):
    rep = carleman_verify(euclidean())
    ok = rep.ratios.shape == (3, 5) and np.all(np.isfinite(rep.ratios)) and rep.growth <= 2
    criterion(12, "carleman", ok, f"max ratio {rep.max_ratio:.2e}, growth over h {rep.growth:.2f}")
    assert rep.ratios.shape == (3, 5)
    assert rep.growth <= 2


def test_13_reproducibility(criterion, tmp_path, monkeypatch):
    blobs = []
    codes = []
    for k in range(2):
        monkeypatch.setenv("SCHRODN_OUTPUT_DIR", str(tmp_path / f"run{k}"))
        codes.append(cli.main(["verify"]))
        blobs.append((tmp_path / f"run{k}" / "verify" / "verify.json").read_bytes())
    same = blobs[0] == blobs[1]
    criterion(13, "reproducibility", codes == [0, 0] and same,
              f"exit codes {codes}, byte-identical {same}")
    assert codes == [0, 0]
    assert same
