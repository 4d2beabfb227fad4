"""Invariant suite behind the ``verify`` subcommand.

Each check returns a :class:`Check` with the measured value, the bound and a
pass flag.  Sizes are chosen so the whole suite runs in a few minutes on one
core; the acceptance tests repeat the checks at their full resolutions.
"""

import os
import tempfile
from dataclasses import asdict, dataclass

import numpy as np

from . import calculus as tc
from .geometry import sample_inflow_bundle


@dataclass
class Check:
    name: str
    value: float
    bound: float
    passed: bool
    detail: str = ""

    def line(self):
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag} {self.name}: {self.value:.3e} (bound {self.bound:.1e}) {self.detail}".rstrip()

    def as_dict(self):
        return asdict(self)


def _check(name, value, bound, detail="", op="le"):
    value = float(value)
    ok = value <= bound if op == "le" else value < bound
    return Check(name, value, float(bound), bool(ok and np.isfinite(value)), detail)


def _phi(p):
    r2 = np.sum(p ** 2, -1)
    return (1 - r2) ** 2 * np.sin(p[..., 0] + 0.5 * p[..., 1])


def _dphi(p):
    x, y = p[..., 0], p[..., 1]
    b = 1 - x * x - y * y
    s, c = np.sin(x + 0.5 * y), np.cos(x + 0.5 * y)
    return np.stack([-4 * x * b * s + b * b * c, -4 * y * b * s + 0.5 * b * b * c], -1)


def check_chord(metric):
    from .raytransform import xray_function
    rays = sample_inflow_bundle(metric, 16, 32)
    d = xray_function(lambda p: np.ones(p.shape[:-1]), rays, metric, step=1e-3)
    exact = 2 * np.cos(rays.alpha[np.arange(len(rays)) % rays.shape[1]])
    return _check("xray chord length", np.max(np.abs(d.values.real - exact) / exact), 1e-4)


def check_gauge_xray(metric):
    from .raytransform import xray_oneform
    rays = sample_inflow_bundle(metric, 16, 16)
    d = xray_oneform(_dphi, rays, metric, step=1e-3)
    pts = np.random.default_rng(0).uniform(-0.7, 0.7, (2000, 2))
    sup = np.max(np.linalg.norm(_dphi(pts), axis=-1))
    diam = metric.diameter_bound(metric.radius)
    return _check("gauge invariance of I_1", np.max(np.abs(d.values)) / (sup * diam), 1e-6)


def check_sphere_identity(grid):
    from .raytransform import sphere_bundle_identity_check
    A = tc.CovectorField.from_function(
        grid, lambda p: np.stack([np.cos(p[..., 1]), p[..., 0] * p[..., 1]], -1))
    return _check("sphere-bundle identity", sphere_bundle_identity_check(A, 256)[2], 1e-3)


def check_kinetic(metric):
    from .geometry import orthonormal_frame
    from .raytransform import kinetic_equation_check
    rng = np.random.default_rng(1)
    r = 0.6 * np.sqrt(rng.uniform(0, 1, 10))
    a = rng.uniform(0, 2 * np.pi, 10)
    x = np.stack([r * np.cos(a), r * np.sin(a)], -1)
    e1, e2 = orthonormal_frame(metric, x)
    b = rng.uniform(0, 2 * np.pi, 10)
    xi = np.cos(b)[:, None] * e1 + np.sin(b)[:, None] * e2

    def A(p):
        return np.stack([np.sin(p[..., 1]), 0.5 + p[..., 0] ** 2], -1)
    return _check("kinetic equation", kinetic_equation_check(A, x, xi, metric), 1e-3)


def check_hodge(grid):
    from .hodge import poisson_dirichlet, solenoidal_decompose
    A = tc.CovectorField.from_function(
        grid, lambda p: np.stack([np.sin(2 * p[..., 1]) + p[..., 0], np.cos(p[..., 0])], -1))
    dec = solenoidal_decompose(A)
    again = solenoidal_decompose(dec.solenoidal)
    idem = (again.solenoidal - dec.solenoidal).l2_norm() / dec.solenoidal.l2_norm()
    u_ex = tc.ScalarField.from_function(grid, _phi)
    f = tc.laplace_beltrami(u_ex)
    u = poisson_dirichlet(f)
    err = np.max(np.abs(u.values - u_ex.values))
    return [
        _check("hodge split residual", dec.residuals["split"], 1e-12),
        _check("hodge idempotence", idem, 1e-6),
        _check("poisson manufactured error", err, 1e-5),
    ]


def check_norm_conservation(grid):
    from .schrodinger import evolve, magnetic_hamiltonian
    A = tc.CovectorField.from_function(grid, lambda p: 0.5 * np.stack(
        [-p[..., 1], p[..., 0]], -1))
    q = tc.ScalarField.from_function(grid, lambda p: np.cos(p[..., 0]))
    ham = magnetic_hamiltonian(A, q)
    u0 = tc.ScalarField.from_function(
        grid, lambda p: (1 - np.sum(p ** 2, -1)) * np.exp(1j * p[..., 0])).flat_values
    ev = evolve(ham, lambda t: np.zeros(grid.n_theta), 0.5, 1024, u0=u0, track_norm=True)
    drift = np.max(np.abs(ev.norms / ev.norms[0] - 1))
    return _check("norm conservation (1024 steps)", drift, 1e-3)


def check_operator_residual(grid):
    from .schrodinger import operator_residual
    X = tc.VectorField.from_function(
        grid, lambda p: np.stack([0.3 + 0.2 * p[..., 1], -0.4 * p[..., 0] ** 2], -1))
    u = tc.ScalarField.from_function(
        grid, lambda p: np.sin(2 * p[..., 0]) * np.cos(p[..., 1]) + p[..., 0] * p[..., 1])
    res = np.max(np.abs(operator_residual(X, u)[:-1]))
    return _check("gauge-reduced operator residual", res, 1e-3)


def check_optics(metric):
    from .optics import (boundary_source, eikonal_distance_field, eikonal_residual,
                         integrating_factor_residual, transport_amplitude,
                         transport_residual_polar)
    grid = tc.PolarGrid(128, 256, metric)
    y = boundary_source(metric, 0.3)
    psi = eikonal_distance_field(metric, y, grid)
    theta = np.linspace(np.pi - 0.8, np.pi + 0.8, 9) + 0.3
    amp = transport_amplitude(metric, y)
    tr = transport_residual_polar(amp, theta, 2.0, [0.8, 1.5, 2.2])

    def A(p):
        return 0.3 * np.stack([np.cos(p[..., 1]), np.sin(p[..., 0])], -1)
    br = integrating_factor_residual(A, y, metric, theta, 2.0, [0.5, 1.0, 1.5])
    return [
        _check("eikonal |grad psi| - 1", eikonal_residual(psi, y, 0.05), 1e-3),
        _check("transport residual", tr, 1e-2),
        _check("integrating-factor residual", br, 1e-3),
    ]


def check_poisson_kernel():
    from .optics import poisson_kernel_checks
    res = poisson_kernel_checks()
    cs = list(res["first_moment_constants"].values())
    return [
        _check("poisson kernel normalization", res["normalization_error"], 1e-6),
        _check("poisson kernel bound violations", res["bound_violations"], 0),
        _check("poisson kernel first-moment constant", max(cs), 1.0,
               f"spread {res['first_moment_spread']:.2f}"),
    ]


def check_carleman(metric, n_r=400, n_theta=256):
    from .reconstruction import carleman_verify
    rep = carleman_verify(metric, n_r=n_r, n_theta=n_theta)
    return _check("carleman ratio growth over h", rep.growth, 2.0,
                  f"max ratio {rep.max_ratio:.3e}")


def check_stability(metric):
    from .io import write_csv
    from .reconstruction import stability_experiment
    from .schrodinger import SpaceTimeBasis
    grid = tc.PolarGrid(12, 32, metric)
    w = lambda p: (1 - np.sum(p ** 2, -1)) ** 2  # noqa: E731
    X1 = tc.VectorField.from_function(grid, lambda p: np.stack(
        [0.2 + 0 * p[..., 0], 0.1 * p[..., 0]], -1))
    V = tc.VectorField.from_function(grid, lambda p: np.stack(
        [-p[..., 1] * w(p), (p[..., 0] + 1) * w(p)], -1))
    basis = SpaceTimeBasis(3, 6, 3.5)
    res = stability_experiment(X1, V, [0.0, 0.25, 0.125, 0.0625], basis, dt=3.5 / 256)
    zero = max(res.records[0].dX_L2, res.records[0].dLambda_op, res.records[0].dAs_L2,
               res.records[0].dq_L2)
    out = [_check("stability zero difference", zero, 1e-8),
           Check("stability monotone dLambda", float(res.monotone), 1.0, res.monotone),
           Check("stability slope in (0, 1.2]", res.slope, 1.2, bool(0 < res.slope <= 1.2))]
    cols = ["epsilon", "dX_L2", "dLambda_op", "dAs_L2", "dq_L2"]
    blobs = []
    with tempfile.TemporaryDirectory() as tmp:
        for k in range(2):
            run = stability_experiment(X1, V, [0.25, 0.125], basis, dt=3.5 / 256)
            path = os.path.join(tmp, f"run{k}.csv")
            write_csv(path, cols, [(r.epsilon, r.dX_L2, r.dLambda_op, r.dAs_L2, r.dq_L2)
                                   for r in run.records])
            with open(path, "rb") as fh:
                blobs.append(fh.read())
    same = blobs[0] == blobs[1]
    out.append(Check("deterministic rerun", float(same), 1.0, same))
    return out


def check_picard(grid):
    from .hodge import solenoidal_decompose
    from .reconstruction import vector_field_from_potentials
    from .schrodinger import gauge_reduce
    X2 = tc.VectorField.from_function(grid, lambda p: np.stack(
        [0.3 + 0 * p[..., 0], 0.2 * p[..., 0]], -1))

    def f(p):
        x, y = p[..., 0], p[..., 1]
        b = 1 - x * x - y * y
        return 0.2 * np.stack([b * b - 4 * x * x * b - y * b * b, -4 * x * y * b + x * b * b], -1)
    V = tc.VectorField.from_function(grid, f)
    X1 = X2 + V
    A1, q1 = gauge_reduce(X1)
    A2, q2 = gauge_reduce(X2)
    As = solenoidal_decompose(A1 - A2).solenoidal
    r = vector_field_from_potentials(X2, As, q1 - q2)
    return _check("vector-field Picard recovery (exact data)",
                  (r.X1 - X1).l2_norm() / V.l2_norm(), 1e-6)


def run_checks(config=None):
    """Run the suite for the metric of ``config`` (Euclidean by default)."""
    if config is None:
        from .geometry import euclidean
        metric = euclidean()
        car = (400, 256)
    else:
        metric = config.metric()
        car = (config["carleman"]["n_r"], config["carleman"]["n_theta"])
    g32 = tc.PolarGrid(32, 64, metric)
    checks = []
    if metric.flat:
        checks.append(check_chord(metric))
    checks.append(check_gauge_xray(metric))
    checks.append(check_sphere_identity(g32))
    checks.append(check_kinetic(metric))
    checks.extend(check_hodge(tc.PolarGrid(64, 128, metric)))
    checks.append(check_norm_conservation(tc.PolarGrid(16, 32, metric)))
    checks.append(check_operator_residual(g32))
    checks.extend(check_optics(metric))
    checks.extend(check_poisson_kernel())
    checks.append(check_carleman(metric, *car))
    checks.extend(check_stability(metric))
    checks.append(check_picard(g32))
    return checks
