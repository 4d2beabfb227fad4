"""Recovery chains from DN differences, the stability harness and the Carleman check.

The chains follow the probe construction of :mod:`schrodn.optics`: windowed
boundary correlations give ray transforms (``I_1`` of the magnetic difference
in a first pass, ``I`` of the electric difference in a second, gauge-aligned
pass), which are inverted on a coarse polar grid.  For the advection
problem ``X_1 = X_2 + X`` the gauge-reduced potentials give
``X_flat = -2i A^s + d chi`` and ``div X = <X, X_1 + X_2>/2 - 2 q``, a
quadratically nonlinear Poisson problem solved by Picard iteration.
"""

from dataclasses import dataclass, field

import numpy as np

from . import calculus as tc
from .errors import FieldTooLargeError, NonlinearityError
from .geometry import orthonormal_frame, sample_inflow_bundle
from .hodge import poisson_dirichlet, solenoidal_decompose
from .optics import ProbeContext, _select, correlation_tables, phase_estimates
from .raytransform import RayData, forward_matrix, invert_xray_function, invert_xray_oneform
from .schrodinger import dn_advection, dn_operator_norm, gauge_reduce


@dataclass
class ProbeSweep:
    """Sampling of the probe experiment.

    ``n_sources`` boundary points of the enlarged disk, ``n_directions``
    aperture angles each; ``lam_sweep`` is filtered by the Nyquist guard of
    the probe grid.
    """

    n_sources: int = 16
    n_directions: int = 16
    lam_sweep: tuple = (8, 16, 32, 64)
    rho_sweep: tuple = (0.5, 0.7, 0.9)
    phase_step: float = 0.05
    n_steps: int = 128
    max_fail: float = 0.2


@dataclass
class Recovery:
    """A recovered field with the ray data it was inverted from."""

    field: object
    rays: RayData = None
    tau: float = None
    failures: int = 0
    extras: dict = field(default_factory=dict)


def resample(f, grid):
    """Interpolate a grid field (or evaluate a callable) onto ``grid``."""
    ev = tc.evaluator(f)
    vals = ev(grid.points)
    if isinstance(f, tc.ScalarField):
        return tc.ScalarField(grid, vals)
    cls = type(f) if isinstance(f, tc._OneTensor) else tc.CovectorField
    return cls(grid, np.moveaxis(vals, -1, 0))


def _frame_angles(metric, y, xi):
    """Angles of the vectors ``xi`` in the orthonormal frame at ``y``."""
    e1, e2 = orthonormal_frame(metric, y)
    g = metric.g(y)
    c = np.einsum("...ij,...i,...j->...", g, xi, e1)
    s = np.einsum("...ij,...i,...j->...", g, xi, e2)
    return np.arctan2(s, c)


def _inflow_bundle(metric, sweep):
    return sample_inflow_bundle(metric, sweep.n_sources, sweep.n_directions,
                                radius=metric.ext_radius)


def _hamiltonians_equal(context):
    D = context.dn_difference()
    diff = D.ham_a.H - D.ham_b.H
    return diff.count_nonzero() == 0 or not np.any(diff.data)


def _sweep_sources(bundle, metric, fn):
    n_s, n_a = bundle.shape
    out = []
    for i in range(n_s):
        sl = slice(i * n_a, (i + 1) * n_a)
        y = bundle.y[sl][0]
        xis = _frame_angles(metric, bundle.y[sl], bundle.xi[sl])
        out.extend(fn(y, xis))
    return out


def solenoidal_ray_data(context, sweep=None):
    """Estimated ``I_1(A_2 - A_1)`` on the inflow bundle of the enlarged disk.

    Returns ``(RayData, n_failed)``; rays whose phase cannot be unwrapped are
    set to zero.

    Raises
    ------
    FieldTooLargeError
        If more than ``sweep.max_fail`` of the rays fail to unwrap.
    """
    sweep = sweep or ProbeSweep()
    metric = context.metric
    bundle = _inflow_bundle(metric, sweep)
    if _hamiltonians_equal(context):
        return RayData(bundle, np.zeros(len(bundle))), 0

    def fn(y, xis):
        ests = phase_estimates(context, y, xis, sweep.lam_sweep, sweep.rho_sweep,
                               sweep.phase_step, sweep.n_steps, on_fail="nan")
        return [e.value for e in ests]

    vals = np.array(_sweep_sources(bundle, metric, fn), dtype=complex)
    bad = ~np.isfinite(vals)
    n_bad = int(np.count_nonzero(bad))
    if n_bad > sweep.max_fail * len(vals):
        raise FieldTooLargeError(f"phase unwrapping failed on {n_bad} of {len(vals)} rays")
    vals[bad] = 0.0
    return RayData(bundle, vals), n_bad


def recover_solenoidal(context, grid, sweep=None, tau_grid=None, step=5e-3):
    """Solenoidal part of ``A_2 - A_1`` from the DN difference of ``context``.

    Probe phases over the sampled inflow bundle of the enlarged disk are
    inverted on ``grid`` (a polar grid on the physical disk) and projected
    onto divergence-free 1-forms.
    """
    d, n_bad = solenoidal_ray_data(context, sweep)
    if not np.any(d.values):
        return Recovery(tc.CovectorField.zeros(grid), d, 0.0, n_bad)
    kw = {} if tau_grid is None else {"tau_grid": tuple(tau_grid)}
    M = forward_matrix(grid, d.bundle, grid.metric, step, "oneform")
    inv = invert_xray_oneform(d, grid, matrix=M, **kw)
    return Recovery(inv.field, d, inv.tau, n_bad, {"lcurve": inv.lcurve})


def aligned_context(context, As_hat):
    """Context whose first system carries ``A_1 + As_hat`` (gauge-aligned probes).

    The DN difference of the aligned pair is the measured one minus the
    simulated ``N_{A_1 + As_hat, q_1} - N_{A_1, q_1}``.
    """
    A1 = context.A1 + resample(As_hat, context.grid)
    return ProbeContext(context.grid, A1, context.q1, context.A2, context.q2)


def potential_ray_data(context, As_hat, sweep=None):
    """Estimated ``I(q_2 - q_1)`` from a second, gauge-aligned correlation pass.

    To leading order the aligned correlation is ``(2 lam)^{-1} int Psi I(q)``,
    so each window gives ``2 lam C``.  Returns ``(RayData, imaginary_leakage)``
    with the leakage ``||Im|| / ||.||`` in the ``mu``-norm.
    """
    sweep = sweep or ProbeSweep()
    ctx = aligned_context(context, As_hat)
    metric = context.metric
    bundle = _inflow_bundle(metric, sweep)
    if _hamiltonians_equal(ctx):
        return RayData(bundle, np.zeros(len(bundle))), 0.0

    def fn(y, xis):
        lams, tables = correlation_tables(ctx, y, xis, sweep.lam_sweep, sweep.rho_sweep,
                                          sweep.phase_step, sweep.n_steps)
        out = []
        for tab in tables:
            est = {(lam, rho): 2 * lam * C for (lam, rho), C in tab.items()}
            _, lam, rho = _select(est, lams, tuple(sweep.rho_sweep))
            out.append(est[(lam, rho)])
        return out

    vals = np.array(_sweep_sources(bundle, metric, fn), dtype=complex)
    d = RayData(bundle, vals)
    nrm = d.l2_norm()
    leak = RayData(bundle, vals.imag).l2_norm() / nrm if nrm > 0 else 0.0
    return d, leak


def recover_potential(context, As_hat, grid, sweep=None, tau_grid=None, step=5e-3):
    """Electric difference ``q_2 - q_1`` from the gauge-aligned DN difference.

    The real part of the estimated ray data is inverted; the imaginary
    leakage of the data and of the recovered field are reported in
    ``extras``.
    """
    d, leak = potential_ray_data(context, As_hat, sweep)
    if not np.any(d.values):
        return Recovery(tc.ScalarField.zeros(grid), d, 0.0, 0,
                        {"data_leakage": 0.0, "field_leakage": 0.0})
    kw = {} if tau_grid is None else {"tau_grid": tuple(tau_grid)}
    M = forward_matrix(grid, d.bundle, grid.metric, step, "function")
    inv_re = invert_xray_function(RayData(d.bundle, d.values.real), grid, matrix=M, **kw)
    inv_im = invert_xray_function(RayData(d.bundle, d.values.imag), grid, matrix=M, **kw)
    q = inv_re.field
    nq = q.l2_norm()
    leak_f = inv_im.field.l2_norm() / nq if nq > 0 else 0.0
    return Recovery(tc.ScalarField(grid, q.values.real), d, inv_re.tau, 0,
                    {"data_leakage": leak, "field_leakage": leak_f})


# -- vector field ---------------------------------------------------------------------


@dataclass
class VectorRecovery:
    """``X_1 = X_2 + X`` with ``X_flat = X'_flat + d chi`` (``chi = 0`` on the boundary)."""

    X1: tc.VectorField
    X: tc.VectorField
    chi: tc.ScalarField
    iterations: int
    increments: list


def vector_field_from_potentials(X2, As_hat, q_hat, tol=1e-8, max_iter=50):
    """Solve for ``X_1`` given the reference ``X_2`` and recovered ``(A^s, q)``.

    ``A^s`` and ``q`` are the differences ``A_1 - A_2`` and ``q_1 - q_2`` of
    the gauge-reduced systems, so ``X'_flat = -2i A^s`` is the solenoidal
    part of ``X = X_1 - X_2``.  The gradient part ``d chi`` solves
    ``Delta chi = <X' + grad chi, 2 X_2 + X' + grad chi>/2 - 2 q`` with
    ``chi = 0`` on the boundary, by Picard iteration from ``chi = 0``.

    Raises
    ------
    NonlinearityError
        If ``||chi^(k+1)|| > 10 ||chi^(1)||`` (perturbation too large).
    """
    grid = X2.grid
    Xp = tc.sharp(As_hat * (-2j))
    chi = tc.ScalarField.zeros(grid)
    incs = []
    n1 = None
    for k in range(1, max_iter + 1):
        X = Xp + tc.gradient(chi)
        rhs = tc.inner(X, X2 * 2 + X) * 0.5 - q_hat * 2
        new = poisson_dirichlet(rhs)
        inc = (new - chi).l2_norm()
        nrm = new.l2_norm()
        if n1 is None:
            n1 = nrm
        elif nrm > 10 * max(n1, 1e-300):
            raise NonlinearityError(f"Picard iteration diverges (||chi|| grew to {nrm:.3e}, "
                                    f"first iterate {n1:.3e}); reduce the perturbation")
        chi = new
        incs.append(inc)
        if inc <= tol * max(nrm, 1.0):
            break
    X = Xp + tc.gradient(chi)
    return VectorRecovery(X2 + X, X, chi, k, incs)


def recover_vector_field(context, X2, grid, sweep=None, tau_grid=None, step=5e-3):
    """Recover ``X_1`` from the DN difference and the reference ``X_2``.

    ``context`` must hold the gauge-reduced reference system in slot 1 and
    the unknown system in slot 2, so the recovered differences are
    ``A_1 - A_2`` and ``q_1 - q_2`` in the vector-field labels.
    """
    As = recover_solenoidal(context, grid, sweep, tau_grid, step)
    q = recover_potential(context, As.field, grid, sweep, tau_grid, step)
    X2g = resample(X2, grid)
    vr = vector_field_from_potentials(X2g, As.field, q.field)
    return vr, As, q


# -- stability harness ---------------------------------------------------------------


@dataclass
class StabilityRecord:
    """Norms of one stability experiment ``X_2 = X_1 + eps V``."""

    epsilon: float
    dX_L2: float
    dLambda_op: float
    dAs_L2: float
    dq_L2: float
    fingerprint: str = ""

    def __post_init__(self):
        for name in ("dX_L2", "dLambda_op", "dAs_L2", "dq_L2"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass
class StabilityResult:
    records: list
    slope: float
    intercept: float
    monotone: bool


def fit_loglog(x, y):
    """Least-squares slope and intercept of ``log y`` against ``log x`` (positive pairs)."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    keep = (x > 0) & (y > 0)
    if np.count_nonzero(keep) < 2:
        return float("nan"), float("nan")
    slope, icpt = np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)
    return float(slope), float(icpt)


def _difference_norms(X1, X2):
    A1, q1 = gauge_reduce(X1)
    A2, q2 = gauge_reduce(X2)
    dAs = solenoidal_decompose(A1 - A2).solenoidal.l2_norm()
    return (X1 - X2).l2_norm(), dAs, (q1 - q2).l2_norm()


def _one_experiment(args):
    X1, V, eps, basis, dt, L1, fingerprint = args
    X2 = X1 + V * eps
    if eps == 0:
        return StabilityRecord(0.0, 0.0, 0.0, 0.0, 0.0, fingerprint)
    L2 = dn_advection(X2, basis, dt)
    dL, _ = dn_operator_norm(L1 - L2)
    dX, dAs, dq = _difference_norms(X1, X2)
    return StabilityRecord(float(eps), dX, dL, dAs, dq, fingerprint)


def stability_experiment(X1, V, epsilons, basis, dt=None, fingerprint="", workers=1):
    """DN-difference norms along ``X_2 = X_1 + eps V`` and the fitted exponent.

    ``V`` must vanish on the boundary (``X_1 = X_2`` there).  The recorded
    ``dAs_L2`` and ``dq_L2`` are the differences of the gauge-reduced
    systems.  The slope is the least-squares fit of ``log dX`` against
    ``log dLambda`` over the nonzero ``eps``; ``monotone`` reports whether
    ``dLambda`` is strictly increasing in ``eps`` on those points.
    """
    if np.max(np.abs(V.components[:, -1])) > 1e-12:
        raise ValueError("the direction V must vanish on the boundary")
    eps = [float(e) for e in epsilons]
    L1 = dn_advection(X1, basis, dt)
    jobs = [(X1, V, e, basis, dt, L1, fingerprint) for e in eps]
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(workers) as ex:
            recs = list(ex.map(_one_experiment, jobs))
    else:
        recs = [_one_experiment(j) for j in jobs]
    recs.sort(key=lambda r: r.epsilon)
    nz = [r for r in recs if r.epsilon > 0]
    slope, icpt = fit_loglog([r.dLambda_op for r in nz], [r.dX_L2 for r in nz])
    mono = all(b.dLambda_op > a.dLambda_op for a, b in zip(nz, nz[1:]))
    return StabilityResult(recs, slope, icpt, mono)


# -- Carleman check -------------------------------------------------------------------


@dataclass
class TestFunction:
    """``u = (1 - |x|^2) w(x)`` with ``w`` given with its gradient and Hessian."""

    __test__ = False  # not a pytest class

    name: str
    w: object
    grad_w: object
    hess_w: object

    def derivatives(self, x):
        b = 1.0 - np.sum(x ** 2, -1)
        db = -2.0 * x
        w, dw, hw = self.w(x), self.grad_w(x), self.hess_w(x)
        u = b * w
        du = w[..., None] * db + b[..., None] * dw
        hb = -2.0 * np.eye(2)
        hu = (w[..., None, None] * hb + dw[..., :, None] * db[..., None, :]
              + db[..., :, None] * dw[..., None, :] + b[..., None, None] * hw)
        return u, du, hu


def _const(v):
    return lambda x: np.full(x.shape[:-1], float(v))


DEFAULT_TEST_FUNCTIONS = (
    TestFunction("bubble", _const(1.0), lambda x: np.zeros(x.shape),
                 lambda x: np.zeros(x.shape + (2,))),
    TestFunction("tilted", lambda x: x[..., 0] + 0.5,
                 lambda x: np.stack([np.ones(x.shape[:-1]), np.zeros(x.shape[:-1])], -1),
                 lambda x: np.zeros(x.shape + (2,))),
    TestFunction("saddle", lambda x: x[..., 0] * x[..., 1] + x[..., 1] ** 2 + 0.3,
                 lambda x: np.stack([x[..., 1], x[..., 0] + 2 * x[..., 1]], -1),
                 lambda x: np.broadcast_to(np.array([[0.0, 1.0], [1.0, 2.0]]),
                                           x.shape + (2,)).copy()),
)


@dataclass
class CarlemanWeight:
    """``eta = exp(gamma psi)`` with the affine ``psi = (x^1 + 2) / 3``.

    ``psi`` is positive on the disk, ``|grad psi| > 0`` and
    ``d_nu psi = nu^1 / 3 <= 0`` off the right half-circle ``Gamma_0``.
    """

    gamma: float = 1.0

    def psi(self, x):
        return (x[..., 0] + 2.0) / 3.0

    def eta(self, x):
        return np.exp(self.gamma * self.psi(x))

    def max_eta(self, radius=1.0):
        return float(np.exp(self.gamma * (radius + 2.0) / 3.0))


@dataclass
class CarlemanReport:
    h_values: np.ndarray
    ratios: np.ndarray           # (n_functions, n_h)
    lhs: np.ndarray
    rhs: np.ndarray
    names: tuple
    max_ratio: float
    growth: float                # max over h of ratio / ratio at the largest h


def _laplacian(metric, x, du, hu):
    gi = metric.ginv(x)
    gam = metric.christoffel(x)                       # (..., k, i, j)
    return (np.einsum("...ij,...ij->...", gi, hu)
            - np.einsum("...ij,...kij,...k->...", gi, gam, du))


def carleman_verify(metric, weight=None, h_values=None, functions=DEFAULT_TEST_FUNCTIONS,
                    n_r=1600, n_theta=1024):
    """Both sides of the weighted inequality for each ``(u, h)``.

    ``LHS = int (|grad u|^2 / h + |u|^2 / h^3) e^{2 eta/h} dv`` and
    ``RHS = int |Delta u|^2 e^{2 eta/h} dv + int_{Gamma_0} |d_nu u|^2 e^{2 eta/h} dsigma / h``
    by Gauss-Legendre quadrature in polar coordinates (radially) and the
    periodic trapezoid rule (angularly).  The weight is scaled by
    ``e^{-2 max(eta)/h}`` on both sides to avoid overflow.
    """
    weight = weight or CarlemanWeight()
    h_values = np.asarray(0.1 * 2.0 ** -np.arange(5) if h_values is None else h_values, float)
    R = metric.radius
    xg, wg = np.polynomial.legendre.leggauss(n_r)
    r = 0.5 * R * (xg + 1)
    wr = 0.5 * R * wg
    th = 2 * np.pi * np.arange(n_theta) / n_theta
    dth = 2 * np.pi / n_theta
    Rr, TT = np.meshgrid(r, th, indexing="ij")
    x = np.stack([Rr * np.cos(TT), Rr * np.sin(TT)], -1)
    dv = (wr[:, None] * Rr * dth) * metric.sqrt_det(x)
    gi = metric.ginv(x)
    eta = weight.eta(x)
    # boundary
    xb = R * np.stack([np.cos(th), np.sin(th)], -1)
    gb, gib = metric.g(xb), metric.ginv(xb)
    nu = np.einsum("...ij,...j->...i", gib, xb / R)
    nu = nu / np.sqrt(np.einsum("...ij,...i,...j->...", gb, nu, nu))[..., None]
    tang = R * np.stack([-np.sin(th), np.cos(th)], -1)
    ds = np.sqrt(np.einsum("...ij,...i,...j->...", gb, tang, tang)) * dth
    gamma0 = xb[:, 0] > 0
    eta_b = weight.eta(xb)
    top = weight.max_eta(R)
    lhs = np.zeros((len(functions), len(h_values)))
    rhs = np.zeros_like(lhs)
    for i, fn in enumerate(functions):
        u, du, hu = fn.derivatives(x)
        grad2 = np.einsum("...ij,...i,...j->...", gi, du, du)
        lap2 = _laplacian(metric, x, du, hu) ** 2
        _, dub, _ = fn.derivatives(xb)
        dnu2 = np.sum(dub * nu, -1) ** 2
        for j, h in enumerate(h_values):
            w = np.exp(2 * (eta - top) / h)
            wb = np.exp(2 * (eta_b - top) / h)
            lhs[i, j] = np.sum(dv * w * (grad2 / h + u ** 2 / h ** 3))
            rhs[i, j] = np.sum(dv * w * lap2) + np.sum((ds * wb * dnu2)[gamma0]) / h
    with np.errstate(invalid="ignore", divide="ignore"):
        ratios = np.where(rhs > 0, lhs / rhs, 0.0)
    first = ratios[:, np.argmax(h_values)]
    growth = max((float(np.max(rw) / f0) for rw, f0 in zip(ratios, first) if f0 > 0),
                 default=1.0)
    return CarlemanReport(h_values, ratios, lhs, rhs, tuple(f.name for f in functions),
                          float(np.max(ratios)), growth)
