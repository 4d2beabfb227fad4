"""Geodesic X-ray transforms of functions and 1-forms, adjoints and inversion.

Ray data live on the tensor grid of an :class:`~schrodn.geometry.InflowBundle`
and are compared in the ``mu``-weighted inner product
``<u, v>_mu = sum(weight * mu * u * conj(v))``.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import calculus as tc
from .errors import ConditioningError
from .geometry import flow, sample_inflow_bundle, trace_geodesics


@dataclass
class RayData:
    """One complex value per inflow ray of ``bundle``."""

    bundle: object
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex).ravel()
        if len(self.values) != len(self.bundle):
            raise ValueError("value count must equal the ray count")

    def __sub__(self, other):
        return RayData(self.bundle, self.values - other.values)

    def __add__(self, other):
        return RayData(self.bundle, self.values + other.values)

    def __mul__(self, c):
        return RayData(self.bundle, self.values * c)

    __rmul__ = __mul__

    def inner(self, other):
        """``<self, other>_mu``."""
        w = self.bundle.weight * self.bundle.mu
        return complex(np.sum(w * self.values * np.conj(other.values)))

    def l2_norm(self):
        return float(np.sqrt(np.real(self.inner(self))))

    def grid_values(self):
        return self.values.reshape(self.bundle.shape)


def _integrate_rays(metric, bundle, integrand, step):
    res = trace_geodesics(metric, bundle.y, bundle.xi, step, radius=bundle.radius,
                          integrands=(integrand,))
    return res.integrals[0]


def xray_function(f, rays, metric, step=1e-3):
    """``I f(y, xi) = int_0^tau f(gamma(t)) dt`` for every ray of ``rays``.

    ``f`` may be a :class:`~schrodn.calculus.ScalarField` (interpolated and
    extended by zero) or a callable on points.
    """
    ev = tc.evaluator(f)
    vals = _integrate_rays(metric, rays, lambda x, v, t: ev(x), step)
    return RayData(rays, vals)


def xray_oneform(A, rays, metric, step=1e-3):
    """``I_1 A(y, xi) = int a_j(gamma(t)) gamma'^j(t) dt``."""
    ev = tc.evaluator(A)
    vals = _integrate_rays(metric, rays, lambda x, v, t: np.sum(ev(x) * v, -1), step)
    return RayData(rays, vals)


# -- identities --------------------------------------------------------------------

def sphere_bundle_identity_check(A, n_direction=256):
    """Both sides of ``int_SM |A|^2 = n int_SM <A#, xi>^2`` on the unit sphere bundle.

    Returns ``(lhs, rhs, rel_err)``; directions are a uniform angular grid in
    a g-orthonormal frame at every node.
    """
    grid = A.grid
    from .geometry import orthonormal_frame
    e1, e2 = orthonormal_frame(grid.metric, grid.points)
    phi = 2 * np.pi * np.arange(n_direction) / n_direction
    a = np.moveaxis(A.components, 0, -1)
    p1 = np.sum(a * e1, -1)
    p2 = np.sum(a * e2, -1)
    # <A#, xi> = a(xi) for xi = cos(phi) e1 + sin(phi) e2
    pair = np.cos(phi) * p1[..., None] + np.sin(phi) * p2[..., None]
    dphi = 2 * np.pi / n_direction
    fiber_rhs = np.sum(np.abs(pair) ** 2, -1) * dphi
    fiber_lhs = np.real(A.pointwise_sq()) * 2 * np.pi
    lhs = float(grid.integrate(fiber_lhs))
    rhs = float(2 * grid.integrate(fiber_rhs))
    if lhs == 0 and rhs == 0:
        return 0.0, 0.0, 0.0
    return lhs, rhs, abs(lhs - rhs) / max(abs(lhs), abs(rhs))


def kinetic_solution(A, x, xi, metric, step=1e-3, radius=None):
    """``u(x, xi) = int_0^tau <A#(gamma), gamma'> dt`` from interior points."""
    ev = tc.evaluator(A)
    res = trace_geodesics(metric, np.atleast_2d(x), np.atleast_2d(xi), step, radius=radius,
                          integrands=(lambda p, v, t: np.sum(ev(p) * v, -1),))
    return res.integrals[0]


def kinetic_equation_check(A, x, xi, metric, h=1e-3, step=1e-3):
    """Max of ``|d/dt u(phi_t(x, xi))|_{t=0} + <A#(x), xi>|`` by centred differences."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    xp, vp = flow(metric, x, xi, h, step=h)
    xm, vm = flow(metric, x, xi, -h, step=h)
    up = kinetic_solution(A, xp, vp, metric, step)
    um = kinetic_solution(A, xm, vm, metric, step)
    Hu = (up - um) / (2 * h)
    sigma = np.sum(tc.evaluator(A)(x) * xi, -1)
    return float(np.max(np.abs(Hu + sigma)))


def h1_inflow_norm(d):
    """Discrete ``H^1(d_+ SM)`` norm: mu-weighted L^2 plus first differences.

    Differences are periodic-central in the boundary angle and
    ``numpy.gradient`` (second order, one-sided at the ends) in the aperture
    angle.
    """
    b = d.bundle
    v = d.grid_values()
    w = (b.weight * b.mu).reshape(b.shape)
    ds = b.s[1] - b.s[0] if len(b.s) > 1 else 1.0
    dv_s = (np.roll(v, -1, 0) - np.roll(v, 1, 0)) / (2 * ds)
    dv_a = np.gradient(v, b.alpha, axis=1, edge_order=2) if b.shape[1] > 2 else np.zeros_like(v)
    tot = np.sum(w * (np.abs(v) ** 2 + np.abs(dv_s) ** 2 + np.abs(dv_a) ** 2))
    return float(np.sqrt(tot))


# -- discrete forward operators ------------------------------------------------------

def forward_matrix(grid, rays, metric, step=5e-3, kind="function", chunk=256):
    """Sparse matrix of the discrete ray transform acting on grid values.

    ``kind="function"`` maps ``(size,)`` node values to ray values;
    ``kind="oneform"`` maps stacked components ``(2 * size,)``.  Built from the
    Simpson nodes of the geodesic integrator and bicubic interpolation.
    """
    blocks = []
    n = len(rays)
    for start in range(0, n, chunk):
        sl = slice(start, min(n, start + chunk))
        res = trace_geodesics(metric, rays.y[sl], rays.xi[sl], step, radius=rays.radius,
                              record=True)
        m = sl.stop - sl.start
        Mi = tc.interpolation_matrix(grid, res.node_x)
        R = sp.csr_matrix((res.node_w, (res.node_ray, np.arange(len(res.node_ray)))),
                          shape=(m, len(res.node_ray)))
        if kind == "function":
            blocks.append(R @ Mi)
        else:
            Rx = R @ sp.diags(res.node_v[:, 0])
            Ry = R @ sp.diags(res.node_v[:, 1])
            blocks.append(sp.hstack([Rx @ Mi, Ry @ Mi]))
    return sp.vstack(blocks).tocsr()


def adjoint_apply(Mf, rays, weights_field, d):
    """Discrete adjoint ``W_f^{-1} M^T W_mu d`` (exact adjoint of ``Mf``)."""
    wmu = rays.weight * rays.mu
    return (Mf.T @ (wmu * d.values)) / weights_field


def _field_weights(grid, kind):
    w = grid.weights.ravel()
    if kind == "function":
        return w
    return np.concatenate([w, w])


def _cg(apply, b, tol, max_iter, precond=None, x0=None):
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - apply(x)
    z = precond(r) if precond else r
    p = z.copy()
    rz = np.vdot(r, z)
    nb = np.linalg.norm(b)
    if nb == 0:
        return x, 0
    for it in range(1, max_iter + 1):
        Ap = apply(p)
        alpha = rz / np.vdot(p, Ap)
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= tol * nb:
            return x, it
        z = precond(r) if precond else r
        rz_new = np.vdot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConditioningError(f"CG did not converge in {max_iter} iterations",
                            residual=float(np.linalg.norm(r) / nb))


@dataclass
class InversionResult:
    field: object
    tau: float
    lcurve: list
    iterations: int


def _tikhonov(Mf, rays, d, W, tau_grid, tol, max_iter):
    """Solve ``(M^T W_mu M + tau W) x = M^T W_mu d`` by Jacobi-preconditioned CG per ``tau``."""
    wmu = rays.weight * rays.mu
    MT = Mf.T.tocsr()
    rhs = (MT @ (wmu * d.values)).astype(complex)
    normal_diag = np.asarray(Mf.multiply(Mf).T @ wmu).ravel()
    Wdiag = W.diagonal() if sp.issparse(W) else W

    def wmul(x):
        return W @ x

    lcurve, sols, failures = [], [], []
    x = None
    # decreasing tau with warm starts; unconverged tau values are left off the L-curve
    for tau in sorted(tau_grid, reverse=True):
        def apply(x, tau=tau):
            return MT @ (wmu * (Mf @ x)) + tau * wmul(x)

        pre = 1.0 / (normal_diag + tau * Wdiag)
        try:
            x, its = _cg(apply, rhs, tol, max_iter, lambda r, pre=pre: pre * r, x0=x)
        except ConditioningError as exc:
            failures.append((float(tau), exc.residual))
            continue
        resid = Mf @ x - d.values
        rn = float(np.sqrt(np.sum(wmu * np.abs(resid) ** 2)))
        xn = float(np.sqrt(abs(np.vdot(x, wmul(x)))))
        lcurve.append((float(tau), rn, xn, its))
        sols.append(x)
    if not sols:
        worst = max(r for _, r in failures)
        raise ConditioningError(f"CG did not converge for any tau in {list(tau_grid)}",
                                residual=worst)
    k = _lcurve_corner(lcurve)
    return sols[k], lcurve[k][0], lcurve, lcurve[k][3]


def _lcurve_corner(lcurve):
    """Index of the sharpest corner of ``(log residual, log norm)``.

    ``lcurve`` is ordered by decreasing ``tau``; the corner of an L-curve
    turns clockwise in that order, so only negative signed Menger curvature
    counts.  Without any such turn the largest ``tau`` is returned.
    """
    if len(lcurve) < 3:
        return 0
    pts = np.array([[np.log(max(r, 1e-300)), np.log(max(n, 1e-300))] for _, r, n, _ in lcurve])
    best, kbest = 0.0, 0
    for k in range(1, len(pts) - 1):
        a, b, c = pts[k - 1], pts[k], pts[k + 1]
        area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        den = np.linalg.norm(b - a) * np.linalg.norm(c - b) * np.linalg.norm(c - a)
        kappa = -2 * area / den if den > 0 else 0.0
        if kappa > best:
            best, kbest = kappa, k
    return kbest


DEFAULT_TAUS = tuple(10.0 ** -np.arange(1, 7))


def invert_xray_function(d, grid, metric=None, tau_grid=DEFAULT_TAUS, tol=1e-8, max_iter=2000,
                         step=5e-3, matrix=None):
    """Tikhonov inversion ``min ||I f - d||_mu^2 + tau ||f||_{L^2}^2`` by CG.

    ``tau`` is chosen at the corner of the L-curve over ``tau_grid``.
    """
    metric = metric or grid.metric
    if not np.any(d.values):
        return InversionResult(tc.ScalarField.zeros(grid), 0.0, [], 0)
    Mf = matrix if matrix is not None else forward_matrix(grid, d.bundle, metric, step)
    W = sp.diags(_field_weights(grid, "function")).tocsr()
    x, tau, lc, its = _tikhonov(Mf, d.bundle, d, W, tau_grid, tol, max_iter)
    return InversionResult(tc.ScalarField(grid, x), tau, lc, its)


def _oneform_weight(grid):
    """Block matrix of ``int <A, B>_g`` on stacked covector components."""
    w = grid.weights.ravel()
    gi = grid.ginv.reshape(-1, 2, 2)
    return sp.bmat([[sp.diags(w * gi[:, 0, 0]), sp.diags(w * gi[:, 0, 1])],
                    [sp.diags(w * gi[:, 1, 0]), sp.diags(w * gi[:, 1, 1])]]).tocsr()


def invert_xray_oneform(d, grid, metric=None, tau_grid=DEFAULT_TAUS, tol=1e-8, max_iter=2000,
                        step=5e-3, matrix=None, project=True):
    """Tikhonov inversion of the 1-form transform followed by solenoidal projection."""
    from .hodge import solenoidal_decompose
    metric = metric or grid.metric
    if not np.any(d.values):
        return InversionResult(tc.CovectorField.zeros(grid), 0.0, [], 0)
    Mf = matrix if matrix is not None else forward_matrix(grid, d.bundle, metric, step, "oneform")
    Wg = _oneform_weight(grid)
    x, tau, lc, its = _tikhonov(Mf, d.bundle, d, Wg, tau_grid, tol, max_iter)
    A = tc.CovectorField(grid, x.reshape(2, *grid.shape))
    if project:
        A = solenoidal_decompose(A).solenoidal
    return InversionResult(A, tau, lc, its)


def default_rays(metric, n_boundary=64, n_direction=64, radius=None):
    return sample_inflow_bundle(metric, n_boundary, n_direction, radius)
