"""Crank-Nicolson solvers, space-time boundary bases and discrete DN maps.

Equations (``Delta`` is the Laplace-Beltrami operator)::

    advection   i u_t - Delta u + <X, grad u> = 0
    magnetic    i u_t - Delta_A u + q u = 0
    adjoint     i v_t - Delta v - <X, grad v> - (div X) v = 0,  v(T) = 0

Each is written as ``u_t = i H u`` and stepped with Crank-Nicolson on the
interior unknowns, the Dirichlet data being imposed on the boundary ring.
The Laplacian inside ``H`` is the conservative energy-form discretization
of :func:`schrodn.calculus.energy_matrix`, which keeps ``H`` self-adjoint for
real magnetic potentials so that the scheme is exactly norm preserving.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import BSpline

from . import calculus as tc
from .errors import ConditioningError, SolverStepError


# -- temporal bases ------------------------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(5)


class TemporalSplines:
    """Uniform cubic B-splines ``B_m(t) = B((t - m h) / h)``, ``m = 0..M-1``.

    ``h = T / (M + 3)`` so the last spline ends at ``T``.  Every spline starts
    at ``t >= 0`` with vanishing value, first and second derivative, which is
    the compatibility condition ``f(., 0) = f_t(., 0) = 0`` of the boundary
    data.
    """

    def __init__(self, M, T):
        self.M = int(M)
        self.T = float(T)
        self.h = self.T / (self.M + 3)
        self._cardinal = BSpline.basis_element(np.arange(5.0), extrapolate=False)

    def __len__(self):
        return self.M

    def evaluate(self, t, deriv=0):
        """Array ``(len(t), M)`` of ``d^deriv B_m / dt^deriv``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x = t[:, None] / self.h - np.arange(self.M)[None, :]
        f = self._cardinal.derivative(deriv) if deriv else self._cardinal
        out = np.nan_to_num(f(x.ravel()), nan=0.0).reshape(x.shape)
        out[(x <= 0) | (x >= 4)] = 0.0
        return out / self.h ** deriv

    def breakpoints(self):
        return self.h * np.arange(self.M + 4)


class ClampedSplines:
    """Clamped cubic B-splines on ``n_int`` uniform intervals of ``[0, T]``."""

    def __init__(self, n_int, T):
        self.n_int = int(n_int)
        self.T = float(T)
        inner = np.linspace(0, self.T, self.n_int + 1)
        self.knots = np.r_[[0.0] * 3, inner, [self.T] * 3]
        self.M = self.n_int + 3

    def __len__(self):
        return self.M

    def evaluate(self, t, deriv=0):
        t = np.clip(np.atleast_1d(np.asarray(t, dtype=float)), 0, self.T)
        spl = BSpline(self.knots, np.eye(self.M), 3)
        return spl(t, nu=deriv)

    def breakpoints(self):
        return np.linspace(0, self.T, self.n_int + 1)


def _temporal_gram(basis, deriv):
    """``int_0^T B_a^(d) B_b^(d) dt`` by Gauss-Legendre on every breakpoint interval."""
    bp = basis.breakpoints()
    a, b = bp[:-1], bp[1:]
    t = (0.5 * (b - a)[:, None] * (_GL_X[None, :] + 1) + a[:, None]).ravel()
    w = (0.5 * (b - a)[:, None] * _GL_W[None, :]).ravel()
    t = np.clip(t, 0, basis.T * (1 - 1e-15))
    E = basis.evaluate(t, deriv)
    return E.T @ (w[:, None] * E)


def _boundary_samples(metric, n, radius=None):
    R = metric.radius if radius is None else radius
    th = 2 * np.pi * np.arange(n) / n
    y = R * np.stack([np.cos(th), np.sin(th)], -1)
    tang = R * np.stack([-np.sin(th), np.cos(th)], -1)
    speed = np.sqrt(metric.inner(y, tang, tang))
    return th, speed


def _spatial_grams(metric, modes_a, modes_b, n=None):
    """``S0[a, b] = int conj(e_a) e_b dsigma`` and ``S1`` with tangential derivatives."""
    kmax = max(np.max(np.abs(modes_a)), np.max(np.abs(modes_b)))
    n = n or max(64, 8 * (2 * kmax + 1))
    th, speed = _boundary_samples(metric, n)
    ea = np.exp(1j * np.outer(th, modes_a))
    eb = np.exp(1j * np.outer(th, modes_b))
    dth = 2 * np.pi / n
    S0 = ea.conj().T @ ((speed * dth)[:, None] * eb)
    S1 = (np.asarray(modes_a)[:, None] * np.asarray(modes_b)[None, :]) * (
        ea.conj().T @ ((dth / speed)[:, None] * eb))
    return S0, S1


# -- boundary bases and data ----------------------------------------------------

class SpaceTimeBasis:
    """Input basis ``e^{iks} B_m(t)`` for ``|k| <= K`` and ``m < M``.

    Coefficient vectors are ordered ``(k + K) * M + m``.
    """

    def __init__(self, K=16, M=24, T=5.0):
        self.K = int(K)
        self.M = int(M)
        self.T = float(T)
        self.temporal = TemporalSplines(self.M, self.T)
        self.modes = np.arange(-self.K, self.K + 1)

    @property
    def size(self):
        return len(self.modes) * self.M

    def __repr__(self):
        return f"SpaceTimeBasis(K={self.K}, M={self.M}, T={self.T})"

    def evaluate(self, coeffs, theta, t):
        """Boundary values ``(len(t), len(theta))`` of the expansion ``coeffs``."""
        c = np.asarray(coeffs, dtype=complex).reshape(len(self.modes), self.M)
        Bt = self.temporal.evaluate(t)
        E = np.exp(1j * np.outer(self.modes, np.atleast_1d(theta)))
        return Bt @ c.T @ E

    def gram_h21(self, metric):
        """Gram matrix of ``||f||^2_{H^2(0,T;L^2)} + ||f||^2_{L^2(0,T;H^1)}``."""
        S0, S1 = _spatial_grams(metric, self.modes, self.modes)
        T0, T1, T2 = (_temporal_gram(self.temporal, d) for d in range(3))
        G = np.kron(S0, T0 + T1 + T2) + np.kron(S0 + S1, T0)
        return 0.5 * (G + G.conj().T)


class OutputBasis:
    """L^2 basis ``e^{iks} C_m(t)`` with clamped cubic splines ``C_m``."""

    def __init__(self, K_out, n_int, T):
        self.K = int(K_out)
        self.T = float(T)
        self.temporal = ClampedSplines(n_int, T)
        self.M = len(self.temporal)
        self.modes = np.arange(-self.K, self.K + 1)

    @property
    def size(self):
        return len(self.modes) * self.M

    def gram_l2(self, metric):
        S0, _ = _spatial_grams(metric, self.modes, self.modes)
        G = np.kron(S0, _temporal_gram(self.temporal, 0))
        return 0.5 * (G + G.conj().T)

    def evaluate(self, coeffs, theta, t):
        c = np.asarray(coeffs, dtype=complex).reshape(len(self.modes), self.M)
        Ct = self.temporal.evaluate(t)
        E = np.exp(1j * np.outer(self.modes, np.atleast_1d(theta)))
        return Ct @ c.T @ E


@dataclass
class BoundaryData:
    """Dirichlet data given by coefficients over a :class:`SpaceTimeBasis`."""

    basis: SpaceTimeBasis
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex).reshape(self.basis.size)

    def __call__(self, theta, t):
        return self.basis.evaluate(self.coeffs, theta, t)

    def h21_norm(self, metric):
        G = self.basis.gram_h21(metric)
        return float(np.sqrt(max(0.0, np.real(self.coeffs.conj() @ G @ self.coeffs))))

    def is_compatible(self, tol=1e-12):
        """``f(., 0) = f_t(., 0) = 0`` (true by construction of the basis)."""
        c = self.coeffs.reshape(len(self.basis.modes), self.basis.M)
        v0 = self.basis.temporal.evaluate([0.0]) @ c.T
        v1 = self.basis.temporal.evaluate([0.0], 1) @ c.T
        return bool(np.max(np.abs(v0)) <= tol and np.max(np.abs(v1)) <= tol)


# -- Hamiltonians ------------------------------------------------------------------

@dataclass
class Hamiltonian:
    """Spatial operator ``H`` of ``u_t = i H u`` on a polar grid.

    ``conormal`` holds the zeroth-order boundary term added to the Neumann
    trace (``i <A#, nu>`` for the magnetic map, zero otherwise).
    """

    grid: object
    H: sp.csr_matrix
    kind: str
    conormal: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.conormal is None:
            self.conormal = np.zeros(self.grid.n_theta, dtype=complex)

    def apply(self, u):
        return self.H @ u


def _laplacian_part(grid, A=None):
    S = tc.energy_matrix(grid, A)
    W = np.ones(grid.size)
    W[grid.interior] = tc.cell_volumes(grid).ravel()
    return sp.diags(1 / W) @ S


def advection_hamiltonian(X):
    """``H = -Delta + <X, grad>`` (forward advection equation)."""
    grid = X.grid
    H = _laplacian_part(grid) + tc.advection_matrix_c2(X)
    return Hamiltonian(grid, H.tocsr(), "advection")


def adjoint_advection_hamiltonian(X):
    """``H = -Delta - <X, grad> - div X`` (adjoint advection equation)."""
    grid = X.grid
    divX = tc.divergence(X).flat_values
    H = _laplacian_part(grid) - tc.advection_matrix_c2(X) - sp.diags(divX)
    return Hamiltonian(grid, H.tocsr(), "adjoint-advection")


def magnetic_hamiltonian(A, q):
    """``H = -Delta_A + q`` with ``Delta_A`` discretized through edge phases."""
    grid = A.grid
    qv = q.flat_values if q is not None else np.zeros(grid.size)
    H = _laplacian_part(grid, A) + sp.diags(qv)
    nu = grid.boundary_normal
    a = A.components[:, -1, :]
    conormal = 1j * (a[0] * nu[:, 0] + a[1] * nu[:, 1])
    return Hamiltonian(grid, H.tocsr(), "magnetic", conormal)


# -- time stepping --------------------------------------------------------------------

@dataclass
class Evolution:
    """Result of a Crank-Nicolson run.

    ``trace[n]`` is the (magnetic) Neumann trace at ``t[n]`` with shape
    ``(n_theta, ncol)``; ``snapshots`` holds full grid vectors at
    ``snapshot_times``.
    """

    t: np.ndarray
    trace: np.ndarray
    final: np.ndarray
    snapshots: list
    snapshot_times: list
    norms: np.ndarray


def _factor(M):
    try:
        return spla.splu(M.tocsc(), permc_spec="MMD_AT_PLUS_A")
    except RuntimeError as exc:
        raise SolverStepError(f"Crank-Nicolson matrix is singular: {exc}", step=0) from exc


def evolve(ham, boundary, T, n_steps, u0=None, backward=False, snapshot_every=None,
           ncol=None, track_norm=False):
    """Crank-Nicolson integration of ``u_t = i H u`` with Dirichlet data.

    Parameters
    ----------
    ham : Hamiltonian
    boundary : callable
        ``boundary(t) -> (n_theta,)`` or ``(n_theta, ncol)`` Dirichlet values.
    T : float
        Final time; the run covers ``[0, T]``.
    n_steps : int
    u0 : array, optional
        Initial interior+boundary vector (start value at ``t = 0``, or at
        ``t = T`` when ``backward``).  Defaults to zero.
    backward : bool
        Step from ``T`` down to ``0`` (final-value problems).
    """
    grid = ham.grid
    I, B = grid.interior, grid.boundary
    dt = T / n_steps
    times = np.linspace(0.0, T, n_steps + 1)
    order = np.arange(n_steps + 1)[::-1] if backward else np.arange(n_steps + 1)
    h = -dt if backward else dt
    f0 = np.asarray(boundary(times[order[0]]), dtype=complex)
    if ncol is None:
        ncol = 1 if f0.ndim == 1 else f0.shape[1]
    squeeze = f0.ndim == 1
    f0 = f0.reshape(grid.n_theta, -1)
    H = ham.H
    HII = H[I][:, I]
    HIB = H[I][:, B]
    eye = sp.identity(len(I), format="csr")
    lhs = _factor(eye - 0.5j * h * HII)
    rhs_op = (eye + 0.5j * h * HII).tocsr()
    HIB = (0.5j * h * HIB).tocsr()
    N = grid.normal_matrix
    u = np.zeros((grid.size, ncol), dtype=complex)
    if u0 is not None:
        u[:] = np.asarray(u0, dtype=complex).reshape(grid.size, -1)
    u[B] = f0
    trace = np.zeros((n_steps + 1, grid.n_theta, ncol), dtype=complex)
    norms = np.zeros(n_steps + 1) if track_norm else None
    vol = tc.cell_volumes(grid).ravel()[:, None]

    def record(idx):
        trace[idx] = N @ u + ham.conormal[:, None] * u[B]
        if track_norm:
            norms[idx] = float(np.sqrt(np.sum(vol * np.abs(u[I]) ** 2)))

    snaps, snap_t = [], []
    record(order[0])
    if snapshot_every:
        snaps.append(u.copy())
        snap_t.append(times[order[0]])
    f_prev = f0
    for step in range(1, n_steps + 1):
        idx = order[step]
        f_new = np.asarray(boundary(times[idx]), dtype=complex).reshape(grid.n_theta, -1)
        rhs = rhs_op @ u[I] + HIB @ (f_new + f_prev)
        u[I] = lhs.solve(rhs)
        u[B] = f_new
        if not np.all(np.isfinite(u[I])):
            raise SolverStepError("non-finite values in Crank-Nicolson step", step=step)
        record(idx)
        if snapshot_every and step % snapshot_every == 0:
            snaps.append(u.copy())
            snap_t.append(times[idx])
        f_prev = f_new
    final = u[:, 0] if squeeze else u
    if squeeze:
        trace = trace[..., 0]
        snaps = [s[:, 0] for s in snaps]
    return Evolution(times, trace, final, snaps, snap_t, norms)


def _as_boundary_callable(grid, f):
    if isinstance(f, BoundaryData):
        return lambda t: f(grid.theta, t)[0]
    return lambda t: np.asarray(f(grid.theta, t))


def _n_steps(T, dt):
    return max(1, int(round(T / dt)))


def solve_advection(X, f, T, dt, **kw):
    """Forward solve of ``(i d_t - Delta + X) u = 0``, ``u(0) = 0``, ``u = f`` on the boundary."""
    ham = advection_hamiltonian(X)
    return evolve(ham, _as_boundary_callable(X.grid, f), T, _n_steps(T, dt), **kw)


def solve_magnetic(A, q, f, T, dt, **kw):
    """Forward solve of ``(i d_t - Delta_A + q) u = 0``."""
    ham = magnetic_hamiltonian(A, q)
    return evolve(ham, _as_boundary_callable(A.grid, f), T, _n_steps(T, dt), **kw)


def solve_adjoint_advection(X, g, T, dt, **kw):
    """Backward solve of ``(i d_t - Delta - X - div X) v = 0`` with ``v(T) = 0``."""
    ham = adjoint_advection_hamiltonian(X)
    return evolve(ham, _as_boundary_callable(X.grid, g), T, _n_steps(T, dt), backward=True, **kw)


# -- DN matrices ----------------------------------------------------------------------

@dataclass
class DNMatrix:
    """Discrete DN operator from :class:`SpaceTimeBasis` coefficients to
    :class:`OutputBasis` coefficients, with both Gram matrices."""

    matrix: np.ndarray
    gram_in: np.ndarray
    gram_out: np.ndarray
    meta: dict

    def __sub__(self, other):
        self._check_compatible(other)
        return DNMatrix(self.matrix - other.matrix, self.gram_in, self.gram_out,
                        dict(self.meta, kind="difference"))

    def _check_compatible(self, other):
        if self.matrix.shape != other.matrix.shape:
            raise ValueError("DN matrices over different bases")
        for key in ("K", "M", "K_out", "n_int_out", "T", "n_r", "n_theta"):
            if self.meta.get(key) != other.meta.get(key):
                raise ValueError(f"DN matrices differ in {key}")

    def apply(self, coeffs):
        return self.matrix @ np.asarray(coeffs, dtype=complex)

    def pair(self, f_coeffs, h_out_coeffs):
        """``int_Sigma (D f) conj(h) dsigma dt`` with ``h`` in the output basis."""
        d = self.apply(f_coeffs)
        return complex(np.conj(h_out_coeffs) @ (self.gram_out @ d))


def default_output_basis(basis, n_theta):
    K_out = int(min(2 * basis.K, n_theta // 2 - 1))
    return OutputBasis(K_out, 2 * (basis.M + 3), basis.T)


def _dn_from_hamiltonian(ham, basis, dt=None, out_basis=None):
    grid = ham.grid
    T = basis.T
    dt = T / 1024 if dt is None else dt
    sub = max(1, int(np.ceil((T / dt) / (basis.M + 3))))
    n_steps = sub * (basis.M + 3)
    if basis.K > grid.n_theta // 2 - 1:
        raise ValueError("basis K exceeds the angular resolution of the grid")
    out_basis = out_basis or default_output_basis(basis, grid.n_theta)
    th = grid.theta
    E = np.exp(1j * np.outer(th, basis.modes))          # (n_theta, 2K+1)
    B0 = basis.temporal.evaluate(np.linspace(0, T, n_steps + 1))[:, 0]
    times = np.linspace(0, T, n_steps + 1)
    lookup = dict(zip(np.round(times / (T / n_steps)).astype(int), B0))

    def bnd(t):
        n = int(round(t / (T / n_steps)))
        return E * lookup[n]

    ev = evolve(ham, bnd, T, n_steps, ncol=len(basis.modes))
    tr = ev.trace                                         # (N+1, n_theta, 2K+1)
    # project onto output Fourier modes with the boundary arclength density
    speed = grid.boundary_speed
    Eo = np.exp(-1j * np.outer(out_basis.modes, th)) * (speed * grid.dtheta)[None, :]
    F = np.einsum("ot,ntk->kon", Eo, tr)                  # (2K+1, 2K_out+1, N+1)
    w = np.full(n_steps + 1, T / n_steps)
    w[0] = w[-1] = 0.5 * T / n_steps
    Cw = out_basis.temporal.evaluate(times) * w[:, None]  # (N+1, M_out)
    nk, M = len(basis.modes), basis.M
    nko, Mo = len(out_basis.modes), out_basis.M
    P = np.zeros((nko, Mo, nk, M), dtype=complex)
    F2 = F.reshape(nk * nko, n_steps + 1)
    for m in range(M):
        s = m * sub
        blk = (F2[:, : n_steps + 1 - s] @ Cw[s:]).reshape(nk, nko, Mo)
        P[:, :, :, m] = blk.transpose(1, 2, 0)
    P = P.reshape(nko * Mo, nk * M)
    G_out = out_basis.gram_l2(grid.metric)
    G_in = basis.gram_h21(grid.metric)
    try:
        D = sla.cho_solve(sla.cho_factor(G_out), P)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError("output Gram matrix not positive definite") from exc
    meta = {
        "kind": ham.kind, "K": basis.K, "M": basis.M, "T": T, "dt": T / n_steps,
        "n_steps": n_steps, "K_out": out_basis.K, "n_int_out": out_basis.temporal.n_int,
        "n_r": grid.n_r, "n_theta": grid.n_theta, "metric": grid.metric.name,
    }
    return DNMatrix(D, G_in, G_out, meta)


def dn_advection(X, basis, dt=None, out_basis=None):
    """Discrete ``Lambda_X : f -> d_nu u`` for the advection equation."""
    return _dn_from_hamiltonian(advection_hamiltonian(X), basis, dt, out_basis)


def dn_magnetic(A, q, basis, dt=None, out_basis=None):
    """Discrete ``N_{A,q} : f -> (d_nu + i<A#, nu>) u`` for the magnetic equation."""
    return _dn_from_hamiltonian(magnetic_hamiltonian(A, q), basis, dt, out_basis)


def dn_operator_norm(D, tol=1e-8, max_iter=20000, seed=0):
    """Norm of ``D`` as a map ``H^{2,1}(Sigma) -> L^2(Sigma)`` by power iteration.

    Returns ``(norm, info)`` where ``info`` records the basis truncation and
    the iteration count.
    """
    Lin = sla.cholesky(D.gram_in, lower=True)
    Lout = sla.cholesky(D.gram_out, lower=True)
    # B = Lout^H D Lin^{-H}
    B = Lout.conj().T @ sla.solve_triangular(Lin, D.matrix.conj().T, lower=True).conj().T
    info = {"K": D.meta.get("K"), "M": D.meta.get("M"), "K_out": D.meta.get("K_out"),
            "n_int_out": D.meta.get("n_int_out")}
    if not np.any(B):
        info["iterations"] = 0
        return 0.0, info
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(B.shape[1]) + 1j * rng.standard_normal(B.shape[1])
    x /= np.linalg.norm(x)
    BhB = B.conj().T @ B
    lam = 0.0
    for it in range(1, max_iter + 1):
        y = BhB @ x
        lam_new = float(np.real(np.vdot(x, y)))
        ny = np.linalg.norm(y)
        if ny == 0:
            lam_new = 0.0
            break
        x = y / ny
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300):
            lam = lam_new
            break
        lam = lam_new
    info["iterations"] = it
    return float(np.sqrt(max(lam, 0.0))), info


# -- gauge reduction ---------------------------------------------------------------------

def gauge_reduce(X):
    """``A = (i/2) X_flat`` and ``q = <X, X>/4 - div(X)/2``."""
    A = tc.flat(X) * 0.5j
    q = tc.inner(X, X) * 0.25 - tc.divergence(X) * 0.5
    return A, q


def operator_residual(X, u):
    """Pointwise ``H_{A,q} u - L_X u`` with the gauge-reduced ``(A, q)``."""
    A, q = gauge_reduce(X)
    lhs = -tc.magnetic_laplacian(A, u).values + q.values * u.values
    rhs = -tc.laplace_beltrami(u).values + tc.pairing(tc.flat(X), tc.gradient(u)).values
    return lhs - rhs


def verify_gauge_equivalence(X1, X2, basis, dt=None, test_function=None):
    """Compare advection and gauge-reduced magnetic DN maps for two fields.

    Returns a dict with the pointwise residual of the gauge-reduction
    identity, the relative mismatch of each ``Lambda_X`` against its
    ``N_{A,q}``, and both difference norms.
    """
    grid = X1.grid
    if test_function is None:
        def test_function(p):
            return np.sin(2 * p[..., 0]) * np.cos(p[..., 1]) + p[..., 0] * p[..., 1]
    u = tc.ScalarField.from_function(grid, test_function)
    res = max(np.max(np.abs(operator_residual(X, u)[:-1])) for X in (X1, X2))
    L1, L2 = dn_advection(X1, basis, dt), dn_advection(X2, basis, dt)
    A1, q1 = gauge_reduce(X1)
    A2, q2 = gauge_reduce(X2)
    N1, N2 = dn_magnetic(A1, q1, basis, dt), dn_magnetic(A2, q2, basis, dt)
    nL1 = dn_operator_norm(L1)[0]
    dL = dn_operator_norm(L1 - L2)[0]
    dN = dn_operator_norm(N1 - N2)[0]
    return {
        "operator_residual": float(res),
        "map_mismatch": max(dn_operator_norm(L1 - N1)[0], dn_operator_norm(L2 - N2)[0])
        / max(nL1, 1e-300),
        "norm_lambda": nL1,
        "diff_lambda": dL,
        "diff_magnetic": dN,
        "diff_ratio": dN / dL if dL > 0 else (1.0 if dN == 0 else np.inf),
    }


class DNDifference:
    """``N_a - N_b`` applied to sampled Dirichlet data by two forward solves.

    Used by the geometric-optics probes, whose temporal frequency ``lam**2``
    is far beyond the bandwidth of any :class:`SpaceTimeBasis` that a DN
    matrix can afford.
    """

    def __init__(self, ham_a, ham_b):
        if ham_a.grid is not ham_b.grid:
            raise ValueError("both Hamiltonians must live on the same grid")
        self.ham_a = ham_a
        self.ham_b = ham_b
        self.grid = ham_a.grid

    def apply(self, boundary, T, n_steps, ncol=None):
        """Return ``(times, trace_a - trace_b)`` for Dirichlet data ``boundary(t)``."""
        ea = evolve(self.ham_a, boundary, T, n_steps, ncol=ncol)
        eb = evolve(self.ham_b, boundary, T, n_steps, ncol=ncol)
        return ea.t, ea.trace - eb.trace
