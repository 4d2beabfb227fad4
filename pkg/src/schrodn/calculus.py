"""Fields and differential operators on a polar grid over the disk chart.

The grid is node-centred in angle and staggered in radius: ``r_j = (j - 1/2) dr``
for ``j = 1..n_r`` with ``r_{n_r} = R``, so the last ring is the boundary
circle and no node sits on the pole.  Radial stencils that reach past the
pole use the reflection ``(r, theta) -> (-r, theta + pi)``, which is why
``n_theta`` must be even.

All derivative operators are 4th-order finite differences assembled once as
sparse matrices.  Divergence is the discrete ``(1/sqrt g) d_i (sqrt g X^i)``
and the Laplace-Beltrami operator is literally ``divergence @ gradient``, so
``coderivative(exterior_d(u)) == laplace_beltrami(u)`` holds to round-off.

Sign conventions: ``coderivative`` is ``div`` of the raised 1-form, so that
``(delta A, v) = -(A, dv)`` for ``v`` vanishing on the boundary, and the
magnetic Laplacian is ``(nabla + iA)^2 = Delta + 2i<A, grad> + i delta A - <A, A>``.
"""

from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .geometry import euclidean


def fd_weights(offsets, order):
    """Finite-difference weights for derivative ``order`` at 0 on unit-spaced ``offsets``."""
    offsets = np.asarray(offsets, dtype=float)
    n = len(offsets)
    V = np.vander(offsets, n, increasing=True).T
    rhs = np.zeros(n)
    rhs[order] = np.prod(np.arange(1, order + 1))
    return np.linalg.solve(V, rhs)


def _radial_quadrature(n_r, dr):
    """Weights ``w_j`` with ``sum w_j g(r_j) ~ int_0^R g(r) dr`` for odd ``g``.

    Exact integration of local cubic interpolants; the pole side uses the odd
    reflection ``g(-r) = -g(r)``.
    """
    r = (np.arange(n_r) + 0.5) * dr
    # extended nodes: index -1 -> -r_0, -2 -> -r_1 (odd reflection, sign -1)
    w = np.zeros(n_r)
    edges = np.concatenate([[0.0], r])
    for m in range(n_r):
        a, b = edges[m], edges[m + 1]
        # interval [a, b]; choose 4 nodes around it
        if m == 0:
            idx = [-2, -1, 0, 1]
        else:
            lo = min(max(m - 2, -2), n_r - 4)
            idx = list(range(lo, lo + 4))
        nodes = np.array([r[i] if i >= 0 else -r[-i - 1] for i in idx])
        sign = np.array([1.0 if i >= 0 else -1.0 for i in idx])
        src = [i if i >= 0 else -i - 1 for i in idx]
        for q in range(4):
            others = np.delete(nodes, q)
            poly = np.poly(others) / np.prod(nodes[q] - others)
            ip = np.polyint(poly)
            w[src[q]] += sign[q] * (np.polyval(ip, b) - np.polyval(ip, a))
    return w


class PolarGrid:
    """Polar tensor grid on the disk with metric data sampled at the nodes.

    Parameters
    ----------
    n_r, n_theta : int
        Number of radial rings (the last is the boundary) and angular nodes
        (even).
    metric : MetricField, optional
        Defaults to the Euclidean metric.
    """

    def __init__(self, n_r, n_theta, metric=None, radius=None):
        if n_r < 6:
            raise ValueError("n_r must be at least 6")
        if n_theta < 8 or n_theta % 2:
            raise ValueError("n_theta must be even and at least 8")
        self.metric = metric if metric is not None else euclidean()
        self.radius = float(self.metric.radius if radius is None else radius)
        self.n_r = int(n_r)
        self.n_theta = int(n_theta)
        self.shape = (self.n_r, self.n_theta)
        self.size = self.n_r * self.n_theta
        self.dr = self.radius / (self.n_r - 0.5)
        self.dtheta = 2 * np.pi / self.n_theta
        self.r = (np.arange(self.n_r) + 0.5) * self.dr
        self.r[-1] = self.radius
        self.theta = self.dtheta * np.arange(self.n_theta)
        R, TH = np.meshgrid(self.r, self.theta, indexing="ij")
        self.R, self.TH = R, TH
        self.points = np.stack([R * np.cos(TH), R * np.sin(TH)], -1)
        self.g = self.metric.g(self.points)
        self.ginv = np.linalg.inv(self.g)
        self.sqrtg = np.sqrt(np.linalg.det(self.g))
        self.boundary_points = self.points[-1]
        # boundary arclength density |d_theta x|_g
        t = self.radius * np.stack([-np.sin(self.theta), np.cos(self.theta)], -1)
        self.boundary_speed = np.sqrt(np.einsum("kij,ki,kj->k", self.g[-1], t, t))

    def __repr__(self):
        return f"PolarGrid(n_r={self.n_r}, n_theta={self.n_theta}, metric={self.metric.name!r})"

    @property
    def h(self):
        """Largest grid spacing (radial or boundary arc)."""
        return max(self.dr, self.radius * self.dtheta)

    @property
    def interior(self):
        return np.arange(self.size - self.n_theta)

    @property
    def boundary(self):
        return np.arange(self.size - self.n_theta, self.size)

    # -- derivative matrices ---------------------------------------------------
    @cached_property
    def D_r(self):
        n_r, n_t = self.shape
        rows, cols, vals = [], [], []
        for j in range(n_r):
            if j <= n_r - 3:
                offs = [-2, -1, 0, 1, 2]
            elif j == n_r - 2:
                offs = [-3, -2, -1, 0, 1]
            else:
                offs = [-4, -3, -2, -1, 0]
            nodes = np.array([self._r_ext(j + o) for o in offs])
            w = fd_weights((nodes - self.r[j]) / self.dr, 1) / self.dr
            for o, wk in zip(offs, w):
                jj = j + o
                for k in range(n_t):
                    if jj >= 0:
                        rows.append(j * n_t + k)
                        cols.append(jj * n_t + k)
                        vals.append(wk)
                    else:
                        # reflected node: ring -jj-1 at the antipodal angle
                        kk = (k + n_t // 2) % n_t
                        rows.append(j * n_t + k)
                        cols.append((-jj - 1) * n_t + kk)
                        vals.append(wk)
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.size, self.size))

    def _r_ext(self, j):
        if j >= 0:
            return self.r[j]
        return -self.r[-j - 1]

    @cached_property
    def D_theta(self):
        n_r, n_t = self.shape
        w = np.array([1, -8, 0, 8, -1]) / (12 * self.dtheta)
        one = sp.lil_matrix((n_t, n_t))
        for k in range(n_t):
            for o, wk in zip(range(-2, 3), w):
                if wk:
                    one[k, (k + o) % n_t] += wk
        return sp.kron(sp.identity(n_r), one.tocsr(), format="csr")

    @cached_property
    def D(self):
        """Cartesian partial derivatives ``(D_x, D_y)`` as sparse matrices."""
        c = np.cos(self.TH).ravel()
        s = np.sin(self.TH).ravel()
        ir = (1 / self.R).ravel()
        Dr, Dt = self.D_r, self.D_theta
        Dx = sp.diags(c) @ Dr - sp.diags(s * ir) @ Dt
        Dy = sp.diags(s) @ Dr + sp.diags(c * ir) @ Dt
        return Dx.tocsr(), Dy.tocsr()

    @cached_property
    def grad_matrix(self):
        """Sparse blocks ``G[a]`` with ``(grad u)^a = sum_b g^{ab} D_b u``."""
        Dx, Dy = self.D
        gi = self.ginv.reshape(-1, 2, 2)
        return [sp.diags(gi[:, a, 0]) @ Dx + sp.diags(gi[:, a, 1]) @ Dy for a in range(2)]

    @cached_property
    def div_matrix(self):
        """Sparse blocks ``V[a]`` with ``div X = sum_a V[a] X^a``."""
        Dx, Dy = self.D
        sg = self.sqrtg.ravel()
        isg = sp.diags(1 / sg)
        return [(isg @ Dx @ sp.diags(sg)).tocsr(), (isg @ Dy @ sp.diags(sg)).tocsr()]

    @cached_property
    def laplacian_matrix(self):
        G = self.grad_matrix
        V = self.div_matrix
        return (V[0] @ G[0] + V[1] @ G[1]).tocsr()

    # -- quadrature ----------------------------------------------------------
    @cached_property
    def weights(self):
        """Volume quadrature weights ``sqrt(g) r dr dtheta`` (shape ``(n_r, n_theta)``)."""
        wr = _radial_quadrature(self.n_r, self.dr)
        return (wr * self.r)[:, None] * self.dtheta * self.sqrtg

    @cached_property
    def boundary_weights(self):
        return self.boundary_speed * self.dtheta

    def integrate(self, values):
        """``int_M values dv`` by the grid quadrature."""
        return np.sum(self.weights * np.asarray(values))

    def boundary_integrate(self, values):
        return np.sum(self.boundary_weights * np.asarray(values))

    @cached_property
    def boundary_normal(self):
        """Outward g-unit normal vector ``nu^i`` at the boundary ring, shape ``(n_theta, 2)``."""
        y = self.boundary_points
        gi = self.ginv[-1]
        n = np.einsum("kij,kj->ki", gi, y / self.radius)
        nrm = np.sqrt(np.einsum("kij,ki,kj->k", self.g[-1], n, n))
        return n / nrm[:, None]

    @cached_property
    def normal_matrix(self):
        """Sparse ``(n_theta, size)`` map ``u -> d_nu u`` on the boundary ring."""
        Dx, Dy = self.D
        nu = self.boundary_normal
        b = self.boundary
        return (sp.diags(nu[:, 0]) @ Dx[b] + sp.diags(nu[:, 1]) @ Dy[b]).tocsr()


def _as_grid_values(grid, values, ncomp=None):
    v = np.asarray(values, dtype=complex)
    want = grid.shape if ncomp is None else (ncomp,) + grid.shape
    if v.shape != want:
        v = v.reshape(want)
    if not np.all(np.isfinite(v)):
        raise ValueError("field values must be finite")
    return v


class ScalarField:
    """Complex scalar field sampled on a :class:`PolarGrid`."""

    def __init__(self, grid, values):
        self.grid = grid
        self.values = _as_grid_values(grid, values)
        self.values.flags.writeable = False

    @classmethod
    def from_function(cls, grid, f):
        return cls(grid, f(grid.points))

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.shape))

    def __add__(self, other):
        return ScalarField(self.grid, self.values + _vals(other))

    def __sub__(self, other):
        return ScalarField(self.grid, self.values - _vals(other))

    def __mul__(self, c):
        return ScalarField(self.grid, self.values * _vals(c))

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.values)

    @property
    def flat_values(self):
        return self.values.ravel()

    @property
    def boundary_values(self):
        return self.values[-1]

    def l2_norm(self):
        return float(np.sqrt(self.grid.integrate(np.abs(self.values) ** 2)))

    def sup_norm(self):
        return float(np.max(np.abs(self.values)))

    def conj(self):
        return ScalarField(self.grid, np.conj(self.values))


class _OneTensor:
    kind = "tensor"

    def __init__(self, grid, components):
        self.grid = grid
        self.components = _as_grid_values(grid, components, 2)
        self.components.flags.writeable = False

    @classmethod
    def from_function(cls, grid, f):
        """``f(points) -> (..., 2)`` components."""
        c = np.asarray(f(grid.points))
        return cls(grid, np.moveaxis(c, -1, 0))

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros((2,) + grid.shape))

    def __add__(self, other):
        return type(self)(self.grid, self.components + other.components)

    def __sub__(self, other):
        return type(self)(self.grid, self.components - other.components)

    def __mul__(self, c):
        c = _vals(c)
        return type(self)(self.grid, self.components * c)

    __rmul__ = __mul__

    def __neg__(self):
        return type(self)(self.grid, -self.components)

    def sup_norm(self):
        return float(np.max(np.sqrt(np.abs(self.pointwise_sq()))))

    def l2_norm(self):
        """``(int <F, conj F>_g dv)^{1/2}``."""
        return float(np.sqrt(self.grid.integrate(np.real(self.pointwise_sq()))))

    def conj(self):
        return type(self)(self.grid, np.conj(self.components))


def _vals(x):
    if isinstance(x, ScalarField):
        return x.values
    return x


class VectorField(_OneTensor):
    """Complex vector field ``X^i`` on a polar grid (components shape ``(2, n_r, n_theta)``)."""

    kind = "vector"

    def pointwise_sq(self):
        c = self.components
        return np.einsum("ij...,i...,j...->...", np.moveaxis(self.grid.g, (-2, -1), (0, 1)),
                         c, np.conj(c))


class CovectorField(_OneTensor):
    """Complex 1-form ``a_j dx^j`` on a polar grid."""

    kind = "covector"

    def pointwise_sq(self):
        c = self.components
        return np.einsum("ij...,i...,j...->...", np.moveaxis(self.grid.ginv, (-2, -1), (0, 1)),
                         c, np.conj(c))


# -- operators -------------------------------------------------------------------

def _gt(grid, inverse=False):
    m = grid.ginv if inverse else grid.g
    return np.moveaxis(m, (-2, -1), (0, 1))


def flat(X):
    """Lower an index: ``X_j = g_jk X^k``."""
    return CovectorField(X.grid, np.einsum("jk...,k...->j...", _gt(X.grid), X.components))


def sharp(A):
    """Raise an index: ``A^j = g^jk a_k``."""
    return VectorField(A.grid, np.einsum("jk...,k...->j...", _gt(A.grid, True), A.components))


def inner(F1, F2):
    """Pointwise bilinear ``<F1, F2>_g`` (no conjugation) for two vectors or two covectors."""
    if F1.kind != F2.kind:
        raise TypeError("inner product needs two fields of the same kind")
    m = _gt(F1.grid, F1.kind == "covector")
    return ScalarField(F1.grid, np.einsum("ij...,i...,j...->...", m, F1.components,
                                          F2.components))


def pairing(A, X):
    """Pointwise ``A(X) = a_j X^j``."""
    return ScalarField(A.grid, np.einsum("j...,j...->...", A.components, X.components))


def exterior_d(u):
    Dx, Dy = u.grid.D
    v = u.flat_values
    return CovectorField(u.grid, np.stack([Dx @ v, Dy @ v]))


def gradient(u):
    return sharp(exterior_d(u))


def divergence(X):
    V = X.grid.div_matrix
    c = X.components.reshape(2, -1)
    return ScalarField(X.grid, V[0] @ c[0] + V[1] @ c[1])


def coderivative(A):
    """``delta A = (1/sqrt g) d_j (g^{jk} sqrt g a_k)``; equals ``divergence(sharp(A))``."""
    return divergence(sharp(A))


def laplace_beltrami(u):
    return ScalarField(u.grid, u.grid.laplacian_matrix @ u.flat_values)


def magnetic_matrix(A):
    """Sparse matrix of ``Delta_A = Delta + 2i<A#, grad> + i delta A - <A, A>``."""
    grid = A.grid
    Dx, Dy = grid.D
    As = sharp(A).components.reshape(2, -1)
    dA = coderivative(A).flat_values
    aa = inner(A, A).flat_values
    M = (grid.laplacian_matrix + 2j * (sp.diags(As[0]) @ Dx + sp.diags(As[1]) @ Dy)
         + sp.diags(1j * dA - aa))
    return M.tocsr()


def magnetic_laplacian(A, u):
    return ScalarField(u.grid, magnetic_matrix(A) @ u.flat_values)


def boundary_normal(grid):
    """Outward g-unit normal vectors on the boundary ring."""
    return grid.boundary_normal


def normal_derivative(u):
    """``d_nu u`` on the boundary ring (length ``n_theta``)."""
    return u.grid.normal_matrix @ u.flat_values


def advection_matrix(X):
    """Sparse matrix of ``u -> <X, grad u> = X^j d_j u``."""
    Dx, Dy = X.grid.D
    c = X.components.reshape(2, -1)
    return (sp.diags(c[0]) @ Dx + sp.diags(c[1]) @ Dy).tocsr()


def l2_inner(u, w):
    """``(u, w) = int u conj(w) dv``."""
    return complex(u.grid.integrate(u.values * np.conj(w.values)))


def l2_inner_oneform(F1, F2):
    """``(F1, F2) = int <F1, conj F2>_g dv``."""
    return complex(F1.grid.integrate(inner(F1, F2.conj()).values))


# -- conservative second-order discretization for evolution problems -------------
#
# Crank-Nicolson needs a spatial operator that is self-adjoint in some discrete
# inner product; the composed 4th-order operator above is not.  The scheme below
# is the finite-volume energy form on the staggered polar grid: the flux through
# the pole face vanishes because it carries the factor r = 0, and the magnetic
# potential enters through edge phases exp(i int_e A), so real A gives a
# Hermitian matrix.


def _polar_frames(theta):
    rhat = np.stack([np.cos(theta), np.sin(theta)], -1)
    that = np.stack([-np.sin(theta), np.cos(theta)], -1)
    return rhat, that


def cell_volumes(grid):
    """Finite-volume cell areas ``sqrt(g) r dr dtheta`` for the non-boundary rings."""
    return (grid.r[:-1, None] * grid.dr * grid.dtheta) * grid.sqrtg[:-1]


def _edge_phase(grid, A, a, b, kind):
    """Trapezoidal ``int_e A`` from node ``a`` to node ``b`` (flat indices)."""
    if A is None:
        return np.zeros(len(a))
    comp = A.components.reshape(2, -1)
    pts = grid.points.reshape(-1, 2)
    if kind == "r":
        d = pts[b] - pts[a]
        return 0.5 * np.einsum("i...,...i->...", comp[:, a] + comp[:, b], d)
    th = grid.TH.ravel()
    rr = grid.R.ravel()
    _, ta = _polar_frames(th[a])
    _, tb = _polar_frames(th[b])
    fa = rr[a] * np.einsum("i...,...i->...", comp[:, a], ta)
    fb = rr[b] * np.einsum("i...,...i->...", comp[:, b], tb)
    return 0.5 * (fa + fb) * grid.dtheta


def energy_matrix(grid, A=None):
    """Sparse matrix ``S`` of the magnetic Dirichlet form.

    ``conj(v) @ S @ u`` approximates ``int <(grad + iA) u, conj((grad + i conj A) v)> dv``,
    so ``-S / cell_volumes`` is a second-order magnetic Laplacian on the
    interior rings.  Rows and columns cover all nodes (boundary nodes are
    coupled so that Dirichlet data can be lifted).
    """
    n_r, n_t = grid.shape
    metric = grid.metric
    idx = np.arange(grid.size).reshape(grid.shape)
    rows, cols, vals = [], [], []

    def add_edge(a, b, c, ph):
        e = np.exp(1j * ph)
        rows.extend([a, b, a, b])
        cols.extend([a, b, b, a])
        vals.extend([c, c, -c * e, -c / e])

    # radial faces between ring j and j + 1
    j = np.arange(n_r - 1)
    J, K = np.meshgrid(j, np.arange(n_t), indexing="ij")
    rf = 0.5 * (grid.r[J] + grid.r[J + 1])
    th = grid.theta[K]
    rhat, that = _polar_frames(th)
    xf = rf[..., None] * rhat
    gi = metric.ginv(xf)
    sg = np.sqrt(metric.det(xf))
    krr = rf * sg * np.einsum("...i,...ij,...j->...", rhat, gi, rhat)
    a, b = idx[J, K].ravel(), idx[J + 1, K].ravel()
    add_edge(a, b, (krr * grid.dtheta / grid.dr).ravel(), _edge_phase(grid, A, a, b, "r"))

    # angular faces on rings 0..n_r-2
    J, K = np.meshgrid(np.arange(n_r - 1), np.arange(n_t), indexing="ij")
    thf = grid.theta[K] + 0.5 * grid.dtheta
    rhat, that = _polar_frames(thf)
    xf = grid.r[J][..., None] * rhat
    gi = metric.ginv(xf)
    sg = np.sqrt(metric.det(xf))
    ktt = sg * np.einsum("...i,...ij,...j->...", that, gi, that) / grid.r[J]
    a, b = idx[J, K].ravel(), idx[J, (K + 1) % n_t].ravel()
    add_edge(a, b, (ktt * grid.dr / grid.dtheta).ravel(), _edge_phase(grid, A, a, b, "t"))

    # mixed term at cell corners (vanishes identically for conformal metrics)
    J, K = np.meshgrid(np.arange(n_r - 1), np.arange(n_t), indexing="ij")
    rc = grid.r[J] + 0.5 * grid.dr
    thc = grid.theta[K] + 0.5 * grid.dtheta
    rhat, that = _polar_frames(thc)
    xc = rc[..., None] * rhat
    krt = np.sqrt(metric.det(xc)) * np.einsum("...i,...ij,...j->...", rhat, metric.ginv(xc), that)
    if np.max(np.abs(krt)) > 1e-14:
        na, nb = idx[J, K].ravel(), idx[J + 1, K].ravel()
        nc, nd = idx[J, (K + 1) % n_t].ravel(), idx[J + 1, (K + 1) % n_t].ravel()
        p_ab = _edge_phase(grid, A, na, nb, "r")
        p_cd = _edge_phase(grid, A, nc, nd, "r")
        p_ac = _edge_phase(grid, A, na, nc, "t")
        p_bd = _edge_phase(grid, A, nb, nd, "t")
        nodes = [na, nb, nc, nd]

        def coeffs(sign):
            s = sign
            r_ = [-np.exp(-0.5j * s * p_ab), np.exp(0.5j * s * p_ab),
                  -np.exp(-0.5j * s * p_cd), np.exp(0.5j * s * p_cd)]
            r_ = [0.5 * c / grid.dr for c in r_]
            # angular differences c - a and d - b, listed in node order (a, b, c, d)
            t_ = [-np.exp(-0.5j * s * p_ac), -np.exp(-0.5j * s * p_bd),
                  np.exp(0.5j * s * p_ac), np.exp(0.5j * s * p_bd)]
            t_ = [0.5 * c / grid.dtheta for c in t_]
            return r_, t_

        r_u, t_u = coeffs(1)
        r_v, t_v = coeffs(-1)
        w = (krt * grid.dr * grid.dtheta).ravel()
        for i in range(4):
            for l in range(4):
                rows.append(nodes[i])
                cols.append(nodes[l])
                vals.append(w * (t_v[i] * r_u[l] + r_v[i] * t_u[l]))
    rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    return sp.csr_matrix((vals, (rows, cols)), shape=(grid.size, grid.size))


def central_difference_matrices(grid):
    """Second-order central ``(d_r, d_theta)`` on non-boundary rings (pole by reflection)."""
    n_r, n_t = grid.shape
    idx = np.arange(grid.size).reshape(grid.shape)
    J, K = np.meshgrid(np.arange(n_r - 1), np.arange(n_t), indexing="ij")
    row = idx[J, K].ravel()
    up = idx[J + 1, K].ravel()
    down = np.where(J > 0, idx[np.maximum(J - 1, 0), K], idx[0, (K + n_t // 2) % n_t]).ravel()
    c = 1 / (2 * grid.dr)
    Dr = sp.csr_matrix((np.r_[np.full(len(row), c), np.full(len(row), -c)],
                        (np.r_[row, row], np.r_[up, down])), shape=(grid.size, grid.size))
    right = idx[J, (K + 1) % n_t].ravel()
    left = idx[J, (K - 1) % n_t].ravel()
    c = 1 / (2 * grid.dtheta)
    Dt = sp.csr_matrix((np.r_[np.full(len(row), c), np.full(len(row), -c)],
                        (np.r_[row, row], np.r_[right, left])), shape=(grid.size, grid.size))
    return Dr, Dt


def advection_matrix_c2(X):
    """Second-order ``u -> X^j d_j u`` written as ``X^r d_r + X^theta d_theta``."""
    grid = X.grid
    Dr, Dt = central_difference_matrices(grid)
    rhat, that = _polar_frames(grid.TH)
    c = np.moveaxis(X.components, 0, -1)
    xr = np.sum(c * rhat, -1).ravel()
    xt = (np.sum(c * that, -1) / grid.R).ravel()
    return (sp.diags(xr) @ Dr + sp.diags(xt) @ Dt).tocsr()


def _lagrange4(s):
    """Cubic Lagrange weights on nodes -1, 0, 1, 2 at offset ``s`` in [0, 1)."""
    return np.stack([-s * (s - 1) * (s - 2) / 6, (s + 1) * (s - 1) * (s - 2) / 2,
                     -(s + 1) * s * (s - 2) / 2, (s + 1) * s * (s - 1) / 6], -1)


def interpolation_matrix(grid, points):
    """Sparse bicubic interpolation from grid values to ``points``.

    Rows for points outside the disk are zero, which realizes the extension
    by zero used for fields on the enlarged disk.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n_r, n_t = grid.shape
    r = np.hypot(pts[:, 0], pts[:, 1])
    th = np.mod(np.arctan2(pts[:, 1], pts[:, 0]), 2 * np.pi)
    inside = r <= grid.radius * (1 + 1e-12)
    # radial index on the uniform extended lattice r_j = (j + 1/2) dr, j in Z
    sr = r / grid.dr - 0.5
    j0 = np.floor(sr).astype(int)
    j0 = np.minimum(j0, n_r - 3)
    fr = sr - j0
    wr = _lagrange4(fr)                              # nodes j0-1 .. j0+2
    st = th / grid.dtheta
    k0 = np.floor(st).astype(int)
    ft = st - k0
    wt = _lagrange4(ft)
    rows, cols, vals = [], [], []
    pid = np.arange(len(pts))
    for a in range(4):
        j = j0 - 1 + a
        refl = j < 0
        jj = np.where(refl, -j - 1, j)
        shift = np.where(refl, n_t // 2, 0)
        for b in range(4):
            k = (k0 - 1 + b + shift) % n_t
            rows.append(pid)
            cols.append(jj * n_t + k)
            vals.append(wr[:, a] * wt[:, b] * inside)
    rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    keep = vals != 0
    return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(len(pts), grid.size))


def evaluator(field):
    """Point evaluator ``points -> values`` for a field or a plain callable.

    Grid fields are interpolated bicubically and extended by zero outside the
    disk; vector/covector fields return a trailing component axis.
    """
    if callable(field) and not isinstance(field, (ScalarField, _OneTensor)):
        return field
    grid = field.grid
    if isinstance(field, ScalarField):
        v = field.flat_values

        def f(p):
            p = np.asarray(p)
            return (interpolation_matrix(grid, p) @ v).reshape(p.shape[:-1])
        return f
    c = field.components.reshape(2, -1)

    def F(p):
        p = np.asarray(p)
        Mi = interpolation_matrix(grid, p)
        return np.stack([Mi @ c[0], Mi @ c[1]], -1).reshape(p.shape[:-1] + (2,))
    return F
