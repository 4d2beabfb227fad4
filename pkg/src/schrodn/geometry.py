"""Riemannian metrics on the closed unit disk and their geodesic flow.

The manifold is always the closed disk of radius ``metric.radius`` (default 1)
in a single global chart.  The metric is also defined on the slightly larger
disk of radius ``metric.ext_radius`` which plays the role of the extension
manifold used by the geometric-optics probes.

Index conventions: ``dg[..., i, j, k] = d_k g_ij`` and
``d2g[..., i, j, k, l] = d_k d_l g_ij``; ``christoffel[..., i, j, k]`` is
``Gamma^i_jk``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, MetricError, NonTrappingError, SimplicityError

BISECTION_TOL = 1e-10


def _fd1(func, x, h):
    """Fourth-order central differences of ``func`` at ``x`` along both axes.

    Returns an array with a trailing axis of length 2 (derivative direction).
    """
    out = []
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        d = (-func(x + 2 * e) + 8 * func(x + e) - 8 * func(x - e) + func(x - 2 * e)) / (12 * h)
        out.append(d)
    return np.stack(out, axis=-1)


class MetricField:
    """Riemannian metric on the disk chart.

    Parameters
    ----------
    g : callable
        Maps points ``(..., 2)`` to symmetric matrices ``(..., 2, 2)``.
    dg, d2g : callable, optional
        Analytic first and second derivatives of ``g``.  When omitted they
        are computed by fourth-order central differences with the spacing of
        a ``fd_points``-point grid across the extended chart.
    log_factor : tuple of callables, optional
        ``(lam, grad_lam, hess_lam)`` for a conformal metric
        ``g = exp(2 lam) * I``.  Overrides ``g``, ``dg`` and ``d2g`` and
        enables a cheaper geodesic right-hand side.
    """

    def __init__(self, g=None, dg=None, d2g=None, *, name="custom", radius=1.0,
                 ext_radius=1.1, log_factor=None, flat=False, fd_points=256, params=None):
        self.name = name
        self.params = dict(params or {})
        self.radius = float(radius)
        self.ext_radius = float(ext_radius)
        self.flat = bool(flat)
        self.fd_step = 2.0 * self.ext_radius / fd_points
        self._log_factor = log_factor
        if log_factor is not None:
            lam, glam, hlam = log_factor
            eye = np.eye(2)

            def g(x):
                return np.exp(2 * lam(x))[..., None, None] * eye

            def dg(x):
                e2 = np.exp(2 * lam(x))
                gl = glam(x)
                return 2 * (e2[..., None] * gl)[..., None, None, :] * eye[..., None]

            def d2g(x):
                e2 = np.exp(2 * lam(x))
                gl = glam(x)
                hl = hlam(x)
                t = 4 * gl[..., :, None] * gl[..., None, :] + 2 * hl
                return (e2[..., None, None] * t)[..., None, None, :, :] * eye[..., None, None]

        if g is None:
            raise ValueError("a metric needs g or log_factor")
        self._g = g
        self.analytic = dg is not None
        self._dg = dg if dg is not None else (lambda x: _fd1(self._g, x, self.fd_step))
        if d2g is not None:
            self._d2g = d2g
        elif dg is not None:
            self._d2g = lambda x: _fd1(self._dg, x, self.fd_step)
        else:
            self._d2g = lambda x: _fd1(self._dg, x, self.fd_step)
        # coarse sampling for the trapping guard; computed once, never mutated
        s = np.linspace(-self.ext_radius, self.ext_radius, 33)
        pts = np.stack(np.meshgrid(s, s, indexing="ij"), -1).reshape(-1, 2)
        pts = pts[np.sum(pts ** 2, -1) <= self.ext_radius ** 2]
        eig = np.linalg.eigvalsh(self.g(pts))
        self.scale_max = float(np.sqrt(eig.max()))

    def __repr__(self):
        return f"MetricField({self.name!r}, params={self.params})"

    # -- pointwise tensors -------------------------------------------------
    def g(self, x):
        return np.asarray(self._g(np.asarray(x, dtype=float)), dtype=float)

    def ginv(self, x):
        return np.linalg.inv(self.g(x))

    def det(self, x):
        return np.linalg.det(self.g(x))

    def sqrt_det(self, x):
        return np.sqrt(self.det(x))

    def dg(self, x):
        return np.asarray(self._dg(np.asarray(x, dtype=float)), dtype=float)

    def d2g(self, x):
        return np.asarray(self._d2g(np.asarray(x, dtype=float)), dtype=float)

    def inner(self, x, u, v):
        """``<u, v>_g`` at ``x`` (bilinear, no conjugation)."""
        return np.einsum("...ij,...i,...j->...", self.g(x), u, v)

    def norm(self, x, v):
        return np.sqrt(np.abs(self.inner(x, v, v)))

    def christoffel(self, x):
        x = np.asarray(x, dtype=float)
        gi = self.ginv(x)
        dg = self.dg(x)
        # low[l, j, k] = 1/2 (d_k g_lj + d_j g_lk - d_l g_jk)
        low = 0.5 * (dg + np.swapaxes(dg, -1, -2) - np.einsum("...jkl->...ljk", dg))
        return np.einsum("...il,...ljk->...ijk", gi, low)

    def accel(self, x, v):
        """Geodesic acceleration ``-Gamma^i_jk v^j v^k``."""
        if self.flat:
            return np.zeros_like(v)
        if self._log_factor is not None:
            gl = self._log_factor[1](x)
            gv = np.sum(gl * v, -1)
            vv = np.sum(v * v, -1)
            return -(2 * gv[..., None] * v - vv[..., None] * gl)
        return -np.einsum("...ijk,...j,...k->...i", self.christoffel(x), v, v)

    def diameter_bound(self, radius=None):
        r = self.radius if radius is None else radius
        return 2.0 * r * self.scale_max * np.pi / 2


# -- presets -----------------------------------------------------------------

def _lam_linear(b):
    b = np.asarray(b, dtype=float)
    return (lambda x: x @ b,
            lambda x: np.broadcast_to(b, np.shape(x)).copy(),
            lambda x: np.zeros(np.shape(x)[:-1] + (2, 2)))


def _lam_radial(c):
    return (lambda x: c * np.sum(x * x, -1),
            lambda x: 2 * c * x,
            lambda x: np.broadcast_to(2 * c * np.eye(2), np.shape(x)[:-1] + (2, 2)).copy())


def _lam_sphere(a):
    def lam(x):
        return np.log(2 * a) - np.log1p(a * a * np.sum(x * x, -1))

    def glam(x):
        d = 1 + a * a * np.sum(x * x, -1)
        return -2 * a * a * x / d[..., None]

    def hlam(x):
        d = (1 + a * a * np.sum(x * x, -1))[..., None, None]
        return -2 * a * a * np.eye(2) / d + 4 * a ** 4 * x[..., :, None] * x[..., None, :] / d ** 2

    return lam, glam, hlam


def _lam_bump(amp, width, center):
    c = np.asarray(center, dtype=float)
    w2 = width * width

    def e(x):
        return np.exp(-np.sum((x - c) ** 2, -1) / w2)

    def lam(x):
        return amp * e(x)

    def glam(x):
        return (-2 * amp * e(x) / w2)[..., None] * (x - c)

    def hlam(x):
        d = x - c
        return (amp * e(x))[..., None, None] * (
            4 * d[..., :, None] * d[..., None, :] / w2 ** 2 - 2 * np.eye(2) / w2)

    return lam, glam, hlam


def euclidean(radius=1.0, ext_radius=1.1):
    eye = np.eye(2)
    return MetricField(
        g=lambda x: np.broadcast_to(eye, np.shape(x)[:-1] + (2, 2)).copy(),
        dg=lambda x: np.zeros(np.shape(x)[:-1] + (2, 2, 2)),
        d2g=lambda x: np.zeros(np.shape(x)[:-1] + (2, 2, 2, 2)),
        name="euclidean", radius=radius, ext_radius=ext_radius, flat=True)


def conformal(kind, radius=1.0, ext_radius=1.1, **params):
    """Conformal metric ``exp(2 lam) * I`` with ``lam`` chosen by ``kind``.

    ``linear`` (params ``b``, default ``(1, 0)``), ``radial`` (``c``,
    default ``-0.1``), ``sphere`` (``a``, default ``0.5``; a spherical cap of
    curvature 1) and ``bump`` (``amplitude``, ``width``, ``center``).
    """
    if kind == "linear":
        b = params.get("b", (1.0, 0.0))
        lf = _lam_linear(b)
        used = {"b": list(b)}
    elif kind == "radial":
        c = float(params.get("c", -0.1))
        lf = _lam_radial(c)
        used = {"c": c}
    elif kind == "sphere":
        a = float(params.get("a", 0.5))
        lf = _lam_sphere(a)
        used = {"a": a}
    elif kind == "bump":
        amp = float(params.get("amplitude", 0.1))
        width = float(params.get("width", 0.5))
        center = tuple(params.get("center", (0.0, 0.0)))
        lf = _lam_bump(amp, width, center)
        used = {"amplitude": amp, "width": width, "center": list(center)}
    else:
        raise ValueError(f"unknown conformal metric kind {kind!r}")
    return MetricField(log_factor=lf, name=f"conformal:{kind}", radius=radius,
                       ext_radius=ext_radius, params=used)


def metric_from_preset(name, params=None, radius=1.0, ext_radius=1.1):
    """Build a metric from a preset name used in experiment configs."""
    params = dict(params or {})
    if name == "euclidean":
        return euclidean(radius, ext_radius)
    if name.startswith("conformal:"):
        return conformal(name.split(":", 1)[1], radius, ext_radius, **params)
    if name == "gaussian-bump":
        m = conformal("bump", radius, ext_radius, **params)
        m.name = "gaussian-bump"
        return m
    raise ValueError(f"unknown metric preset {name!r}")


# -- pointwise operations ----------------------------------------------------

def _check_domain(metric, x, radius=None):
    x = np.asarray(x, dtype=float)
    r = metric.ext_radius if radius is None else radius
    if np.any(np.sum(x * x, -1) > r * r * (1 + 1e-9)):
        raise DomainError(f"point outside chart disk of radius {r}")
    return x


def _check_spd(metric, x):
    g = metric.g(x)
    if not np.allclose(g, np.swapaxes(g, -1, -2), atol=1e-12):
        raise MetricError("metric not symmetric")
    if np.any(np.linalg.eigvalsh(g)[..., 0] <= 0):
        raise MetricError("metric not positive definite")


def christoffel(metric, x):
    """Christoffel symbols ``Gamma[..., i, j, k]`` of the Levi-Civita connection."""
    x = _check_domain(metric, x)
    _check_spd(metric, x)
    return metric.christoffel(x)


def gaussian_curvature(metric, x):
    """Gaussian curvature ``R_1212 / det g`` from ``g`` and two derivatives."""
    x = _check_domain(metric, x)
    _check_spd(metric, x)
    g = metric.g(x)
    gi = np.linalg.inv(g)
    dg = metric.dg(x)
    d2g = metric.d2g(x)
    low = 0.5 * (dg + np.swapaxes(dg, -1, -2) - np.einsum("...jkl->...ljk", dg))
    gam = np.einsum("...il,...ljk->...ijk", gi, low)
    # d_m of the lowered symbols: d2g[a, b, c, m] = d_c d_m g_ab
    dlow = 0.5 * (d2g + np.swapaxes(d2g, -2, -3) - np.einsum("...jklm->...ljkm", d2g))
    dgi = -np.einsum("...ia,...abm,...bl->...ilm", gi, dg, gi)
    dgam = (np.einsum("...ilm,...ljk->...ijkm", dgi, low)
            + np.einsum("...il,...ljkm->...ijkm", gi, dlow))
    # R^i_{jkl} = d_k G^i_{lj} - d_l G^i_{kj} + G^i_{km} G^m_{lj} - G^i_{lm} G^m_{kj}
    # only R^i_{212} is needed (0-based j=1, k=0, l=1)
    R = (dgam[..., :, 1, 1, 0] - dgam[..., :, 0, 1, 1]
         + np.einsum("...im,...m->...i", gam[..., :, 0, :], gam[..., :, 1, 1])
         - np.einsum("...im,...m->...i", gam[..., :, 1, :], gam[..., :, 0, 1]))
    r1212 = np.einsum("...i,...i->...", g[..., 0, :], R)
    return r1212 / np.linalg.det(g)


# -- geodesic tracing ----------------------------------------------------------

def _rk4(metric, x, v, h):
    h = np.asarray(h, dtype=float)
    if h.ndim:
        h = h[:, None]
    a1 = metric.accel(x, v)
    x2, v2 = x + 0.5 * h * v, v + 0.5 * h * a1
    a2 = metric.accel(x2, v2)
    x3, v3 = x + 0.5 * h * v2, v + 0.5 * h * a2
    a3 = metric.accel(x3, v3)
    x4, v4 = x + h * v3, v + h * a3
    a4 = metric.accel(x4, v4)
    xn = x + h / 6 * (v + 2 * v2 + 2 * v3 + v4)
    vn = v + h / 6 * (a1 + 2 * a2 + 2 * a3 + a4)
    return xn, vn


def _hermite_mid(x0, v0, x1, v1, h):
    if np.ndim(h):
        h = h[:, None]
    xm = 0.5 * (x0 + x1) + h * (v0 - v1) / 8
    vm = 1.5 * (x1 - x0) / h - 0.25 * (v0 + v1)
    return xm, vm


@dataclass
class TraceResult:
    """Outcome of tracing a batch of geodesics to the boundary.

    ``integrals[m][i]`` is the Simpson quadrature of integrand ``m`` along ray
    ``i``.  With ``record=True`` the quadrature nodes are kept in flat arrays
    indexed by ``node_ray`` so that linear functionals can be assembled as
    sparse matrices.
    """

    exit_time: np.ndarray
    exit_point: np.ndarray
    exit_velocity: np.ndarray
    integrals: list
    node_ray: np.ndarray = None
    node_x: np.ndarray = None
    node_v: np.ndarray = None
    node_t: np.ndarray = None
    node_w: np.ndarray = None


def trace_geodesics(metric, x0, v0, step=1e-3, radius=None, integrands=(), observers=(),
                    record=False, max_length=None):
    """Integrate geodesics from ``(x0, v0)`` until they leave the disk.

    A fixed-step classical RK4 integrator is used; the step that crosses the
    boundary circle is shortened by bisection to ``BISECTION_TOL`` in
    arclength.  Integrands ``f(x, v, t)`` are accumulated with Simpson's rule
    per step, using cubic Hermite midpoints.  Observers ``obs(ids, x, v, t)``
    see every accepted sample.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    v0 = np.atleast_2d(np.asarray(v0, dtype=float))
    n = len(x0)
    R = metric.radius if radius is None else float(radius)
    cap = max_length if max_length is not None else 100 * metric.diameter_bound(R)
    exit_time = np.zeros(n)
    exit_point = x0.copy()
    exit_velocity = v0.copy()
    integrals = [np.zeros(n, dtype=complex) for _ in integrands]
    rec = {"ray": [], "x": [], "v": [], "t": [], "w": []}

    r2 = np.sum(x0 * x0, -1)
    if np.any(r2 > R * R * (1 + 1e-9)):
        raise DomainError("geodesic start point outside the disk")
    on_bdry = r2 >= R * R * (1 - 1e-12)
    outgoing = on_bdry & (np.sum(x0 * v0, -1) >= 0)
    for obs in observers:
        obs(np.arange(n), x0, v0, np.zeros(n))

    ids = np.flatnonzero(~outgoing)
    x, v = x0[ids], v0[ids]
    t = np.zeros(len(ids))
    f0 = [f(x, v, t) for f in integrands]
    n_bis = int(np.ceil(np.log2(step / BISECTION_TOL))) + 1

    def emit(rid, xs, vs, ts, ws):
        rec["ray"].append(rid)
        rec["x"].append(xs)
        rec["v"].append(vs)
        rec["t"].append(ts)
        rec["w"].append(ws)

    while ids.size:
        if t[0] > cap:
            raise NonTrappingError(f"geodesic exceeded arclength cap {cap:.3g}")
        x1, v1 = _rk4(metric, x, v, step)
        crossed = np.sum(x1 * x1, -1) >= R * R
        h = np.full(len(ids), step)
        if np.any(crossed):
            c = np.flatnonzero(crossed)
            lo = np.zeros(len(c))
            hi = np.full(len(c), step)
            xc, vc = x[c], v[c]
            for _ in range(n_bis):
                mid = 0.5 * (lo + hi)
                xm, _ = _rk4(metric, xc, vc, mid)
                out = np.sum(xm * xm, -1) >= R * R
                hi = np.where(out, mid, hi)
                lo = np.where(out, lo, mid)
            s = 0.5 * (lo + hi)
            xe, ve = _rk4(metric, xc, vc, s)
            xe = xe * (R / np.sqrt(np.sum(xe * xe, -1)))[:, None]
            x1[c], v1[c], h[c] = xe, ve, s
        xm, vm = _hermite_mid(x, v, x1, v1, h)
        tm, t1 = t + 0.5 * h, t + h
        for m, f in enumerate(integrands):
            fm = f(xm, vm, tm)
            f1 = f(x1, v1, t1)
            integrals[m][ids] += h / 6 * (f0[m] + 4 * fm + f1)
            f0[m] = f1
        if record:
            emit(ids, x, v, t, h / 6)
            emit(ids, xm, vm, tm, 4 * h / 6)
            emit(ids, x1, v1, t1, h / 6)
        for obs in observers:
            obs(ids, x1, v1, t1)
        if np.any(crossed):
            c = np.flatnonzero(crossed)
            exit_time[ids[c]] = t1[c]
            exit_point[ids[c]] = x1[c]
            exit_velocity[ids[c]] = v1[c]
            keep = ~crossed
            ids, x, v, t = ids[keep], x1[keep], v1[keep], t1[keep]
            f0 = [a[keep] for a in f0]
        else:
            x, v, t = x1, v1, t1

    res = TraceResult(exit_time, exit_point, exit_velocity, integrals)
    if record:
        if rec["ray"]:
            res.node_ray = np.concatenate(rec["ray"])
            res.node_x = np.concatenate(rec["x"])
            res.node_v = np.concatenate(rec["v"])
            res.node_t = np.concatenate(rec["t"])
            res.node_w = np.concatenate(rec["w"])
        else:
            res.node_ray = np.zeros(0, dtype=int)
            res.node_x = res.node_v = np.zeros((0, 2))
            res.node_t = res.node_w = np.zeros(0)
    return res


@dataclass
class Geodesic:
    """Samples ``(t, x, xi)`` of one maximal geodesic and its exit time."""

    t: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    exit_time: float
    y: np.ndarray
    xi0: np.ndarray

    def speed_defect(self, metric):
        return np.max(np.abs(metric.inner(self.x, self.xi, self.xi) - 1.0))


def _unit_check(metric, x, xi, tol=1e-6):
    nrm = metric.norm(x, xi)
    if np.any(np.abs(nrm - 1) > tol):
        raise ValueError("direction is not unit length in the metric")


def shoot_geodesic(metric, x, xi, step=1e-3, radius=None):
    """Integrate the geodesic through ``(x, xi)`` forward to the boundary."""
    x = _check_domain(metric, x, metric.radius if radius is None else radius)
    xi = np.asarray(xi, dtype=float)
    _unit_check(metric, x, xi)
    samples = []

    def obs(ids, xs, vs, ts):
        samples.append((ts[0], xs[0].copy(), vs[0].copy()))

    res = trace_geodesics(metric, x[None], xi[None], step, radius, observers=(obs,))
    t = np.array([s[0] for s in samples])
    xs = np.array([s[1] for s in samples])
    vs = np.array([s[2] for s in samples])
    return Geodesic(t, xs, vs, float(res.exit_time[0]), x.copy(), xi.copy())


def exit_time(metric, y, xi, step=1e-3, radius=None):
    """Forward exit time ``tau_+``; zero on outgoing boundary vectors."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    res = trace_geodesics(metric, y, xi, step, radius)
    return res.exit_time if len(res.exit_time) > 1 else float(res.exit_time[0])


def flow(metric, x, xi, t, step=1e-3):
    """Geodesic flow ``phi_t(x, xi)`` for ``t`` within the disk (no exit check)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(xi, dtype=float))
    t = float(t)
    nsteps = max(1, int(np.ceil(abs(t) / step)))
    h = t / nsteps
    for _ in range(nsteps):
        x, v = _rk4(metric, x, v, h)
    return x, v


def orthonormal_frame(metric, x):
    """A g-orthonormal frame ``(e1, e2)`` at each point (Gram-Schmidt of the axes)."""
    g = metric.g(x)
    e1 = np.zeros(np.shape(x))
    e1[..., 0] = 1 / np.sqrt(g[..., 0, 0])
    e2 = np.zeros(np.shape(x))
    e2[..., 1] = 1.0
    e2 = e2 - (np.einsum("...ij,...i,...j->...", g, e1, e2))[..., None] * e1
    e2 = e2 / np.sqrt(np.einsum("...ij,...i,...j->...", g, e2, e2))[..., None]
    return e1, e2


def _closest_approach_observer(targets):
    targets = np.asarray(targets)
    n = len(targets)
    best = {"d": np.full(n, np.inf), "x": np.zeros((n, 2)), "v": np.zeros((n, 2)),
            "t": np.zeros(n)}

    def obs(ids, xs, vs, ts):
        d = np.sum((xs - targets[ids]) ** 2, -1)
        better = d < best["d"][ids]
        j = ids[better]
        best["d"][j] = d[better]
        best["x"][j] = xs[better]
        best["v"][j] = vs[better]
        best["t"][j] = ts[better]

    return obs, best


def _foot_point(metric, best, targets, step):
    """Refine the closest-approach sample to the Euclidean foot point."""
    x, v, t = best["x"].copy(), best["v"].copy(), best["t"].copy()
    s = np.zeros(len(x))
    for _ in range(6):
        xs, vs = _rk4(metric, x, v, s)
        d = targets - xs
        f = np.sum(d * vs, -1)
        fp = -np.sum(vs * vs, -1)
        s = np.clip(s - f / fp, -2 * step, 2 * step)
    xs, vs = _rk4(metric, x, v, s)
    d = targets - xs
    side = vs[:, 0] * d[:, 1] - vs[:, 1] * d[:, 0]
    return t + s, side, np.sqrt(np.sum(d * d, -1))


def _shoot_side(metric, src, targets, theta, step, radius):
    e1, e2 = orthonormal_frame(metric, src)
    dirs = np.cos(theta)[:, None] * e1 + np.sin(theta)[:, None] * e2
    obs, best = _closest_approach_observer(targets)
    trace_geodesics(metric, src, dirs, step, radius, observers=(obs,))
    return _foot_point(metric, best, targets, step)


def geodesic_distance(metric, x, y, step=2e-3, n_fan=48, tol=1e-13, radius=None):
    """Geodesic distance ``d_g(x, y)`` by two-point shooting from ``y``.

    Directions at ``y`` are bracketed on a fan and refined by an
    Illinois-modified regula falsi on the signed side of ``x`` relative to
    the shot geodesic.  Accepts batches of points.

    Raises
    ------
    SimplicityError
        If no direction brackets the target.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    x, y = np.broadcast_arrays(x, y)
    R = metric.ext_radius if radius is None else radius
    _check_domain(metric, x, R)
    _check_domain(metric, y, R)
    n = len(x)
    out = np.zeros(n)
    todo = np.flatnonzero(np.sum((x - y) ** 2, -1) > 1e-24)
    if todo.size == 0:
        return out if n > 1 else float(out[0])
    xs, ys = x[todo], y[todo]
    m = len(todo)
    fan = 2 * np.pi * np.arange(n_fan) / n_fan
    th = np.tile(fan, m)
    src = np.repeat(ys, n_fan, axis=0)
    tgt = np.repeat(xs, n_fan, axis=0)
    _, side, dist = _shoot_side(metric, src, tgt, th, step, R)
    side = side.reshape(m, n_fan)
    dist = dist.reshape(m, n_fan)
    lo = np.zeros(m)
    hi = np.zeros(m)
    flo = np.zeros(m)
    fhi = np.zeros(m)
    for i in range(m):
        cand = []
        for k in range(n_fan):
            k2 = (k + 1) % n_fan
            if np.sign(side[i, k]) != np.sign(side[i, k2]) or side[i, k] == 0:
                cand.append((max(dist[i, k], dist[i, k2]), k, k2))
        if not cand:
            raise SimplicityError("shooting failed to bracket the target point")
        _, k, k2 = min(cand)
        lo[i] = fan[k]
        hi[i] = fan[k] + 2 * np.pi / n_fan
        flo[i], fhi[i] = side[i, k], side[i, k2]
    # Illinois regula falsi with a bisection guard
    t_best = np.zeros(m)
    d_best = np.full(m, np.inf)
    side_lo_flag = np.zeros(m, dtype=int)
    for it in range(80):
        width = hi - lo
        if np.all(width < tol):
            break
        denom = fhi - flo
        c = np.where(np.abs(denom) > 0, hi - fhi * width / np.where(denom == 0, 1, denom),
                     0.5 * (lo + hi))
        bad = ~((c > lo) & (c < hi)) | (it % 6 == 5)
        c = np.where(bad, 0.5 * (lo + hi), c)
        tc, fc, dc = _shoot_side(metric, ys, xs, c, step, R)
        upd = dc < d_best
        t_best[upd] = tc[upd]
        d_best[upd] = dc[upd]
        same_lo = np.sign(fc) == np.sign(flo)
        # move the bracket end that shares the sign of f(c)
        lo = np.where(same_lo, c, lo)
        flo_new = np.where(same_lo, fc, flo)
        hi = np.where(same_lo, hi, c)
        fhi_new = np.where(same_lo, fhi, fc)
        # Illinois: halve the stale end value when the same end is kept twice
        fhi_new = np.where(same_lo & (side_lo_flag == 1), 0.5 * fhi_new, fhi_new)
        flo_new = np.where(~same_lo & (side_lo_flag == -1), 0.5 * flo_new, flo_new)
        side_lo_flag = np.where(same_lo, 1, -1)
        flo, fhi = flo_new, fhi_new
        if np.all(d_best < 1e-12):
            break
    if np.any(d_best > 1e-6):
        raise SimplicityError("shooting did not converge onto the target point")
    out[todo] = t_best
    return out if n > 1 else float(out[0])


# -- inflow bundle -------------------------------------------------------------

@dataclass
class InflowRay:
    """A point of the inflow boundary ``d_+ SM`` with its quadrature weight."""

    s: float
    alpha: float
    y: np.ndarray
    xi: np.ndarray
    mu: float
    weight: float


@dataclass
class InflowBundle:
    """Tensor grid over boundary angle ``s`` and aperture angle ``alpha``.

    Arrays are flattened in ``(s, alpha)`` order with shape ``(n_s * n_a, ...)``;
    ``weight`` is the quadrature weight of ``dsigma^{2n-2}`` such that
    ``sum(weight * mu * u)`` approximates the integral of ``u`` against the
    measure ``mu dsigma^{2n-2}``.
    """

    s: np.ndarray
    alpha: np.ndarray
    y: np.ndarray
    xi: np.ndarray
    nu: np.ndarray
    mu: np.ndarray
    weight: np.ndarray
    radius: float
    shape: tuple = field(default=(0, 0))

    def __len__(self):
        return len(self.mu)

    def __iter__(self):
        n_a = self.shape[1]
        for i in range(len(self)):
            yield InflowRay(float(self.s[i // n_a]), float(self.alpha[i % n_a]), self.y[i],
                            self.xi[i], float(self.mu[i]), float(self.weight[i]))

    def measure(self):
        return float(np.sum(self.weight * self.mu))


def boundary_frame(metric, s, radius=None):
    """Boundary point, g-unit outward normal and g-unit tangent at angle ``s``."""
    R = metric.radius if radius is None else radius
    s = np.asarray(s, dtype=float)
    y = R * np.stack([np.cos(s), np.sin(s)], -1)
    gi = metric.ginv(y)
    g = metric.g(y)
    dr = y / R
    nu = np.einsum("...ij,...j->...i", gi, dr)
    nu = nu / np.sqrt(np.einsum("...ij,...i,...j->...", g, nu, nu))[..., None]
    tau = R * np.stack([-np.sin(s), np.cos(s)], -1)
    tau = tau - np.einsum("...ij,...i,...j->...", g, nu, tau)[..., None] * nu
    tau = tau / np.sqrt(np.einsum("...ij,...i,...j->...", g, tau, tau))[..., None]
    speed = np.sqrt(np.einsum("...ij,...i,...j->...", g,
                              R * np.stack([-np.sin(s), np.cos(s)], -1),
                              R * np.stack([-np.sin(s), np.cos(s)], -1)))
    return y, nu, tau, speed


def sample_inflow_bundle(metric, n_boundary, n_direction, radius=None):
    """Quadrature grid on the inflow bundle.

    Boundary angles are uniform (periodic trapezoid); aperture angles are cell
    midpoints in ``(-pi/2, pi/2)`` measured from the inward normal.  The
    aperture weights integrate ``mu = cos(alpha)`` exactly over each cell.
    """
    R = metric.radius if radius is None else radius
    s = 2 * np.pi * np.arange(n_boundary) / n_boundary
    edges = np.linspace(-np.pi / 2, np.pi / 2, n_direction + 1)
    alpha = 0.5 * (edges[1:] + edges[:-1])
    mu_cell = np.diff(np.sin(edges))
    y, nu, tau, speed = boundary_frame(metric, s, R)
    S, A = np.meshgrid(np.arange(n_boundary), np.arange(n_direction), indexing="ij")
    S, A = S.ravel(), A.ravel()
    xi = (-np.cos(alpha[A]))[:, None] * nu[S] + np.sin(alpha[A])[:, None] * tau[S]
    mu = np.cos(alpha[A])
    weight = (2 * np.pi / n_boundary) * speed[S] * mu_cell[A] / mu
    return InflowBundle(s, alpha, y[S], xi, nu[S], mu, weight, R, (n_boundary, n_direction))


def k_plus(metric, n_boundary=32, n_direction=32, step=5e-3):
    """Curvature functional ``sup int_0^tau t K^+ dt`` over the sampled bundle.

    Returns ``(value, (n_boundary, n_direction))``; warns when ``>= 0.5``.
    """
    bundle = sample_inflow_bundle(metric, n_boundary, n_direction)

    def integrand(x, v, t):
        return t * np.maximum(0.0, gaussian_curvature(metric, x))

    if metric.flat:
        return 0.0, (n_boundary, n_direction)
    res = trace_geodesics(metric, bundle.y, bundle.xi, step, integrands=(integrand,))
    value = float(np.max(res.integrals[0].real))
    if value >= 0.5:
        import warnings
        warnings.warn(f"k_plus = {value:.3f} >= 1/2; stability hypotheses not met")
    return value, (n_boundary, n_direction)
