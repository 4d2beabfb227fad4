"""Geometric-optics probes and extraction of the 1-form ray transform.

A probe for the magnetic equation ``(i d_t - Delta_A + q) u = 0`` is

    u(x, t) = alpha(x, 2 lam t) beta(x, 2 lam t) exp(-i lam (psi(x) - lam t)),

with ``psi = d_g(., y)`` for a source ``y`` on the extended boundary, the
amplitude ``alpha~ = rho^{-1/4} phi(t - r) Psi(theta)`` in geodesic polar
coordinates ``(r, theta)`` about ``y`` and the integrating factor
``beta = exp(-i int sigma_A)``.  The conjugate phase (compared with
``exp(+i lam (psi - lam t))``) is the one that makes the ``lam**2`` terms
cancel for ``Delta = div grad``; with it the amplitude obeys
``d_t alpha + <d psi, d alpha> + alpha Delta psi / 2 = 0``.

The boundary pairing of a DN difference ``N_2 - N_1`` against two probes
then approximates ``-i int Psi (exp(-i I_1 A) - 1) d omega`` with
``A = A_2 - A_1``, which :func:`pointwise_phase_estimate` inverts.
"""

import functools
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from . import calculus as tc
from .errors import PhaseUnwrapError, SimplicityError
from .geometry import _rk4, orthonormal_frame, trace_geodesics

# -- profile and window -----------------------------------------------------------


def _bump_raw(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    m = (x > 0) & (x < 1)
    xm = x[m]
    out[m] = np.exp(-1.0 / (xm * (1 - xm)))
    return out


@functools.lru_cache(maxsize=None)
def _bump_scale():
    val, _ = integrate.quad(lambda s: float(_bump_raw(s) ** 2), 0, 1,
                            epsabs=1e-16, epsrel=1e-13, limit=200)
    return 1.0 / np.sqrt(val)


def bump_profile(x, deriv=0):
    """``phi(x) = c exp(-1/(x(1-x)))`` on ``(0, 1)``, zero outside, ``int phi^2 = 1``.

    ``deriv`` in ``{0, 1, 2}``.
    """
    x = np.asarray(x, dtype=float)
    phi = _bump_scale() * _bump_raw(x)
    if deriv == 0:
        return phi
    m = (x > 0) & (x < 1)
    u = np.where(m, x * (1 - x), 1.0)
    du = 1 - 2 * x
    g1 = du / u ** 2
    if deriv == 1:
        return np.where(m, phi * g1, 0.0)
    if deriv == 2:
        g2 = (-2 * u - 2 * du ** 2) / u ** 3
        return np.where(m, phi * (g1 ** 2 + g2), 0.0)
    raise ValueError("deriv must be 0, 1 or 2")


def poisson_kernel(rho, xi, theta, n=2):
    """``Psi_rho(xi, theta) = (1 - rho^2) / (alpha_n |rho xi - theta|^n)`` on the circle.

    ``xi`` and ``theta`` are angles; only ``n = 2`` (the circle ``S_y M``) is
    supported, where ``alpha_2 = 2 pi``.
    """
    if n != 2:
        raise ValueError("only the two-dimensional kernel is implemented")
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    d = np.asarray(theta, dtype=float) - np.asarray(xi, dtype=float)
    return (1 - rho ** 2) / (2 * np.pi * (1 - 2 * rho * np.cos(d) + rho ** 2))


def poisson_kernel_checks(rho_values=(0.5, 0.7, 0.9), n_samples=1000, n_quad=4096, seed=0):
    """Numerical checks of the four kernel properties.

    Returns a dict with the worst normalization error, the number of bound
    violations over ``n_samples`` random ``(rho, xi, theta)``, the fitted
    first-moment constants ``C(rho) = m(rho) / (1 - rho)^(1/4)`` and the
    scaled ``H^2`` norms ``||Psi_rho||^2_{H^2} (1 - rho)^5``.
    """
    th = 2 * np.pi * np.arange(n_quad) / n_quad
    w = 2 * np.pi / n_quad
    rng = np.random.default_rng(seed)
    norm_err, moments, h2 = 0.0, {}, {}
    k = np.fft.fftfreq(n_quad, 1.0 / n_quad)
    for rho in rho_values:
        for xi in (0.0, 1.0, 4.0):
            P = poisson_kernel(rho, xi, th)
            norm_err = max(norm_err, abs(np.sum(P) * w - 1))
        P = poisson_kernel(rho, 0.0, th)
        chord = 2 * np.abs(np.sin(th / 2))
        moments[rho] = float(np.sum(P * chord) * w / (1 - rho) ** 0.25)
        c = np.fft.fft(P) / n_quad
        h2[rho] = float(2 * np.pi * np.sum((1 + k ** 2 + k ** 4) * np.abs(c) ** 2) * (1 - rho) ** 5)
    rho_s = rng.uniform(0.0, 1.0, n_samples)
    rho_s = np.clip(rho_s, 1e-6, 1 - 1e-6)
    xi_s = rng.uniform(0, 2 * np.pi, n_samples)
    th_s = rng.uniform(0, 2 * np.pi, n_samples)
    vals = np.array([poisson_kernel(r, a, b) for r, a, b in zip(rho_s, xi_s, th_s)])
    bound = 2 / (2 * np.pi * (1 - rho_s))
    violations = int(np.sum((vals < 0) | (vals > bound)))
    cs = np.array(list(moments.values()))
    return {
        "normalization_error": float(norm_err),
        "bound_violations": violations,
        "first_moment_constants": moments,
        "first_moment_spread": float(cs.max() / cs.min()),
        "h2_scaled": h2,
    }


# -- geodesic polar coordinates ---------------------------------------------------


@dataclass
class PolarCoordinates:
    """Geodesic polar coordinates of ``points`` about ``y``.

    ``theta`` is measured in the g-orthonormal frame ``(e1, e2)`` at ``y``;
    ``jacobian`` is the g-length of ``d exp_y / d theta`` so that the squared
    volume density is ``rho = jacobian**2``; ``velocity`` is the unit tangent
    of the geodesic at the point (``grad psi``).
    """

    y: np.ndarray
    points: np.ndarray
    r: np.ndarray
    theta: np.ndarray
    jacobian: np.ndarray
    velocity: np.ndarray
    frame: tuple
    n_steps: int

    @property
    def rho(self):
        return self.jacobian ** 2


def _directions(frame, theta):
    e1, e2 = frame
    return np.cos(theta)[:, None] * e1 + np.sin(theta)[:, None] * e2


def _shoot(metric, y, v0, r, n_steps, record=False):
    x = np.broadcast_to(y, v0.shape).copy()
    v = v0.copy()
    h = r / n_steps
    if record:
        xs = np.empty((n_steps + 1,) + x.shape)
        vs = np.empty_like(xs)
        xs[0], vs[0] = x, v
    for k in range(n_steps):
        x, v = _rk4(metric, x, v, h)
        if record:
            xs[k + 1], vs[k + 1] = x, v
    if record:
        return xs, vs
    return x, v


def geodesic_polar_coordinates(metric, y, points, n_steps=128, tol=1e-12, max_iter=40,
                               delta=1e-5):
    """Solve ``exp_y(r theta) = x`` for every point by Newton shooting.

    Each iterate integrates three geodesics (``theta`` and ``theta +- delta``)
    with ``n_steps`` RK4 steps of length ``r / n_steps``.  The Euclidean case
    is closed form.

    Raises
    ------
    SimplicityError
        If Newton fails or the exponential map is degenerate (conjugate point).
    """
    y = np.asarray(y, dtype=float).reshape(2)
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    e1, e2 = orthonormal_frame(metric, y[None])
    frame = (e1[0], e2[0])
    d = pts - y
    gy = metric.g(y[None])[0]
    c1 = d @ gy @ frame[0]
    c2 = d @ gy @ frame[1]
    theta = np.arctan2(c2, c1)
    r = np.hypot(c1, c2)
    at_y = r < 1e-14
    if metric.flat:
        vel = np.where(at_y[:, None], 0.0, d / np.where(at_y, 1.0, r)[:, None])
        return PolarCoordinates(y, pts, r, theta, r.copy(), vel, frame, 0)
    todo = ~at_y
    th, rr, tgt = theta[todo], r[todo], pts[todo]
    m = len(th)
    # coarse integration until the iterates settle, then the requested resolution
    for steps, stage_tol in ((max(8, n_steps // 8), 1e-6), (n_steps, tol)):
        for _ in range(max_iter):
            dirs = _directions(frame, np.concatenate([th, th + delta, th - delta]))
            X, V = _shoot(metric, y, dirs, np.tile(rr, 3), steps)
            F = X[:m] - tgt
            Xt = (X[m:2 * m] - X[2 * m:]) / (2 * delta)
            J = np.stack([V[:m], Xt], -1)
            err = np.max(np.abs(F)) if m else 0.0
            if err < stage_tol:
                break
            try:
                step = np.linalg.solve(J, -F[..., None])[..., 0]
            except np.linalg.LinAlgError as exc:
                raise SimplicityError("singular shooting Jacobian") from exc
            rr = rr + step[:, 0]
            th = th + step[:, 1]
            if np.any(rr <= 0):
                raise SimplicityError("geodesic polar shooting left the chart")
        else:
            raise SimplicityError(
                f"geodesic polar shooting did not converge (residual {err:.2e})")
    jac = np.zeros(len(pts))
    vel = np.zeros_like(pts)
    jac_t = np.sqrt(np.real(metric.inner(X[:m], Xt, Xt)))
    if m and np.any(jac_t <= 1e-8 * rr):
        raise SimplicityError("degenerate exponential map (conjugate point)")
    theta[todo], r[todo], jac[todo], vel[todo] = th, rr, jac_t, V[:m]
    return PolarCoordinates(y, pts, r, theta, jac, vel, frame, n_steps)


def eikonal_distance_field(metric, y, grid, n_steps=128):
    """``psi(x) = d_g(x, y)`` on the nodes of ``grid``."""
    pc = geodesic_polar_coordinates(metric, y, grid.points.reshape(-1, 2), n_steps)
    return tc.ScalarField(grid, pc.r.reshape(grid.shape))


def eikonal_residual(psi, y, cap=0.05):
    """``max | |d psi|_g - 1 |`` over nodes with ``psi >= cap``."""
    dpsi = tc.exterior_d(psi)
    mod = np.sqrt(np.real(dpsi.pointwise_sq()))
    mask = np.real(psi.values) >= cap
    return float(np.max(np.abs(mod[mask] - 1))) if np.any(mask) else 0.0


# -- geodesic fans ----------------------------------------------------------------


@dataclass
class GeodesicFan:
    """Geodesics from ``y`` sampled on a uniform arclength grid ``r``.

    Arrays have shape ``(n_theta, n_r)`` (points/velocities add a trailing 2).
    """

    y: np.ndarray
    theta: np.ndarray
    r: np.ndarray
    x: np.ndarray
    v: np.ndarray
    jacobian: np.ndarray

    @property
    def rho(self):
        return self.jacobian ** 2


def geodesic_fan(metric, y, theta, r_max, n_r=1024, delta=1e-5):
    """Shoot the fan ``exp_y(r theta)``, ``0 <= r <= r_max``, with Jacobi lengths."""
    y = np.asarray(y, dtype=float).reshape(2)
    theta = np.asarray(theta, dtype=float).ravel()
    e1, e2 = orthonormal_frame(metric, y[None])
    frame = (e1[0], e2[0])
    m = len(theta)
    dirs = _directions(frame, np.concatenate([theta, theta + delta, theta - delta]))
    xs, vs = _shoot(metric, y, dirs, np.full(3 * m, r_max), n_r, record=True)
    xs = np.moveaxis(xs, 0, 1)
    vs = np.moveaxis(vs, 0, 1)
    xt = (xs[m:2 * m] - xs[2 * m:]) / (2 * delta)
    jac = np.sqrt(np.real(metric.inner(xs[:m], xt, xt)))
    r = np.linspace(0.0, r_max, n_r + 1)
    return GeodesicFan(y, theta, r, xs[:m], vs[:m], jac)


def _d_dr(f, h, axis=-1):
    """4th-order first derivative on a uniform grid (one-sided at the ends)."""
    f = np.moveaxis(np.asarray(f), axis, -1)
    out = np.empty_like(f)
    out[..., 2:-2] = (f[..., :-4] - 8 * f[..., 1:-3] + 8 * f[..., 3:-1] - f[..., 4:]) / (12 * h)
    for i in (0, 1):
        w = tc.fd_weights(np.arange(5) - i, 1)
        out[..., i] = sum(w[k] * f[..., k] for k in range(5)) / h
        w = tc.fd_weights(i - np.arange(5)[::-1], 1)
        out[..., -1 - i] = sum(w[k] * f[..., -5 + k] for k in range(5)) / h
    return np.moveaxis(out, -1, axis)


# -- amplitude and integrating factor ---------------------------------------------


@dataclass
class TransportAmplitude:
    """``alpha~(r, theta, t) = rho^{-1/4} phi(t - r) Psi(theta)``.

    ``window`` is a callable of the direction angle (``None`` means 1) and
    ``T0`` bounds the time support.
    """

    metric: object
    y: np.ndarray
    window: object = None
    T0: float = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).reshape(2)
        if self.T0 is None:
            self.T0 = 1.0 + self.metric.diameter_bound(self.metric.ext_radius) + 0.1

    def _psi(self, theta):
        if self.window is None:
            return np.ones(np.shape(theta))
        return np.asarray(self.window(theta), dtype=float)

    def tilde(self, r, theta, t, rho, deriv_t=0):
        """Polar-coordinate amplitude (or its ``t`` derivative)."""
        return rho ** -0.25 * bump_profile(np.asarray(t) - r, deriv_t) * self._psi(theta)

    def at(self, pc, s, deriv_s=0):
        """Amplitude on :class:`PolarCoordinates` at rescaled time ``s``."""
        s = np.asarray(s, dtype=float)
        rho = np.where(pc.r > 0, pc.rho, 1.0)
        val = self.tilde(pc.r, pc.theta, s[..., None] if s.ndim else s, rho, deriv_s)
        return np.where(pc.r > 0, val, 0.0)


def transport_amplitude(metric, y, window=None, T0=None):
    """Build the transport amplitude about ``y``; see :class:`TransportAmplitude`."""
    return TransportAmplitude(metric, y, window, T0)


def transport_residual_polar(amp, theta, r_max, t_values, n_r=1024):
    """Sup of ``d_t a + d_r a + a d_r rho / (4 rho)`` over a fan, relative to sup ``|a|``.

    ``rho`` comes from the fan's Jacobi lengths and all ``r`` derivatives are
    4th-order differences; the region ``r < 0.05`` is skipped.
    """
    fan = geodesic_fan(amp.metric, amp.y, theta, r_max, n_r)
    h = fan.r[1] - fan.r[0]
    keep = fan.r >= 0.05
    rho = np.where(fan.r > 0, fan.rho, 1.0)
    drho = _d_dr(rho, h)
    worst, scale = 0.0, 0.0
    for t in np.atleast_1d(t_values):
        a = amp.tilde(fan.r, fan.theta[:, None], t, rho)
        at = amp.tilde(fan.r, fan.theta[:, None], t, rho, deriv_t=1)
        ar = _d_dr(a, h)
        res = at + ar + 0.25 * a * drho / rho
        worst = max(worst, float(np.max(np.abs(res[:, keep]))))
        scale = max(scale, float(np.max(np.abs(a[:, keep]))))
    return worst / scale if scale > 0 else 0.0


def _cumulative_sigma(metric, y, pc, A, n_steps):
    """``S(tau) = int_0^tau sigma_A`` on ``tau_k = k r / n_steps`` along each chart geodesic."""
    n = n_steps + (n_steps % 2)
    dirs = _directions(pc.frame, pc.theta)
    xs, vs = _shoot(metric, y, dirs, pc.r, n, record=True)
    ev = tc.evaluator(A)
    sig = np.sum(ev(xs.reshape(-1, 2)).reshape(xs.shape) * vs, -1)   # (n+1, N)
    h = pc.r / n
    S = np.zeros(sig.shape, dtype=complex)
    # Simpson on pairs of steps, trapezoid-corrected at odd nodes
    S[1:] = np.cumsum(0.5 * (sig[1:] + sig[:-1]), 0)
    S[2::2] = np.cumsum((sig[0:-2:2] + 4 * sig[1:-1:2] + sig[2::2]) / 6.0 * 2, 0)
    S[1::2] = S[0:-1:2] + (5 * sig[0:-1:2] + 8 * sig[1::2] - sig[2::2]) / 12.0
    return (S * h).T, n                                            # (N, n+1)


@dataclass
class IntegratingFactor:
    """``beta~(r, theta, t) = exp(i int_0^t sigma~_A(r - s) ds)`` at chart points.

    ``sigma_A`` vanishes for negative arclength, so
    ``beta = exp(i (S(r) - S(r - t)))`` with ``S`` the running integral of
    ``sigma_A`` from ``y``.
    """

    pc: PolarCoordinates
    S: np.ndarray
    n: int

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        Sr = self.S[:, -1]
        tau = self.pc.r - t                       # broadcast (..., N)
        pos = np.clip(tau / np.where(self.pc.r > 0, self.pc.r, 1.0) * self.n, 0, self.n)
        k = np.minimum(np.floor(pos).astype(int), self.n - 1)
        frac = pos - k
        idx = np.arange(len(self.pc.r))
        Sm = self.S[idx, k] * (1 - frac) + self.S[idx, k + 1] * frac
        Sm = np.where(tau > 0, Sm, 0.0)
        return np.exp(1j * (Sr - Sm))


def integrating_factor(A, y, metric, points=None, pc=None, n_steps=256):
    """Integrating factor of ``A`` along the geodesics from ``y`` to ``points``.

    Returns an :class:`IntegratingFactor`; call it with ``t`` to get
    ``beta(x, t)``.
    """
    if pc is None:
        pc = geodesic_polar_coordinates(metric, y, points, n_steps)
    if A is None:
        S = np.zeros((len(pc.r), 2), dtype=complex)
        return IntegratingFactor(pc, S, 1)
    S, n = _cumulative_sigma(metric, np.asarray(y, dtype=float), pc, A, max(n_steps, 2))
    return IntegratingFactor(pc, S, n)


def integrating_factor_residual(A, y, metric, theta, r_max, t_values, n_r=1024):
    """Sup over a fan of ``|d_t b + d_r b - i sigma b|`` for ``b = beta~``.

    Both derivatives are 4th-order differences on the fan's arclength grid;
    ``t`` is rounded to that grid.
    """
    fan = geodesic_fan(metric, y, theta, r_max, n_r)
    h = fan.r[1] - fan.r[0]
    ev = tc.evaluator(A)
    sig = np.sum(ev(fan.x.reshape(-1, 2)).reshape(fan.x.shape) * fan.v, -1)
    S = np.zeros_like(sig)
    S[:, 1:] = np.cumsum(0.5 * (sig[:, 1:] + sig[:, :-1]), 1) * h

    def beta(shift):
        Sm = np.zeros_like(S)
        if 0 <= shift < S.shape[1]:
            Sm[:, shift:] = S[:, : S.shape[1] - shift]
        elif shift < 0:
            Sm = S
        return np.exp(1j * (S - Sm))

    worst = 0.0
    for t in np.atleast_1d(t_values):
        k = max(int(round(t / h)), 2)
        b = beta(k)
        bt = (beta(k - 2) - 8 * beta(k - 1) + 8 * beta(k + 1) - beta(k + 2)) / (12 * h)
        br = _d_dr(b, h)
        res = bt + br - 1j * sig * b
        worst = max(worst, float(np.max(np.abs(res[:, 2:-2]))))
    return worst


def transport_residual_chart(amp, grid, s_values, pc=None):
    """Sup of ``d_s a + <d psi, d a>_g + a Delta psi / 2`` on ``grid``, relative to sup ``|a|``.

    ``psi`` and ``a`` are grid fields and the derivatives are the grid's
    4th-order operators; ``d_s a`` is analytic.
    """
    if pc is None:
        pc = geodesic_polar_coordinates(amp.metric, amp.y, grid.points.reshape(-1, 2))
    psi = tc.ScalarField(grid, pc.r.reshape(grid.shape))
    dpsi = tc.exterior_d(psi)
    lap = tc.laplace_beltrami(psi).values
    worst, scale = 0.0, 0.0
    for s in np.atleast_1d(s_values):
        a = tc.ScalarField(grid, amp.at(pc, s).reshape(grid.shape))
        a_s = amp.at(pc, s, deriv_s=1).reshape(grid.shape)
        res = a_s + tc.inner(dpsi, tc.exterior_d(a)).values + 0.5 * lap * a.values
        worst = max(worst, float(np.max(np.abs(res))))
        scale = max(scale, float(np.max(np.abs(a.values))))
    return worst / scale if scale > 0 else 0.0


# -- probes -----------------------------------------------------------------------


def boundary_source(metric, angle):
    """Source point ``y`` on the extended boundary circle at polar angle ``angle``."""
    R1 = metric.ext_radius
    return np.array([R1 * np.cos(angle), R1 * np.sin(angle)])


@dataclass
class GOProbe:
    """Geometric-optics probe ``alpha beta exp(-i lam (psi - lam t))`` about ``y``.

    ``A`` is the magnetic potential entering the integrating factor (the
    probe then solves the equation for ``A`` up to ``O(1)`` terms); ``window``
    is ``Psi`` as a function of the direction angle.
    """

    metric: object
    y: np.ndarray
    lam: float
    A: object = None
    window: object = None
    T0: float = None
    n_steps: int = 128
    _charts: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).reshape(2)
        self.amplitude = TransportAmplitude(self.metric, self.y, self.window, self.T0)
        self.T0 = self.amplitude.T0

    def with_window(self, window):
        """Same probe with another direction window; charts are shared."""
        p = GOProbe(self.metric, self.y, self.lam, self.A, window, self.T0, self.n_steps)
        p._charts = self._charts
        return p

    def chart(self, points):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        key = (pts.shape, hash(pts.tobytes()))
        if key not in self._charts:
            pc = geodesic_polar_coordinates(self.metric, self.y, pts, self.n_steps)
            beta = integrating_factor(self.A, self.y, self.metric, pc=pc, n_steps=self.n_steps)
            self._charts[key] = (pc, beta)
        return self._charts[key]

    @staticmethod
    def _factor(beta, s):
        # the probe carries beta of -A: exp(-i (S(r) - S(r - s)))
        return 1.0 / beta(s)

    def evaluate(self, points, t):
        """Ansatz values at ``points`` for times ``t`` (shape ``t.shape + (n_points,)``)."""
        pc, beta = self.chart(points)
        t = np.asarray(t, dtype=float)
        s = 2 * self.lam * t
        ss = s[..., None] if s.ndim else s
        a = self.amplitude.at(pc, s) * self._factor(beta, ss)
        phase = np.exp(-1j * self.lam * (pc.r - self.lam * (t[..., None] if t.ndim else t)))
        return a * phase

    def support_end(self, points):
        """Last time at which the ansatz is nonzero at ``points``."""
        pc, _ = self.chart(points)
        return float((np.max(pc.r) + 1.0) / (2 * self.lam))

    def trace(self, grid, times):
        """Ansatz on the boundary ring, shape ``(len(times), n_theta)``."""
        return self.evaluate(grid.points[-1], times)


def probe_boundary_data(probe, T, basis, grid=None, n_t=2048):
    """Least-squares projection of the probe trace onto a :class:`SpaceTimeBasis`.

    Warns when ``lam`` exceeds the basis bandwidth (``lam > K`` in the
    boundary angle or ``lam**2 > pi (M + 3) / T`` in time).
    """
    from .schrodinger import BoundaryData, _temporal_gram
    metric = probe.metric
    n_theta = max(64, 4 * basis.K + 4)
    th = 2 * np.pi * np.arange(n_theta) / n_theta
    R = metric.radius
    pts = R * np.stack([np.cos(th), np.sin(th)], -1)
    t = np.linspace(0.0, T, n_t + 1)
    vals = probe.evaluate(pts, t)                                    # (n_t+1, n_theta)
    if probe.lam > basis.K or probe.lam ** 2 > np.pi * (basis.M + 3) / T:
        warnings.warn(f"probe frequency lam={probe.lam} exceeds the basis bandwidth "
                      f"(K={basis.K}, M={basis.M}, T={T})", RuntimeWarning, stacklevel=2)
    fk = np.exp(-1j * np.outer(basis.modes, th)) @ vals.T / n_theta  # (2K+1, n_t+1)
    w = np.full(n_t + 1, T / n_t)
    w[0] = w[-1] = 0.5 * T / n_t
    B = basis.temporal.evaluate(t)                                   # (n_t+1, M)
    G = _temporal_gram(basis.temporal, 0)
    rhs = (fk * w) @ B
    coeffs = np.linalg.solve(G, rhs.T).T
    return BoundaryData(basis, coeffs)


# -- correlation and phase extraction ----------------------------------------------


def _time_grid(lam, t_end, phase_step):
    n = int(np.ceil(t_end * lam ** 2 / phase_step))
    n += n % 2
    return t_end, max(n, 2)


def boundary_correlation_density(D, probe_in, probe_out, phase_step=0.05):
    """``G(x) = int_0^T (D f)(x, t) conj(v(x, t)) dt`` on the boundary ring.

    ``D`` is a :class:`~schrodn.schrodinger.DNDifference`; ``f`` is the trace
    of ``probe_in`` and ``v`` the (window-free) trace of ``probe_out``.  The
    time step keeps ``lam**2 dt`` at ``phase_step``.
    """
    grid = D.grid
    bpts = grid.points[-1]
    t_end = max(probe_in.support_end(bpts), probe_out.support_end(bpts))
    T, n = _time_grid(probe_in.lam, t_end, phase_step)
    times = np.linspace(0.0, T, n + 1)
    f = probe_in.trace(grid, times)
    lookup = {k: f[k] for k in range(n + 1)}
    dt = T / n
    _, Df = D.apply(lambda t: lookup[int(round(t / dt))], T, n)
    v = probe_out.trace(grid, times)
    w = np.full(n + 1, dt)
    w[0] = w[-1] = 0.5 * dt
    return np.einsum("t,tx,tx->x", w, Df, np.conj(v))


def correlate_dn_difference(D, probe_in, probe_out, phase_step=0.05, T=None):
    """Boundary pairing ``int_Sigma (D f_lam) conj(v) dsigma dt`` for two probes.

    ``D`` is either a :class:`~schrodn.schrodinger.DNDifference` (direct
    solves on a time grid resolving ``lam**2``) or a DN-matrix difference,
    in which case both traces are projected onto its bases.
    """
    from .schrodinger import DNDifference, OutputBasis, SpaceTimeBasis
    if isinstance(D, DNDifference):
        grid = D.grid
        bare = probe_out.with_window(None)
        G = boundary_correlation_density(D, probe_in, bare, phase_step)
        pc, _ = probe_out.chart(grid.points[-1])
        win = probe_out.amplitude._psi(pc.theta)
        return complex(np.sum(grid.boundary_weights * G * win))
    meta = D.meta
    T = meta["T"] if T is None else T
    basis = SpaceTimeBasis(meta["K"], meta["M"], T)
    out = OutputBasis(meta["K_out"], meta["n_int_out"], T)
    f = probe_boundary_data(probe_in, T, basis)
    n_theta = max(64, 4 * out.K + 4)
    th = 2 * np.pi * np.arange(n_theta) / n_theta
    pts = probe_in.metric.radius * np.stack([np.cos(th), np.sin(th)], -1)
    t = np.linspace(0.0, T, 2049)
    vals = probe_out.evaluate(pts, t)
    from .schrodinger import _temporal_gram
    vk = np.exp(-1j * np.outer(out.modes, th)) @ vals.T / n_theta
    w = np.full(len(t), t[1] - t[0])
    w[0] = w[-1] = 0.5 * (t[1] - t[0])
    C = out.temporal.evaluate(t)
    h = np.linalg.solve(_temporal_gram(out.temporal, 0), ((vk * w) @ C).T).T
    return D.pair(f.coeffs, h.ravel())


def direct_volume_correlation(probe_in, probe_out, A, grid, n_s=400):
    """Leading term ``-int int sigma_A a_in conj(a_out) dv ds`` of the correlation.

    ``a`` are the probe amplitudes (``alpha beta``) at rescaled time ``s`` and
    ``sigma_A = A(grad psi)``; the oracle for :func:`correlate_dn_difference`.
    """
    pts = grid.points.reshape(-1, 2)
    pc, b_in = probe_in.chart(pts)
    _, b_out = probe_out.chart(pts)
    sig = np.sum(tc.evaluator(A)(pts) * pc.velocity, -1)
    s_max = np.max(pc.r) + 1.0
    s = np.linspace(0.0, s_max, n_s + 1)
    w = np.full(n_s + 1, s[1] - s[0])
    w[0] = w[-1] = 0.5 * (s[1] - s[0])
    dens = np.zeros(len(pts), dtype=complex)
    for k in range(0, n_s + 1, 32):
        sk = s[k:k + 32]
        a_in = probe_in.amplitude.at(pc, sk) * probe_in._factor(b_in, sk[:, None])
        a_out = probe_out.amplitude.at(pc, sk) * probe_out._factor(b_out, sk[:, None])
        dens += w[k:k + 32] @ (a_in * np.conj(a_out))
    vals = -sig * dens
    return complex(np.sum(grid.weights.ravel() * vals))


def green_identity_correlation(context, probe_in, probe_out, phase_step=0.05):
    """Volume form ``int_Q ((H_2 - H_1) u_2) conj(v) dx dt`` of the boundary pairing.

    ``u_2`` solves the forward problem for system 2 with the trace of
    ``probe_in`` and ``v`` the final-value problem for system 1 with the
    trace of ``probe_out``.  On the grid this equals
    :func:`correlate_dn_difference` up to time-stepping error; the pair is
    a consistency check of the DN-difference pipeline.
    """
    from .schrodinger import evolve
    D = context.dn_difference()
    grid = context.grid
    bpts = grid.points[-1]
    t_end = max(probe_in.support_end(bpts), probe_out.support_end(bpts))
    T, n = _time_grid(probe_in.lam, t_end, phase_step)
    times = np.linspace(0.0, T, n + 1)
    dt = T / n
    f = probe_in.trace(grid, times)
    h = probe_out.trace(grid, times)
    e2 = evolve(D.ham_a, lambda t: f[int(round(t / dt))], T, n, snapshot_every=1)
    e1 = evolve(D.ham_b, lambda t: h[int(round(t / dt))], T, n, backward=True,
                snapshot_every=1)
    V = e1.snapshots[::-1]
    dH = D.ham_a.H - D.ham_b.H
    W = tc.cell_volumes(grid).ravel()
    I = grid.interior
    w = np.full(n + 1, dt)
    w[0] = w[-1] = 0.5 * dt
    total = 0.0j
    for k in range(n + 1):
        total += w[k] * np.sum(W[I] * (dH @ e2.snapshots[k])[I] * np.conj(V[k][I]))
    return complex(total)


def ansatz_residual_ratios(probe, grid, A, q, lams=(8, 16, 32, 64), s_values=None, ds=1e-4):
    """Relative residual of the probe in ``(i d_t - Delta_A + q) u = 0`` for each ``lam``.

    With ``u = a exp(-i lam (psi - lam t))`` and ``a = alpha beta`` at
    ``s = 2 lam t``, the residual is exactly
    ``lam^2 (|d psi|^2 - 1) a + 2 i lam (a_s + <d psi, d a> + a Delta psi / 2
    + i A(grad psi) a) - Delta_A a + q a`` times the phase.  The three
    ``lam``-independent pieces are evaluated once with the grid operators
    (``a_s`` by a central difference) and the ratio
    ``||residual|| / (lam ||a||)`` over ``M x s_values`` is returned per ``lam``.
    ``probe`` must carry the integrating factor of ``A``.
    """
    pc, beta = probe.chart(grid.points.reshape(-1, 2))
    if s_values is None:
        s_values = np.linspace(0.5, float(np.max(pc.r)) + 0.5, 9)
    psi = tc.ScalarField(grid, pc.r.reshape(grid.shape))
    dpsi = tc.exterior_d(psi)
    eik = tc.inner(dpsi, dpsi).values - 1.0
    lap = tc.laplace_beltrami(psi).values
    sig = tc.pairing(A, tc.sharp(dpsi)).values
    W = grid.weights

    def amp(s):
        return (probe.amplitude.at(pc, s) * probe._factor(beta, s)).reshape(grid.shape)

    norm = 0.0
    parts = []
    for s in np.atleast_1d(s_values):
        a = tc.ScalarField(grid, amp(s))
        a_s = (amp(s + ds) - amp(s - ds)) / (2 * ds)
        p2 = eik * a.values
        p1 = 2j * (a_s + tc.inner(dpsi, tc.exterior_d(a)).values + 0.5 * lap * a.values
                   + 1j * sig * a.values)
        p0 = -tc.magnetic_laplacian(A, a).values + q.values * a.values
        parts.append((p2, p1, p0))
        norm += float(np.sum(W * np.abs(a.values) ** 2))
    out = {}
    for lam in lams:
        tot = sum(float(np.sum(W * np.abs(lam ** 2 * p2 + lam * p1 + p0) ** 2))
                  for p2, p1, p0 in parts)
        out[lam] = float(np.sqrt(tot / norm)) / lam if norm > 0 else 0.0
    return out


@dataclass
class ProbeContext:
    """Two magnetic systems ``(A_1, q_1)`` and ``(A_2, q_2)`` on one grid."""

    grid: object
    A1: object
    q1: object
    A2: object
    q2: object

    def __post_init__(self):
        self._D = None

    @property
    def metric(self):
        return self.grid.metric

    def dn_difference(self):
        """``N_2 - N_1`` as a :class:`~schrodn.schrodinger.DNDifference`."""
        from .schrodinger import DNDifference, magnetic_hamiltonian
        if self._D is None:
            self._D = DNDifference(magnetic_hamiltonian(self.A2, self.q2),
                                   magnetic_hamiltonian(self.A1, self.q1))
        return self._D

    def probes(self, y, lam, n_steps=128):
        probe_in = GOProbe(self.metric, y, lam, self.A2, n_steps=n_steps)
        probe_out = GOProbe(self.metric, y, lam, self.A1.conj(), n_steps=n_steps)
        return probe_in, probe_out


def nyquist_lambdas(grid, lam_sweep=(8, 16, 32, 64), cap=0.25):
    """Members of ``lam_sweep`` with ``lam * h <= cap`` for the grid spacing ``h``."""
    return tuple(lam for lam in lam_sweep if lam * grid.h <= cap)


@dataclass
class PhaseEstimate:
    """Estimated ``I_1 A(y, xi)`` with the sweep table ``{(lam, rho): value}``."""

    value: complex
    lam: float
    rho: float
    residual: float
    table: dict


def _unwrap(C):
    """``I = i log(1 + i C)`` from a correlation ``C``."""
    z = 1 + 1j * C
    if abs(z) < 0.1:
        raise PhaseUnwrapError(f"|1 + estimate| = {abs(z):.3f} < 0.1; field too large "
                               "for the linearized probe regime")
    return 1j * np.log(z)


def _select(table, lams, rhos):
    """Sweep point minimizing the spread to its neighbours in ``lam`` and ``rho``."""
    best = None
    for i, lam in enumerate(lams):
        for j, rho in enumerate(rhos):
            v = table[(lam, rho)]
            res = 0.0
            if len(lams) > 1:
                i2 = i + 1 if i + 1 < len(lams) else i - 1
                res += abs(v - table[(lams[i2], rho)])
            if len(rhos) > 1:
                j2 = j + 1 if j + 1 < len(rhos) else j - 1
                res += abs(v - table[(lam, rhos[j2])])
            if best is None or res < best[0] - 1e-15:
                best = (res, lam, rho)
    return best


def correlation_tables(context, y, xis, lam_sweep=(8, 16, 32, 64), rho_sweep=(0.5, 0.7, 0.9),
                       phase_step=0.05, n_steps=128):
    """Windowed correlations ``{(lam, rho): C}`` for each direction in ``xis``.

    One pair of solves per ``lam`` serves all windows ``Psi_rho(xi, .)``
    because the window only enters the (unsolved) adjoint probe.  Only the
    members of ``lam_sweep`` passing the Nyquist guard are used.
    """
    grid = context.grid
    lams = nyquist_lambdas(grid, lam_sweep)
    if not lams:
        raise ValueError(f"no lam in {lam_sweep} satisfies lam * h <= 0.25 (h = {grid.h:.4f})")
    D = context.dn_difference()
    bpts = grid.points[-1]
    bw = grid.boundary_weights
    tables = [dict() for _ in xis]
    for lam in lams:
        p_in, p_out = context.probes(y, lam, n_steps)
        G = boundary_correlation_density(D, p_in, p_out, phase_step)
        pc, _ = p_out.chart(bpts)
        for k, xi in enumerate(xis):
            for rho in rho_sweep:
                tables[k][(lam, rho)] = complex(np.sum(bw * G * poisson_kernel(rho, xi, pc.theta)))
    return lams, tables


def phase_estimates(context, y, xis, lam_sweep=(8, 16, 32, 64), rho_sweep=(0.5, 0.7, 0.9),
                    phase_step=0.05, n_steps=128, on_fail="raise"):
    """:class:`PhaseEstimate` for every direction ``xi`` in ``xis`` at one source ``y``.

    With ``on_fail="nan"`` a direction whose correlation cannot be unwrapped
    gets a ``nan`` value instead of raising :class:`PhaseUnwrapError`.
    """
    lams, tables = correlation_tables(context, y, xis, lam_sweep, rho_sweep, phase_step,
                                      n_steps)
    out = []
    for tab in tables:
        try:
            est = {key: _unwrap(C) for key, C in tab.items()}
        except PhaseUnwrapError:
            if on_fail != "nan":
                raise
            out.append(PhaseEstimate(complex(np.nan, np.nan), np.nan, np.nan, np.inf, tab))
            continue
        res, lam, rho = _select(est, lams, tuple(rho_sweep))
        out.append(PhaseEstimate(est[(lam, rho)], lam, rho, res, est))
    return out


def pointwise_phase_estimate(context, y, xi, lam_sweep=(8, 16, 32, 64),
                             rho_sweep=(0.5, 0.7, 0.9), phase_step=0.05):
    """Estimate ``I_1(A_2 - A_1)(y, xi)`` from the DN difference of ``context``.

    For each ``(lam, rho)`` the correlation with window ``Psi_rho(xi, .)``
    estimates ``int Psi (exp(-i I_1 A) - 1) d omega``; the complex log of
    one plus it is the phase.  The reported value is the sweep point with
    the smallest spread to its neighbours, ties going to smaller ``lam``.

    Raises
    ------
    PhaseUnwrapError
        If ``|1 + estimate| < 0.1``.
    """
    return phase_estimates(context, y, [xi], lam_sweep, rho_sweep, phase_step)[0]


def direct_ray_transform(A, metric, y, xi, step=1e-3):
    """``I_1 A`` along the geodesic from ``y`` in frame direction ``xi`` (to exit from ``M_1``)."""
    y = np.asarray(y, dtype=float).reshape(2)
    e1, e2 = orthonormal_frame(metric, y[None])
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    v0 = np.cos(xi)[:, None] * e1 + np.sin(xi)[:, None] * e2
    ev = tc.evaluator(A)
    res = trace_geodesics(metric, np.repeat(y[None], len(xi), 0), v0, step,
                          radius=metric.ext_radius,
                          integrands=(lambda p, v, t: np.sum(ev(p) * v, -1),))
    return res.integrals[0]
