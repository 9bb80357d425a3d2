"""Differential geometry of two-dimensional conformal metrics.

Every model lives on a planar chart carrying the metric
``lambda(z)^2 (dx^2 + dy^2)``.  Three families are supported:

* ``euclidean``     -- lambda = 1 on the whole plane;
* ``hyperbolic(k)`` -- the disk model with lambda = 2 / (k (1 - |z|^2)),
  constant Gaussian curvature -k^2;
* ``rotsym``        -- a rotationally symmetric factor supplied with
  analytic radial derivatives.

Distances, geodesics and normal frames have closed forms for the first two
families; the rotationally symmetric case falls back to adaptive ODE
integration and two-parameter shooting.  Conformal-factor derivatives are
always analytic, never finite differences, so curvature feeds downstream
constants without differencing noise.

Points are ndarrays of shape (..., 2); all operations are vectorized over
leading axes and are pure (no interior mutation), hence safe to call from
concurrent workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from scipy.optimize import least_squares

from .errors import ChartDomainError, NumericError

__all__ = [
    "RadialProfile",
    "MetricModel",
    "CurvePath",
    "curvature_at",
    "distance",
    "geodesic",
    "geodesic_state",
    "parallel_transport",
    "rot90",
    "rot90_inv",
    "geodesic_circle_chart",
    "chart_circle_metric_data",
    "hyperbolic_polar",
    "gaussian_curvature",
]

_ODE_ATOL = 1e-10
_ODE_RTOL = 1e-10
_UNIT_TOL = 1e-6


def _cx(points):
    """View (..., 2) real coordinates as complex numbers."""
    p = np.asarray(points, dtype=float)
    return p[..., 0] + 1j * p[..., 1]


def _re2(z):
    """Inverse of :func:`_cx`."""
    z = np.asarray(z)
    return np.stack([z.real, z.imag], axis=-1)


def rot90(v):
    """Rotate chart vectors by +90 degrees (counter-clockwise).

    In a conformal metric this is also the metric rotation by +90 degrees.
    """
    v = np.asarray(v, dtype=float)
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def rot90_inv(v):
    """Rotate chart vectors by -90 degrees."""
    v = np.asarray(v, dtype=float)
    return np.stack([v[..., 1], -v[..., 0]], axis=-1)


@dataclass(frozen=True)
class RadialProfile:
    """Rotationally symmetric conformal factor with analytic derivatives.

    ``lam``, ``dlam`` and ``d2lam`` are vectorized callables of the chart
    radius r.  ``rmax`` bounds the chart (np.inf for the whole plane).
    Smoothness at the origin requires dlam(0) = 0.
    """

    lam: Callable
    dlam: Callable
    d2lam: Callable
    rmax: float = math.inf
    name: str = "custom"


@dataclass(frozen=True)
class MetricModel:
    """A 2D conformal Riemannian metric on a planar chart.

    ``n`` is the dimension parameter carried into the barrier-constant
    formulas downstream; the geometry itself is always two-dimensional.
    """

    kind: str
    k: float = 1.0
    profile: RadialProfile | None = None
    n: int = 2

    def __post_init__(self):
        if self.kind not in ("euclidean", "hyperbolic", "rotsym"):
            raise ValueError(f"unknown metric kind {self.kind!r}")
        if self.kind == "hyperbolic" and not self.k > 0:
            raise ValueError("hyperbolic curvature scale k must be positive")
        if self.kind == "rotsym" and self.profile is None:
            raise ValueError("rotsym metric needs a RadialProfile")
        if self.n < 2:
            raise ValueError("dimension parameter n must be >= 2")

    # -- constructors -----------------------------------------------------

    @staticmethod
    def euclidean(n: int = 2) -> "MetricModel":
        return MetricModel(kind="euclidean", n=n)

    @staticmethod
    def hyperbolic(k: float = 1.0, n: int = 2) -> "MetricModel":
        return MetricModel(kind="hyperbolic", k=k, n=n)

    @staticmethod
    def rotsym(profile: RadialProfile, n: int = 2) -> "MetricModel":
        return MetricModel(kind="rotsym", profile=profile, n=n)

    # -- conformal factor and its analytic derivatives --------------------

    def lam(self, points):
        """Conformal factor at chart points, shape (...,)."""
        p = np.asarray(points, dtype=float)
        if self.kind == "euclidean":
            return np.ones(p.shape[:-1])
        r2 = p[..., 0] ** 2 + p[..., 1] ** 2
        if self.kind == "hyperbolic":
            return 2.0 / (self.k * (1.0 - r2))
        return self.profile.lam(np.sqrt(r2))

    def grad_log_lam(self, points):
        """Chart gradient of log(lambda), shape (..., 2)."""
        p = np.asarray(points, dtype=float)
        if self.kind == "euclidean":
            return np.zeros_like(p)
        if self.kind == "hyperbolic":
            r2 = p[..., 0] ** 2 + p[..., 1] ** 2
            fac = (2.0 / (1.0 - r2))[..., None]
            return fac * p
        r = np.sqrt(p[..., 0] ** 2 + p[..., 1] ** 2)
        lam = self.profile.lam(r)
        dl = self.profile.dlam(r)
        with np.errstate(invalid="ignore", divide="ignore"):
            fac = np.where(r > 1e-12, dl / (lam * np.maximum(r, 1e-300)), 0.0)
        return fac[..., None] * p

    def lap_log_lam(self, points):
        """Chart Laplacian of log(lambda), shape (...,)."""
        p = np.asarray(points, dtype=float)
        if self.kind == "euclidean":
            return np.zeros(p.shape[:-1])
        r2 = p[..., 0] ** 2 + p[..., 1] ** 2
        if self.kind == "hyperbolic":
            return 4.0 / (1.0 - r2) ** 2
        r = np.sqrt(r2)
        lam = self.profile.lam(r)
        dl = self.profile.dlam(r)
        d2 = self.profile.d2lam(r)
        # d^2/dr^2 log(lam) + (1/r) d/dr log(lam); at r=0 the radial term
        # tends to the second derivative (dlam(0)=0 for smooth profiles).
        second = (d2 * lam - dl**2) / lam**2
        with np.errstate(invalid="ignore", divide="ignore"):
            radial = np.where(r > 1e-12, dl / (lam * np.maximum(r, 1e-300)), second)
        return second + radial

    # -- chart bookkeeping -------------------------------------------------

    def in_chart(self, points):
        p = np.asarray(points, dtype=float)
        if self.kind == "euclidean":
            return np.ones(p.shape[:-1], dtype=bool)
        r2 = p[..., 0] ** 2 + p[..., 1] ** 2
        if self.kind == "hyperbolic":
            return r2 < 1.0
        return r2 < self.profile.rmax**2

    def require_in_chart(self, points):
        ok = self.in_chart(points)
        if not np.all(ok):
            raise ChartDomainError("point outside the metric chart")

    # -- metric algebra -----------------------------------------------------

    def metric_norm(self, points, vectors):
        """Metric length of chart vectors anchored at ``points``."""
        v = np.asarray(vectors, dtype=float)
        return self.lam(points) * np.hypot(v[..., 0], v[..., 1])

    def unit(self, points, vectors):
        """Rescale chart vectors to metric length one."""
        v = np.asarray(vectors, dtype=float)
        nrm = self.metric_norm(points, v)
        return v / nrm[..., None]

    def ricci_upper_bound(self, radii=None):
        """Upper bound of the Ricci curvature (equals K in 2D).

        For the rotationally symmetric family the bound is a sample
        supremum over ``radii`` (defaults to a dense radial sweep).
        """
        if self.kind == "euclidean":
            return 0.0
        if self.kind == "hyperbolic":
            return -self.k**2
        if radii is None:
            rmax = self.profile.rmax if math.isfinite(self.profile.rmax) else 10.0
            radii = np.linspace(0.0, 0.999 * rmax, 2048)
        pts = np.stack([radii, np.zeros_like(radii)], axis=-1)
        return float(np.max(gaussian_curvature(self, pts)))


def gaussian_curvature(model: MetricModel, points):
    """Gaussian curvature K = -Laplace(log lambda) / lambda^2 at chart points."""
    return -model.lap_log_lam(points) / model.lam(points) ** 2


@dataclass(frozen=True)
class Curvature:
    """Pointwise curvature data: scalar K and the Ricci form (K times metric)."""

    K: float
    ric: np.ndarray  # 2x2 matrix of the Ricci bilinear form in chart coordinates


def curvature_at(model: MetricModel, p) -> Curvature:
    """Curvature at a single chart point."""
    p = np.asarray(p, dtype=float)
    model.require_in_chart(p)
    K = float(gaussian_curvature(model, p))
    lam2 = float(model.lam(p)) ** 2
    return Curvature(K=K, ric=K * lam2 * np.eye(2))


# ---------------------------------------------------------------------------
# distance
# ---------------------------------------------------------------------------


def _hyperbolic_distance_k1(pc, qc):
    d2 = np.abs(pc - qc) ** 2
    den = (1.0 - np.abs(pc) ** 2) * (1.0 - np.abs(qc) ** 2)
    return np.arccosh(1.0 + 2.0 * d2 / den)


def distance(model: MetricModel, p, q):
    """Geodesic distance between chart points (vectorized)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    model.require_in_chart(p)
    model.require_in_chart(q)
    if model.kind == "euclidean":
        d = p - q
        return np.hypot(d[..., 0], d[..., 1])
    if model.kind == "hyperbolic":
        return _hyperbolic_distance_k1(_cx(p), _cx(q)) / model.k
    return _shoot_distance(model, p, q)


def _shoot_distance(model, p, q):
    if p.ndim > 1:
        flat_p = p.reshape(-1, 2)
        flat_q = np.broadcast_to(q, p.shape).reshape(-1, 2)
        return np.array(
            [_shoot_distance(model, a, b) for a, b in zip(flat_p, flat_q)]
        ).reshape(p.shape[:-1])
    delta = q - p
    enorm = float(np.hypot(delta[0], delta[1]))
    if enorm == 0.0:
        return 0.0
    lam_mid = float(model.lam(0.5 * (p + q)))
    theta0 = math.atan2(delta[1], delta[0])
    t0 = enorm * lam_mid

    def residual(x):
        theta, t = x
        v = np.array([math.cos(theta), math.sin(theta)]) / float(model.lam(p))
        end, _ = geodesic_state(model, p, v, abs(t))
        return end - q

    sol = least_squares(residual, x0=[theta0, t0], xtol=1e-14, ftol=1e-14, gtol=1e-14)
    scale = max(1.0, abs(sol.x[1]))
    if not sol.success or np.linalg.norm(sol.fun) > 1e-9 * scale:
        raise NumericError(
            "geodesic shooting did not converge", best={"x": sol.x, "residual": sol.fun}
        )
    return abs(float(sol.x[1]))


# ---------------------------------------------------------------------------
# geodesics
# ---------------------------------------------------------------------------


def geodesic_state(model: MetricModel, p, v, t):
    """Point and chart velocity after metric arc length ``t`` along a geodesic.

    ``v`` must be metric-unit (within 1e-6; it is renormalized exactly).
    Broadcasts over leading axes of ``p``, ``v`` and ``t``.
    """
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    t = np.asarray(t, dtype=float)
    model.require_in_chart(p)
    nrm = model.metric_norm(p, v)
    if np.any(np.abs(nrm - 1.0) > _UNIT_TOL):
        raise ValueError("geodesic direction must be metric-unit")
    v = v / nrm[..., None]

    if model.kind == "euclidean":
        pt = p + t[..., None] * v
        vel = np.broadcast_to(v, pt.shape).copy()
        return pt, vel

    if model.kind == "hyperbolic":
        pc = _cx(p)
        vc = _cx(v)
        # Push the direction to the origin via the disk automorphism
        # T(z) = (z - p) / (1 - conj(p) z); its derivative at p is the
        # positive real number 1 / (1 - |p|^2), so directions map by scaling.
        phase = vc / np.abs(vc)
        tau = model.k * t
        zeta = np.tanh(tau / 2.0) * phase
        one = 1.0 + np.conj(pc) * zeta
        z = (zeta + pc) / one
        dz_dzeta = (1.0 - np.abs(pc) ** 2) / one**2
        dzeta_dt = phase * model.k / (2.0 * np.cosh(tau / 2.0) ** 2)
        vel = dz_dzeta * dzeta_dt
        return _re2(z), _re2(vel)

    return _rotsym_geodesic(model, p, v, t)


def geodesic(model: MetricModel, p, v, t):
    """Point after metric arc length ``t`` along the unit-speed geodesic."""
    return geodesic_state(model, p, v, t)[0]


def _geodesic_rhs(model):
    def rhs(_, y):
        pos = y[:2]
        vel = y[2:]
        g = model.grad_log_lam(pos)
        ux, uy = g[0], g[1]
        vx, vy = vel
        ax = -ux * (vx * vx - vy * vy) - 2.0 * uy * vx * vy
        ay = uy * (vx * vx - vy * vy) - 2.0 * ux * vx * vy
        return [vx, vy, ax, ay]

    return rhs


def _rotsym_geodesic(model, p, v, t):
    if p.ndim > 1 or t.ndim > 0:
        tb = np.broadcast_to(t, p.shape[:-1])
        flat_p = p.reshape(-1, 2)
        flat_v = np.broadcast_to(v, p.shape).reshape(-1, 2)
        flat_t = tb.reshape(-1)
        out = [_rotsym_geodesic(model, a, b, np.asarray(s)) for a, b, s in zip(flat_p, flat_v, flat_t)]
        pts = np.array([o[0] for o in out]).reshape(p.shape)
        vels = np.array([o[1] for o in out]).reshape(p.shape)
        return pts, vels

    tf = float(t)
    if tf == 0.0:
        return p.copy(), v.copy()
    rmax = model.profile.rmax
    events = None
    if math.isfinite(rmax):
        def exit_chart(_, y):
            return y[0] ** 2 + y[1] ** 2 - (rmax * (1.0 - 1e-12)) ** 2

        exit_chart.terminal = True
        exit_chart.direction = 1.0
        events = [exit_chart]
    sol = solve_ivp(
        _geodesic_rhs(model),
        (0.0, tf),
        [p[0], p[1], v[0], v[1]],
        method="RK45",
        rtol=_ODE_RTOL,
        atol=_ODE_ATOL,
        events=events,
        dense_output=False,
    )
    if events is not None and sol.t_events[0].size:
        raise ChartDomainError(
            "geodesic left the chart", exit_parameter=float(sol.t_events[0][0])
        )
    if not sol.success:
        raise NumericError("geodesic integration failed: " + sol.message)
    y = sol.y[:, -1]
    return np.array(y[:2]), np.array(y[2:])


# ---------------------------------------------------------------------------
# curve paths and parallel transport
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CurvePath:
    """A sampled curve: metric arc-length parameters, points, unit tangents."""

    s: np.ndarray
    points: np.ndarray
    tangents: np.ndarray

    def __post_init__(self):
        if len(self.s) != len(self.points) or len(self.s) != len(self.tangents):
            raise ValueError("inconsistent sample counts")
        if np.any(np.diff(self.s) <= 0):
            raise ValueError("arc-length parameters must increase")

    @property
    def length(self) -> float:
        return float(self.s[-1] - self.s[0])

    def reversed(self) -> "CurvePath":
        smax = self.s[-1]
        return CurvePath(
            s=(smax - self.s)[::-1].copy(),
            points=self.points[::-1].copy(),
            tangents=-self.tangents[::-1].copy(),
        )

    @staticmethod
    def from_points(model: MetricModel, points, closed: bool = False) -> "CurvePath":
        """Build a path from dense chart samples, reparametrized by metric length."""
        pts = np.asarray(points, dtype=float)
        if closed and not np.allclose(pts[0], pts[-1]):
            pts = np.vstack([pts, pts[:1]])
        seg = np.diff(pts, axis=0)
        mids = 0.5 * (pts[:-1] + pts[1:])
        ds = model.lam(mids) * np.hypot(seg[:, 0], seg[:, 1])
        s = np.concatenate([[0.0], np.cumsum(ds)])
        spline = CubicSpline(s, pts, axis=0)
        tangents = model.unit(pts, spline(s, 1))
        return CurvePath(s=s, points=pts, tangents=tangents)

    @staticmethod
    def from_geodesic(model: MetricModel, p, v, length: float, nsamples: int = 129) -> "CurvePath":
        s = np.linspace(0.0, length, nsamples)
        pts, vels = geodesic_state(model, p, v, s)
        return CurvePath(s=s, points=pts, tangents=vels)


def geodesic_circle_chart(model: MetricModel, center, radius: float):
    """Chart center and radius of the metric circle about ``center``.

    In the disk model a metric circle is a euclidean circle; its chart
    center lies on the ray from the origin through the metric center.
    For the euclidean model the circle is returned unchanged.
    """
    center = np.asarray(center, dtype=float)
    if radius <= 0:
        raise ValueError("radius must be positive")
    if model.kind == "euclidean":
        return center.copy(), float(radius)
    if model.kind != "hyperbolic":
        raise ValueError("chart circles are available for euclidean and hyperbolic models")
    model.require_in_chart(center)
    rm = model.k * radius  # radius in the unit-curvature normalization
    c_abs = float(np.hypot(center[0], center[1]))
    if c_abs < 1e-15:
        return np.zeros(2), math.tanh(rm / 2.0)
    xi_c = 2.0 * math.atanh(c_abs)
    u1 = math.tanh((xi_c - rm) / 2.0)
    u2 = math.tanh((xi_c + rm) / 2.0)
    direction = center / c_abs
    return direction * (0.5 * (u1 + u2)), 0.5 * (u2 - u1)


def chart_circle_metric_data(model: MetricModel, center, radius: float):
    """Metric center and radius of a chart circle (inverse of the above)."""
    center = np.asarray(center, dtype=float)
    if model.kind == "euclidean":
        return center.copy(), float(radius)
    if model.kind != "hyperbolic":
        raise ValueError("chart circles are available for euclidean and hyperbolic models")
    c_abs = float(np.hypot(center[0], center[1]))
    u1 = c_abs - radius
    u2 = c_abs + radius
    if abs(u1) >= 1.0 or abs(u2) >= 1.0:
        raise ChartDomainError("chart circle is not contained in the disk")
    xi1 = 2.0 * math.atanh(u1)
    xi2 = 2.0 * math.atanh(u2)
    uc = math.tanh(0.25 * (xi1 + xi2))
    rm = 0.5 * (xi2 - xi1)
    if c_abs < 1e-15:
        return np.zeros(2), rm / model.k
    return (center / c_abs) * uc, rm / model.k


def hyperbolic_polar(model: MetricModel, origin, points):
    """Geodesic polar coordinates (r, theta) of ``points`` about ``origin``.

    theta is the direction angle at ``origin`` of the geodesic towards the
    point, measured against the chart axes (conformal, so angles agree).
    """
    if model.kind != "hyperbolic":
        raise ValueError("geodesic polar coordinates require the hyperbolic model")
    origin = np.asarray(origin, dtype=float)
    model.require_in_chart(origin)
    pts = np.asarray(points, dtype=float)
    oc = _cx(origin)
    zc = _cx(pts)
    w = (zc - oc) / (1.0 - np.conj(oc) * zc)
    r = distance(model, np.broadcast_to(origin, pts.shape), pts)
    theta = np.angle(w)
    return r, theta


def parallel_transport(model: MetricModel, v0, path: CurvePath):
    """Parallel-transport ``v0`` from the start to the end of ``path``.

    Solves the transport ODE for the conformal connection; the metric norm
    of the result matches the input to integration accuracy.
    """
    v0 = np.asarray(v0, dtype=float)
    model.require_in_chart(path.points)
    if model.kind == "euclidean":
        return v0.copy()

    pos = CubicSpline(path.s, path.points, axis=0)

    def rhs(s, V):
        z = pos(s)
        dz = pos(s, 1)
        g = model.grad_log_lam(z)
        a = g[0] * dz[0] + g[1] * dz[1]
        b = g[1] * dz[0] - g[0] * dz[1]
        return [-a * V[0] - b * V[1], b * V[0] - a * V[1]]

    sol = solve_ivp(
        rhs,
        (path.s[0], path.s[-1]),
        v0,
        method="RK45",
        rtol=_ODE_RTOL,
        atol=_ODE_ATOL,
    )
    if not sol.success:
        raise NumericError("parallel transport integration failed: " + sol.message)
    return sol.y[:, -1].copy()
