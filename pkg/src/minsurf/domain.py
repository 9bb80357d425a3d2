"""Boundary curves, tube coordinates and boundary-data norms.

A domain is described by closed boundary curves, each flagged with the side
on which the domain lies.  Components are reparametrized by metric arc
length; the inward metric-unit normal ``eta`` is the +90 degree rotation of
the unit tangent, which fixes the parametrization direction.  Curvature of
the boundary with respect to ``eta`` uses the conformal-change formula

    H = (k_e - <grad log lambda, m>) / lambda,

where ``k_e`` is the chart (euclidean) signed curvature and ``m`` the chart
unit normal in the direction of ``eta``; the sign convention makes H > 0
when the curve bends toward the domain.

All objects are immutable after construction and every query is pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize_scalar

from .errors import DomainError, ValidationError
from .geometry import (
    MetricModel,
    chart_circle_metric_data,
    distance,
    geodesic_state,
    rot90,
    rot90_inv,
)

__all__ = [
    "BoundaryComponent",
    "DomainSpec",
    "BoundaryData",
    "DataNorms",
    "BoundaryPoint",
    "TubeChart",
    "TubeBand",
    "annulus",
    "disk",
    "geodesic_disk_domain",
    "from_boundary_samples",
    "boundary_geometry",
    "boundary_data_norms",
    "h_inf",
    "tube_radius",
    "distance_to_boundary",
    "build_tube",
]

_ARC_TABLE_SIZE = 4096
_GAUSS_NODES, _GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(7)


# ---------------------------------------------------------------------------
# parametric curves (chart coordinates, parameter tau in [0, 1))
# ---------------------------------------------------------------------------


class _Curve:
    """Closed parametric chart curve with analytic tau-derivatives."""

    def pos(self, tau):
        raise NotImplementedError

    def vel(self, tau):
        raise NotImplementedError

    def acc(self, tau):
        raise NotImplementedError


@dataclass(frozen=True)
class _CircleCurve(_Curve):
    center: tuple
    radius: float
    ccw: bool = True

    def _angle(self, tau):
        sign = 1.0 if self.ccw else -1.0
        return sign * 2.0 * np.pi * np.asarray(tau, dtype=float)

    def pos(self, tau):
        th = self._angle(tau)
        c = np.asarray(self.center, dtype=float)
        return c + self.radius * np.stack([np.cos(th), np.sin(th)], axis=-1)

    def vel(self, tau):
        th = self._angle(tau)
        sign = 1.0 if self.ccw else -1.0
        fac = sign * 2.0 * np.pi * self.radius
        return fac * np.stack([-np.sin(th), np.cos(th)], axis=-1)

    def acc(self, tau):
        th = self._angle(tau)
        fac = (2.0 * np.pi) ** 2 * self.radius
        return -fac * np.stack([np.cos(th), np.sin(th)], axis=-1)


class _SplineCurve(_Curve):
    """Periodic cubic spline through chart samples."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 8:
            raise ValueError("need at least 8 planar samples")
        if np.allclose(pts[0], pts[-1]):
            pts = pts[:-1]
        closed = np.vstack([pts, pts[:1]])
        tau = np.linspace(0.0, 1.0, len(closed))
        self._spline = CubicSpline(tau, closed, axis=0, bc_type="periodic")

    def pos(self, tau):
        return self._spline(np.mod(tau, 1.0))

    def vel(self, tau):
        return self._spline(np.mod(tau, 1.0), 1)

    def acc(self, tau):
        return self._spline(np.mod(tau, 1.0), 2)


@dataclass(frozen=True)
class _ReversedCurve(_Curve):
    base: _Curve

    def pos(self, tau):
        return self.base.pos(1.0 - np.asarray(tau, dtype=float))

    def vel(self, tau):
        return -self.base.vel(1.0 - np.asarray(tau, dtype=float))

    def acc(self, tau):
        return self.base.acc(1.0 - np.asarray(tau, dtype=float))


def _curve_is_ccw(curve: _Curve) -> bool:
    if isinstance(curve, _CircleCurve):
        return curve.ccw
    if isinstance(curve, _ReversedCurve):
        return not _curve_is_ccw(curve.base)
    tau = np.linspace(0.0, 1.0, 512, endpoint=False)
    p = curve.pos(tau)
    v = curve.vel(tau)
    area2 = np.sum(p[:, 0] * v[:, 1] - p[:, 1] * v[:, 0]) / 512.0
    return area2 > 0


# ---------------------------------------------------------------------------
# boundary components
# ---------------------------------------------------------------------------


class BoundaryComponent:
    """One closed boundary curve, reparametrized by metric arc length.

    ``omega_inside`` records whether the domain lies on the euclidean-bounded
    side of the curve in the chart.  The stored curve is oriented so that the
    +90 degree rotation of the tangent is the inward normal.
    """

    def __init__(self, model: MetricModel, curve: _Curve, omega_inside: bool):
        self.model = model
        self.omega_inside = bool(omega_inside)
        want_ccw = self.omega_inside
        if _curve_is_ccw(curve) != want_ccw:
            curve = _ReversedCurve(curve)
        self.curve = curve
        self._build_arclength()
        self._circle_data()

    # -- construction helpers ---------------------------------------------

    def _build_arclength(self):
        m = _ARC_TABLE_SIZE
        edges = np.linspace(0.0, 1.0, m + 1)
        half = 0.5 / m
        mid = edges[:-1, None] + half * (1.0 + _GAUSS_NODES)[None, :]
        q = mid.reshape(-1)
        p = self.curve.pos(q)
        v = self.curve.vel(q)
        speed = (self.model.lam(p) * np.hypot(v[..., 0], v[..., 1])).reshape(m, -1)
        seg = half * speed @ _GAUSS_WEIGHTS
        s_table = np.concatenate([[0.0], np.cumsum(seg)])
        self.length = float(s_table[-1])
        self._tau_table = edges
        self._s_table = s_table
        speeds = seg * m
        self._uniform_speed = float(np.ptp(speeds)) <= 1e-12 * float(np.max(speeds))
        if not self._uniform_speed:
            self._s_of_tau = CubicSpline(edges, s_table)
            self._tau_of_s = CubicSpline(s_table, edges)
        # dense scan cache for nearest-point searches
        tau_scan = np.linspace(0.0, 1.0, 1024, endpoint=False)
        self._scan_tau = tau_scan
        self._scan_points = self.curve.pos(tau_scan)

    def _circle_data(self):
        self._is_circle = isinstance(self.curve, _CircleCurve) or (
            isinstance(self.curve, _ReversedCurve) and isinstance(self.curve.base, _CircleCurve)
        )
        if not self._is_circle:
            return
        base = self.curve if isinstance(self.curve, _CircleCurve) else self.curve.base
        self._chart_center = np.asarray(base.center, dtype=float)
        self._chart_radius = float(base.radius)
        if self.model.kind in ("euclidean", "hyperbolic"):
            self._metric_center, self._metric_radius = chart_circle_metric_data(
                self.model, self._chart_center, self._chart_radius
            )
        else:
            self._is_circle = False

    # -- parameter maps -----------------------------------------------------

    def tau_of_s(self, s):
        s = np.mod(np.asarray(s, dtype=float), self.length)
        if self._uniform_speed:
            return s / self.length
        return np.mod(self._tau_of_s(s), 1.0)

    def s_of_tau(self, tau):
        tau = np.mod(np.asarray(tau, dtype=float), 1.0)
        if self._uniform_speed:
            return tau * self.length
        return self._s_of_tau(tau)

    # -- geometric queries (vectorized over s) ------------------------------

    def point_at(self, s):
        return self.curve.pos(self.tau_of_s(s))

    def tangent_at(self, s):
        """Metric-unit tangent in chart components."""
        tau = self.tau_of_s(s)
        p = self.curve.pos(tau)
        v = self.curve.vel(tau)
        return self.model.unit(p, v)

    def eta_at(self, s):
        """Inward metric-unit normal in chart components."""
        return rot90(self.tangent_at(s))

    def curvature_at(self, s):
        """Boundary curvature H with respect to the inward normal."""
        tau = self.tau_of_s(s)
        p = self.curve.pos(tau)
        v = self.curve.vel(tau)
        a = self.curve.acc(tau)
        speed_e = np.hypot(v[..., 0], v[..., 1])
        k_e = (v[..., 0] * a[..., 1] - v[..., 1] * a[..., 0]) / speed_e**3
        lam = self.model.lam(p)
        m = np.stack([-v[..., 1], v[..., 0]], axis=-1) / speed_e[..., None]
        g = self.model.grad_log_lam(p)
        normal_deriv = g[..., 0] * m[..., 0] + g[..., 1] * m[..., 1]
        return (k_e - normal_deriv) / lam

    def inside(self, points):
        """Whether chart points lie in the euclidean interior of the curve."""
        pts = np.asarray(points, dtype=float)
        if self._is_circle or (
            isinstance(self.curve, _CircleCurve)
            or (isinstance(self.curve, _ReversedCurve) and isinstance(self.curve.base, _CircleCurve))
        ):
            base = self.curve if isinstance(self.curve, _CircleCurve) else self.curve.base
            c = np.asarray(base.center, dtype=float)
            d = pts - c
            return np.hypot(d[..., 0], d[..., 1]) < base.radius
        return _even_odd_inside(self._scan_points, pts)

    def nearest(self, points):
        """Metric distance to the curve and arc-length of the nearest point."""
        pts = np.asarray(points, dtype=float)
        if self._is_circle:
            return self._nearest_circle(pts)
        flat = pts.reshape(-1, 2)
        rho = np.empty(len(flat))
        s_out = np.empty(len(flat))
        for idx, z in enumerate(flat):
            rho[idx], s_out[idx] = self._nearest_generic(z)
        return rho.reshape(pts.shape[:-1]), s_out.reshape(pts.shape[:-1])

    def _nearest_circle(self, pts):
        model = self.model
        if model.kind == "euclidean":
            d = pts - self._chart_center
            rad = np.hypot(d[..., 0], d[..., 1])
            rho = np.abs(rad - self._chart_radius)
            theta = np.arctan2(d[..., 1], d[..., 0])
        else:
            r_c = distance(model, np.broadcast_to(self._metric_center, pts.shape), pts)
            rho = np.abs(r_c - self._metric_radius)
            foot = self._foot_on_metric_circle(pts)
            d = foot - self._chart_center
            theta = np.arctan2(d[..., 1], d[..., 0])
        return rho, self._s_of_angle(theta)

    def _foot_on_metric_circle(self, pts):
        c = self._metric_center
        cc = c[0] + 1j * c[1]
        zc = pts[..., 0] + 1j * pts[..., 1]
        w = (zc - cc) / (1.0 - np.conj(cc) * zc)
        w_abs = np.abs(w)
        phase = np.where(w_abs > 1e-300, w / np.maximum(w_abs, 1e-300), 1.0 + 0j)
        lam_c = self.model.lam(c)
        v = np.stack([phase.real, phase.imag], axis=-1) / lam_c
        foot, _ = geodesic_state(self.model, np.broadcast_to(c, pts.shape), v, self._metric_radius)
        return foot

    def _s_of_angle(self, theta):
        base = self.curve if isinstance(self.curve, _CircleCurve) else self.curve.base
        sign = 1.0 if base.ccw else -1.0
        tau_base = np.mod(sign * theta / (2.0 * np.pi), 1.0)
        if isinstance(self.curve, _ReversedCurve):
            tau = np.mod(1.0 - tau_base, 1.0)
        else:
            tau = tau_base
        return self.s_of_tau(tau)

    def _nearest_generic(self, z):
        d_scan = _metric_distance(self.model, z, self._scan_points)
        i = int(np.argmin(d_scan))
        n = len(self._scan_tau)
        lo = self._scan_tau[(i - 1) % n]
        hi = self._scan_tau[(i + 1) % n]
        if hi <= lo:
            hi += 1.0

        def objective(tau):
            return float(_metric_distance(self.model, z, self.curve.pos(np.mod(tau, 1.0))))

        res = minimize_scalar(objective, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
        tau = float(np.mod(res.x, 1.0))
        return float(res.fun), float(self.s_of_tau(tau))

    def chart_bbox(self):
        p = self._scan_points
        return (
            float(np.min(p[:, 0])),
            float(np.max(p[:, 0])),
            float(np.min(p[:, 1])),
            float(np.max(p[:, 1])),
        )


def _metric_distance(model, z, pts):
    z = np.asarray(z, dtype=float)
    pts = np.asarray(pts, dtype=float)
    return distance(model, np.broadcast_to(z, pts.shape), pts)


def _even_odd_inside(poly, pts):
    """Even-odd crossing test of ``pts`` against the closed polyline ``poly``."""
    x0 = poly[:, 0]
    y0 = poly[:, 1]
    x1 = np.roll(x0, -1)
    y1 = np.roll(y0, -1)
    px = np.asarray(pts, dtype=float)[..., 0][..., None]
    py = np.asarray(pts, dtype=float)[..., 1][..., None]
    cond = (y0 > py) != (y1 > py)
    with np.errstate(invalid="ignore", divide="ignore"):
        x_int = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
    hits = cond & (px < x_int)
    return np.sum(hits, axis=-1) % 2 == 1


# ---------------------------------------------------------------------------
# domain specification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundaryPoint:
    point: np.ndarray
    eta: np.ndarray
    H: float
    A_norm: float


@dataclass(frozen=True)
class HInfResult:
    value: float
    component: int
    s: float


@dataclass(frozen=True)
class DomainSpec:
    """A domain bounded by closed curves, plus its validated tube radius."""

    model: MetricModel
    components: tuple
    kind: str = "bounded"
    rho0: float | None = None

    def __post_init__(self):
        if self.kind not in ("bounded", "exterior"):
            raise ValueError("kind must be 'bounded' or 'exterior'")
        if not self.components:
            raise ValueError("at least one boundary component required")

    def with_rho0(self, rho0: float) -> "DomainSpec":
        return replace(self, rho0=float(rho0))

    def contains(self, points):
        pts = np.asarray(points, dtype=float)
        ok = self.model.in_chart(pts)
        for comp in self.components:
            ok = ok & (comp.inside(pts) == comp.omega_inside)
        return ok

    def nearest_boundary(self, points):
        """Distance to the boundary and the nearest foot, membership-free.

        Returns (rho, component index, foot arc length), vectorized.
        """
        pts = np.asarray(points, dtype=float)
        best_rho = None
        best_comp = None
        best_s = None
        for idx, comp in enumerate(self.components):
            rho, s = comp.nearest(pts)
            if best_rho is None:
                best_rho, best_s = rho, s
                best_comp = np.full(rho.shape, idx)
            else:
                better = rho < best_rho
                best_rho = np.where(better, rho, best_rho)
                best_s = np.where(better, s, best_s)
                best_comp = np.where(better, idx, best_comp)
        return best_rho, best_comp, best_s

    def chart_bbox(self):
        boxes = [c.chart_bbox() for c in self.components]
        return (
            min(b[0] for b in boxes),
            max(b[1] for b in boxes),
            min(b[2] for b in boxes),
            max(b[3] for b in boxes),
        )


def annulus(model: MetricModel, r_inner: float, r_outer: float) -> DomainSpec:
    """Chart annulus r_inner < |z| < r_outer (boundary circles in the chart)."""
    if not 0 < r_inner < r_outer:
        raise ValueError("need 0 < r_inner < r_outer")
    outer = BoundaryComponent(model, _CircleCurve((0.0, 0.0), r_outer, ccw=True), omega_inside=True)
    inner = BoundaryComponent(model, _CircleCurve((0.0, 0.0), r_inner, ccw=True), omega_inside=False)
    return DomainSpec(model=model, components=(outer, inner))


def disk(model: MetricModel, r: float, center=(0.0, 0.0)) -> DomainSpec:
    """Chart disk |z - center| < r."""
    comp = BoundaryComponent(model, _CircleCurve(tuple(center), r, ccw=True), omega_inside=True)
    return DomainSpec(model=model, components=(comp,))


def geodesic_disk_domain(
    model: MetricModel, radius: float, omega: str = "interior", center=(0.0, 0.0)
) -> DomainSpec:
    """Interior or exterior of a metric disk of geodesic radius ``radius``."""
    from .geometry import geodesic_circle_chart

    c_chart, r_chart = geodesic_circle_chart(model, np.asarray(center, dtype=float), radius)
    inside = omega == "interior"
    comp = BoundaryComponent(model, _CircleCurve(tuple(c_chart), r_chart, ccw=True), omega_inside=inside)
    kind = "bounded" if inside else "exterior"
    return DomainSpec(model=model, components=(comp,), kind=kind)


def from_boundary_samples(model: MetricModel, points, omega_inside: bool = True) -> DomainSpec:
    """Domain bounded by one closed curve through the given chart samples."""
    comp = BoundaryComponent(model, _SplineCurve(points), omega_inside=omega_inside)
    return DomainSpec(model=model, components=(comp,))


# ---------------------------------------------------------------------------
# boundary operations
# ---------------------------------------------------------------------------


def boundary_geometry(domain: DomainSpec, component: int, s: float) -> BoundaryPoint:
    comp = domain.components[component]
    sa = np.asarray(s, dtype=float)
    H = comp.curvature_at(sa)
    return BoundaryPoint(
        point=comp.point_at(sa),
        eta=comp.eta_at(sa),
        H=float(H) if np.ndim(H) == 0 else H,
        A_norm=float(np.abs(H)) if np.ndim(H) == 0 else np.abs(H),
    )


def h_inf(domain: DomainSpec, samples: int = 512) -> HInfResult:
    """Infimum of the boundary curvature H over all components."""
    best = None
    for idx, comp in enumerate(domain.components):
        s = np.linspace(0.0, comp.length, samples, endpoint=False)
        vals = comp.curvature_at(s)
        j = int(np.argmin(vals))
        lo = s[max(j - 1, 0)]
        hi = s[min(j + 1, samples - 1)]
        if hi <= lo:
            hi = lo + comp.length / samples
        res = minimize_scalar(
            lambda t: float(comp.curvature_at(np.asarray(t))),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-10},
        )
        cand = (float(res.fun), idx, float(res.x)) if res.fun < vals[j] else (float(vals[j]), idx, float(s[j]))
        if best is None or cand[0] < best[0]:
            best = cand
    return HInfResult(value=best[0], component=best[1], s=best[2])


def distance_to_boundary(domain: DomainSpec, z):
    """Distance from an interior point to the boundary, with its foot."""
    z = np.asarray(z, dtype=float)
    if not bool(np.all(domain.contains(z))):
        raise DomainError("point is not inside the domain")
    rho, comp, s = domain.nearest_boundary(z)
    if z.ndim == 1:
        return float(rho), int(comp), float(s)
    return rho, comp, s


# ---------------------------------------------------------------------------
# boundary data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DataNorms:
    osc: float
    d1: float
    d2: float


class _PhiComponent:
    """Smooth periodic function of metric arc length on one component."""

    def __init__(self, length: float):
        self.length = float(length)

    def value(self, s):
        raise NotImplementedError

    def d1(self, s):
        raise NotImplementedError

    def d2(self, s):
        raise NotImplementedError


class _ConstantPhi(_PhiComponent):
    def __init__(self, length, c):
        super().__init__(length)
        self.c = float(c)

    def value(self, s):
        return np.full(np.shape(s), self.c)

    def d1(self, s):
        return np.zeros(np.shape(s))

    def d2(self, s):
        return np.zeros(np.shape(s))


class _SinusoidPhi(_PhiComponent):
    """amplitude * sin(2 pi cycles s / L + phase) + offset."""

    def __init__(self, length, amplitude, cycles=1, phase=0.0, offset=0.0):
        super().__init__(length)
        self.amplitude = float(amplitude)
        self.cycles = int(cycles)
        self.phase = float(phase)
        self.offset = float(offset)
        self._w = 2.0 * math.pi * self.cycles / self.length

    def value(self, s):
        return self.offset + self.amplitude * np.sin(self._w * np.asarray(s, dtype=float) + self.phase)

    def d1(self, s):
        return self.amplitude * self._w * np.cos(self._w * np.asarray(s, dtype=float) + self.phase)

    def d2(self, s):
        return -self.amplitude * self._w**2 * np.sin(self._w * np.asarray(s, dtype=float) + self.phase)


class _SplinePhi(_PhiComponent):
    def __init__(self, length, s_samples, values):
        super().__init__(length)
        s = np.asarray(s_samples, dtype=float)
        v = np.asarray(values, dtype=float)
        if s[0] != 0.0:
            raise ValueError("samples must start at s = 0")
        if not math.isclose(s[-1], length, rel_tol=1e-9):
            raise ValueError("samples must cover the full period, ending at the component length")
        if abs(v[0] - v[-1]) > 1e-9 * (1.0 + np.max(np.abs(v))):
            raise ValueError("boundary data must be periodic in arc length")
        v = v.copy()
        v[-1] = v[0]
        self._spline = CubicSpline(s, v, bc_type="periodic")

    def value(self, s):
        return self._spline(np.mod(s, self.length))

    def d1(self, s):
        return self._spline(np.mod(s, self.length), 1)

    def d2(self, s):
        return self._spline(np.mod(s, self.length), 2)


class BoundaryData:
    """Boundary values phi, one smooth periodic function per component."""

    def __init__(self, parts: Sequence[_PhiComponent]):
        self.parts = tuple(parts)

    @staticmethod
    def constant(domain: DomainSpec, values) -> "BoundaryData":
        if np.ndim(values) == 0:
            values = [float(values)] * len(domain.components)
        if len(values) != len(domain.components):
            raise ValueError("one constant per boundary component required")
        return BoundaryData(
            [_ConstantPhi(c.length, v) for c, v in zip(domain.components, values)]
        )

    @staticmethod
    def sinusoid(
        domain: DomainSpec,
        component: int,
        amplitude: float,
        cycles: int = 1,
        phase: float = 0.0,
        offset: float = 0.0,
        others: float = 0.0,
    ) -> "BoundaryData":
        parts = []
        for idx, comp in enumerate(domain.components):
            if idx == component:
                parts.append(_SinusoidPhi(comp.length, amplitude, cycles, phase, offset))
            else:
                parts.append(_ConstantPhi(comp.length, others))
        return BoundaryData(parts)

    @staticmethod
    def from_samples(domain: DomainSpec, component: int, s_samples, values, others: float = 0.0) -> "BoundaryData":
        parts = []
        for idx, comp in enumerate(domain.components):
            if idx == component:
                parts.append(_SplinePhi(comp.length, s_samples, values))
            else:
                parts.append(_ConstantPhi(comp.length, others))
        return BoundaryData(parts)

    def value(self, component, s):
        return self.parts[int(component)].value(s)

    def value_mixed(self, components, s):
        """Vectorized evaluation with per-point component indices."""
        comp = np.asarray(components)
        s = np.asarray(s, dtype=float)
        out = np.empty(s.shape)
        for idx, part in enumerate(self.parts):
            sel = comp == idx
            if np.any(sel):
                out[sel] = part.value(s[sel])
        return out

    def bounds(self):
        lo, hi = math.inf, -math.inf
        for part in self.parts:
            s = np.linspace(0.0, part.length, 512, endpoint=False)
            vals = part.value(s)
            lo = min(lo, _refined_extremum(part.value, part.length, s, vals, np.argmin, min))
            hi = max(hi, _refined_extremum(part.value, part.length, s, vals, np.argmax, max))
        return lo, hi


def _refined_extremum(fn, length, s, vals, arg, pick):
    j = int(arg(vals))
    lo = s[j] - length / len(s)
    hi = s[j] + length / len(s)
    sign = 1.0 if pick is min else -1.0
    res = minimize_scalar(
        lambda t: sign * float(fn(np.asarray(t))),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-12},
    )
    return pick(float(vals[j]), sign * float(res.fun))


def boundary_data_norms(domain: DomainSpec, phi: BoundaryData, samples: int = 512) -> DataNorms:
    """Oscillation and intrinsic derivative suprema of boundary data.

    Suprema are taken over a dense arc-length sample on each component with
    one refinement pass around the discrete argmax.
    """
    lo, hi = math.inf, -math.inf
    d1 = 0.0
    d2 = 0.0
    for part in phi.parts:
        s = np.linspace(0.0, part.length, samples, endpoint=False)
        vals = part.value(s)
        lo = min(lo, _refined_extremum(part.value, part.length, s, vals, np.argmin, min))
        hi = max(hi, _refined_extremum(part.value, part.length, s, vals, np.argmax, max))
        for fn, current in ((part.d1, "d1"), (part.d2, "d2")):
            mags = np.abs(fn(s))
            best = _refined_extremum(lambda t: np.abs(fn(t)), part.length, s, mags, np.argmax, max)
            if current == "d1":
                d1 = max(d1, best)
            else:
                d2 = max(d2, best)
    return DataNorms(osc=hi - lo, d1=d1, d2=d2)


# ---------------------------------------------------------------------------
# tube radius and tube chart
# ---------------------------------------------------------------------------


def _boundary_starts(domain: DomainSpec, ns: int):
    starts = []
    for comp in domain.components:
        s = np.linspace(0.0, comp.length, ns, endpoint=False)
        starts.append((comp.point_at(s), comp.eta_at(s)))
    points = np.concatenate([p for p, _ in starts], axis=0)
    etas = np.concatenate([e for _, e in starts], axis=0)
    return points, etas


def tube_radius(domain: DomainSpec, cap: float, ns: int = 192, coarse: int = 48) -> float:
    """Validated inward collar width.

    Finds the first parameter at which sampled normal geodesics from distinct
    boundary points meet (detected through loss of nearest-foot uniqueness),
    shrinks it by 0.9 and caps the result.  Raises ``ValidationError`` when
    boundary curvature is too sharp for the sampling density.
    """
    if cap <= 0:
        raise ValueError("cap must be positive")
    for comp in domain.components:
        s = np.linspace(0.0, comp.length, 1024, endpoint=False)
        max_h = float(np.max(np.abs(comp.curvature_at(s))))
        if max_h > 0 and (comp.length / 1024.0) > 0.25 / max_h:
            raise ValidationError("boundary curvature spike beyond sampling resolution")

    points, etas = _boundary_starts(domain, ns)

    def crossed(t: float) -> bool:
        probe, _ = geodesic_state(domain.model, points, etas, t)
        rho, _, _ = domain.nearest_boundary(probe)
        return bool(np.any(rho < t * (1.0 - 1e-9) - 1e-12))

    grid = np.linspace(0.0, cap, coarse + 1)[1:]
    hit = None
    for j, t in enumerate(grid):
        if crossed(float(t)):
            hit = j
            break
    if hit is None:
        return float(cap)
    lo = float(grid[hit - 1]) if hit > 0 else 0.0
    hi = float(grid[hit])
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if crossed(mid):
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-9 * max(1.0, cap):
            break
    rho0 = min(cap, 0.9 * hi)
    if crossed(rho0 * (1.0 - 1e-9)):
        raise ValidationError("normal exponential map not injective at proposed radius")
    return float(rho0)


@dataclass(frozen=True)
class TubeBand:
    """Normal-coordinate grid over one boundary component."""

    component: int
    s: np.ndarray
    t: np.ndarray
    points: np.ndarray  # (ns, nt, 2)
    T1: np.ndarray  # (ns, nt, 2) metric-unit, tangent to equidistants
    Tn: np.ndarray  # (ns, nt, 2) metric-unit, equals grad(rho)
    phi: np.ndarray | None = None  # (ns,) boundary data carried along fibers


@dataclass(frozen=True)
class TubeChart:
    bands: tuple

    def band(self, component: int) -> TubeBand:
        for b in self.bands:
            if b.component == component:
                return b
        raise KeyError(component)


def build_tube(domain: DomainSpec, ns: int, nt: int, phi: BoundaryData | None = None) -> TubeChart:
    """Normal-exponential grid with the transported frame on each fiber.

    The frame field along a normal geodesic is parallel; in two dimensions
    the transported tangent therefore stays the +-90 degree rotation of the
    fiber velocity, which is used here in place of integrating the transport
    equation (the identity is covered by tests against the ODE transport).
    """
    if domain.rho0 is None:
        raise DomainError("tube radius not set; call tube_radius first")
    bands = []
    t = np.linspace(0.0, domain.rho0, nt, endpoint=False)
    for idx, comp in enumerate(domain.components):
        s = np.linspace(0.0, comp.length, ns, endpoint=False)
        p0 = comp.point_at(s)
        eta = comp.eta_at(s)
        pts, vels = geodesic_state(
            domain.model, p0[:, None, :], eta[:, None, :], t[None, :]
        )
        T1 = rot90_inv(vels)
        phi_vals = None if phi is None else np.asarray(phi.value(idx, s), dtype=float)
        bands.append(
            TubeBand(component=idx, s=s, t=t.copy(), points=pts, T1=T1, Tn=vels, phi=phi_vals)
        )
    return TubeChart(bands=tuple(bands))
