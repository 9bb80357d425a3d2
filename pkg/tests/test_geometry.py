import math

import numpy as np
import pytest

from minsurf.errors import ChartDomainError
from minsurf.geometry import (
    CurvePath,
    MetricModel,
    RadialProfile,
    curvature_at,
    distance,
    gaussian_curvature,
    geodesic,
    geodesic_state,
    parallel_transport,
)

RNG = np.random.default_rng(20240811)

EUC = MetricModel.euclidean()
HYP = MetricModel.hyperbolic(k=1.0)
HYP2 = MetricModel.hyperbolic(k=2.0)

# Hyperbolic plane in rotationally symmetric disguise; exercises the ODE and
# shooting paths against the closed forms.
HYP_AS_ROTSYM = MetricModel.rotsym(
    RadialProfile(
        lam=lambda r: 2.0 / (1.0 - r**2),
        dlam=lambda r: 4.0 * r / (1.0 - r**2) ** 2,
        d2lam=lambda r: (4.0 + 12.0 * r**2) / (1.0 - r**2) ** 3,
        rmax=1.0,
        name="poincare",
    )
)

FLAT_ROTSYM = MetricModel.rotsym(
    RadialProfile(
        lam=lambda r: np.ones_like(np.asarray(r, dtype=float)),
        dlam=lambda r: np.zeros_like(np.asarray(r, dtype=float)),
        d2lam=lambda r: np.zeros_like(np.asarray(r, dtype=float)),
        name="flat",
    )
)


def random_disk_points(n, rmax=0.85):
    r = rmax * np.sqrt(RNG.uniform(0.01, 1.0, size=n))
    th = RNG.uniform(0.0, 2 * np.pi, size=n)
    return np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)


class TestCurvature:
    def test_euclidean_flat(self):
        for p in [(0.0, 0.0), (3.0, -4.0), (100.0, 2.0)]:
            assert curvature_at(EUC, p).K == 0.0

    def test_hyperbolic_constant(self):
        info = curvature_at(HYP, (0.3, 0.0))
        assert info.K == pytest.approx(-1.0, abs=1e-10)

    def test_hyperbolic_k_sampled(self):
        for model in (HYP, HYP2, MetricModel.hyperbolic(k=0.5)):
            pts = random_disk_points(100)
            K = gaussian_curvature(model, pts)
            assert np.max(np.abs(K + model.k**2)) <= 1e-10

    def test_rotsym_identity_factor(self):
        assert curvature_at(FLAT_ROTSYM, (0.4, 0.2)).K == pytest.approx(0.0, abs=1e-12)

    def test_rotsym_matches_hyperbolic(self):
        pts = random_disk_points(50)
        K = gaussian_curvature(HYP_AS_ROTSYM, pts)
        assert np.max(np.abs(K + 1.0)) < 1e-9

    def test_ricci_form_is_K_times_metric(self):
        p = (0.2, 0.5)
        info = curvature_at(HYP, p)
        lam2 = float(HYP.lam(np.asarray(p))) ** 2
        assert np.allclose(info.ric, info.K * lam2 * np.eye(2))

    def test_outside_chart_raises(self):
        with pytest.raises(ChartDomainError):
            curvature_at(HYP, (1.2, 0.0))


class TestDistance:
    def test_euclidean_345(self):
        assert distance(EUC, (0.0, 0.0), (3.0, 4.0)) == pytest.approx(5.0, abs=1e-14)

    def test_hyperbolic_radial_closed_form(self):
        # arccosh(1 + 2*0.25/(1*0.75)) = arccosh(5/3) = ln 3
        expected = math.acosh(1.0 + 2.0 * 0.25 / 0.75)
        assert expected == pytest.approx(math.log(3.0), abs=1e-14)
        got = distance(HYP, (0.0, 0.0), (0.5, 0.0))
        assert got == pytest.approx(expected, rel=1e-13)

    def test_hyperbolic_scaling_in_k(self):
        p, q = (0.1, 0.2), (-0.3, 0.4)
        assert distance(HYP2, p, q) == pytest.approx(distance(HYP, p, q) / 2.0, rel=1e-13)

    def test_symmetry_100_random_pairs(self):
        for model in (EUC, HYP):
            ps = random_disk_points(100)
            qs = random_disk_points(100)
            d1 = distance(model, ps, qs)
            d2 = distance(model, qs, ps)
            assert np.max(np.abs(d1 - d2)) <= 1e-9

    def test_triangle_inequality_random_triples(self):
        for model in (EUC, HYP):
            a, b, c = (random_disk_points(60) for _ in range(3))
            dab = distance(model, a, b)
            dbc = distance(model, b, c)
            dac = distance(model, a, c)
            assert np.all(dac <= dab + dbc + 1e-9)

    def test_rotsym_shooting_vs_closed_form(self):
        pairs = [((0.05, 0.1), (0.4, -0.2)), ((0.0, 0.0), (0.3, 0.3)), ((-0.5, 0.1), (0.2, 0.4))]
        for p, q in pairs:
            ref = distance(HYP, p, q)
            got = distance(HYP_AS_ROTSYM, p, q)
            assert got == pytest.approx(ref, rel=1e-9)


class TestGeodesic:
    def test_euclidean_straight_line(self):
        p = np.array([1.0, 2.0])
        v = np.array([0.6, 0.8])
        assert np.allclose(geodesic(EUC, p, v, 2.5), p + 2.5 * v)

    def test_zero_parameter_is_identity(self):
        p = np.array([0.1, -0.2])
        v = HYP.unit(p, np.array([1.0, 1.0]))
        assert np.allclose(geodesic(HYP, p, v, 0.0), p)

    def test_hyperbolic_radial_profile(self):
        # From the origin along +x the point after arc length t sits at
        # chart radius tanh(t/2).
        v = np.array([0.5, 0.0])  # metric-unit at the origin (lam = 2)
        for t in (0.2, 1.0, 3.0):
            pt = geodesic(HYP, (0.0, 0.0), v, t)
            assert pt[0] == pytest.approx(math.tanh(t / 2.0), rel=1e-12)
            assert pt[1] == pytest.approx(0.0, abs=1e-13)

    def test_arc_length_consistency(self):
        p = np.array([0.2, 0.1])
        v = HYP.unit(p, np.array([0.3, -1.0]))
        for t in (0.05, 0.4, 1.3):
            pt = geodesic(HYP, p, v, t)
            assert distance(HYP, p, pt) == pytest.approx(t, abs=1e-8)

    def test_unit_speed_preserved(self):
        p = np.array([0.3, -0.4])
        v = HYP.unit(p, np.array([1.0, 0.7]))
        pts, vels = geodesic_state(HYP, p, v, np.linspace(0.1, 2.0, 7))
        speeds = HYP.metric_norm(pts, vels)
        assert np.max(np.abs(speeds - 1.0)) < 1e-12

    def test_local_length_minimizing_small_t(self):
        for model in (EUC, HYP):
            p = np.array([0.15, 0.25])
            v = model.unit(p, np.array([-0.4, 0.9]))
            for t in (1e-3, 1e-2, 0.1):
                pt = geodesic(model, p, v, t)
                assert distance(model, p, pt) == pytest.approx(t, abs=1e-7)

    def test_rotsym_matches_hyperbolic_closed_form(self):
        p = np.array([0.1, 0.05])
        v = HYP.unit(p, np.array([0.8, 0.6]))
        ref = geodesic(HYP, p, v, 0.9)
        got = geodesic(HYP_AS_ROTSYM, p, v, 0.9)
        assert np.allclose(got, ref, atol=1e-9)

    def test_rotsym_chart_exit_reports_parameter(self):
        bounded_flat = MetricModel.rotsym(
            RadialProfile(
                lam=lambda r: np.ones_like(np.asarray(r, dtype=float)),
                dlam=lambda r: np.zeros_like(np.asarray(r, dtype=float)),
                d2lam=lambda r: np.zeros_like(np.asarray(r, dtype=float)),
                rmax=1.0,
                name="flat-disk",
            )
        )
        p = np.array([0.9, 0.0])
        v = np.array([1.0, 0.0])
        with pytest.raises(ChartDomainError) as err:
            geodesic(bounded_flat, p, v, 0.5)
        assert err.value.exit_parameter is not None
        assert err.value.exit_parameter == pytest.approx(0.1, abs=1e-6)

    def test_non_unit_direction_rejected(self):
        with pytest.raises(ValueError):
            geodesic(HYP, (0.0, 0.0), (1.0, 0.0), 0.5)


def geodesic_circle_path(radius, nsamples=512):
    """Metric circle of geodesic radius ``radius`` about the origin (k = 1)."""
    rho = math.tanh(radius / 2.0)
    length = 2.0 * math.pi * math.sinh(radius)
    s = np.linspace(0.0, length, nsamples + 1)
    theta = s / math.sinh(radius)
    pts = rho * np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    return CurvePath.from_points(HYP, pts)


class TestParallelTransport:
    def test_euclidean_identity(self):
        path = CurvePath.from_points(
            EUC, np.stack([np.linspace(0, 1, 50), np.sin(np.linspace(0, 3, 50))], axis=-1)
        )
        v = np.array([0.3, -0.7])
        assert np.allclose(parallel_transport(EUC, v, path), v)

    def test_norm_preserved(self):
        path = CurvePath.from_geodesic(HYP, np.array([0.0, 0.1]), HYP.unit((0.0, 0.1), np.array([1.0, 0.4])), 1.2)
        v0 = np.array([0.05, 0.02])
        v1 = parallel_transport(HYP, v0, path)
        n0 = HYP.metric_norm(path.points[0], v0)
        n1 = HYP.metric_norm(path.points[-1], v1)
        assert abs(n1 - n0) <= 1e-8

    def test_forward_backward_roundtrip(self):
        path = geodesic_circle_path(0.7)
        half = CurvePath(s=path.s[:300], points=path.points[:300], tangents=path.tangents[:300])
        v0 = np.array([0.08, -0.03])
        v1 = parallel_transport(HYP, v0, half)
        v2 = parallel_transport(HYP, v1, half.reversed())
        assert np.allclose(v2, v0, atol=1e-7)

    def test_holonomy_around_geodesic_circle(self):
        # Gauss-Bonnet: the rotation angle of the holonomy equals the
        # enclosed area times |K|, i.e. 2 pi (cosh r - 1) on the unit-curvature
        # disk model.
        r = 0.8
        path = geodesic_circle_path(r, nsamples=1024)
        v0 = np.array([0.01, 0.0])
        v1 = parallel_transport(HYP, v0, path)
        # start and end points coincide, so the angle is metric-meaningful
        a0 = math.atan2(v0[1], v0[0])
        a1 = math.atan2(v1[1], v1[0])
        turn = a1 - a0
        expected = 2 * math.pi * (math.cosh(r) - 1.0)

        def angle_gap(x, y):
            return abs((x - y + math.pi) % (2 * math.pi) - math.pi)

        # orientation of the loop fixes the sign; the oracle pins the magnitude
        assert min(angle_gap(turn, expected), angle_gap(turn, -expected)) < 5e-6
