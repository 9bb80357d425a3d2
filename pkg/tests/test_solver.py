import math

import numpy as np
import pytest

from minsurf.domain import BoundaryData, annulus, disk
from minsurf.exact import (
    catenoid_parameter,
    catenoid_radial,
    catenoid_threshold,
    helicoid,
    scherk,
)
from minsurf.geometry import MetricModel
from minsurf.solver import (
    MASK_DIRICHLET,
    MASK_INTERIOR,
    SolverParams,
    continuity_solve,
    diagnostics,
    discrete_operator,
    newton_solve,
    problem_from_domain,
    problem_from_predicate,
    problem_from_rectangle,
)

EUC = MetricModel.euclidean()
HYP = MetricModel.hyperbolic(k=1.0)
RNG = np.random.default_rng(42)


def scherk_problem(h):
    return problem_from_rectangle(EUC, -1.2, 1.2, -1.2, 1.2, h, scherk)


def sector_predicate(points):
    p = np.asarray(points, dtype=float)
    r = np.hypot(p[..., 0], p[..., 1])
    th = np.arctan2(p[..., 1], p[..., 0])
    return (r > 1.0) & (r < 2.0) & (np.abs(th) < 1.0)


def helicoid_problem(h):
    bbox = (math.cos(1.0) * 1.0 - 0.05, 2.05, -2.0 * math.sin(1.0) - 0.05, 2.0 * math.sin(1.0) + 0.05)
    return problem_from_predicate(EUC, sector_predicate, bbox, h, helicoid)


class TestDiscreteOperator:
    def test_constant_residual_zero(self):
        prob = scherk_problem(1 / 16)
        u = np.full(prob.mask.shape, 2.5)
        res = prob.op.residual(u.reshape(-1))
        assert np.max(np.abs(res)) == 0.0

    def test_affine_exact(self):
        prob = scherk_problem(1 / 16)
        nodes = prob.grid.nodes()
        u = 3.0 * nodes[..., 0] - 2.0 * nodes[..., 1]
        res = prob.op.residual(u.reshape(-1))
        assert np.max(np.abs(res)) < 1e-12

    def test_scherk_consistency_order(self):
        sups = {}
        for h in (1 / 32, 1 / 64):
            prob = scherk_problem(h)
            u = scherk(prob.grid.nodes())
            res = discrete_operator(prob, u)
            sups[h] = np.nanmax(np.abs(res))
        ratio = sups[1 / 32] / sups[1 / 64]
        assert ratio >= 3.5

    def test_flux_conservation(self):
        prob = problem_from_domain(
            annulus(EUC, 1.0, 2.0), BoundaryData.constant(annulus(EUC, 1.0, 2.0), [0.0, 0.4]), h=1 / 24
        )
        fld, rep = newton_solve(prob)
        assert rep.converged
        op = prob.op
        uf = fld.u.copy()
        ring = prob.mask == MASK_DIRICHLET
        uf[ring] = prob.dirichlet_values[ring]
        uf[~np.isfinite(uf)] = 0.0
        FE, FW, FN, FS = op.fluxes(uf.reshape(-1))
        lhs = op.grid.h * float(np.sum(FE - FW + FN - FS))
        ext = op.unknown_of_flat
        rhs = op.grid.h * float(
            np.sum(FE[ext[op.E] < 0])
            - np.sum(FW[ext[op.W] < 0])
            + np.sum(FN[ext[op.N] < 0])
            - np.sum(FS[ext[op.S] < 0])
        )
        assert abs(lhs - rhs) <= 1e-9

    def test_jacobian_consistency(self):
        prob = scherk_problem(1 / 12)
        n = prob.mask.shape
        u0 = np.where(prob.mask > 0, RNG.uniform(-0.5, 0.5, size=n), 0.0)
        ring = prob.mask == MASK_DIRICHLET
        u0[ring] = prob.dirichlet_values[ring]
        uf = u0.reshape(-1)
        J = prob.op.jacobian(uf)
        v = RNG.uniform(-1.0, 1.0, size=prob.n_unknowns)
        eps = 1e-6
        up = uf.copy()
        up[prob.op.flat] += eps * v
        um = uf.copy()
        um[prob.op.flat] -= eps * v
        fd = (prob.op.residual(up) - prob.op.residual(um)) / (2 * eps)
        jv = J @ v
        denom = np.max(np.abs(jv)) + 1e-12
        assert np.max(np.abs(jv - fd)) / denom < 1e-6


class TestNewton:
    def test_constant_data_immediate(self):
        dom = annulus(EUC, 1.0, 2.0)
        prob = problem_from_domain(dom, BoundaryData.constant(dom, 1.7), h=1 / 16)
        fld, rep = newton_solve(prob)
        assert rep.converged
        assert rep.iterations <= 1
        interior = prob.mask == MASK_INTERIOR
        assert np.max(np.abs(fld.u[interior] - 1.7)) < 1e-9

    def test_scherk_accuracy_coarse(self):
        prob = scherk_problem(1 / 32)
        fld, rep = newton_solve(prob)
        assert rep.converged
        interior = prob.mask == MASK_INTERIOR
        err = np.abs(fld.u - scherk(prob.grid.nodes()))
        assert np.nanmax(err[interior]) < 5e-3
        assert rep.boundary_attainment < 1e-12  # nodal data on an aligned grid

    def test_helicoid_accuracy_coarse(self):
        prob = helicoid_problem(1 / 32)
        fld, rep = newton_solve(prob)
        assert rep.converged
        interior = prob.mask == MASK_INTERIOR
        err = np.abs(fld.u - helicoid(prob.grid.nodes()))
        assert np.nanmax(err[interior]) < 5e-3

    def test_translation_equivariance(self):
        prob = scherk_problem(1 / 16)
        fld0, _ = newton_solve(prob)
        shifted = problem_from_rectangle(EUC, -1.2, 1.2, -1.2, 1.2, 1 / 16, lambda p: scherk(p) + 0.9)
        fld1, _ = newton_solve(shifted)
        interior = prob.mask == MASK_INTERIOR
        diff = fld1.u[interior] - fld0.u[interior] - 0.9
        assert np.max(np.abs(diff)) < 1e-10

    def test_comparison_principle_constructed_pairs(self):
        fld0, _ = newton_solve(scherk_problem(1 / 16))
        fld1, _ = newton_solve(
            problem_from_rectangle(EUC, -1.2, 1.2, -1.2, 1.2, 1 / 16, lambda p: scherk(p) + 0.3)
        )
        mask = np.isfinite(fld0.u) & np.isfinite(fld1.u)
        assert np.all(fld0.u[mask] <= fld1.u[mask] + 1e-9)

    def test_max_principle_scherk(self):
        prob = scherk_problem(1 / 24)
        fld, _ = newton_solve(prob)
        rep = diagnostics(fld, prob)
        assert rep.max_principle_ok

    def test_interp_bilinear(self):
        prob = scherk_problem(1 / 32)
        fld, _ = newton_solve(prob)
        pts = np.array([[0.3, 0.2], [-0.7, 0.55], [0.0, 0.0]])
        vals = fld.interp(pts)
        assert np.max(np.abs(vals - scherk(pts))) < 5e-3


class TestContinuity:
    def test_constant_boundary_reaches_one(self):
        dom = annulus(EUC, 1.0, 2.0)
        prob = problem_from_domain(dom, BoundaryData.constant(dom, 0.8), h=1 / 16)
        path = continuity_solve(prob)
        assert path.reached_one
        assert path.steps[-1].t == 1.0

    def test_catenoid_below_threshold(self):
        thr = catenoid_threshold()
        assert thr == pytest.approx(1.3170, abs=2e-4)
        dom = annulus(EUC, 1.0, 2.0)
        h = 1 / 32
        prob = problem_from_domain(dom, BoundaryData.constant(dom, [0.0, 1.0]), h=h)
        path = continuity_solve(prob)
        assert path.reached_one
        assert path.steps[-1].report.boundary_attainment <= 2 * h
        # the solved graph is the radial catenoid with matching inner height
        c = catenoid_parameter(1.0)
        nodes = prob.grid.nodes()
        interior = prob.mask == MASK_INTERIOR
        r = np.hypot(nodes[..., 0], nodes[..., 1])
        exact_vals = catenoid_radial(np.clip(r, c, None), c)
        err = np.abs(path.field.u - exact_vals)
        assert np.nanmax(err[interior]) < 2e-2

    def test_catenoid_above_threshold_fails(self):
        dom = annulus(EUC, 1.0, 2.0)
        prob = problem_from_domain(dom, BoundaryData.constant(dom, [0.0, 2.0]), h=1 / 32)
        path = continuity_solve(prob)
        blown_up = path.steps and path.steps[-1].report.boundary_gradient >= 1e3
        assert (not path.reached_one) or blown_up
        if not path.reached_one:
            assert path.halvings_at_stall >= 3
            assert 0.5 < path.t_final < 0.75  # fold sits near threshold/2


class TestDiagnostics:
    def test_constant_field_zero_slack(self):
        dom = disk(EUC, 1.0)
        prob = problem_from_domain(dom, BoundaryData.constant(dom, 0.3), h=1 / 16)
        fld, _ = newton_solve(prob)
        rep = diagnostics(fld, prob)
        assert rep.max_principle_ok
        assert rep.max_principle_slack <= 1e-12
