"""Masked-grid finite-difference solver for the minimal surface equation.

Discretization
--------------
In a conformal metric ``g = lambda^2 (dx^2 + dy^2)`` the intrinsic gradient,
norm and divergence reduce to chart quantities:

    grad_g u     = lambda^-2 (u_x, u_y),
    |grad_g u|^2 = lambda^-2 |Du|^2,
    div_g X      = lambda^-2 div(lambda^2 X).

Substituting into ``div_g(grad_g u / W)`` with ``W^2 = 1 + |grad_g u|^2``
cancels the ``lambda^2`` inside the divergence:

    M[u] = lambda^-2 div( Du / sqrt(1 + lambda^-2 |Du|^2) ).

The right-hand side is a plain euclidean flux divergence whose nonlinearity
carries the inverse conformal factor at the flux location.  It is discretized
in flux form on a uniform grid: fluxes live at half-nodes, the transverse
derivative at a half-node is the average of the four neighboring centered
differences, and the outer divergence is a centered difference of fluxes.
The resulting 9-point stencil is second order and exact on affine data.

Boundary treatment
------------------
Nodes are flagged interior, dirichlet, or outside.  Dirichlet nodes form the
one-cell ring around the interior (8-neighborhood), so every interior node
owns a complete 3x3 patch.  Ring values carry the boundary data onto the cut
points where grid segments cross the true boundary: each ring node is tied to
its best-cut interior partner by the linear-interpolation relation

    (1 - f) u_ring + f u_partner = phi(cut point),

eliminated from the system (locally first order; on grid-aligned rectangles
the cut point is the node itself and the relation degenerates to exact nodal
values).  Ring nodes without a usable cut fall back to the data value at
their nearest boundary foot.  Boundary attainment is measured at the cut
points.

The Newton iteration uses the exact Jacobian of the flux form with a
residual-decrease line search; linear systems go to a direct factorization
on small grids and to a diagonally preconditioned Krylov method above the
direct-solve limit.  Nothing in the solve path draws random numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.ndimage import binary_dilation
from scipy.sparse.linalg import bicgstab, spsolve

from .domain import BoundaryData, DomainSpec
from .errors import DomainError, SolverError
from .geometry import MetricModel

__all__ = [
    "MASK_OUTSIDE",
    "MASK_INTERIOR",
    "MASK_DIRICHLET",
    "Grid",
    "ScalarField",
    "GridProblem",
    "SolverParams",
    "SolveReport",
    "ContinuationPath",
    "problem_from_domain",
    "problem_from_rectangle",
    "problem_from_predicate",
    "discrete_operator",
    "newton_solve",
    "continuity_solve",
    "diagnostics",
]

MASK_OUTSIDE = 0
MASK_INTERIOR = 1
MASK_DIRICHLET = 2

_DIRECT_LIMIT = 200 * 200


@dataclass(frozen=True)
class Grid:
    x0: float
    y0: float
    h: float
    nx: int
    ny: int

    @property
    def xs(self):
        return self.x0 + self.h * np.arange(self.nx)

    @property
    def ys(self):
        return self.y0 + self.h * np.arange(self.ny)

    def nodes(self):
        """All node coordinates, shape (ny, nx, 2)."""
        X, Y = np.meshgrid(self.xs, self.ys)
        return np.stack([X, Y], axis=-1)


@dataclass
class ScalarField:
    """Gridded scalar with a mask; u is NaN on outside nodes."""

    grid: Grid
    mask: np.ndarray
    u: np.ndarray
    model: MetricModel

    def copy_with(self, u) -> "ScalarField":
        return ScalarField(grid=self.grid, mask=self.mask, u=np.asarray(u, dtype=float), model=self.model)

    def interp(self, points):
        """Bilinear interpolation using masked nodes only.

        Cells touching the mask edge fall back to a weighted average of the
        usable corners (locally first order); points with no usable corner
        give NaN.
        """
        pts = np.asarray(points, dtype=float)
        flat = pts.reshape(-1, 2)
        g = self.grid
        fx = (flat[:, 0] - g.x0) / g.h
        fy = (flat[:, 1] - g.y0) / g.h
        i = np.clip(np.floor(fx).astype(int), 0, g.nx - 2)
        j = np.clip(np.floor(fy).astype(int), 0, g.ny - 2)
        tx = fx - i
        ty = fy - j
        out = np.zeros(len(flat))
        wsum = np.zeros(len(flat))
        for dj, di, w in (
            (0, 0, (1 - tx) * (1 - ty)),
            (0, 1, tx * (1 - ty)),
            (1, 0, (1 - tx) * ty),
            (1, 1, tx * ty),
        ):
            jj = j + dj
            ii = i + di
            usable = (self.mask[jj, ii] != MASK_OUTSIDE) & np.isfinite(self.u[jj, ii])
            w = np.where(usable, w, 0.0)
            vals = np.where(usable, self.u[jj, ii], 0.0)
            out += w * vals
            wsum += w
        with np.errstate(invalid="ignore", divide="ignore"):
            res = np.where(wsum > 1e-12, out / wsum, np.nan)
        return res.reshape(pts.shape[:-1])

    def metric_gradient(self):
        """Metric gradient magnitude at interior nodes (NaN elsewhere).

        Central differences where both axis neighbors carry values, one-sided
        at mask edges.
        """
        u = self.u
        h = self.grid.h
        valid = self.mask != MASK_OUTSIDE
        gx = _masked_derivative(u, valid, axis=1, h=h)
        gy = _masked_derivative(u, valid, axis=0, h=h)
        lam = self.model.lam(self.grid.nodes())
        mag = np.hypot(gx, gy) / lam
        mag[self.mask != MASK_INTERIOR] = np.nan
        return mag


def _masked_derivative(u, valid, axis, h):
    up = np.roll(u, -1, axis=axis)
    um = np.roll(u, 1, axis=axis)
    vp = np.roll(valid, -1, axis=axis)
    vm = np.roll(valid, 1, axis=axis)
    both = vp & vm
    out = np.full_like(u, np.nan)
    with np.errstate(invalid="ignore"):
        out = np.where(both, (up - um) / (2 * h), out)
        out = np.where(valid & vp & ~vm, (up - u) / h, out)
        out = np.where(valid & vm & ~vp, (u - um) / h, out)
    return out


# ---------------------------------------------------------------------------
# stencil workspace
# ---------------------------------------------------------------------------


class _Stencil:
    """Vectorized residual and Jacobian of the flux-form operator."""

    def __init__(self, model: MetricModel, grid: Grid, mask: np.ndarray):
        self.model = model
        self.grid = grid
        self.mask = mask
        ny, nx = mask.shape
        if np.any(mask[0] == MASK_INTERIOR) or np.any(mask[-1] == MASK_INTERIOR):
            raise DomainError("interior nodes touch the grid border")
        if np.any(mask[:, 0] == MASK_INTERIOR) or np.any(mask[:, -1] == MASK_INTERIOR):
            raise DomainError("interior nodes touch the grid border")
        jj, ii = np.nonzero(mask == MASK_INTERIOR)
        covered = mask != MASK_OUTSIDE
        for dj in (-1, 0, 1):
            for di in (-1, 0, 1):
                if not np.all(covered[jj + dj, ii + di]):
                    raise DomainError("interior node with incomplete stencil patch")
        self.flat = jj * nx + ii
        self.nx = nx
        self.n_int = len(self.flat)
        self.E = self.flat + 1
        self.W = self.flat - 1
        self.N = self.flat + nx
        self.S = self.flat - nx
        self.NE = self.N + 1
        self.NW = self.N - 1
        self.SE = self.S + 1
        self.SW = self.S - 1

        xs = grid.x0 + grid.h * ii
        ys = grid.y0 + grid.h * jj
        half = 0.5 * grid.h

        def minv(px, py):
            pts = np.stack([px, py], axis=-1)
            return 1.0 / self.model.lam(pts) ** 2

        self.mC = minv(xs, ys)
        self.mE = minv(xs + half, ys)
        self.mW = minv(xs - half, ys)
        self.mN = minv(xs, ys + half)
        self.mS = minv(xs, ys - half)

        unknown = np.full(ny * nx, -1, dtype=np.int64)
        unknown[self.flat] = np.arange(self.n_int)
        self.unknown_of_flat = unknown

    # -- flux pieces --------------------------------------------------------

    def _slopes(self, uf):
        h = self.grid.h
        uC = uf[self.flat]
        uE = uf[self.E]
        uW = uf[self.W]
        uN = uf[self.N]
        uS = uf[self.S]
        uNE = uf[self.NE]
        uNW = uf[self.NW]
        uSE = uf[self.SE]
        uSW = uf[self.SW]
        pE = (uE - uC) / h
        pW = (uC - uW) / h
        pN = (uN - uC) / h
        pS = (uC - uS) / h
        qE = (uN + uNE - uS - uSE) / (4 * h)
        qW = (uN + uNW - uS - uSW) / (4 * h)
        qN = (uE + uNE - uW - uNW) / (4 * h)
        qS = (uE + uSE - uW - uSW) / (4 * h)
        return (pE, pW, pN, pS, qE, qW, qN, qS)

    def fluxes(self, ufull, linear=False):
        uf = ufull.reshape(-1)
        pE, pW, pN, pS, qE, qW, qN, qS = self._slopes(uf)
        if linear:
            return pE, pW, pN, pS
        WE = np.sqrt(1.0 + self.mE * (pE**2 + qE**2))
        WW = np.sqrt(1.0 + self.mW * (pW**2 + qW**2))
        WN = np.sqrt(1.0 + self.mN * (pN**2 + qN**2))
        WS = np.sqrt(1.0 + self.mS * (pS**2 + qS**2))
        return pE / WE, pW / WW, pN / WN, pS / WS

    def residual(self, ufull, linear=False):
        FE, FW, FN, FS = self.fluxes(ufull, linear=linear)
        return self.mC * (FE - FW + FN - FS) / self.grid.h

    def jacobian(self, ufull, linear=False, ghost=None):
        """Exact Jacobian with respect to the interior unknowns.

        ``ghost`` optionally carries (w_of_flat, partner_unknown_of_flat);
        stencil references to ring nodes are then chained through the ghost
        relation u_ring = c + w * u_partner instead of being dropped.
        """
        h = self.grid.h
        uf = ufull.reshape(-1)
        pE, pW, pN, pS, qE, qW, qN, qS = self._slopes(uf)
        if linear:
            one = np.ones(self.n_int)
            zero = np.zeros(self.n_int)
            aE = aW = aN = aS = one
            bE = bW = bN = bS = zero
        else:
            WE3 = (1.0 + self.mE * (pE**2 + qE**2)) ** 1.5
            WW3 = (1.0 + self.mW * (pW**2 + qW**2)) ** 1.5
            WN3 = (1.0 + self.mN * (pN**2 + qN**2)) ** 1.5
            WS3 = (1.0 + self.mS * (pS**2 + qS**2)) ** 1.5
            aE = (1.0 + self.mE * qE**2) / WE3
            aW = (1.0 + self.mW * qW**2) / WW3
            aN = (1.0 + self.mN * qN**2) / WN3
            aS = (1.0 + self.mS * qS**2) / WS3
            bE = -self.mE * pE * qE / WE3
            bW = -self.mW * pW * qW / WW3
            bN = -self.mN * pN * qN / WN3
            bS = -self.mS * pS * qS / WS3

        fac = self.mC / h
        coef = {
            "C": -(aE + aW + aN + aS) / h,
            "E": aE / h + (bN - bS) / (4 * h),
            "W": aW / h - (bN - bS) / (4 * h),
            "N": aN / h + (bE - bW) / (4 * h),
            "S": aS / h - (bE - bW) / (4 * h),
            "NE": (bE + bN) / (4 * h),
            "SW": (bW + bS) / (4 * h),
            "NW": -(bW + bN) / (4 * h),
            "SE": -(bE + bS) / (4 * h),
        }
        cols_flat = {
            "C": self.flat,
            "E": self.E,
            "W": self.W,
            "N": self.N,
            "S": self.S,
            "NE": self.NE,
            "NW": self.NW,
            "SE": self.SE,
            "SW": self.SW,
        }
        rows = []
        cols = []
        vals = []
        row_idx = np.arange(self.n_int)
        for key, flat_idx in cols_flat.items():
            col_unknown = self.unknown_of_flat[flat_idx]
            keep = col_unknown >= 0
            rows.append(row_idx[keep])
            cols.append(col_unknown[keep])
            vals.append((fac * coef[key])[keep])
            if ghost is not None:
                w_of_flat, partner_unknown = ghost
                chain = (col_unknown < 0) & (partner_unknown[flat_idx] >= 0)
                if np.any(chain):
                    rows.append(row_idx[chain])
                    cols.append(partner_unknown[flat_idx][chain])
                    vals.append((fac * coef[key])[chain] * w_of_flat[flat_idx][chain])
        J = sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_int, self.n_int),
        )
        return J


# ---------------------------------------------------------------------------
# grid problems
# ---------------------------------------------------------------------------


@dataclass
class GridProblem:
    """A masked grid with its boundary coupling and everything a solve needs.

    ``dirichlet_values`` holds the plain data values (nearest-foot or nodal),
    used for data-range diagnostics and as the fallback ring value.  The ring
    values actually entering the stencil follow the ghost relation
    ``u_ring = ghost_c + ghost_w * u_partner`` which pins the data at the cut
    points; on aligned rectangles ``ghost_w`` is zero and both agree.
    """

    model: MetricModel
    grid: Grid
    mask: np.ndarray
    dirichlet_values: np.ndarray  # (ny, nx), NaN off the dirichlet ring
    op: _Stencil
    ghost_c: np.ndarray  # flat (ny*nx,), affine part of the ring relation
    ghost_w: np.ndarray  # flat (ny*nx,), partner weight of the ring relation
    ghost_partner: np.ndarray  # flat (ny*nx,), partner flat index or -1
    boundary_value_at: Callable | None = None  # exact data at boundary points
    cut_points: np.ndarray | None = None  # (m, 2) grid-segment crossings of the boundary
    cut_pairs: tuple | None = None  # (dir_flat, int_flat, fraction) per cut
    feet: dict | None = None  # component / s / rho arrays on the dirichlet ring
    domain: DomainSpec | None = None

    @property
    def n_unknowns(self) -> int:
        return self.op.n_int

    def scaled(self, t: float) -> "GridProblem":
        """Same stencil, boundary data scaled by ``t``."""
        bva = self.boundary_value_at
        scaled_bva = None if bva is None else (lambda pts, _t=t: _t * bva(pts))
        return replace(
            self,
            dirichlet_values=t * self.dirichlet_values,
            ghost_c=t * self.ghost_c,
            boundary_value_at=scaled_bva,
        )

    def apply_ghosts(self, uflat: np.ndarray) -> None:
        """Refresh ring entries of a flat state from the ghost relation."""
        ring_flat = self._ring_flat
        partner = self.ghost_partner[ring_flat]
        partner_vals = np.where(partner >= 0, uflat[np.maximum(partner, 0)], 0.0)
        uflat[ring_flat] = self.ghost_c[ring_flat] + self.ghost_w[ring_flat] * partner_vals

    @property
    def _ring_flat(self):
        return np.nonzero(self.mask.reshape(-1) == MASK_DIRICHLET)[0]

    def ghost_jacobian_data(self):
        partner_unknown = np.where(
            self.ghost_partner >= 0,
            self.op.unknown_of_flat[np.maximum(self.ghost_partner, 0)],
            -1,
        )
        return self.ghost_w, partner_unknown

    def base_field(self) -> ScalarField:
        u = np.full(self.mask.shape, np.nan)
        ring = self.mask == MASK_DIRICHLET
        u[ring] = self.dirichlet_values[ring]
        u[self.mask == MASK_INTERIOR] = 0.0
        uflat = u.reshape(-1)
        self.apply_ghosts(uflat)
        return ScalarField(grid=self.grid, mask=self.mask, u=uflat.reshape(self.mask.shape), model=self.model)


def _build_masks(region: np.ndarray):
    if region.dtype != bool:
        raise ValueError("region must be boolean")
    ring = binary_dilation(region, structure=np.ones((3, 3), dtype=bool)) & ~region
    mask = np.zeros(region.shape, dtype=np.int8)
    mask[region] = MASK_INTERIOR
    mask[ring] = MASK_DIRICHLET
    return mask


_GHOST_FRACTION_CAP = 0.9


def _ghost_relations(mask, snap_values, cut_pairs, cut_values):
    """Affine ring relations u_ring = c + w * u_partner from the best cuts.

    Every ring node starts from its fallback data value (w = 0); ring nodes
    owning a cut segment get the interpolation relation through the cut
    closest to them, skipping cuts nearly on top of the interior partner
    (extrapolation weight would blow up).
    """
    n = mask.size
    ghost_c = np.zeros(n)
    ghost_w = np.zeros(n)
    ghost_partner = np.full(n, -1, dtype=np.int64)
    ring_flat = np.nonzero(mask.reshape(-1) == MASK_DIRICHLET)[0]
    ghost_c[ring_flat] = snap_values.reshape(-1)[ring_flat]
    if cut_pairs is not None and len(cut_pairs[0]):
        a, b, f = cut_pairs
        order = np.lexsort((f, a))
        a_s = a[order]
        first = np.ones(len(a_s), dtype=bool)
        first[1:] = a_s[1:] != a_s[:-1]
        sel = order[first]
        sel = sel[f[sel] <= _GHOST_FRACTION_CAP]
        one_minus = 1.0 - f[sel]
        ghost_w[a[sel]] = -f[sel] / one_minus
        ghost_c[a[sel]] = np.asarray(cut_values, dtype=float)[sel] / one_minus
        ghost_partner[a[sel]] = b[sel]
    return ghost_c, ghost_w, ghost_partner


def _clamp_into_chart(model: MetricModel, pts):
    if model.kind == "euclidean":
        return pts
    rmax = 1.0 if model.kind == "hyperbolic" else model.profile.rmax
    if not math.isfinite(rmax):
        return pts
    r = np.hypot(pts[..., 0], pts[..., 1])
    lim = rmax * (1.0 - 1e-9)
    scale = np.where(r >= lim, lim / np.maximum(r, 1e-300), 1.0)
    return pts * scale[..., None]


def _find_cuts(inside_fn, grid: Grid, mask: np.ndarray):
    """Boundary crossings of grid segments between dirichlet and interior nodes."""
    ny, nx = mask.shape
    interior = mask == MASK_INTERIOR
    ring = mask == MASK_DIRICHLET
    pairs_a = []
    pairs_b = []
    for dj, di in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        shifted = np.zeros_like(interior)
        src = interior
        if dj >= 0:
            rows = slice(dj, ny)
            rows_src = slice(0, ny - dj)
        else:
            rows = slice(0, ny + dj)
            rows_src = slice(-dj, ny)
        if di >= 0:
            cols = slice(di, nx)
            cols_src = slice(0, nx - di)
        else:
            cols = slice(0, nx + di)
            cols_src = slice(-di, nx)
        shifted[rows, cols] = src[rows_src, cols_src]
        hit = ring & shifted
        jj, ii = np.nonzero(hit)
        if len(jj):
            pairs_a.append(jj * nx + ii)
            pairs_b.append((jj - dj) * nx + (ii - di))
    if not pairs_a:
        return np.zeros((0, 2)), (np.zeros(0, dtype=int), np.zeros(0, dtype=int), np.zeros(0))
    a_flat = np.concatenate(pairs_a)
    b_flat = np.concatenate(pairs_b)
    nodes = grid.nodes().reshape(-1, 2)
    pa = nodes[a_flat]  # dirichlet side (outside)
    pb = nodes[b_flat]  # interior side
    lo = np.zeros(len(pa))
    hi = np.ones(len(pa))
    for _ in range(45):
        mid = 0.5 * (lo + hi)
        pts = pa + mid[:, None] * (pb - pa)
        ins = inside_fn(pts)
        lo = np.where(ins, lo, mid)
        hi = np.where(ins, mid, hi)
    frac = 0.5 * (lo + hi)
    cuts = pa + frac[:, None] * (pb - pa)
    return cuts, (a_flat, b_flat, frac)


def _grid_over_bbox(bbox, h, pad_cells=3):
    x0, x1, y0, y1 = bbox
    x0 -= pad_cells * h
    y0 -= pad_cells * h
    nx = int(math.ceil((x1 - x0) / h)) + 1 + pad_cells
    ny = int(math.ceil((y1 - y0) / h)) + 1 + pad_cells
    return Grid(x0=x0, y0=y0, h=h, nx=nx, ny=ny)


def problem_from_domain(domain: DomainSpec, data, h: float, pad_cells: int = 3) -> GridProblem:
    """Masked-grid problem for a curve-bounded domain.

    ``data`` is either :class:`BoundaryData` (values transported along the
    nearest-foot projection) or a callable on chart points (exact values,
    for manufactured solutions).
    """
    grid = _grid_over_bbox(domain.chart_bbox(), h, pad_cells)
    nodes = grid.nodes()
    region = domain.contains(nodes)
    mask = _build_masks(region)
    op = _Stencil(domain.model, grid, mask)

    ring = mask == MASK_DIRICHLET
    ring_pts = _clamp_into_chart(domain.model, nodes[ring])
    rho, comp, s = domain.nearest_boundary(ring_pts)
    values = np.full(mask.shape, np.nan)
    if isinstance(data, BoundaryData):
        values[ring] = data.value_mixed(comp, s)

        def boundary_value_at(pts, _dom=domain, _data=data):
            _, c, sf = _dom.nearest_boundary(np.asarray(pts, dtype=float))
            return _data.value_mixed(c, sf)

    elif callable(data):
        values[ring] = data(ring_pts)
        boundary_value_at = data
    else:
        raise TypeError("data must be BoundaryData or a callable on points")

    cuts, cut_pairs = _find_cuts(domain.contains, grid, mask)
    cut_values = boundary_value_at(cuts) if len(cuts) else np.zeros(0)
    ghost_c, ghost_w, ghost_partner = _ghost_relations(mask, values, cut_pairs, cut_values)
    return GridProblem(
        model=domain.model,
        grid=grid,
        mask=mask,
        dirichlet_values=values,
        op=op,
        ghost_c=ghost_c,
        ghost_w=ghost_w,
        ghost_partner=ghost_partner,
        boundary_value_at=boundary_value_at,
        cut_points=cuts,
        cut_pairs=cut_pairs,
        feet={"rho": rho, "component": comp, "s": s},
        domain=domain,
    )


def problem_from_rectangle(model: MetricModel, x0, x1, y0, y1, h, fn) -> GridProblem:
    """Grid-aligned rectangle with exact nodal boundary values.

    Node spacing is adjusted to fit the sides exactly (both sides must agree
    on the adjusted spacing), so the dirichlet ring lies on the boundary and
    carries exact values.
    """
    nx_cells = max(2, round((x1 - x0) / h))
    h_eff = (x1 - x0) / nx_cells
    ny_cells_f = (y1 - y0) / h_eff
    ny_cells = max(2, round(ny_cells_f))
    if abs(ny_cells_f - ny_cells) > 1e-9:
        raise DomainError("rectangle sides are incompatible with a square grid spacing")
    grid = Grid(x0=float(x0), y0=float(y0), h=h_eff, nx=nx_cells + 1, ny=ny_cells + 1)
    region = np.zeros((grid.ny, grid.nx), dtype=bool)
    region[1:-1, 1:-1] = True
    mask = _build_masks(region)
    op = _Stencil(model, grid, mask)
    nodes = grid.nodes()
    ring = mask == MASK_DIRICHLET
    values = np.full(mask.shape, np.nan)
    values[ring] = fn(nodes[ring])
    jj, ii = np.nonzero(ring)
    return GridProblem(
        model=model,
        grid=grid,
        mask=mask,
        dirichlet_values=values,
        op=op,
        boundary_value_at=fn,
        cut_points=nodes[ring],
        cut_pairs=(jj * grid.nx + ii, jj * grid.nx + ii, np.zeros(int(ring.sum()))),
    )


def problem_from_predicate(model: MetricModel, predicate, bbox, h, fn, pad_cells: int = 3) -> GridProblem:
    """Masked grid over an analytic region with exact nodal boundary values."""
    grid = _grid_over_bbox(bbox, h, pad_cells)
    nodes = grid.nodes()
    region = predicate(nodes) & model.in_chart(nodes)
    mask = _build_masks(region)
    op = _Stencil(model, grid, mask)
    ring = mask == MASK_DIRICHLET
    values = np.full(mask.shape, np.nan)
    values[ring] = fn(_clamp_into_chart(model, nodes[ring]))
    cuts, cut_pairs = _find_cuts(lambda p: predicate(p) & model.in_chart(p), grid, mask)
    return GridProblem(
        model=model,
        grid=grid,
        mask=mask,
        dirichlet_values=values,
        op=op,
        boundary_value_at=fn,
        cut_points=cuts,
        cut_pairs=cut_pairs,
    )


# ---------------------------------------------------------------------------
# operator evaluation, reports, Newton
# ---------------------------------------------------------------------------


def discrete_operator(problem: GridProblem, u=None) -> np.ndarray:
    """Residual field of the discrete operator (NaN off the interior)."""
    if u is None:
        u = problem.base_field().u
    ufull = np.array(u, dtype=float)
    ring = problem.mask == MASK_DIRICHLET
    ufull[ring] = problem.dirichlet_values[ring]
    res = problem.op.residual(ufull)
    out = np.full(problem.mask.shape, np.nan)
    out.reshape(-1)[problem.op.flat] = res
    return out


@dataclass(frozen=True)
class SolverParams:
    newton_tol: float = 1e-10
    max_iter: int = 60
    max_backtracks: int = 12
    linear_rtol: float = 1e-12
    direct_limit: int = _DIRECT_LIMIT
    stall_alpha: float = 1e-4


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    final_residual: float
    damping: list
    boundary_attainment: float
    boundary_gradient: float
    interior_gradient: float
    message: str = ""

    def to_dict(self):
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "final_residual": self.final_residual,
            "damping": list(self.damping),
            "boundary_attainment": self.boundary_attainment,
            "boundary_gradient": self.boundary_gradient,
            "interior_gradient": self.interior_gradient,
            "message": self.message,
        }


def _linear_solve(J, rhs, params: SolverParams):
    n = J.shape[0]
    if n <= params.direct_limit:
        try:
            return spsolve(J.tocsc(), rhs)
        except Exception as exc:  # pragma: no cover - backend specific
            raise SolverError(f"direct linear solve failed: {exc}") from exc
    diag = J.diagonal()
    if np.any(diag == 0.0):
        return spsolve(J.tocsc(), rhs)
    M = sparse.diags(1.0 / diag)
    scale = float(np.max(np.abs(rhs))) or 1.0
    x, info = bicgstab(J, rhs, M=M, rtol=params.linear_rtol, atol=1e-14 * scale, maxiter=4000)
    if info != 0:
        try:
            return spsolve(J.tocsc(), rhs)
        except Exception as exc:  # pragma: no cover
            raise SolverError(f"iterative and direct linear solves failed: {exc}") from exc
    return x


def _solve_laplace(problem: GridProblem, params: SolverParams) -> np.ndarray:
    """Harmonic interpolant of the dirichlet values (initial Newton guess)."""
    ufull = problem.base_field().u
    ufull[problem.mask == MASK_INTERIOR] = 0.0
    ufull[np.isnan(ufull)] = 0.0
    r = problem.op.residual(ufull, linear=True)
    J = problem.op.jacobian(ufull, linear=True)
    delta = _linear_solve(J, -r, params)
    out = ufull.reshape(-1).copy()
    out[problem.op.flat] += delta
    return out.reshape(problem.mask.shape)


def newton_solve(
    problem: GridProblem,
    params: SolverParams | None = None,
    initial: np.ndarray | None = None,
) -> tuple[ScalarField, SolveReport]:
    """Damped Newton iteration for the discrete Dirichlet problem."""
    params = params or SolverParams()
    if initial is None:
        ufull = _solve_laplace(problem, params)
    else:
        ufull = np.array(initial, dtype=float)
        ring = problem.mask == MASK_DIRICHLET
        ufull[ring] = problem.dirichlet_values[ring]
        ufull[problem.mask == MASK_OUTSIDE] = np.nan
        fill = problem.mask == MASK_INTERIOR
        ufull[fill & ~np.isfinite(ufull)] = 0.0

    work = ufull.reshape(-1).copy()
    work[~np.isfinite(work)] = 0.0
    flat_idx = problem.op.flat
    damping: list[float] = []
    message = ""
    converged = False
    res = problem.op.residual(work)
    res_norm = float(np.max(np.abs(res))) if len(res) else 0.0
    initial_norm = res_norm
    it = 0
    stalled_steps = 0
    for it in range(params.max_iter):
        if res_norm <= params.newton_tol:
            converged = True
            break
        J = problem.op.jacobian(work)
        delta = _linear_solve(J, -res, params)
        alpha = 1.0
        accepted = False
        for _ in range(params.max_backtracks + 1):
            trial = work.copy()
            trial[flat_idx] += alpha * delta
            trial_res = problem.op.residual(trial)
            trial_norm = float(np.max(np.abs(trial_res)))
            if math.isfinite(trial_norm) and trial_norm < res_norm:
                work = trial
                res = trial_res
                res_norm = trial_norm
                damping.append(alpha)
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            message = "line search failed to reduce the residual"
            break
        if alpha <= params.stall_alpha:
            stalled_steps += 1
            if stalled_steps >= 2:
                message = "step damping collapsed twice in a row"
                break
        else:
            stalled_steps = 0
        if res_norm > 1e6 * max(initial_norm, 1.0) and it >= 3:
            message = "residual diverged"
            break
    else:
        message = "maximum iterations reached"
    if not converged and res_norm <= params.newton_tol:
        converged = True
        message = ""

    u_out = np.full(problem.mask.shape, np.nan).reshape(-1)
    u_out[flat_idx] = work[flat_idx]
    u_out = u_out.reshape(problem.mask.shape)
    ring = problem.mask == MASK_DIRICHLET
    u_out[ring] = problem.dirichlet_values[ring]
    fld = ScalarField(grid=problem.grid, mask=problem.mask, u=u_out, model=problem.model)

    grad = fld.metric_gradient()
    interior_grad = float(np.nanmax(grad)) if np.any(np.isfinite(grad)) else 0.0
    near = _near_boundary_interior(problem.mask)
    bgrad_vals = grad[near]
    boundary_grad = float(np.nanmax(bgrad_vals)) if bgrad_vals.size and np.any(np.isfinite(bgrad_vals)) else 0.0
    attainment = _boundary_attainment(problem, fld)
    report = SolveReport(
        converged=converged,
        iterations=it if converged else it + 1,
        final_residual=res_norm,
        damping=damping,
        boundary_attainment=attainment,
        boundary_gradient=boundary_grad,
        interior_gradient=interior_grad,
        message=message,
    )
    return fld, report


def _near_boundary_interior(mask):
    ring = mask == MASK_DIRICHLET
    near = binary_dilation(ring, structure=np.ones((3, 3), dtype=bool))
    return near & (mask == MASK_INTERIOR)


def _boundary_attainment(problem: GridProblem, fld: ScalarField) -> float:
    if problem.cut_points is None or len(problem.cut_points) == 0 or problem.boundary_value_at is None:
        return 0.0
    dir_flat, int_flat, frac = problem.cut_pairs
    if len(dir_flat) == 0:
        return 0.0
    u = fld.u.reshape(-1)
    u_dir = problem.dirichlet_values.reshape(-1)[dir_flat]
    u_int = u[int_flat]
    u_cut = u_dir + frac * (u_int - u_dir)
    target = np.asarray(problem.boundary_value_at(problem.cut_points), dtype=float)
    return float(np.max(np.abs(u_cut - target)))


# ---------------------------------------------------------------------------
# continuity method
# ---------------------------------------------------------------------------


@dataclass
class ContinuationStep:
    t: float
    report: SolveReport


@dataclass
class ContinuationPath:
    steps: list
    rejected: list
    status: str  # reached_one | stalled | diverged
    t_final: float
    field: ScalarField | None
    halvings_at_stall: int = 0

    @property
    def reached_one(self) -> bool:
        return self.status == "reached_one"

    def to_dict(self):
        return {
            "status": self.status,
            "t_final": self.t_final,
            "halvings_at_stall": self.halvings_at_stall,
            "steps": [{"t": s.t, **s.report.to_dict()} for s in self.steps],
            "rejected": [{"t": t, "reason": r} for t, r in self.rejected],
        }


def continuity_solve(
    problem: GridProblem,
    params: SolverParams | None = None,
    dt_start: float = 0.1,
    dt_min: float = 1e-3,
) -> ContinuationPath:
    """March the boundary data from zero to full strength.

    Steps double after success and halve after failure; the march stalls when
    the step drops below ``dt_min`` after at least three consecutive
    rejections at the same frontier.
    """
    params = params or SolverParams()
    steps: list[ContinuationStep] = []
    rejected: list[tuple[float, str]] = []
    t_prev = 0.0
    dt = dt_start
    u_prev = None
    field_prev = None
    consecutive_failures = 0
    last_reason = ""
    while t_prev < 1.0:
        t_try = min(1.0, t_prev + dt)
        sub = problem.scaled(t_try)
        try:
            fld, rep = newton_solve(sub, params, initial=u_prev)
        except SolverError as exc:
            rep = None
            fld = None
            last_reason = f"linear solver breakdown: {exc}"
        if rep is not None and rep.converged:
            steps.append(ContinuationStep(t=t_try, report=rep))
            u_prev = fld.u
            field_prev = fld
            t_prev = t_try
            consecutive_failures = 0
            dt = min(2.0 * dt, 1.0 - t_prev if t_prev < 1.0 else dt)
            if dt <= 0.0:
                dt = dt_min
            continue
        if rep is not None:
            last_reason = rep.message or "newton did not converge"
        rejected.append((t_try, last_reason))
        consecutive_failures += 1
        dt *= 0.5
        if dt < dt_min:
            break
    if t_prev >= 1.0:
        status = "reached_one"
    elif "breakdown" in last_reason or "diverged" in last_reason:
        status = "diverged"
    else:
        status = "stalled"
    return ContinuationPath(
        steps=steps,
        rejected=rejected,
        status=status,
        t_final=t_prev,
        field=field_prev,
        halvings_at_stall=consecutive_failures,
    )


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


@dataclass
class DiagnosticsReport:
    max_principle_ok: bool
    max_principle_slack: float
    barrier_comparison_ok: bool | None
    barrier_comparison_excess: float | None
    boundary_gradient_ok: bool | None
    boundary_gradient: float
    boundary_gradient_bound: float | None

    def to_dict(self):
        return {
            "max_principle_ok": self.max_principle_ok,
            "max_principle_slack": self.max_principle_slack,
            "barrier_comparison_ok": self.barrier_comparison_ok,
            "barrier_comparison_excess": self.barrier_comparison_excess,
            "boundary_gradient_ok": self.boundary_gradient_ok,
            "boundary_gradient": self.boundary_gradient,
            "boundary_gradient_bound": self.boundary_gradient_bound,
        }


def diagnostics(
    field: ScalarField,
    problem: GridProblem,
    phi: BoundaryData | None = None,
    cert=None,
) -> DiagnosticsReport:
    """Post-solve checks: maximum principle, collar comparison, gradient bound.

    The collar comparison and the boundary-gradient bound run only when a
    certificate is supplied; they presume the certificate's oscillation gate
    covers the data of this solve.
    """
    interior = problem.mask == MASK_INTERIOR
    ring = problem.mask == MASK_DIRICHLET
    u_int = field.u[interior]
    vals = problem.dirichlet_values[ring]
    lo, hi = float(np.min(vals)), float(np.max(vals))
    slack = max(float(np.max(u_int) - hi), float(lo - np.min(u_int)), 0.0)
    mp_ok = bool(np.all(u_int <= hi + 1e-10) and np.all(u_int >= lo - 1e-10))

    barrier_ok = None
    barrier_excess = None
    grad_ok = None
    grad_bound = None
    grad = field.metric_gradient()
    near = _near_boundary_interior(problem.mask)
    bgrad = float(np.nanmax(grad[near])) if np.any(np.isfinite(grad[near])) else 0.0
    if cert is not None and problem.domain is not None and phi is not None:
        h = problem.grid.h
        sup_grad = float(np.nanmax(grad)) if np.any(np.isfinite(grad)) else 0.0
        tol = 2.0 * h * (1.0 + sup_grad)
        nodes = problem.grid.nodes()[interior]
        rho, comp, s = problem.domain.nearest_boundary(nodes)
        in_tube = rho < cert.eps
        if np.any(in_tube):
            phi_foot = phi.value_mixed(comp[in_tube], s[in_tube])
            gap = np.abs(u_int[in_tube] - phi_foot) - cert.psi(rho[in_tube])
            barrier_excess = float(np.max(gap))
            barrier_ok = bool(barrier_excess <= tol)
        else:
            barrier_excess = 0.0
            barrier_ok = True
        profile_slope = cert.psi_d1(0.0)
        grad_bound = float(profile_slope * (1.0 + cert.d1) + tol)
        grad_ok = bool(bgrad <= grad_bound)
    return DiagnosticsReport(
        max_principle_ok=mp_ok,
        max_principle_slack=slack,
        barrier_comparison_ok=barrier_ok,
        barrier_comparison_excess=barrier_excess,
        boundary_gradient_ok=grad_ok,
        boundary_gradient=bgrad,
        boundary_gradient_bound=grad_bound,
    )
