"""Closed-form minimal graphs and the annulus height threshold.

These are the accuracy oracles for the solver test suite: classical exact
solutions of the flat minimal surface equation, plus the critical boundary
height on the annulus above which the radial catenoid family cannot match
the data.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import brentq, minimize_scalar

__all__ = [
    "scherk",
    "helicoid",
    "catenoid_height",
    "catenoid_threshold",
    "catenoid_parameter",
    "catenoid_radial",
]


def scherk(points):
    """u = ln(cos x / cos y), minimal on |x|, |y| < pi/2."""
    p = np.asarray(points, dtype=float)
    return np.log(np.cos(p[..., 0]) / np.cos(p[..., 1]))


def helicoid(points):
    """u = atan2(y, x), minimal away from the axis."""
    p = np.asarray(points, dtype=float)
    return np.arctan2(p[..., 1], p[..., 0])


def catenoid_height(c: float, r_in: float = 1.0, r_out: float = 2.0) -> float:
    """Boundary height at ``r_in`` of the radial catenoid vanishing at ``r_out``."""
    return c * (math.acosh(r_out / c) - math.acosh(r_in / c))


def catenoid_threshold(r_in: float = 1.0, r_out: float = 2.0) -> float:
    """Largest boundary height the radial catenoid family can attain.

    Maximizes ``catenoid_height`` over the waist parameter in (0, r_in];
    the maximum sits at the endpoint c = r_in where the graph meets the
    inner circle vertically.
    """
    res = minimize_scalar(
        lambda c: -catenoid_height(c, r_in, r_out),
        bounds=(1e-9, r_in),
        method="bounded",
        options={"xatol": 1e-12},
    )
    return max(-float(res.fun), catenoid_height(r_in, r_in, r_out))


def catenoid_parameter(height: float, r_in: float = 1.0, r_out: float = 2.0) -> float:
    """Waist parameter of the radial catenoid with the given inner height."""
    if not 0.0 < height < catenoid_threshold(r_in, r_out):
        raise ValueError("height outside the attainable range")
    return brentq(
        lambda c: catenoid_height(c, r_in, r_out) - height, 1e-12, r_in, xtol=1e-14
    )


def catenoid_radial(r, c: float, r_out: float = 2.0):
    """Radial profile of the catenoid graph vanishing at ``r_out``."""
    r = np.asarray(r, dtype=float)
    return c * (np.arccosh(r_out / c) - np.arccosh(r / c))
