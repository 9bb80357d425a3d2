"""Numerical laboratory for the minimal surface equation on conformal 2D models.

Subpackages:

* :mod:`minsurf.geometry` -- conformal metrics, geodesics, curvature, transport
* :mod:`minsurf.domain`   -- boundary curves, tube coordinates, data norms
* :mod:`minsurf.barrier`  -- explicit barrier constants, oscillation bound, checks
* :mod:`minsurf.solver`   -- masked-grid Newton solver and continuity method
* :mod:`minsurf.exterior` -- exhaustion runs with prescribed asymptotic data
* :mod:`minsurf.cli`      -- scenario runner
"""

from .geometry import MetricModel, RadialProfile, curvature_at, distance, geodesic, parallel_transport

__all__ = [
    "MetricModel",
    "RadialProfile",
    "curvature_at",
    "distance",
    "geodesic",
    "parallel_transport",
]

__version__ = "0.1.0"
