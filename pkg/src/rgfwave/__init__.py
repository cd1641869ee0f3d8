"""Reconstruction of moving point and dipole wave sources from boundary data.

Forward synthesis of the boundary field by a time-marching boundary
integral equation, reciprocity-gap moment traces, and the algebraic
(Hankel / Vandermonde) inversion with per-slice tracking.
"""

from .grid import SphereGrid, build_grid, surface_integral
from .scenario import Scenario, SourceSpec, builtin_scenarios, eval_source, load_scenario

__version__ = "0.1.0"

__all__ = [
    "Scenario",
    "SourceSpec",
    "SphereGrid",
    "build_grid",
    "builtin_scenarios",
    "eval_source",
    "load_scenario",
    "surface_integral",
]
