"""Finite-element solver and wellposedness calculator for a two-dimensional
PEM fuel cell model with Stokes-Darcy flow and coupled species, heat and
charge transport."""

from .mesh import Boundary, CellGeometry, InvalidGeometryError, MultiregionMesh, Region, build_mesh
from .materials import BVParams, CoefficientSet, MaterialLaw, butler_volmer
from .femcore import DofLayout, State, build_layout
from .picard import PicardConfig, run_fixed_point
from .analysis import ellipticity_margins, smallness_report
from .config import ConfigError, RunConfig, load_config

__version__ = "0.1.0"

__all__ = [
    "Boundary", "CellGeometry", "InvalidGeometryError", "MultiregionMesh", "Region", "build_mesh",
    "BVParams", "CoefficientSet", "MaterialLaw", "butler_volmer",
    "DofLayout", "State", "build_layout", "PicardConfig", "run_fixed_point",
    "ellipticity_margins", "smallness_report", "ConfigError", "RunConfig", "load_config",
]
