"""Conforming longest-edge tet refinement and SUPG pollutant transport over terrain."""
from .errors import (
    ConfigError,
    ConvergenceError,
    FormatError,
    GeometryError,
    HandleError,
    LeplumeError,
    NonTerminationError,
    PreconditionError,
)
from .mesh import MeshGraph, box_mesh, edge_length, longest_edges, validate
from .refine import RefinePlan, apply_production, find_match, refine, refine_uniform

__version__ = "0.1.0"
